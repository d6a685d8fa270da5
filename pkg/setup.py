"""Build script for the optional Cython fast-kernel extension.

The package works without the extension (a NumPy fallback is selected at
import time), so a failed compile only costs speed. Set C3REC_SKIP_EXT=1
to skip building it entirely.
"""

import os

from setuptools import setup

ext_modules = []
if not os.environ.get("C3REC_SKIP_EXT"):
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "c3rec.numcore._fastkernels",
                    ["src/c3rec/numcore/_fastkernels.pyx"],
                    include_dirs=[numpy.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O3"],
                )
            ],
            language_level="3",
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
