"""Agreement between the compiled kernels and the pure-numpy fallback."""

import os
import subprocess
import sys
import textwrap

import numpy as np
import pytest

from c3rec.numcore import backend
from c3rec.numcore import kernels_np as ref

be = backend.kernels


def _require_compiled():
    if backend.backend_name() != "cython":
        pytest.skip("compiled backend not available")


def test_backend_selection_reports_a_known_name():
    assert backend.backend_name() in ("cython", "numpy")


def test_softmax_kernels_agree(rng):
    _require_compiled()
    x = rng.standard_normal((7, 9))
    np.testing.assert_allclose(be.softmax_rows_fwd(x), ref.softmax_rows_fwd(x),
                               rtol=1e-14, atol=1e-15)
    y = ref.softmax_rows_fwd(x)
    g = rng.standard_normal(x.shape)
    np.testing.assert_allclose(be.softmax_rows_bwd(y, g), ref.softmax_rows_bwd(y, g),
                               rtol=1e-13, atol=1e-14)


def test_layer_norm_kernels_agree(rng):
    _require_compiled()
    x = rng.standard_normal((6, 8))
    gain = rng.standard_normal(8)
    bias = rng.standard_normal(8)
    eps = 1e-6
    y1, m1, r1 = be.layer_norm_fwd(x, gain, bias, eps)
    y2, m2, r2 = ref.layer_norm_fwd(x, gain, bias, eps)
    np.testing.assert_allclose(y1, y2, rtol=1e-13, atol=1e-14)
    np.testing.assert_allclose(m1, m2, rtol=1e-13, atol=1e-15)
    np.testing.assert_allclose(r1, r2, rtol=1e-13, atol=1e-15)
    g = rng.standard_normal(x.shape)
    out1 = be.layer_norm_bwd(g, x, gain, m1, r1)
    out2 = ref.layer_norm_bwd(g, x, gain, m2, r2)
    for a, b in zip(out1, out2):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-13)


def test_attention_kernels_agree(rng):
    _require_compiled()
    b, h, t, k = 3, 2, 5, 4
    q = rng.standard_normal((b, h, t, k))
    key = rng.standard_normal((b, h, t, k))
    v = rng.standard_normal((b, h, t, k))
    key_bias = np.where(rng.random((b, t)) < 0.3, -1e30, 0.0)
    key_bias[:, 0] = 0.0  # keep at least one attendable position
    scale = 1.0 / np.sqrt(k)
    ctx1, p1 = be.attn_fwd(q, key, v, key_bias, scale)
    ctx2, p2 = ref.attn_fwd(q, key, v, key_bias, scale)
    np.testing.assert_allclose(ctx1, ctx2, rtol=1e-13, atol=1e-14)
    np.testing.assert_allclose(p1, p2, rtol=1e-13, atol=1e-14)
    g = rng.standard_normal(ctx1.shape)
    out1 = be.attn_bwd(g, p1, q, key, v, scale)
    out2 = ref.attn_bwd(g, p2, q, key, v, scale)
    for a, bb in zip(out1, out2):
        np.testing.assert_allclose(a, bb, rtol=1e-12, atol=1e-13)


def test_pure_python_env_forces_numpy_backend():
    code = textwrap.dedent("""
        from c3rec.numcore import backend
        print(backend.backend_name())
    """)
    env = dict(os.environ, C3REC_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env,
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"


def test_model_scores_match_across_backends():
    """Same seed, same inputs: the two backends agree to float64 noise."""
    code = textwrap.dedent("""
        import numpy as np
        from tests.conftest import small_config
        from c3rec.model import C3Model
        m = C3Model(10, 20, small_config(layers=2))
        members = np.array([[0, 1, 2], [3, 4, 9]])
        mask = np.array([[True, True, False], [True, True, True]])
        s = m.score(members, mask, np.array([5, 7])).data
        print(repr(s.tolist()))
    """)
    results = []
    for pure in ("0", "1"):
        env = dict(os.environ, C3REC_PURE_PYTHON=pure,
                   PYTHONPATH=os.path.dirname(os.path.dirname(__file__)))
        out = subprocess.run([sys.executable, "-c", code], env=env,
                             capture_output=True, text=True, check=True)
        results.append(np.array(eval(out.stdout.strip())))
    np.testing.assert_allclose(results[0], results[1], rtol=1e-12, atol=1e-13)
