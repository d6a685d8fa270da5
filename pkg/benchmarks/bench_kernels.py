"""Compare the compiled kernels against the pure-numpy fallback.

Run from the repository root:

    python3 benchmarks/bench_kernels.py [--repeats 50]

Times the three hot kernels (row softmax, layer norm, masked attention)
forward and backward at model-realistic shapes, plus one full training step,
under both backends. The fallback is exercised in a subprocess with
C3REC_PURE_PYTHON=1 so backend selection happens at import as it would for
a user without the extension built.
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

SHAPES = {
    "softmax": (512, 9),
    "layer_norm": (4096, 32),
    "attention": (64, 4, 9, 8),   # (batch, heads, tokens, head_dim)
}


def bench_kernels(repeats: int) -> dict:
    from c3rec.numcore import backend
    k = backend.kernels
    rng = np.random.default_rng(0)
    out = {"backend": backend.backend_name()}

    def timeit(fn):
        fn()  # warm-up
        t0 = time.perf_counter()
        for _ in range(repeats):
            fn()
        return (time.perf_counter() - t0) / repeats * 1e6  # us

    x = rng.standard_normal(SHAPES["softmax"])
    y = k.softmax_rows_fwd(x)
    g = rng.standard_normal(x.shape)
    out["softmax_fwd_us"] = timeit(lambda: k.softmax_rows_fwd(x))
    out["softmax_bwd_us"] = timeit(lambda: k.softmax_rows_bwd(y, g))

    x = rng.standard_normal(SHAPES["layer_norm"])
    gain = rng.standard_normal(x.shape[1])
    bias = rng.standard_normal(x.shape[1])
    _, mean, rstd = k.layer_norm_fwd(x, gain, bias, 1e-6)
    g = rng.standard_normal(x.shape)
    out["layer_norm_fwd_us"] = timeit(lambda: k.layer_norm_fwd(x, gain, bias, 1e-6))
    out["layer_norm_bwd_us"] = timeit(lambda: k.layer_norm_bwd(g, x, gain, mean, rstd))

    b, h, t, hd = SHAPES["attention"]
    q = rng.standard_normal((b, h, t, hd))
    key = rng.standard_normal((b, h, t, hd))
    v = rng.standard_normal((b, h, t, hd))
    key_bias = np.where(rng.random((b, t)) < 0.3, -1e30, 0.0)
    key_bias[:, 0] = 0.0
    scale = 1.0 / np.sqrt(hd)
    ctx, probs = k.attn_fwd(q, key, v, key_bias, scale)
    g = rng.standard_normal(ctx.shape)
    out["attn_fwd_us"] = timeit(lambda: k.attn_fwd(q, key, v, key_bias, scale))
    out["attn_bwd_us"] = timeit(lambda: k.attn_bwd(g, probs, q, key, v, scale))

    out["train_step_ms"] = bench_train_step(max(3, repeats // 10))
    return out


def bench_train_step(repeats: int) -> float:
    from c3rec.config import TrainConfig
    from c3rec.data import GROUP_TASK, generate_synthetic, leave_one_out_split, make_batches
    from c3rec.model import C3Model
    from c3rec.numcore import AdamState, adam_step
    from c3rec.train import batch_loss

    ds = generate_synthetic(60, 120, 24, seed=0)
    leave_one_out_split(ds, 0)
    cfg = TrainConfig(dropout=0.0, batch_size=32)
    model = C3Model(ds.num_users, ds.num_items, cfg)
    states = {n: AdamState.for_param(t, lr=cfg.lr) for n, t in model.params.items()}
    batch = next(iter(make_batches(ds, cfg, GROUP_TASK, epoch=1)))

    def step():
        total, _ = batch_loss(model, batch, cfg, train_mode=True)
        model.zero_grad()
        total.backward()
        for n, t in model.params.items():
            if t.grad is not None:
                adam_step(t, states[n])

    step()
    t0 = time.perf_counter()
    for _ in range(repeats):
        step()
    return (time.perf_counter() - t0) / repeats * 1e3


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=50)
    parser.add_argument("--_inner", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args()

    if args._inner:
        print(json.dumps(bench_kernels(args.repeats)))
        return

    results = [bench_kernels(args.repeats)]
    env = dict(os.environ, C3REC_PURE_PYTHON="1")
    proc = subprocess.run(
        [sys.executable, os.path.abspath(__file__),
         "--repeats", str(args.repeats), "--_inner"],
        env=env, capture_output=True, text=True, check=True)
    results.append(json.loads(proc.stdout.strip().splitlines()[-1]))

    if results[0]["backend"] == results[1]["backend"]:
        print("extension not built; both runs used the numpy fallback\n")

    keys = [k for k in results[0] if k != "backend"]
    width = max(len(k) for k in keys)
    print(f"{'kernel':<{width}} {results[0]['backend']:>12} "
          f"{results[1]['backend']:>12} {'speedup':>9}")
    for k in keys:
        a, b = results[0][k], results[1][k]
        print(f"{k:<{width}} {a:>12.2f} {b:>12.2f} {b / a:>8.2f}x")


if __name__ == "__main__":
    main()
