#!/usr/bin/env python3
"""Benchmark the compiled SGD kernel against the numpy fallback.

Times the two hot entry points (fused minibatch SGD and evaluation) on
desk-scale shapes, checks the backends agree numerically, then times one
full method-C fleet run per backend.

    python benchmarks/bench_backends.py [--repeats N]
"""

import argparse
import time

import numpy as np

from uavfl import kernels
from uavfl.config import resolve_config
from uavfl.driver import build_world
from uavfl.methods import run_plan

KERNEL_CASES = [
    # (label, d, hidden, classes, examples, batch, epochs)
    ("logreg  d16 c5  n100 B50", 16, 0, 5, 100, 50, 3),
    ("logreg  d16 c5  n100 B16", 16, 0, 5, 100, 16, 3),
    ("mlp h32 d16 c5  n100 B50", 16, 32, 5, 100, 50, 3),
    ("logreg  d64 c10 n500 B32", 64, 0, 10, 500, 32, 3),
]


def dim_of(d, h, c):
    return d * c + c if h == 0 else d * h + h + h * c + c


def time_call(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - start)
    return best, out


def bench_kernels(repeats):
    print(f"{'case':28s} {'numpy':>10s} {'cython':>10s} {'speedup':>8s}  agree")
    numpy_be = kernels.get_backend("numpy")
    cython_be = kernels.get_backend("cython")
    rng = np.random.default_rng(0)
    for label, d, h, c, n, batch, epochs in KERNEL_CASES:
        X = rng.normal(size=(n, d))
        y = rng.integers(0, c, n)
        w = rng.normal(0, 0.3, dim_of(d, h, c))
        order = np.stack([rng.permutation(n) for _ in range(epochs)]).astype(np.int64)
        dims = (d, h, c)

        t_np, (out_np, _) = time_call(
            lambda: numpy_be.sgd_run(w, X, y, dims, 0.05, order, batch), repeats)
        t_cy, (out_cy, _) = time_call(
            lambda: cython_be.sgd_run(w, X, y, dims, 0.05, order, batch), repeats)
        agree = np.allclose(out_np, out_cy, rtol=1e-9, atol=1e-12)
        e_np = numpy_be.predict_eval(out_np, X, y, dims)
        e_cy = cython_be.predict_eval(out_cy, X, y, dims)
        agree = agree and e_np[0] == e_cy[0] and abs(e_np[1] - e_cy[1]) < 1e-9
        print(f"{label:28s} {t_np * 1e3:9.3f}ms {t_cy * 1e3:9.3f}ms "
              f"{t_np / t_cy:7.1f}x  {agree}")
        if not agree:
            raise SystemExit(f"backend disagreement on {label}")


def bench_fleet_run(repeats):
    raw = {
        "fleet": {"n": 20},
        "plan": {"method": "C", "le": 3, "ge": 30, "lr": 5, "gr": 5,
                 "eta": 0.01, "batch_size": 50},
        "data": {"per_drone": 100, "n_features": 16, "n_classes": 5},
    }
    print(f"\n{'full method-C run (n=20, ge=30)':28s}", end=" ")
    times = {}
    for name in ("numpy", "cython"):
        backend = kernels.get_backend(name)

        def run():
            cfg = resolve_config(dict(raw))
            fleet, env = build_world(cfg)
            env.backend = backend
            return run_plan(fleet, cfg.plan, env)

        times[name], _ = time_call(run, repeats)
    print(f"{times['numpy'] * 1e3:9.1f}ms {times['cython'] * 1e3:9.1f}ms "
          f"{times['numpy'] / times['cython']:7.1f}x")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5,
                        help="timing repeats; best-of is reported")
    args = parser.parse_args()
    if "cython" not in kernels.available_backends():
        raise SystemExit("compiled kernel not built; nothing to compare")
    print(f"active backend at import: {kernels.ACTIVE_NAME}\n")
    bench_kernels(args.repeats)
    bench_fleet_run(max(1, args.repeats // 2))


if __name__ == "__main__":
    main()
