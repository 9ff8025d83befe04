"""Compare the compiled and numpy prototype head kernels.

    python benchmarks/bench_kernels.py [--repeat 200] [--json out.json]

Times forward+backward on random episodes at a few shapes and checks that
both backends agree before timing them.
"""
from __future__ import annotations

import argparse
import json
import sys
import timeit

import numpy as np

from keaf.backend import KERNELS

SHAPES = [
    # (support, query, n_way, dim)
    (5, 15, 5, 32),
    (12, 25, 5, 32),
    (12, 25, 5, 128),
    (25, 50, 10, 64),
    (30, 15, 5, 768),
]


def random_inputs(rng, S, Q, N, D):
    ys = np.zeros((S, N))
    ys[np.arange(S), np.arange(S) % N] = 1.0
    ys[rng.random((S, N)) < 0.2] = 1.0
    yq = (rng.random((Q, N)) < 0.3).astype(float)
    return (
        np.tanh(rng.normal(size=(S, D))),
        np.tanh(rng.normal(size=(Q, D))),
        np.tanh(rng.normal(size=(N, D))),
        ys,
        yq,
        rng.normal(scale=D**-0.5, size=(D, D)),
    )


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=200)
    parser.add_argument("--json", help="write timings here")
    args = parser.parse_args(argv)

    if "compiled" not in KERNELS:
        print("compiled kernel not built; only the numpy fallback is available", file=sys.stderr)
    rng = np.random.default_rng(0)
    rows = []
    print(f"{'S':>3} {'Q':>3} {'N':>3} {'D':>4}  " + "  ".join(f"{k:>12}" for k in KERNELS) + "   speedup")
    for S, Q, N, D in SHAPES:
        inputs = random_inputs(rng, S, Q, N, D)
        call = {k: (lambda f=f: f(*inputs, 0.5, True, D**-0.5, True, True)) for k, f in KERNELS.items()}
        outs = {k: c() for k, c in call.items()}
        if "compiled" in outs:
            for key in ("loss", "dist", "g_rs", "g_rq", "g_rl", "g_lin"):
                np.testing.assert_allclose(outs["compiled"][key], outs["python"][key], rtol=1e-9, atol=1e-12)
        times = {k: min(timeit.repeat(c, number=args.repeat, repeat=3)) / args.repeat for k, c in call.items()}
        speedup = times["python"] / times["compiled"] if "compiled" in times else float("nan")
        print(f"{S:>3} {Q:>3} {N:>3} {D:>4}  " + "  ".join(f"{1e6 * t:10.1f}us" for t in times.values())
              + f"   {speedup:6.2f}x")
        rows.append({"shape": [S, Q, N, D], "seconds": times, "speedup": speedup})
    if args.json:
        with open(args.json, "w") as f:
            json.dump(rows, f, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
