"""Time the compiled geometry kernels against their numpy twins.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--points 4000]

Both tables are called directly, so the comparison does not depend on
DHG_DISABLE_JIT. With DHG_DISABLE_JIT=1 the "numba" column runs the same
functions uncompiled, which is very slow; keep --points small in that case.
"""
import argparse
import time

import numpy as np

from dhgrasp import kernels
from dhgrasp._jit import USE_NUMBA
from dhgrasp.hand_model import HandPose, default_template, forward_kinematics
from dhgrasp.shapes import icosphere


def cases(n, rng):
    ball = icosphere(0.05, 3)
    tri = kernels._as_tri(ball.vertices, ball.faces)
    pts = rng.uniform(-0.07, 0.07, size=(n, 3))
    dirs = rng.normal(size=(n, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    hand = forward_kinematics(HandPose("right", theta=np.full(22, 0.3)), default_template())
    lo, hi = hand.bounds(0.01)
    hpts = rng.uniform(lo, hi, size=(n, 3))
    return {
        "winding": (pts, tri),
        "closest": (pts, tri),
        "rays": (np.zeros((n, 3)), dirs, tri, 1e-9),
        "solid": (hpts, hand.seg_a, hand.seg_b, hand.radii, hand.ell_center, hand.ell_inv),
    }


def best_of(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--points", type=int, default=4000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    print(f"numba enabled: {USE_NUMBA}, {args.points} queries, best of {args.repeat}")
    print(f"{'kernel':<10}{'numba ms':>12}{'numpy ms':>12}{'speedup':>10}")
    for name, a in cases(args.points, np.random.default_rng(args.seed)).items():
        nb, npy = kernels.NUMBA_KERNELS[name], kernels.NUMPY_KERNELS[name]
        nb(*a)  # compile outside the timed region
        t_nb, t_np = best_of(nb, a, args.repeat), best_of(npy, a, args.repeat)
        print(f"{name:<10}{1e3 * t_nb:12.2f}{1e3 * t_np:12.2f}{t_np / t_nb:10.1f}x")


if __name__ == "__main__":
    main()
