"""Compare the numba and numpy backends on the hot kernels.

    python benchmarks/bench_kernels.py [--width 1024] [--repeat 7]
"""
import argparse
import timeit

import numpy as np

from omnigyro import kernels
from omnigyro.mpp import build_mpp, yaw_cost_and_derivatives
from omnigyro.panorama import rotate_equirect
from omnigyro.pvg import PhotometricProblem, refine_rotation
from omnigyro.sphere import build_icosphere, rpy_to_rotation
from omnigyro.synthetic import SmoothScene


def best(fn, repeat, number=5):
    fn()  # warm-up / JIT
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--width", type=int, default=1024)
    ap.add_argument("--repeat", type=int, default=7)
    args = ap.parse_args()

    scene = SmoothScene.random(0)
    ref = scene.render(args.width)
    R = rpy_to_rotation(0.1, -0.05, 0.3)
    cur = scene.render(args.width, R)
    g3 = build_icosphere(3)

    rows = []
    for backend in ("numba", "numpy"):
        kernels.set_backend(backend)
        A, B = build_mpp(ref, g3), build_mpp(cur, g3)
        prob = PhotometricProblem(ref, cur, 5)
        res = {
            "mpp C,C',C'' n=3 (full sums)": best(lambda: yaw_cost_and_derivatives(A, B, (0, 0), 0.3, truncation=0), args.repeat),
            "pvg residual+jacobian n=5": best(lambda: prob.residuals_and_jacobian(R), args.repeat),
            "pvg normal equations n=5": best(lambda: prob.normal_equations(R), args.repeat, 20),
            f"rotate_equirect {args.width}x{args.width // 2}": best(lambda: rotate_equirect(cur, R), args.repeat, 1),
            "refine_rotation (10 deg offset)": best(
                lambda: refine_rotation(ref, cur, rpy_to_rotation(0.1, -0.05, 0.3 + np.deg2rad(10))), 3, 1),
        }
        rows.append((backend, res))

    names = list(rows[0][1])
    print(f"{'kernel':<40}{'numba ms':>12}{'numpy ms':>12}{'speedup':>10}")
    for n in names:
        a, b = rows[0][1][n] * 1e3, rows[1][1][n] * 1e3
        print(f"{n:<40}{a:>12.3f}{b:>12.3f}{b / a:>10.2f}")
    kernels.set_backend("numba")


if __name__ == "__main__":
    main()
