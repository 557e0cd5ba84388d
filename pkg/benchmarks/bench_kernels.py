"""Time the compiled kernels against the numpy fallback.

Run with ``python benchmarks/bench_kernels.py [--repeat N]``.
"""

import argparse
import timeit

import numpy as np

from surrocal import _pykernels

try:
    from surrocal import _ckernels
except ImportError:
    _ckernels = None


def cases(rng):
    design = rng.uniform(0, 5, (306, 3))
    eta, p = np.array([0.5, 1.2, 2.0]), np.array([0.4, 1.3, 1.9])
    samples = rng.standard_normal((5000, 2))
    points = rng.standard_normal((2000, 2))
    return {
        "powexp 306x306 (symmetric)": lambda m: m.powexp_cross(design, design, eta, p),
        "powexp 1x306 (prediction)": lambda m: m.powexp_cross(design[:1], design, eta, p),
        "matern 306x306": lambda m: m.matern32_cross(design, design, np.array([1.0, 2.0, 0.5])),
        "kde 5000 samples x 2000 points": lambda m: m.gauss_kde_eval(samples, points,
                                                                    np.array([0.3, 0.3])),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    impls = [("python", _pykernels)] + ([("cython", _ckernels)] if _ckernels else [])
    if _ckernels is None:
        print("compiled extension not available; timing the numpy fallback only")
    print(f"{'case':34s}" + "".join(f"{name:>12s}" for name, _ in impls) + "   speedup  max|diff|")
    for label, fn in cases(rng).items():
        times, outs = [], []
        for _, mod in impls:
            number = 3
            t = min(timeit.repeat(lambda: fn(mod), number=number, repeat=args.repeat)) / number
            times.append(t)
            outs.append(fn(mod))
        row = f"{label:34s}" + "".join(f"{t * 1e3:10.3f}ms" for t in times)
        if len(times) == 2:
            row += f"  {times[0] / times[1]:7.2f}x  {np.abs(outs[0] - outs[1]).max():.1e}"
        print(row)


if __name__ == "__main__":
    main()
