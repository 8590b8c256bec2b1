"""Compare the compiled kernels against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from mvnad import _fallback
from mvnad.photometric import standard_rig

try:
    from mvnad import _ext
except ImportError:  # extension not built
    _ext = None


def cases():
    rng = np.random.default_rng(0)
    lights = standard_rig(6).directions
    stack = rng.random((6, 256 * 256))
    mask = rng.random((256, 256)) < 0.45
    return {
        "pcg32_fill 1e6": lambda m: m.pcg32_fill(42, 54, 1_000_000),
        "label_components 256x256": lambda m: m.label_components(mask),
        "ps_solve 256x256": lambda m: m.ps_solve(lights, stack, 0),
        "ps_solve 256x256 trim": lambda m: m.ps_solve(lights, stack, 1),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    print(f"{'kernel':28s} {'python ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for name, fn in cases().items():
        py = min(timeit.repeat(lambda: fn(_fallback), number=1, repeat=args.repeat)) * 1e3
        if _ext is None:
            print(f"{name:28s} {py:10.2f} {'n/a':>10s} {'n/a':>8s}")
            continue
        cy = min(timeit.repeat(lambda: fn(_ext), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:28s} {py:10.2f} {cy:10.2f} {py / cy:7.1f}x")


if __name__ == "__main__":
    main()
