"""Time the compiled kernels against the pure-Python fallbacks.

Usage: python benchmarks/bench_kernels.py [--repeat N]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from fedecg import _kernels_py
from fedecg.features import _pan_tompkins_stages
from fedecg.synth import synth_generate


def _best(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def _split_inputs(n: int, f: int, nodes: int, seed: int = 0):
    r = np.random.default_rng(seed)
    X = r.normal(size=(n, f))
    order = np.asfortranarray(np.argsort(X, axis=0, kind="stable"))
    Xs = np.asfortranarray(np.take_along_axis(X, order, axis=0))
    node = r.integers(0, nodes, size=n)
    g, h = r.normal(size=n), r.uniform(0.05, 0.25, size=n)
    G = np.bincount(node, g, minlength=nodes)
    H = np.bincount(node, h, minlength=nodes)
    return Xs, order, node, g, h, G, H, 1.0


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    try:
        from fedecg import _kernels as compiled
    except ImportError:
        compiled = None
        print("compiled extension not built; timing the Python fallback only")

    rec, _ = synth_generate("NSR", 0)
    _, mwi = _pan_tompkins_stages(rec.signals[1], rec.fs)
    cases = [
        ("pan_tompkins_pick (4112 samples)", "pan_tompkins_pick", (mwi, rec.fs)),
        ("best_splits (2000 x 120, 8 nodes)", "best_splits", _split_inputs(2000, 120, 8)),
    ]
    print(f"{'kernel':<40}{'python s':>12}{'cython s':>12}{'speedup':>10}")
    for label, name, inputs in cases:
        py = _best(lambda: getattr(_kernels_py, name)(*inputs), args.repeat)
        if compiled is None:
            print(f"{label:<40}{py:>12.4f}{'-':>12}{'-':>10}")
            continue
        cy = _best(lambda: getattr(compiled, name)(*inputs), args.repeat)
        print(f"{label:<40}{py:>12.4f}{cy:>12.4f}{py / cy:>9.1f}x")


if __name__ == "__main__":
    main()
