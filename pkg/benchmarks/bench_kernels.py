"""Compiled vs pure-numpy kernels.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--scale 1]

Times each hot loop in both backends on the same inputs, checks that the
outputs agree and prints the speedup.  The end-to-end row times one
bounded-solution solve with each backend swapped into the dichotomy module.
"""
import argparse
import timeit

import numpy as np

from depcalab import _pykernels, dichotomy
from depcalab.reduction import DiscreteSystem

try:
    from depcalab import _ckernels
except ImportError:
    _ckernels = None


def _cases(scale, rng):
    W, q = 4000 * scale, 3
    C = rng.normal(size=(W, q, q)) * 0.3
    h = rng.normal(size=(W, q))
    P = np.broadcast_to(np.diag([1.0, 1.0, 0.0]), (W, q, q)).copy()
    Q = np.eye(q) - P
    steps = rng.normal(size=(64, 60 * scale, q, q)) * 0.5
    init = np.broadcast_to(np.eye(q), (64, q, q)).copy()
    vals = rng.normal(size=(20_000 * scale, 2))
    shifts = np.arange(0, 200, dtype=np.int64)
    idx = np.arange(500, 19_000 * scale, dtype=np.int64)
    return {
        "projected_sweep_forward": (C, h, P),
        "projected_sweep_backward": (C, h, Q),
        "chain_products": (steps, init),
        "remote_variation": (vals, shifts, idx),
    }


def _time(fn, args, repeat):
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def _end_to_end(backend, repeat):
    n = np.arange(-1500, 1501)
    C = np.zeros((len(n), 2, 2))
    C[:, 0, 0] = 0.5 + 0.1 * np.sin(n)
    C[:, 1, 1] = 2.0 + 0.3 * np.cos(np.sqrt(2) * n)
    C[:, 0, 1] = 0.2
    disc = DiscreteSystem(-1500, C, np.stack([np.cos(n), np.ones(len(n))], axis=1))
    dd = dichotomy.detect_dichotomy(disc)
    saved = dichotomy.kernels
    dichotomy.kernels = backend
    try:
        return _time(lambda: dichotomy.bounded_solution(disc, dd), (), repeat)
    finally:
        dichotomy.kernels = saved


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--scale", type=int, default=1)
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled extension not built; run `pip install -e . --no-build-isolation` first")
        return 1

    rng = np.random.default_rng(0)
    print(f"{'kernel':<28}{'python [ms]':>14}{'cython [ms]':>14}{'speedup':>10}")
    for name, inputs in _cases(args.scale, rng).items():
        py, cy = getattr(_pykernels, name), getattr(_ckernels, name)
        if not np.allclose(py(*inputs), cy(*inputs), rtol=1e-10, atol=1e-12):
            raise SystemExit(f"{name}: backends disagree")
        tp, tc = _time(py, inputs, args.repeat), _time(cy, inputs, args.repeat)
        print(f"{name:<28}{1e3 * tp:>14.2f}{1e3 * tc:>14.2f}{tp / tc:>10.1f}")
    tp, tc = _end_to_end(_pykernels, args.repeat), _end_to_end(_ckernels, args.repeat)
    print(f"{'bounded_solution (W=3000)':<28}{1e3 * tp:>14.2f}{1e3 * tc:>14.2f}{tp / tc:>10.1f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
