"""Reduction of the hybrid equation to ``x(n+1) = C(n) x(n) + h(n)``."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import CoefficientSystem, SequenceWindow
from .errors import NearSingularJ
from .io import matrix_header, write_csv
from .transition import DEFAULT_COND_CEILING, HybridKernel, cell_integrals, gauss_times


@dataclass(frozen=True)
class DiscreteSystem:
    """``C(n)``, ``h(n)`` for ``n = n_min .. n_max``.

    Solutions of the recursion live on ``n_min .. n_max + 1``.
    """

    n_min: int
    C: np.ndarray
    h: np.ndarray
    constant: bool = False
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        C = np.asarray(self.C, dtype=float)
        h = np.asarray(self.h, dtype=float)
        if C.ndim != 3 or C.shape[1] != C.shape[2]:
            raise ValueError("C must have shape (W, q, q)")
        if h.shape != C.shape[:2]:
            raise ValueError("h must have shape (W, q)")
        if not (np.isfinite(C).all() and np.isfinite(h).all()):
            raise ValueError("C and h must be finite")
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "h", h)

    @property
    def n_max(self) -> int:
        return self.n_min + self.C.shape[0] - 1

    @property
    def window(self) -> tuple[int, int]:
        return self.n_min, self.n_max

    @property
    def q(self) -> int:
        return self.C.shape[1]

    @property
    def W(self) -> int:
        return self.C.shape[0]

    def C_at(self, n: int) -> np.ndarray:
        return self.C[self._idx(n)]

    def h_at(self, n: int) -> np.ndarray:
        return self.h[self._idx(n)]

    def _idx(self, n):
        if not self.n_min <= n <= self.n_max:
            raise IndexError(f"n={n} outside [{self.n_min}, {self.n_max}]")
        return n - self.n_min

    def with_forcing(self, h) -> "DiscreteSystem":
        h = np.asarray(h, dtype=float)
        return DiscreteSystem(self.n_min, self.C, h, self.constant and bool(np.all(h == h[0])), dict(self.meta))

    def restrict(self, a: int, b: int) -> "DiscreteSystem":
        i, j = self._idx(a), self._idx(b)
        return DiscreteSystem(a, self.C[i : j + 1], self.h[i : j + 1], self.constant, dict(self.meta))

    @classmethod
    def constant_system(cls, C, h, n_min: int, n_max: int) -> "DiscreteSystem":
        C = np.atleast_2d(np.asarray(C, dtype=float))
        q = C.shape[0]
        h = np.asarray(h, dtype=float).reshape(q)
        W = n_max - n_min + 1
        return cls(n_min, np.tile(C, (W, 1, 1)), np.tile(h, (W, 1)), True)

    def to_csv(self, path):
        q = self.q
        rows = [[n, *self.C[i].ravel(), *self.h[i]] for i, n in enumerate(range(self.n_min, self.n_max + 1))]
        return write_csv(path, ["n", *matrix_header("C", q), *matrix_header("h", q, square=False)], rows)


def forcing_table(hk: HybridKernel, system: CoefficientSystem | None = None, values: np.ndarray | None = None) -> np.ndarray:
    """``IF[i, j] = int_n^{n+j/m} Phi(n, u) f(u) du``, shape (N, m+1, q).

    ``values`` (forcing at the Gauss points, shape (N, m, 5, q)) overrides
    ``system.f``; this is how the fixed-point solvers inject their forcing.
    """
    kernel = hk.transition
    grid = kernel.grid
    if values is None:
        tiled = kernel.tiled and system.autonomous
        N = 1 if tiled else grid.n_intervals
        ts, ns = gauss_times(grid, N)
        values = system.eval_f(ts, ns)
        table = cell_integrals(kernel, values)
        if tiled and grid.n_intervals > 1:
            table = np.broadcast_to(table, (grid.n_intervals,) + table.shape[1:])
        return table
    return cell_integrals(kernel, values)


def reduce(hk: HybridKernel, system: CoefficientSystem | None = None, window=None, IF=None) -> DiscreteSystem:
    """``C(n) = Z(n+1, n)`` and ``h(n) = int_n^{n+1} Phi(n+1, u) f(u) du``.

    Parameters
    ----------
    window : (n_min, n_max), optional
        Integers whose C(n), h(n) are wanted; defaults to every interval of
        the kernel's grid.
    IF : array, optional
        Precomputed :func:`forcing_table`.
    """
    grid = hk.grid
    if window is None:
        window = (grid.t_start, grid.t_end - 1)
    n_min, n_max = int(window[0]), int(window[1])
    if n_min < grid.t_start or n_max > grid.t_end - 1 or n_min > n_max:
        raise ValueError(f"window {window} not covered by kernel grid [{grid.t_start}, {grid.t_end}]")
    if IF is None:
        IF = forcing_table(hk, system)
    sl = slice(n_min - grid.t_start, n_max - grid.t_start + 1)
    C = np.array(hk.Z_nodes[sl, -1])
    h = np.einsum("nij,nj->ni", hk.transition.phi_int[sl], IF[sl, -1])
    if not (np.isfinite(C).all() and np.isfinite(h).all()):
        raise ValueError("non-finite quadrature in reduction")
    constant = bool(hk.transition.tiled and system is not None and system.autonomous)
    return DiscreteSystem(n_min, C, h, constant)


def _solve_checked(C, rhs, n, ceiling):
    s = np.linalg.svd(C, compute_uv=False)
    if s[-1] == 0 or s[0] / s[-1] > ceiling:
        raise NearSingularJ(f"C({n}) is singular or ill-conditioned on the backward sweep", interval=n)
    return np.linalg.solve(C, rhs)


def iterate(disc: DiscreteSystem, x0, n0: int, n1: int, cond_ceiling: float = DEFAULT_COND_CEILING) -> SequenceWindow:
    """Run the recursion from ``x(n0) = x0`` to ``n1`` (either direction)."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    lo, hi = min(n0, n1), max(n0, n1)
    if lo < disc.n_min or hi > disc.n_max + 1:
        raise IndexError(f"[{lo}, {hi}] not inside recursion range [{disc.n_min}, {disc.n_max + 1}]")
    out = np.empty((hi - lo + 1, disc.q))
    x = x0
    if n1 >= n0:
        out[0] = x
        for k, n in enumerate(range(n0, n1)):
            i = n - disc.n_min
            x = disc.C[i] @ x + disc.h[i]
            out[k + 1] = x
    else:
        out[-1] = x
        for k, n in enumerate(range(n0 - 1, n1 - 1, -1)):
            i = n - disc.n_min
            x = _solve_checked(disc.C[i], x - disc.h[i], n, cond_ceiling)
            out[-2 - k] = x
    return SequenceWindow(lo, out)
