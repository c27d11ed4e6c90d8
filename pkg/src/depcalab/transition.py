"""Transition matrix of ``z' = A(t) z`` and the hybrid kernels J, Z.

Everything is tabulated per unit interval ``[n, n+1]`` relative to its
left integer: ``phi_nodes[i, j] = Phi(n_i + j/m, n_i)``.  Values at
Gauss points and longer spans are derived from these tables.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import CoefficientSystem, TimeGrid
from .errors import IntegratorBlowUp, NearSingularJ
from .io import matrix_header, write_csv

_GL_X, _GL_W = np.polynomial.legendre.leggauss(5)
GAUSS_X = (_GL_X + 1.0) / 2.0
GAUSS_W = _GL_W / 2.0

DEFAULT_SUBSTEPS = 4
DEFAULT_COND_CEILING = 1e8


def gauss_times(grid: TimeGrid, n_intervals: int | None = None):
    """Gauss points of every grid cell, shape (N, m, 5), with interval indices."""
    N = grid.n_intervals if n_intervals is None else n_intervals
    m = grid.m
    n = grid.t_start + np.arange(N)
    ts = n[:, None, None] + (np.arange(m)[None, :, None] + GAUSS_X[None, None, :]) / m
    ns = np.broadcast_to(n[:, None, None], ts.shape)
    return ts, ns


def node_times(grid: TimeGrid, n_intervals: int | None = None):
    N = grid.n_intervals if n_intervals is None else n_intervals
    n = grid.t_start + np.arange(N)
    ts = n[:, None] + np.arange(grid.m + 1)[None, :] / grid.m
    return ts, np.broadcast_to(n[:, None], ts.shape)


def _rk4(system, t0, ns, Y, span, nsteps):
    """Integrate ``Y' = A(t) Y`` over ``span`` (per batch entry) in ``nsteps`` steps."""
    h = (span / nsteps)[:, None, None]
    t = np.array(t0, dtype=float)
    hh = span / nsteps
    for _ in range(nsteps):
        A0 = system.eval_A(t, ns)
        Am = system.eval_A(t + hh / 2, ns)
        A1 = system.eval_A(t + hh, ns)
        k1 = A0 @ Y
        k2 = Am @ (Y + h / 2 * k1)
        k3 = Am @ (Y + h / 2 * k2)
        k4 = A1 @ (Y + h * k3)
        Y = Y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t = t + hh
    return Y


def _svd_extremes(X):
    s = np.linalg.svd(X, compute_uv=False)
    return s[..., 0], s[..., -1]


@dataclass(frozen=True)
class TransitionKernel:
    """Tabulated transition matrix on a grid.

    Attributes
    ----------
    phi_nodes : (N, m+1, q, q) array
        ``Phi(n + j/m, n)`` for every interval.
    phi_gauss : (N, m, 5, q, q) array
        ``Phi(g, n)`` at the 5 Gauss points of each cell.
    K0 : float
        Measured sup of ``|Phi(t, s)|`` over sampled node pairs with
        ``|t - s| <= 1``.
    tiled : bool
        True when one interval was computed and broadcast (time-invariant A).
    """

    grid: TimeGrid
    q: int
    phi_nodes: np.ndarray
    phi_gauss: np.ndarray
    substeps: int
    K0: float
    tiled: bool = False
    integrator_order: int = 4

    @property
    def phi_int(self) -> np.ndarray:
        """``Phi(n+1, n)`` per interval."""
        return self.phi_nodes[:, -1]

    @property
    def phi_gauss_inv(self) -> np.ndarray:
        inv = self.__dict__.get("_phi_gauss_inv")
        if inv is None:
            if self.tiled:
                inv = np.broadcast_to(np.linalg.inv(self.phi_gauss[:1]), self.phi_gauss.shape)
            else:
                inv = np.linalg.inv(self.phi_gauss)
            object.__setattr__(self, "_phi_gauss_inv", inv)
        return inv

    def locate(self, t) -> tuple[int, int]:
        """(interval index, offset) of node ``t``; integers start an interval
        except ``t_end``, which closes the last one."""
        k = self.grid.index_of(t)
        return self.grid.split(k)

    def _local(self, i, j):
        return self.phi_nodes[i, j]

    def phi(self, t, s) -> np.ndarray:
        """``Phi(t, s)`` for grid nodes ``t``, ``s`` (either order)."""
        kt, ks = self.grid.index_of(t), self.grid.index_of(s)
        if kt < ks:
            return np.linalg.inv(self.phi(s, t))
        it, jt = self.grid.split(kt)
        is_, js = self.grid.split(ks)
        if it == is_:
            return self._local(it, jt) @ np.linalg.inv(self._local(is_, js))
        M = self.phi_int[is_] @ np.linalg.inv(self._local(is_, js))
        for k in range(is_ + 1, it):
            M = self.phi_int[k] @ M
        if jt == 0:
            return M
        return self._local(it, jt) @ M

    def phi_integers(self, n: int, k: int) -> np.ndarray:
        """``Phi(n, k)`` for integers by chaining unit factors."""
        return self.phi(n, k)

    def to_csv(self, path):
        q, m = self.q, self.grid.m
        rows = []
        for i in range(self.grid.n_intervals):
            n = self.grid.t_start + i
            for j in range(m + 1):
                rows.append([n + j / m, n, *self.phi_nodes[i, j].ravel()])
        return write_csv(path, ["t", "s", *matrix_header("phi", q)], rows)


def _measure_K0(phi_nodes, m):
    stride = max(1, m // 10)
    js = sorted(set(range(0, m + 1, stride)) | {m})
    off = np.array(js) / m
    P = phi_nodes[:, js]
    Pinv = np.linalg.inv(P)
    within = P[:, :, None] @ Pinv[:, None, :]
    smax, smin = _svd_extremes(within)
    best = max(float(smax.max()), float((1.0 / smin).max()))
    if phi_nodes.shape[0] > 1:
        link = phi_nodes[:-1, -1]
    else:
        link = phi_nodes[:1, -1]
    right = P[1:] if phi_nodes.shape[0] > 1 else P
    left_inv = Pinv[:-1] if phi_nodes.shape[0] > 1 else Pinv
    cross = right[:, :, None] @ (link[:, None, None] @ left_inv[:, None, :])
    mask = (off[:, None] + 1.0 - off[None, :]) <= 1.0 + 1e-12
    smax, smin = _svd_extremes(cross[:, mask])
    best = max(best, float(smax.max()), float((1.0 / smin).max()))
    return best


def fundamental(system: CoefficientSystem, grid: TimeGrid, substeps: int = DEFAULT_SUBSTEPS) -> TransitionKernel:
    """Tabulate ``Phi`` with classical RK4, ``substeps`` micro-steps per cell.

    Intervals are integrated independently (vectorized), each starting from
    the identity at its left integer, so errors never accumulate across
    integers.  Time-invariant systems compute a single interval.
    """
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    q, m = system.q, grid.m
    tiled = bool(system.autonomous)
    N = 1 if tiled else grid.n_intervals
    n = grid.t_start + np.arange(N)
    Y = np.broadcast_to(np.eye(q), (N, q, q)).copy()
    nodes = np.empty((N, m + 1, q, q))
    nodes[:, 0] = Y
    ns = n.astype(float)
    step = np.full(N, 1.0 / m)
    for j in range(m):
        Y = _rk4(system, n + j / m, ns, Y, step, substeps)
        nodes[:, j + 1] = Y
    finite = np.isfinite(nodes).reshape(N, -1).all(axis=1)
    if not finite.all():
        i = int(np.argmin(finite))
        raise IntegratorBlowUp(f"non-finite transition matrix on interval [{n[i]}, {n[i] + 1}]")

    # Gauss points: integrate from each cell's left node
    ts, nsg = gauss_times(grid, N)
    start = nodes[:, :-1]
    Yg = np.broadcast_to(start[:, :, None], (N, m, 5, q, q)).reshape(-1, q, q)
    t0 = (n[:, None, None] + np.arange(m)[None, :, None] / m + 0 * GAUSS_X).reshape(-1)
    span = np.broadcast_to(GAUSS_X / m, (N, m, 5)).reshape(-1)
    gauss = _rk4(system, t0, nsg.reshape(-1).astype(float), Yg, span, substeps).reshape(N, m, 5, q, q)
    if not np.isfinite(gauss).all():
        raise IntegratorBlowUp("non-finite transition matrix at quadrature points")

    K0 = _measure_K0(nodes, m)
    if tiled and grid.n_intervals > 1:
        nodes = np.broadcast_to(nodes, (grid.n_intervals,) + nodes.shape[1:])
        gauss = np.broadcast_to(gauss, (grid.n_intervals,) + gauss.shape[1:])
    return TransitionKernel(grid, q, nodes, gauss, substeps, K0, tiled)


@dataclass(frozen=True)
class HybridKernel:
    """``J(t, s) = I + int_s^t Phi(s, u) B(u) du`` and ``Z = Phi J``.

    ``IB[i, j] = int_n^{n+j/m} Phi(n, u) B(u) du`` is the cumulative table;
    ``J_nodes = J(n + j/m, n)``, ``Z_nodes = Z(n + j/m, n)`` and
    ``J_right = J(n + 1, n + j/m)``.
    """

    transition: TransitionKernel
    IB: np.ndarray
    J_nodes: np.ndarray
    Z_nodes: np.ndarray
    J_right: np.ndarray
    j_condition: float
    cond_ceiling: float

    @property
    def grid(self) -> TimeGrid:
        return self.transition.grid

    @property
    def q(self) -> int:
        return self.transition.q

    def _same_interval(self, t, s):
        it, jt = self.transition.locate(t)
        is_, js = self.transition.locate(s)
        if it != is_:
            # a node at an integer may close the previous interval
            if jt == 0 and it == is_ + 1:
                return is_, self.grid.m, js
            if js == 0 and is_ == it + 1:
                return it, jt, self.grid.m
            raise ValueError(f"J(t,s) needs t and s in one closed unit interval, got t={t}, s={s}")
        return it, jt, js

    def J(self, t, s) -> np.ndarray:
        i, jt, js = self._same_interval(t, s)
        phi_s = self.transition.phi_nodes[i, js]
        return np.eye(self.q) + phi_s @ (self.IB[i, jt] - self.IB[i, js])

    def Z(self, t, s) -> np.ndarray:
        i, jt, js = self._same_interval(t, s)
        phi_ts = self.transition.phi_nodes[i, jt] @ np.linalg.inv(self.transition.phi_nodes[i, js])
        return phi_ts @ self.J(t, s)

    def C(self) -> np.ndarray:
        """``Z(n+1, n)`` per interval."""
        return self.Z_nodes[:, -1]

    def to_csv(self, path, which="Z"):
        table = {"J": self.J_nodes, "Z": self.Z_nodes}[which]
        q, m = self.q, self.grid.m
        rows = []
        for i in range(self.grid.n_intervals):
            n = self.grid.t_start + i
            for j in range(m + 1):
                rows.append([n + j / m, n, *table[i, j].ravel()])
        return write_csv(path, ["t", "s", *matrix_header(which, q)], rows)


def cell_integrals(kernel: TransitionKernel, values: np.ndarray) -> np.ndarray:
    """Cumulative ``int_n^{n+j/m} Phi(n, u) v(u) du`` from Gauss-point values.

    ``values`` has shape (N, m, 5, q) or (N, m, 5, q, q); the result has
    shape (N, m+1, ...).
    """
    m = kernel.grid.m
    inv = kernel.phi_gauss_inv
    if values.shape[0] == 1 and inv.shape[0] > 1 and kernel.tiled:
        inv = inv[:1]
    if values.ndim == 4:
        prod = np.einsum("nmgij,nmgj->nmgi", inv, values)
    else:
        prod = inv @ values
    cell = np.tensordot(GAUSS_W, np.moveaxis(prod, 2, 0), axes=1) / m
    out = np.zeros((cell.shape[0], m + 1) + cell.shape[2:])
    np.cumsum(cell, axis=1, out=out[:, 1:])
    return out


def hybrid_kernels(kernel: TransitionKernel, system: CoefficientSystem, cond_ceiling: float = DEFAULT_COND_CEILING) -> HybridKernel:
    """Tabulate J and Z with 5-point Gauss-Legendre per cell.

    Raises
    ------
    NearSingularJ
        If the condition number of some ``J(n + j/m, n)`` or
        ``J(n + 1, n + j/m)`` exceeds ``cond_ceiling``.
    """
    grid, q = kernel.grid, kernel.q
    N = 1 if kernel.tiled else grid.n_intervals
    ts, ns = gauss_times(grid, N)
    Bg = system.eval_B(ts, ns)
    IB = cell_integrals(kernel, Bg)
    phi_nodes = kernel.phi_nodes[:N]
    eye = np.eye(q)
    J_nodes = eye + IB
    Z_nodes = phi_nodes @ J_nodes
    J_right = eye + phi_nodes @ (IB[:, -1:] - IB)

    worst = 1.0
    for name, tab in (("J(t,n)", J_nodes), ("J(n+1,s)", J_right)):
        smax, smin = _svd_extremes(tab)
        with np.errstate(divide="ignore", invalid="ignore"):
            # J = I + (...), so measure against the identity scale; a plain
            # smax/smin is identically 1 for scalars
            cond = np.where(smin > 0, np.maximum(smax, 1.0) / np.where(smin > 0, smin, 1.0), np.inf)
        k = np.unravel_index(int(np.argmax(cond)), cond.shape)
        c = float(cond[k])
        worst = max(worst, c)
        if not c <= cond_ceiling:
            n = grid.t_start + int(k[0])
            pt = n + k[1] / grid.m
            raise NearSingularJ(
                f"{name} has condition {c:.3g} > {cond_ceiling:.3g} at node {pt} of interval [{n}, {n + 1}]",
                condition=c,
                interval=n,
            )
    if kernel.tiled and grid.n_intervals > 1:
        full = (grid.n_intervals,)
        IB = np.broadcast_to(IB, full + IB.shape[1:])
        J_nodes = np.broadcast_to(J_nodes, full + J_nodes.shape[1:])
        Z_nodes = np.broadcast_to(Z_nodes, full + Z_nodes.shape[1:])
        J_right = np.broadcast_to(J_right, full + J_right.shape[1:])
    return HybridKernel(kernel, IB, J_nodes, Z_nodes, J_right, worst, cond_ceiling)


def build_kernels(system, grid, substeps=DEFAULT_SUBSTEPS, cond_ceiling=DEFAULT_COND_CEILING) -> HybridKernel:
    return hybrid_kernels(fundamental(system, grid, substeps), system, cond_ceiling)


def restrict(hk: HybridKernel, t_start: int, t_end: int) -> HybridKernel:
    """Sub-kernel on ``[t_start, t_end]`` (integers inside the kernel grid)."""
    grid = hk.grid
    if t_start < grid.t_start or t_end > grid.t_end or t_start >= t_end:
        raise ValueError(f"[{t_start}, {t_end}] not inside kernel grid [{grid.t_start}, {grid.t_end}]")
    sl = slice(t_start - grid.t_start, t_end - grid.t_start)
    tk = hk.transition
    sub = TransitionKernel(
        TimeGrid(t_start, t_end, grid.m), tk.q, tk.phi_nodes[sl], tk.phi_gauss[sl], tk.substeps, tk.K0, tk.tiled
    )
    if "_phi_gauss_inv" in tk.__dict__:
        object.__setattr__(sub, "_phi_gauss_inv", tk.__dict__["_phi_gauss_inv"][sl])
    return HybridKernel(sub, hk.IB[sl], hk.J_nodes[sl], hk.Z_nodes[sl], hk.J_right[sl], hk.j_condition, hk.cond_ceiling)
