"""Lasota-Wazewska model with piecewise constant argument,

    y'(t) = -delta(t) y(t) + p(t) f(y([t])),   f(y) = exp(-gamma y),

the survival model for red blood cells.  Simulation, the kernel scan for
the exponential factor, and the positive bounded solution as a fixed
point of ``psi -> int_{-inf}^t e^{-int_u^t delta} p(u) f(psi([u])) du``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .core import CoefficientSystem, SequenceWindow, TimeGrid, build_grid, parallel_map
from .depca import HybridSolution
from .dichotomy import bounded_solution, detect_dichotomy, truncation_index
from .errors import ConfigError, NoContraction, NoDichotomy, NonConvergence, NonGridShift
from .io import write_csv
from .rap import SampledFunction, scan_function
from .reduction import forcing_table, reduce
from .transition import GAUSS_W, GAUSS_X, build_kernels


def _as_function(v) -> Callable:
    if callable(v):
        return v
    c = float(v)
    return lambda t: np.full(np.shape(t), c)


def bohr_mean(fn, T: float, m: int = 20) -> float:
    """Finite-window mean ``(1/2T) int_{-T}^{T} fn`` (composite Gauss rule)."""
    if T <= 0:
        raise ValueError("T must be positive")
    K = int(math.ceil(2 * T * m))
    h = 2 * T / K
    t = -T + h * (np.arange(K)[:, None] + GAUSS_X[None, :])
    return float(np.sum(fn(t) * GAUSS_W) * h / (2 * T))


@dataclass(frozen=True)
class LasotaParams:
    """Model data.

    ``delta`` and ``p`` are positive functions of time (vectorized) or
    constants; ``f_prod`` defaults to ``exp(-gamma y)`` and must be
    ``lipschitz``-Lipschitz on ``y >= 0`` (default ``gamma``).
    ``delta_minus`` is a lower bound for the mean of ``delta``; by default
    half the measured window mean.
    """

    delta: Callable | float = 1.0
    p: Callable | float = 1.0
    gamma: float = 0.1
    f_prod: Callable | None = None
    lipschitz: float | None = None
    delta_minus: float | None = None
    mean_window: float = 500.0

    @property
    def delta_fn(self) -> Callable:
        return _as_function(self.delta)

    @property
    def p_fn(self) -> Callable:
        return _as_function(self.p)

    @property
    def f(self) -> Callable:
        if self.f_prod is not None:
            return self.f_prod
        g = self.gamma
        return lambda y: np.exp(-g * np.asarray(y, dtype=float))

    @property
    def L(self) -> float:
        return self.gamma if self.lipschitz is None else float(self.lipschitz)

    def with_gamma(self, gamma: float) -> "LasotaParams":
        from dataclasses import replace

        return replace(self, gamma=float(gamma))

    def mean_delta(self) -> float:
        return bohr_mean(self.delta_fn, self.mean_window)

    def lower_mean(self) -> float:
        mean = self.mean_delta()
        dm = 0.5 * mean if self.delta_minus is None else float(self.delta_minus)
        if dm <= 0 or mean <= dm:
            raise NoDichotomy(
                f"mean of delta on [-{self.mean_window}, {self.mean_window}] is {mean:.4g}, "
                f"not above delta_minus={dm:.4g}",
                mean=mean,
            )
        return dm

    def validate(self, grid: TimeGrid):
        t = grid.times
        d = self.delta_fn(t)
        pv = self.p_fn(t)
        if np.any(d <= 0) or np.any(pv <= 0):
            raise ConfigError("delta and p must be positive on the window")
        self.lower_mean()

    def system(self) -> CoefficientSystem:
        """``y' = -delta y + p`` (the forcing scaled by ``f`` later)."""
        d, p = self.delta_fn, self.p_fn
        auto = not callable(self.delta) and not callable(self.p)
        return CoefficientSystem(
            1,
            lambda ts: -np.asarray(d(ts), dtype=float)[..., None, None],
            lambda ts: np.zeros(np.shape(ts) + (1, 1)),
            lambda ts: np.asarray(p(ts), dtype=float)[..., None],
            autonomous=auto,
            name="lasota",
        )


def _per_interval(hk, system):
    """Transition values and the unit-production integrals per interval."""
    IFp = forcing_table(hk, system)  # int_n^{n+j/m} Phi(n,u) p(u) du
    return hk.transition.phi_nodes[..., 0, 0], IFp[..., 0]


def simulate(params: LasotaParams, y0: float, grid: TimeGrid) -> HybridSolution:
    """Trajectory from ``y(t_start) = y0``.

    On each interval ``y(t) = e^{-int_n^t delta} y(n) + f(y(n)) int_n^t
    e^{-int_u^t delta} p(u) du``; the integrals come from the tabulated
    transition factor, so there is no time stepping across integers.
    """
    if y0 < 0:
        raise ConfigError("initial value must be nonnegative")
    system = params.system()
    hk = build_kernels(system, grid)
    phi, IFp = _per_interval(hk, system)
    f = params.f
    N, m = grid.n_intervals, grid.m
    local = np.empty((N, m + 1))
    anchors = np.empty(N + 1)
    anchors[0] = y0
    for i in range(N):
        fy = float(f(anchors[i]))
        local[i] = phi[i] * (anchors[i] + fy * IFp[i])
        anchors[i + 1] = local[i, -1]
    return _finish(params, grid, local, anchors)


def _finish(params, grid, local, anchors, meta=None):
    ts = grid.times
    N, m = grid.n_intervals, grid.m
    tn = grid.t_start + np.arange(N)[:, None] + np.arange(m + 1)[None, :] / m
    fy = params.f(anchors[:-1])[:, None]
    deriv = -params.delta_fn(tn) * local + params.p_fn(tn) * fy
    return HybridSolution(grid, local[..., None], deriv[..., None], SequenceWindow(grid.t_start, anchors[:, None]), meta or {})


# ---------------------------------------------------------------------------
# kernel scan
# ---------------------------------------------------------------------------


@dataclass
class KernelScan:
    taus: np.ndarray
    proxy: np.ndarray
    depth: float
    window: tuple
    K: float

    def to_csv(self, path):
        return write_csv(path, ["tau", "proxy"], [[float(t), float(v)] for t, v in zip(self.taus, self.proxy)])


def truncation_depth(delta_minus: float, tol: float, K: float = 1.0) -> int:
    """``L = ceil(ln(range / tol) / delta_minus)`` with ``range = 2K/delta_minus``,
    the integral of the worst-case tail ``2K e^{-delta_minus (t-s)}``."""
    rng = 2.0 * K / delta_minus
    return max(1, math.ceil(math.log(rng / tol) / delta_minus))


def ergodic_kernel_scan(
    delta,
    taus,
    T0: float,
    T: float,
    tol: float = 1e-8,
    delta_minus: float | None = None,
    m: int = 50,
    t_step: float = 0.5,
) -> KernelScan:
    """Tail sup over ``T0 <= |t| <= T`` of

        int_{t-L}^{t} |e^{-int_{s+tau}^{t+tau} delta} - e^{-int_s^t delta}| ds

    for each ``tau`` (multiples of ``1/m``).  ``L`` comes from
    :func:`truncation_depth` with the constant ``K`` of the bound
    ``e^{-int_s^t delta} <= K e^{-delta_minus (t-s)}`` measured on the
    window.

    Raises
    ------
    NoDichotomy
        If the window mean of ``delta`` is not positive (no exponential
        truncation possible).
    """
    delta = _as_function(delta)
    taus = np.asarray(list(taus), dtype=float)
    shifts = np.rint(taus * m).astype(int)
    if np.any(np.abs(shifts - taus * m) > 1e-9 * np.maximum(1, np.abs(taus * m))):
        raise NonGridShift(f"translations must be multiples of 1/{m}")
    span = float(T) + float(np.abs(taus).max(initial=0.0))
    mean = bohr_mean(delta, span)
    if mean <= 0:
        raise NoDichotomy(f"mean of delta on the window is {mean:.4g} <= 0", mean=mean)
    dm = 0.5 * mean if delta_minus is None else float(delta_minus)

    # cumulative integral D on a uniform grid wide enough for all shifts
    L0 = truncation_depth(dm, tol)
    for _ in range(3):
        lo = -span - L0 - 1
        x = lo + np.arange(int(math.ceil((2 * span + L0 + 2) * m)) + 1) / m
        dv = delta(x)
        D = cumulative_trapezoid(dv, x, initial=0.0)
        E = dm * x - D
        K = math.exp(float(np.max(E - np.minimum.accumulate(E))))
        L = truncation_depth(dm, tol, K)
        if L <= L0:
            break
        L0 = L
    L = L0
    tt = np.concatenate([np.arange(-T, -T0 + 1e-12, t_step), np.arange(T0, T + 1e-12, t_step)])
    it = np.rint((tt - lo) * m).astype(int)
    depth = int(L * m)
    w = np.full(depth + 1, 1.0 / m)
    w[[0, -1]] *= 0.5

    def one(k):
        s = it[:, None] - np.arange(depth, -1, -1)[None, :]
        base = np.exp(-(D[it][:, None] - D[s]))
        shifted = np.exp(-(D[it + k][:, None] - D[s + k]))
        return float(np.max(np.abs(shifted - base) @ w))

    proxy = np.array(parallel_map(one, shifts))
    return KernelScan(taus, proxy, float(L), (T0, T), K)


# ---------------------------------------------------------------------------
# positive bounded solution
# ---------------------------------------------------------------------------


def rap_positive_solution(
    params: LasotaParams,
    grid: TimeGrid,
    tol: float = 1e-10,
    max_iter: int = 500,
    rap_epsilon: float | None = None,
    scan_taus=None,
    pad: int | None = None,
) -> HybridSolution:
    """Unique positive bounded solution on ``grid`` by fixed-point iteration.

    ``psi -> y`` with ``y`` the bounded solution of ``y' = -delta y +
    p f(psi([t]))``; since the forcing is frozen on each interval, every
    step is a discrete bounded-solution problem for the integer values.
    The contraction factor is ``L_f S`` with ``S`` the sup of the bounded
    solution for ``f = 1``; the threshold is ``gamma* = 1 / S`` for the
    default production function.

    Raises
    ------
    NoContraction
        If ``L_f S >= 1``; ``details["gamma_star"]`` holds the threshold.
    """
    dm = params.lower_mean()
    system = params.system()
    if pad is None:
        pad = truncation_depth(dm, tol)
    padded = build_grid(grid.t_start - pad, grid.t_end + pad, grid.m)
    params.validate(padded)
    hk = build_kernels(system, padded)
    phi, IFp = _per_interval(hk, system)
    disc = reduce(hk, system)
    dd = detect_dichotomy(disc, P=np.eye(1))
    need = truncation_index(dd, float(np.max(np.abs(disc.h))), tol)
    if need > pad:
        return rap_positive_solution(params, grid, tol, max_iter, rap_epsilon, scan_taus, pad=need)

    # f = 1: S and the gamma = 0 solution
    unit = bounded_solution(disc, dd, tol, out="full").values[:, 0]
    a, b = pad, pad + grid.n_intervals
    S = float(np.max(unit[a : b + 1]))
    kappa = params.L * S
    gamma_star = 1.0 / S
    if kappa >= 1.0:
        raise NoContraction(
            f"contraction factor {kappa:.4g} >= 1 (threshold gamma* = {gamma_star:.6g})",
            kappa=kappa,
            gamma_star=gamma_star,
        )
    f = params.f
    hp = disc.h[:, 0]
    psi = unit.copy()
    ratios = []
    prev = None
    for k in range(1, max_iter + 1):
        h = (f(np.maximum(psi[:-1], 0.0)) * hp)[:, None]
        new = bounded_solution(disc.with_forcing(h), dd, out="full").values[:, 0]
        d = float(np.max(np.abs(new[a : b + 1] - psi[a : b + 1])))
        if prev:
            ratios.append(d / prev)
        prev = d
        psi = new
        if d <= tol:
            break
    else:
        raise NonConvergence(f"no convergence after {max_iter} iterations", iterations=max_iter, residual=prev)

    fy = f(psi[:-1])
    local = phi * (psi[:-1, None] + fy[:, None] * IFp)
    sol = _finish(params, padded, local, psi).restrict(grid.t_start, grid.t_end)
    sol.meta.update(
        kappa=kappa,
        gamma_star=gamma_star,
        S=S,
        iterations=k,
        residual=prev,
        residual_ratios=ratios,
        delta_minus=dm,
        mean_delta=params.mean_delta(),
        dichotomy=dd.summary(),
        pad=pad,
    )
    if rap_epsilon is not None:
        taus = range(0, max(2, grid.n_intervals // 4)) if scan_taus is None else scan_taus
        T0 = max(1, min(-grid.t_start, grid.t_end) // 4)
        report = scan_function(SampledFunction.from_solution(sol), rap_epsilon, T0, taus, mode="RAP")
        sol.meta["rap"] = report.summary()
    return sol


def gamma_sweep(params: LasotaParams, grid: TimeGrid, gammas, tol: float = 1e-10) -> list[dict]:
    """Rows (gamma, kappa, converged) for the threshold study."""

    def one(g):
        try:
            sol = rap_positive_solution(params.with_gamma(g), grid, tol)
            return {"gamma": float(g), "kappa": sol.meta["kappa"], "converged": True, "gamma_star": sol.meta["gamma_star"]}
        except NoContraction as exc:
            return {"gamma": float(g), "kappa": exc.details["kappa"], "converged": False, "gamma_star": exc.details["gamma_star"]}
        except NonConvergence:
            return {"gamma": float(g), "kappa": math.nan, "converged": False, "gamma_star": math.nan}

    return parallel_map(one, gammas)


def write_sweep(path, rows):
    return write_csv(path, ["gamma", "kappa", "converged"], [[r["gamma"], r["kappa"], r["converged"]] for r in rows])
