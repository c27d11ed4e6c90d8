"""Finite-window diagnostics for remote almost periodicity.

The limsup in the definition of a remote translation number is replaced
by the sup over the tail ``T0 <= |t| <= T``; relative density by a bound
on the largest gap between accepted translations.  Nothing here proves
membership in a function class.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .core import SequenceWindow, TimeGrid, build_grid, evaluate
from .errors import NonGridShift, UnboundedSequence, WindowTooSmall
from .io import write_csv, write_json
from .transition import node_times


@dataclass
class RapReport:
    epsilon: float
    taus: np.ndarray
    variation: np.ndarray
    window: tuple
    density_bound: float
    max_gap: float
    verdict: str
    mode: str = "sequence"
    notes: list = field(default_factory=list)

    @property
    def taus_found(self) -> list:
        return [_num(t) for t, v in zip(self.taus, self.variation) if v < self.epsilon]

    @property
    def remote_variation(self) -> dict:
        return {_num(t): float(v) for t, v in zip(self.taus, self.variation)}

    def summary(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "window": list(self.window),
            "density_bound": self.density_bound,
            "max_gap": self.max_gap,
            "verdict": self.verdict,
            "mode": self.mode,
            "n_scanned": int(len(self.taus)),
            "n_accepted": len(self.taus_found),
            "taus_found": self.taus_found,
            "notes": self.notes,
        }

    def to_csv(self, path):
        rows = [[_num(t), float(v), bool(v < self.epsilon)] for t, v in zip(self.taus, self.variation)]
        return write_csv(path, ["tau", "variation", "accepted"], rows)

    def to_json(self, path):
        return write_json(path, self.summary())


def _num(t):
    t = float(t)
    return int(t) if t.is_integer() else t


def _max_gap(taus, accepted):
    if len(taus) == 0:
        return 0.0
    pts = np.concatenate([[taus.min()], np.sort(taus[accepted]), [taus.max()]])
    return float(np.max(np.diff(pts))) if len(pts) > 1 else 0.0


def _verdict(taus, variation, epsilon, L):
    gap = _max_gap(taus, variation < epsilon)
    if gap <= L:
        return gap, "pass"
    if _max_gap(taus, variation < 2 * epsilon) <= L:
        return gap, "inconclusive"
    return gap, "fail"


def check_bounded(u: SequenceWindow, ratio: float = 1.5):
    """Reject sequences that visibly grow: the sup over the outer half of
    the window must not exceed ``ratio`` times the sup over the inner half."""
    v = np.linalg.norm(u.values, axis=1)
    if not np.all(np.isfinite(v)):
        raise UnboundedSequence("sequence has non-finite values")
    ns = np.abs(u.ns - 0.5 * (u.n_min + u.n_max))
    R = ns.max()
    inner, outer = v[ns <= R / 2], v[ns > R / 2]
    if outer.size and inner.size and outer.max() > ratio * inner.max() + 1e-12:
        raise UnboundedSequence(
            f"sequence grows across the window (outer sup {outer.max():.4g} > {ratio} x inner sup {inner.max():.4g})"
        )


def scan_sequence(
    u: SequenceWindow,
    epsilon: float,
    T0: int,
    tau_max: int,
    T: int | None = None,
    density_bound: float | None = None,
    check: bool = True,
) -> RapReport:
    """Remote variation ``max_{T0 <= |n| <= T} |u(n+tau) - u(n)|`` for
    ``tau = 0 .. tau_max``.

    ``T`` defaults to the largest value the window supports; the window
    must contain ``[-(T + tau_max), T + tau_max]``.  ``density_bound``
    defaults to ``tau_max / 10``.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if check:
        check_bounded(u)
    reach = min(-u.n_min, u.n_max) - tau_max
    if T is None:
        T = reach
    if T < T0 or T > reach or T0 < 0:
        raise WindowTooSmall(
            f"window [{u.n_min}, {u.n_max}] cannot hold tail [{T0}, {T}] with shifts up to {tau_max}",
            needed=(-(T + tau_max), T + tau_max),
        )
    ns = u.ns
    idx = np.where((np.abs(ns) >= T0) & (np.abs(ns) <= T))[0]
    taus = np.arange(0, tau_max + 1)
    var = kernels.remote_variation(u.values, taus, idx)
    L = tau_max / 10 if density_bound is None else density_bound
    gap, verdict = _verdict(taus, var, epsilon, L)
    return RapReport(float(epsilon), taus, np.asarray(var), (T0, T), float(L), gap, verdict, "sequence")


@dataclass(frozen=True)
class SampledFunction:
    """Grid samples of a function, per unit interval.

    ``local[i, m]`` is the left limit at ``n_i + 1``, so jumps at integers
    are representable.
    """

    grid: TimeGrid
    local: np.ndarray

    @property
    def q(self) -> int:
        return self.local.shape[-1]

    @property
    def values(self) -> np.ndarray:
        body = self.local[:, :-1].reshape(-1, self.q)
        return np.concatenate([body, self.local[-1:, -1]])

    def jumps(self) -> np.ndarray:
        """``|f(n+1^-) - f(n+1)|`` at the interior integers."""
        return np.linalg.norm(self.local[:-1, -1] - self.local[1:, 0], axis=-1)

    def at(self, t):
        """Value at a grid node (right value at integers)."""
        k = self.grid.index_of(t)
        i, j = self.grid.split(k)
        return self.local[i, j]

    @classmethod
    def from_callable(cls, fn, grid: TimeGrid, q: int = 1) -> "SampledFunction":
        """Sample ``fn`` (plain or interval-aware) with left limits at integers."""
        ts, ns = node_times(grid)
        return cls(grid, evaluate(fn, ts, ns, (q,)))

    @classmethod
    def from_solution(cls, sol) -> "SampledFunction":
        return cls(sol.grid, np.asarray(sol.local))


def interpolate_sequence(u: SequenceWindow, m: int = 10) -> SampledFunction:
    """Piecewise-linear ``f(t) = u_n + (t - n)(u_{n+1} - u_n)`` on ``[n_min, n_max]``."""
    if len(u) < 2:
        raise ValueError("need at least two values to interpolate")
    grid = build_grid(u.n_min, u.n_max, m)
    v = u.values
    theta = (np.arange(m + 1) / m)[None, :, None]
    local = v[:-1, None, :] + theta * (v[1:, None, :] - v[:-1, None, :])
    return SampledFunction(grid, local)


def _grid_shift(tau, m):
    k = tau * m
    kr = int(round(k))
    if abs(k - kr) > 1e-9 * max(1.0, abs(k)):
        raise NonGridShift(f"translation {tau} is not a multiple of the grid step 1/{m}")
    return kr


def scan_function(
    samples,
    epsilon: float,
    T0: float,
    taus,
    mode: str = "RAP",
    T: float | None = None,
    density_bound: float | None = None,
    jump_tol: float = 1e-8,
) -> RapReport:
    """Remote variation of a sampled function over grid-aligned shifts.

    ``mode="RAP"`` compares node values and first checks continuity at the
    integers (a function with jumps cannot be RAP; verdict ``fail``).
    ``mode="ZRAP"`` accepts integer shifts only and compares samples
    interval by interval, left limits included, so ``[t + tau] = [t] + tau``
    is respected and jumps at integers are allowed.
    """
    if hasattr(samples, "anchors"):
        samples = SampledFunction.from_solution(samples)
    if mode not in ("RAP", "ZRAP"):
        raise ValueError("mode must be RAP or ZRAP")
    g = samples.grid
    m = g.m
    taus = np.asarray(list(taus), dtype=float)
    shifts = np.array([_grid_shift(t, m) for t in taus], dtype=np.int64)
    if mode == "ZRAP" and np.any(shifts % m):
        raise NonGridShift("ZRAP scans take integer translations only")
    lo, hi = int(shifts.min(initial=0)), int(shifts.max(initial=0))
    reach = min(-g.t_start, g.t_end) - max(abs(lo), abs(hi)) / m
    if T is None:
        T = float(np.floor(reach))
    if T < T0 or T > reach:
        raise WindowTooSmall(f"grid [{g.t_start}, {g.t_end}] cannot hold tail [{T0}, {T}] with these shifts")
    notes = []
    L = (taus.max() - taus.min()) / 10 if density_bound is None else density_bound
    scale = max(1.0, float(np.max(np.abs(samples.local))))

    if mode == "RAP":
        jumps = samples.jumps()
        if jumps.size and jumps.max() > jump_tol * scale:
            k = int(np.argmax(jumps))
            notes.append(f"jump of {jumps[k]:.3g} at t={g.t_start + k + 1}: not continuous, cannot be RAP")
        vals = samples.values
        ts = g.times
        idx = np.where((np.abs(ts) >= T0) & (np.abs(ts) <= T))[0]
        var = kernels.remote_variation(vals, shifts, idx)
        gap, verdict = _verdict(taus, var, epsilon, L)
        if notes:
            verdict = "fail"
    else:
        N = g.n_intervals
        # samples of interval i sit at flat positions i*(m+1) .. i*(m+1)+m
        flat = samples.local.reshape(N * (m + 1), samples.q)
        ns = g.t_start + np.arange(N)
        tail = np.where((np.minimum(np.abs(ns), np.abs(ns + 1)) >= T0) & (np.maximum(np.abs(ns), np.abs(ns + 1)) <= T))[0]
        idx = (tail[:, None] * (m + 1) + np.arange(m + 1)[None, :]).ravel()
        var = kernels.remote_variation(flat, (shifts // m) * (m + 1), idx)
        gap, verdict = _verdict(taus, var, epsilon, L)
    return RapReport(float(epsilon), taus, np.asarray(var), (T0, T), float(L), gap, verdict, mode, notes)

