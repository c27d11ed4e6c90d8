"""Contraction fixed points for perturbed systems.

Three solvers share one iteration: ``phi -> T phi`` where ``T`` solves the
linear problem with forcing ``g_nu`` evaluated along ``phi + xi``.  The
contraction factor is measured before iterating, and every solver refuses
to run (:class:`NoContraction`) when it is not below one.

All fixed points live on a finite window and the linear solves use the
window-truncated Green series, so values within the truncation index of
the window edges are less accurate than the interior.  Pass ``xi`` on a
padded window and restrict the result.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .core import CoefficientSystem, SequenceWindow, interval_aware, measure_bound, parallel_map
from .depca import HybridSolution, reconstruct
from .dichotomy import DichotomyData, bounded_solution, detect_dichotomy, truncation_index
from .errors import JacobianFailure, NoContraction, NonConvergence, WindowTooSmall
from .io import write_csv, write_json
from .reduction import DiscreteSystem, forcing_table, reduce
from .transition import GAUSS_W, HybridKernel, build_kernels, gauss_times, node_times, restrict

DEFAULT_SAMPLES = 10_000
DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 200
RATIO_SLACK = 0.1


# ---------------------------------------------------------------------------
# perturbation data
# ---------------------------------------------------------------------------


def _ball(rng, size, q, r):
    """Uniform samples from the Euclidean ball of radius ``r`` in R^q."""
    d = rng.standard_normal((size, q))
    d /= np.maximum(np.linalg.norm(d, axis=1, keepdims=True), 1e-300)
    rad = r * rng.random(size) ** (1.0 / q)
    return d * rad[:, None]


@dataclass(frozen=True)
class Perturbation:
    """A nonlinearity ``g(t, x, y, nu)`` with ``y`` standing for ``x([t])``.

    When ``floor_aware`` is set the callable is ``g(t, n, x, y, nu)`` with
    ``n = [t]`` (needed when ``t`` is a left limit at an integer).  It must
    accept arrays: ``t`` and ``n`` of shape (S,), ``x`` and ``y`` of shape
    (S, q), and return (S, q).

    ``Lx`` and ``Ly`` are sampled Lipschitz constants in ``x`` and ``y``
    on the ``r``-tube around the reference solution, ``M0`` their max, and
    ``g_norm`` the sampled sup of ``|g|`` on the tube.  They are filled by
    :meth:`measure`.
    """

    g: Callable
    nu: float
    r: float = 1.0
    floor_aware: bool = False
    seed: int = 0
    samples: int = DEFAULT_SAMPLES
    Lx: float | None = None
    Ly: float | None = None
    g_norm: float | None = None

    @property
    def M0(self) -> float | None:
        if self.Lx is None:
            return None
        return max(self.Lx, self.Ly)

    @property
    def measured(self) -> bool:
        return self.Lx is not None

    def __call__(self, t, n, x, y, nu=None):
        nu = self.nu if nu is None else nu
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.floor_aware:
            out = self.g(t, np.asarray(n), x, y, nu)
        else:
            out = self.g(t, x, y, nu)
        return np.broadcast_to(np.asarray(out, dtype=float), x.shape)

    def at(self, nu: float) -> "Perturbation":
        """Same perturbation at another ``nu`` (measurements dropped)."""
        return replace(self, nu=float(nu), Lx=None, Ly=None, g_norm=None)

    def on_grid(self, t, n, x, y):
        """Evaluate on arrays with leading shape ``S...``; flattens and restores."""
        x = np.asarray(x, dtype=float)
        shape = x.shape
        q = shape[-1]
        t = np.broadcast_to(np.asarray(t, dtype=float), shape[:-1]).reshape(-1)
        n = np.broadcast_to(np.asarray(n), shape[:-1]).reshape(-1)
        y = np.broadcast_to(np.asarray(y, dtype=float), shape).reshape(-1, q)
        return self(t, n, x.reshape(-1, q), y).reshape(shape)

    def measure(self, t, n, x, y) -> "Perturbation":
        """Sample ``Lx``, ``Ly`` and ``|g|`` on the ``r``-tube around the
        reference points ``(t, n, x, y)`` (flat arrays, ``x``/``y`` (P, q)).

        Half of the pairs are independent points of the ball, half are
        close pairs (separation ``1e-4 r``) that pick up the local slope.
        The seed makes the estimate reproducible.
        """
        t = np.asarray(t, dtype=float).reshape(-1)
        n = np.asarray(n).reshape(-1)
        x = np.asarray(x, dtype=float).reshape(len(t), -1)
        y = np.asarray(y, dtype=float).reshape(len(t), -1)
        q = x.shape[1]
        rng = np.random.default_rng(self.seed)
        S = int(self.samples)
        pick = rng.integers(0, len(t), S)
        ts, ns, xs, ys = t[pick], n[pick], x[pick], y[pick]
        dx1 = _ball(rng, S, q, self.r)
        dy1 = _ball(rng, S, q, self.r)
        far = _ball(rng, S, q, self.r)
        near = dx1 + 1e-4 * self.r * _ball(rng, S, q, 1.0)
        half = S // 2
        dx2 = np.concatenate([far[:half], near[half:]])
        far = _ball(rng, S, q, self.r)
        near = dy1 + 1e-4 * self.r * _ball(rng, S, q, 1.0)
        dy2 = np.concatenate([far[:half], near[half:]])

        g11 = self(ts, ns, xs + dx1, ys + dy1)
        g21 = self(ts, ns, xs + dx2, ys + dy1)
        g12 = self(ts, ns, xs + dx1, ys + dy2)
        g0 = self(t, n, x, y)
        if not (np.isfinite(g11).all() and np.isfinite(g21).all() and np.isfinite(g12).all()):
            raise ValueError("perturbation is not finite on the sampled tube")
        with np.errstate(divide="ignore", invalid="ignore"):
            sx = np.linalg.norm(g11 - g21, axis=1) / np.linalg.norm(dx1 - dx2, axis=1)
            sy = np.linalg.norm(g11 - g12, axis=1) / np.linalg.norm(dy1 - dy2, axis=1)
        Lx = float(np.nanmax(np.where(np.isfinite(sx), sx, 0.0)))
        Ly = float(np.nanmax(np.where(np.isfinite(sy), sy, 0.0)))
        gn = float(max(np.linalg.norm(g11, axis=1).max(), np.linalg.norm(g0, axis=1).max()))
        return replace(self, Lx=Lx, Ly=Ly, g_norm=gn)

    def vanishes_at_zero(self, t, n, x, y, atol: float = 1e-12) -> bool:
        """``g(., ., ., 0) == 0`` on the given points."""
        return bool(np.max(np.abs(self(t, n, x, y, nu=0.0)), initial=0.0) <= atol)


# ---------------------------------------------------------------------------
# certificate
# ---------------------------------------------------------------------------


@dataclass
class ContractionCertificate:
    """Measured contraction data for one fixed-point solve.

    ``contraction_factor`` is the factor actually used (the smaller of the
    operator-norm estimate ``kappa_measured`` and the coarser
    ``kappa_bound`` built from ``K0``, ``M``, ``K`` and ``alpha``).
    """

    nu: float
    r: float
    contraction_factor: float
    kappa_measured: float
    kappa_bound: float
    solution_operator_norm: float
    M0: float
    g_norm: float
    radius_check: bool
    iterations: int = 0
    final_residual: float = math.inf
    residual_ratios: list = field(default_factory=list)
    distance: float = math.nan

    @property
    def ratios_ok(self) -> bool:
        lim = self.contraction_factor * (1 + RATIO_SLACK)
        return all(r <= lim for r in self.residual_ratios)

    def summary(self) -> dict:
        return {
            "nu": self.nu,
            "r": self.r,
            "kappa": self.contraction_factor,
            "kappa_measured": self.kappa_measured,
            "kappa_bound": self.kappa_bound,
            "solution_operator_norm": self.solution_operator_norm,
            "M0": self.M0,
            "g_norm": self.g_norm,
            "radius_check": self.radius_check,
            "iterations": self.iterations,
            "residual": self.final_residual,
            "residual_ratios": list(self.residual_ratios),
            "ratios_ok": self.ratios_ok,
            "distance": self.distance,
        }

    def to_json(self, path):
        return write_json(path, self.summary())


def _certify(pert: Perturbation, gamma: float, kappa_bound: float) -> ContractionCertificate:
    """Contraction and self-mapping checks before iterating.

    ``|T phi - T chi| <= gamma (Lx + Ly) |phi - chi|`` since ``g`` is
    evaluated along ``phi`` and ``phi([t])`` which share a sup norm.
    """
    kappa_measured = gamma * (pert.Lx + pert.Ly)
    kappa = min(kappa_measured, kappa_bound)
    cert = ContractionCertificate(
        pert.nu, pert.r, kappa, kappa_measured, kappa_bound, gamma, pert.M0, pert.g_norm, gamma * pert.g_norm <= pert.r
    )
    if kappa >= 1.0:
        raise NoContraction(
            f"contraction factor {kappa:.4g} >= 1 at nu={pert.nu}, r={pert.r}",
            kappa=kappa,
            nu=pert.nu,
            r=pert.r,
        )
    if not cert.radius_check:
        raise NoContraction(
            f"ball of radius {pert.r} is not mapped into itself (bound {gamma * pert.g_norm:.4g})",
            kappa=kappa,
            nu=pert.nu,
            r=pert.r,
        )
    return cert


def _iterate(step, zero, cert: ContractionCertificate, tol: float, max_iter: int, diff):
    phi = zero
    prev = None
    for k in range(1, max_iter + 1):
        new = step(phi)
        d = diff(new, phi)
        if prev is not None and prev > 0:
            cert.residual_ratios.append(d / prev)
        prev = d
        phi = new
        cert.iterations = k
        cert.final_residual = d
        if d <= tol:
            return phi
    raise NonConvergence(
        f"no convergence after {max_iter} iterations (last step {prev:.3g})", iterations=max_iter, residual=prev
    )


# ---------------------------------------------------------------------------
# discrete systems
# ---------------------------------------------------------------------------


def solve_perturbed_discrete(
    disc: DiscreteSystem,
    dd: DichotomyData,
    pert: Perturbation,
    xi: SequenceWindow,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> SequenceWindow:
    """Bounded solution of ``x(n+1) = C(n) x(n) + h(n) + g_nu(n, x(n), x(n))``
    near the bounded solution ``xi`` of the unperturbed system.

    Iterates ``phi -> sum_k G(n, k+1) g_nu(k, phi(k) + xi(k))`` from
    ``phi = 0``; returns ``psi = xi + phi`` with the certificate in
    ``meta["certificate"]``.

    Raises
    ------
    NoContraction
        If ``(Lx + Ly) K (1+e^{-alpha}) / (1-e^{-alpha}) >= 1`` or the
        ``r``-ball is not mapped into itself.
    NonConvergence
        After ``max_iter`` iterations.
    """
    lo, hi = disc.n_min, disc.n_max + 1
    if xi.n_min > lo or xi.n_max < hi:
        raise ValueError(f"xi must cover [{lo}, {hi}]")
    base = xi.values[lo - xi.n_min : hi - xi.n_min + 1]
    ns = np.arange(lo, hi + 1)
    if not pert.measured:
        pert = pert.measure(ns.astype(float), ns, base, base)
    gamma = dd.series_factor
    cert = _certify(pert, gamma, gamma * 2 * pert.M0)
    fk = ns[:-1].astype(float)

    def step(phi):
        x = base[:-1] + phi[:-1]
        g = pert(fk, ns[:-1], x, x)
        return bounded_solution(disc.with_forcing(g), dd, out="full").values

    def diff(a, b):
        return float(np.max(np.linalg.norm(a - b, axis=1)))

    phi = _iterate(step, np.zeros_like(base), cert, tol, max_iter, diff)
    cert.distance = float(np.max(np.linalg.norm(phi, axis=1)))
    meta = {"certificate": cert, "xi_window": (lo, hi)}
    return SequenceWindow(lo, base + phi, meta)


# ---------------------------------------------------------------------------
# linear DEPCA
# ---------------------------------------------------------------------------


def solution_operator_norm(hk: HybridKernel, dd: DichotomyData) -> float:
    """Upper estimate of the sup-to-sup norm of ``g -> bounded solution``.

    ``|y| <= S c |g|`` with ``S`` the Green series factor and
    ``c = max_n int_n^{n+1} |Phi(n+1, u)| du``; then
    ``|x(t)| <= |Z(t, n)| |y(n)| + int_n^t |Phi(t, u)| du |g|``, the last
    integral taken at every node.
    """
    tk = hk.transition
    m = tk.grid.m
    N = 1 if tk.tiled else tk.grid.n_intervals
    inv = tk.phi_gauss_inv[:N]  # Phi(n, u)
    norm = lambda X: np.linalg.norm(X, ord=2, axis=(-2, -1))
    w = GAUSS_W / m
    # Phi(t_j, u) for u in cells before node j
    full = np.einsum("njab,nkgbc->njkgac", tk.phi_nodes[:N], inv)
    cell = (norm(full) * w).sum(axis=-1)  # (N, m+1, m)
    before = np.arange(m)[None, :] < np.arange(m + 1)[:, None]
    local = (cell * before[None]).sum(axis=-1)
    c = local[:, -1].max()
    Zmax = norm(hk.Z_nodes[:N]).max()
    return float(Zmax * dd.series_factor * c + local.max())


def _solution_from(local, deriv, grid, anchors_vals, n_min, meta=None):
    return HybridSolution(grid, local, deriv, SequenceWindow(n_min, anchors_vals), meta or {})


def solve_perturbed_depca(
    system: CoefficientSystem,
    xi: HybridSolution,
    pert: Perturbation,
    tol: float = DEFAULT_TOL,
    hk: HybridKernel | None = None,
    dd: DichotomyData | None = None,
    max_iter: int = DEFAULT_MAX_ITER,
) -> HybridSolution:
    """Solution of ``x' = A x + B x([t]) + f + g_nu(t, x, x([t]))`` near the
    bounded solution ``xi`` of the linear system, on ``xi.grid``.

    Every step solves the linear problem with forcing
    ``g_nu(u, phi(u) + xi(u), phi([u]) + xi([u]))`` by
    reduce -> bounded_solution -> reconstruct; the forcing is needed at the
    Gauss points of each cell and is taken from the cubic Hermite
    interpolant of ``phi + xi``.

    Raises
    ------
    NoContraction
        If the measured factor and the coarse bound are both >= 1, or the
        ball is not invariant.
    NonConvergence
        After ``max_iter`` iterations.
    """
    grid = xi.grid
    if hk is None:
        hk = build_kernels(system, grid)
    if dd is None:
        dd = detect_dichotomy(reduce(hk, system))
    disc = reduce(hk, system, IF=np.zeros((grid.n_intervals, grid.m + 1, system.q)))
    if disc.n_min != dd.n_min or disc.W != dd.C.shape[0]:
        raise ValueError("dichotomy data do not match the solution grid")

    N, m, q = grid.n_intervals, grid.m, system.q
    anchors = xi.anchors.values[grid.t_start - xi.anchors.n_min : grid.t_end - xi.anchors.n_min + 1]
    tn, nn = node_times(grid)
    tg, ng = gauss_times(grid)
    xi_gauss = xi.at_gauss()
    if not pert.measured:
        pert = pert.measure(tn.reshape(-1), nn.reshape(-1), xi.local.reshape(-1, q),
                            np.broadcast_to(anchors[:-1, None], xi.local.shape).reshape(-1, q))

    gamma = solution_operator_norm(hk, dd)
    K0 = hk.transition.K0
    M = system.M if math.isfinite(system.M) else measure_bound(system, grid)
    kappa_bound = 2 * K0 * (K0 * (M + 1) * dd.series_factor + 1) * pert.M0
    cert = _certify(pert, gamma, kappa_bound)
    phi_int = hk.transition.phi_int

    def step(phi: HybridSolution):
        a = phi.anchors.values
        yg = (anchors[:-1] + a[:-1])[:, None, None, :]
        Gg = pert.on_grid(tg, ng, xi_gauss + phi.at_gauss(), yg)
        Gn = pert.on_grid(tn, nn, xi.local + phi.local, (anchors[:-1] + a[:-1])[:, None, :])
        IF = forcing_table(hk, values=Gg)
        h = np.einsum("nij,nj->ni", phi_int, IF[:, -1])
        y = bounded_solution(disc.with_forcing(h), dd, out="full")
        return reconstruct(hk, system, y, forcing=(Gg, Gn), IF=IF, check=False)

    def diff(a, b):
        return float(np.max(np.linalg.norm(a.local - b.local, axis=-1)))

    zero = _solution_from(np.zeros_like(xi.local), np.zeros_like(xi.local), grid, np.zeros_like(anchors), grid.t_start)
    phi = _iterate(step, zero, cert, tol, max_iter, diff)
    cert.distance = float(np.max(np.linalg.norm(phi.local, axis=-1)))
    # phi.deriv is phi' = A phi + B phi(n) + g; adding xi' gives psi'
    return _solution_from(
        xi.local + phi.local,
        xi.deriv + phi.deriv,
        grid,
        anchors + phi.anchors.values,
        grid.t_start,
        {"certificate": cert, "continuity_defect": phi.meta.get("continuity_defect", 0.0)},
    )


def nu_ladder(solve: Callable[[float], object], nus, distance=None) -> list[dict]:
    """Run ``solve(nu)`` for every ``nu``; rows of (nu, distance, kappa,
    iterations, converged).  Failing points are recorded, not raised."""

    def one(nu):
        try:
            out = solve(nu)
        except (NoContraction, NonConvergence) as exc:
            return {"nu": float(nu), "distance": math.nan, "kappa": exc.details.get("kappa", math.nan),
                    "iterations": exc.details.get("iterations", 0), "converged": False}
        cert = out.meta["certificate"]
        return {"nu": float(nu), "distance": cert.distance, "kappa": cert.contraction_factor,
                "iterations": cert.iterations, "converged": True}

    return parallel_map(one, nus)


def write_ladder(path, rows):
    cols = ["nu", "distance", "kappa", "iterations", "converged"]
    return write_csv(path, cols, [[r[c] for c in cols] for r in rows])


# ---------------------------------------------------------------------------
# nonlinear right-hand sides
# ---------------------------------------------------------------------------


def _central(f, t, x, y, j, which, h):
    e = np.zeros(x.shape[-1])
    e[j] = h
    if which == "x":
        return (f(t, x + e, y) - f(t, x - e, y)) / (2 * h)
    return (f(t, x, y + e) - f(t, x, y - e)) / (2 * h)


def jacobian(f, t, x, y, which: str = "x", step: float | None = None, richardson: bool = True) -> np.ndarray:
    """Finite-difference Jacobian of ``f(t, x, y)`` in ``x`` or ``y``.

    Central differences, combined with the half step by Richardson
    extrapolation (error O(h^4)) unless ``richardson`` is False.
    Arrays: ``t`` (S,), ``x``/``y`` (S, q); returns (S, q, q).

    Raises
    ------
    JacobianFailure
        If any entry is not finite.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    t = np.asarray(t, dtype=float).reshape(-1)
    q = x.shape[-1]
    base = x if which == "x" else y
    h = (step if step is not None else np.finfo(float).eps ** 0.2) * max(1.0, float(np.max(np.abs(base), initial=0)))
    cols = []
    for j in range(q):
        d1 = _central(f, t, x, y, j, which, h)
        if richardson:
            d2 = _central(f, t, x, y, j, which, h / 2)
            d1 = (4 * d2 - d1) / 3
        cols.append(np.asarray(d1, dtype=float).reshape(len(t), q))
    J = np.stack(cols, axis=-1)
    if not np.isfinite(J).all():
        raise JacobianFailure(f"non-finite finite-difference Jacobian in {which}", which=which)
    return J


def jacobian_agreement(f, t, x, y, which: str = "x", step: float = 1e-3) -> float:
    """Max relative difference between the Richardson Jacobian and a plain
    central difference at the half step (a self-consistency check)."""
    J = jacobian(f, t, x, y, which, step=step)
    D = jacobian(f, t, x, y, which, step=step / 2, richardson=False)
    scale = np.maximum(np.linalg.norm(J, axis=(-2, -1)), 1e-12)
    return float(np.max(np.linalg.norm(J - D, axis=(-2, -1)) / scale))


def linearize(f, xi: HybridSolution, name: str = "variational") -> CoefficientSystem:
    """Variational system along ``xi``: ``A = df/dx``, ``B = df/dy`` at
    ``(t, xi(t), xi([t]))``, forcing ``f(t, xi, xi([t])) - A xi - B xi([t])``.

    The bounded solution of this linear system equals ``xi`` whenever
    ``xi`` itself solves ``x' = f(t, x, x([t]))``.
    """
    q = xi.q
    a = xi.anchors

    def point(ts, ns):
        ts = np.asarray(ts, dtype=float)
        shape = ts.shape
        tf = ts.reshape(-1)
        nf = np.broadcast_to(np.asarray(ns), shape).reshape(-1).astype(int)
        x = xi.at(tf).reshape(-1, q)
        y = a.values[nf - a.n_min]
        return shape, tf, x, y

    @interval_aware
    def A(ts, ns):
        shape, tf, x, y = point(ts, ns)
        return jacobian(f, tf, x, y, "x").reshape(shape + (q, q))

    @interval_aware
    def B(ts, ns):
        shape, tf, x, y = point(ts, ns)
        return jacobian(f, tf, x, y, "y").reshape(shape + (q, q))

    @interval_aware
    def F(ts, ns):
        shape, tf, x, y = point(ts, ns)
        Ja = jacobian(f, tf, x, y, "x")
        Jb = jacobian(f, tf, x, y, "y")
        val = np.asarray(f(tf, x, y), dtype=float).reshape(-1, q)
        val = val - np.einsum("sij,sj->si", Ja, x) - np.einsum("sij,sj->si", Jb, y)
        return val.reshape(shape + (q,))

    return CoefficientSystem(q, A, B, F, name=name)


def remainder(f, xi: HybridSolution, A, B):
    """``F(t, n, x, y) = f(t, x, y) - f(t, xi, xi_n) - A (x - xi) - B (y - xi_n)``
    with ``A``, ``B`` evaluated at ``(t, n)``: the Taylor remainder of
    ``f`` around ``xi``, written in the shifted variables ``x``, ``y``."""
    q = xi.q
    a = xi.anchors

    def F(t, n, x, y, nu):
        n = np.asarray(n).astype(int)
        xr = xi.at(t).reshape(-1, q)
        yr = a.values[n - a.n_min]
        At = A(t, n).reshape(-1, q, q)
        Bt = B(t, n).reshape(-1, q, q)
        dx, dy = x - xr, y - yr
        lin = np.einsum("sij,sj->si", At, dx) + np.einsum("sij,sj->si", Bt, dy)
        return np.asarray(f(t, x, y), dtype=float).reshape(-1, q) - np.asarray(f(t, xr, yr), dtype=float).reshape(-1, q) - lin

    return F


def solve_nonlinear(
    f,
    xi: HybridSolution,
    tol: float = DEFAULT_TOL,
    r: float = 1.0,
    seed: int = 0,
    samples: int = DEFAULT_SAMPLES,
    max_iter: int = DEFAULT_MAX_ITER,
    rap_tol: float = 1e-10,
) -> HybridSolution:
    """Solution of ``x' = f(t, x, x([t]))`` near a reference trajectory ``xi``.

    The variational system along ``xi`` is solved for its bounded solution
    ``xi_lin`` on the part of ``xi.grid`` at least the truncation index
    away from both edges (the result lives on that shorter grid), then the Taylor remainder of ``f`` is treated as the
    perturbation in :func:`solve_perturbed_depca` around ``xi_lin``.  For
    linear ``f`` the remainder vanishes and the result is ``xi_lin``.

    ``f`` must accept ``t`` (S,), ``x`` (S, q), ``y`` (S, q).
    """
    grid = xi.grid
    lin = linearize(f, xi)
    hk = build_kernels(lin, grid)
    disc = reduce(hk, lin)
    dd = detect_dichotomy(disc)
    h_sup = float(np.max(np.linalg.norm(disc.h, axis=1)))
    N = truncation_index(dd, h_sup, rap_tol)
    a, b = grid.t_start + N, grid.t_end - N
    if b - a < 1:
        raise WindowTooSmall(f"reference window too short for truncation index N={N}", needed=2 * N + 1)
    y = bounded_solution(disc, dd, rap_tol, out=(a, b))
    # continue on the part of the window where xi_lin is accurate
    hk = restrict(hk, a, b)
    disc = reduce(hk, lin)
    dd = detect_dichotomy(disc)
    base = reconstruct(hk, lin, y)

    F = remainder(f, xi, lin.eval_A, lin.eval_B)
    pert = Perturbation(F, 1.0, r=r, floor_aware=True, seed=seed, samples=samples)
    zero_forcing = CoefficientSystem(lin.q, lin.A, lin.B, lambda ts: np.zeros(lin.q), name=lin.name)
    out = solve_perturbed_depca(zero_forcing, base, pert, tol, hk=hk, dd=dd, max_iter=max_iter)
    out.meta["linearization"] = {"dichotomy": dd.summary()}
    return out
