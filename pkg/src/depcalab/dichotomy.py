"""Exponential dichotomy of ``x(n+1) = C(n) x(n)``, its Green function and
the bounded solution of the forced recursion.

Green-function products are never formed as ``Phi(n) P Phi(m)^{-1}``
literally; transfers are applied to the projected subspaces step by step
(``C`` forward on the stable part, the restricted inverse backward on the
unstable part), which stays well scaled on long windows.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

from . import kernels
from .core import SequenceWindow
from .errors import BoundViolation, FitRejected, NearSingularJ, NoDichotomy, WindowTooSmall
from .io import write_csv
from .reduction import DiscreteSystem

DELTA_GAP = 1e-6
ALPHA_CAP = 30.0
FIT_SLACK = 0.05
# least-squares rates of a wobbling envelope overshoot the tail rate
RATE_SHAVE = 0.95
COND_V_MAX = 1e6


@dataclass(frozen=True)
class DichotomyData:
    """(alpha, K, P) together with the tabulated projections.

    ``projections[i] = P(n_min + i) = Phi(n) P Phi(n)^{-1}`` for
    ``n = n_min .. n_max + 1``; ``Cinv[i]`` is the inverse of ``C(n)``
    restricted to the unstable part, ``(I - P(n)) C(n)^{-1} (I - P(n+1))``.
    """

    alpha: float
    K: float
    P: np.ndarray
    n_min: int
    C: np.ndarray
    projections: np.ndarray
    Cinv: np.ndarray
    provenance: str
    constant: bool = False
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def q(self) -> int:
        return self.P.shape[0]

    @property
    def n_max(self) -> int:
        """Last integer of the recursion range (``C`` is defined up to n_max - 1)."""
        return self.n_min + self.C.shape[0]

    @property
    def decay(self) -> float:
        return math.exp(-self.alpha)

    @property
    def series_factor(self) -> float:
        """``K (1 + e^{-alpha}) / (1 - e^{-alpha})``."""
        r = self.decay
        return self.K * (1.0 + r) / (1.0 - r)

    def proj(self, n: int) -> np.ndarray:
        return self.projections[self._idx(n)]

    def _idx(self, n):
        if not self.n_min <= n <= self.n_max:
            raise IndexError(f"n={n} outside dichotomy window [{self.n_min}, {self.n_max}]")
        return n - self.n_min

    @property
    def fundamental(self) -> np.ndarray:
        """``Phi(n)`` on the window with ``Phi(n_ref) = I`` (``n_ref = 0`` when
        inside the window, else ``n_min``).  May overflow on long windows."""
        cached = self.__dict__.get("_fundamental")
        if cached is not None:
            return cached
        W = self.C.shape[0] + 1
        ref = 0 if self.n_min <= 0 <= self.n_max else self.n_min
        r = ref - self.n_min
        out = np.empty((W, self.q, self.q))
        out[r] = np.eye(self.q)
        with np.errstate(over="ignore", invalid="ignore"):
            for i in range(r, W - 1):
                out[i + 1] = self.C[i] @ out[i]
            for i in range(r - 1, -1, -1):
                out[i] = np.linalg.solve(self.C[i], out[i + 1])
        object.__setattr__(self, "_fundamental", out)
        return out

    def summary(self) -> dict:
        return {
            "alpha": self.alpha,
            "K": self.K,
            "P": self.P,
            "provenance": self.provenance,
            "window": [self.n_min, self.n_max],
            **{k: v for k, v in self.meta.items() if np.ndim(v) == 0},
        }


# ---------------------------------------------------------------------------
# constant coefficients
# ---------------------------------------------------------------------------


def spectral_projection(C: np.ndarray, delta_gap: float = DELTA_GAP):
    """Projection onto the eigenspaces of ``C`` inside the unit circle.

    Uses an ordered real Schur form and a Sylvester solve to decouple the
    two blocks, which is better conditioned than going through
    eigenvectors.  Returns ``(P, moduli)``.
    """
    C = np.atleast_2d(np.asarray(C, dtype=float))
    q = C.shape[0]
    moduli = np.abs(np.linalg.eigvals(C))
    near = moduli[(moduli >= 1 - delta_gap) & (moduli <= 1 + delta_gap)]
    if near.size:
        raise NoDichotomy(
            f"eigenvalue of modulus {near[0]:.9g} within {delta_gap:g} of the unit circle",
            moduli=moduli,
        )
    T, Zs, k = sla.schur(C, output="real", sort="iuc")
    if k == q:
        return np.eye(q), moduli
    if k == 0:
        return np.zeros((q, q)), moduli
    X = sla.solve_sylvester(T[:k, :k], -T[k:, k:], T[:k, k:])
    PT = np.zeros((q, q))
    PT[:k, :k] = np.eye(k)
    PT[:k, k:] = X
    return Zs @ PT @ Zs.T, moduli


def _restricted_inverse(C, P_here, P_next):
    """``(I-P(n)) C^{-1} (I-P(n+1))`` without requiring C to be invertible
    on the stable part."""
    q = C.shape[-1]
    I = np.eye(q)
    Q_here, Q_next = I - P_here, I - P_next
    if not np.any(Q_here):
        return np.zeros_like(C)
    M = C @ Q_here + P_next
    return Q_here @ np.linalg.solve(M, Q_next)


def _constant_dichotomy(disc: DiscreteSystem, delta_gap: float) -> DichotomyData:
    C0 = disc.C[0]
    q = disc.q
    P, moduli = spectral_projection(C0, delta_gap)
    stable = moduli[moduli < 1]
    unstable = moduli[moduli > 1]
    rates = []
    if stable.size:
        rates.append(-math.log(stable.max()) if stable.max() > 0 else ALPHA_CAP)
    if unstable.size:
        rates.append(math.log(unstable.min()))
    alpha = min(min(rates), ALPHA_CAP)

    w, V = np.linalg.eig(C0)
    V = V / np.linalg.norm(V, axis=0)
    condV = np.linalg.cond(V)
    meta = {"cond_V": float(condV), "moduli": moduli}
    if np.isfinite(condV) and condV <= COND_V_MAX:
        K = max(1.0, float(condV))
    else:
        # nearly defective: give up some rate, measure the constant
        alpha *= 0.95
        K = _measure_K_constant(C0, P, alpha)
        meta["K_measured"] = True
    W = disc.W
    Cinv0 = _restricted_inverse(C0, P, P)
    return DichotomyData(
        alpha,
        K,
        P,
        disc.n_min,
        disc.C,
        np.broadcast_to(P, (W + 1, q, q)),
        np.broadcast_to(Cinv0, (W, q, q)),
        "spectral",
        True,
        meta,
    )


def _measure_K_constant(C, P, alpha):
    q = C.shape[0]
    Q = np.eye(q) - P
    Cinv = _restricted_inverse(C, P, P)
    J = int(min(4000, math.ceil(40.0 / (0.05 * alpha)) + 1))
    best = max(np.linalg.norm(P, 2), np.linalg.norm(Q, 2), 1.0)
    X, Y = P.copy(), Q.copy()
    for j in range(1, J + 1):
        X = C @ X
        Y = Cinv @ Y
        best = max(best, np.linalg.norm(X, 2) * math.exp(alpha * j), np.linalg.norm(Y, 2) * math.exp(alpha * j))
    return float(best)


# ---------------------------------------------------------------------------
# variable coefficients
# ---------------------------------------------------------------------------


def _orth(X, k):
    if k == 0:
        return np.zeros((X.shape[0], 0))
    Qm, _ = np.linalg.qr(X)
    return Qm[:, :k]


def _range_basis(P, k):
    U, s, _ = np.linalg.svd(P)
    return U[:, :k]


def _invertible(C, n):
    s = np.linalg.svd(C, compute_uv=False)
    if s[-1] == 0 or s[0] / s[-1] > 1e12:
        raise NearSingularJ(f"C({n}) not invertible; cannot propagate the stable subspace backward", interval=n)


def _sweep_projections(C, P0):
    """P(n) from forward-propagated unstable and backward-propagated stable
    subspaces; ``P0`` seeds both and fixes the splitting dimension."""
    W, q, _ = C.shape
    ks = int(round(np.trace(P0)))
    ku = q - ks
    if ks == q:
        return np.broadcast_to(np.eye(q), (W + 1, q, q)).copy()
    if ks == 0:
        return np.zeros((W + 1, q, q))
    for i in range(W):
        _invertible(C[i], i)
    U = np.empty((W + 1, q, ku))
    S = np.empty((W + 1, q, ks))
    U[0] = _range_basis(np.eye(q) - P0, ku)
    for i in range(W):
        U[i + 1] = _orth(C[i] @ U[i], ku)
    S[W] = _range_basis(P0, ks)
    for i in range(W - 1, -1, -1):
        S[i] = _orth(np.linalg.solve(C[i], S[i + 1]), ks)
    basis = np.concatenate([S, U], axis=2)
    sel = np.zeros((q, q))
    sel[:ks, :ks] = np.eye(ks)
    return basis @ sel @ np.linalg.inv(basis)


def _envelope(C, Cinv, projections, lags, margin):
    """Max over reference points of |G(m+j, m)| and |G(m-j, m)| for j = 0..lags."""
    W = C.shape[0]
    q = C.shape[1]
    I = np.eye(q)
    ms = np.arange(margin, W + 1 - margin)
    ms_f = ms[ms + lags <= W]
    ms_b = ms[ms - lags >= 0]
    if ms_f.size == 0 or ms_b.size == 0:
        raise WindowTooSmall("window too short to fit the dichotomy envelope", needed=2 * (lags + margin))
    E = np.zeros(lags + 1)
    X = projections[ms_f].copy()
    Y = -(I - projections[ms_b])
    E[0] = max(np.linalg.norm(X, 2, axis=(1, 2)).max(), np.linalg.norm(Y, 2, axis=(1, 2)).max())
    for j in range(1, lags + 1):
        X = C[ms_f + j - 1] @ X
        Y = Cinv[ms_b - j] @ Y
        E[j] = max(np.linalg.norm(X, 2, axis=(1, 2)).max(), np.linalg.norm(Y, 2, axis=(1, 2)).max())
    return E


def fit_envelope(E, fit_lags):
    """Upper-envelope fit ``E(j) <= K e^{-alpha j}`` on ``j <= fit_lags``."""
    j = np.arange(len(E))
    sel = (j >= 1) & (j <= fit_lags) & (E > 1e-300)
    if sel.sum() < 2:
        return ALPHA_CAP, max(1.0, float(E[0]))
    slope, _ = np.polyfit(j[sel], np.log(E[sel]), 1)
    alpha = min(-RATE_SHAVE * float(slope), ALPHA_CAP)
    if alpha <= 0:
        raise FitRejected(f"no exponential decay in the Green envelope (fitted rate {alpha:.3g})", alpha=alpha)
    fit = (j <= fit_lags) & (E > 0)
    logK = float(np.max(np.log(E[fit]) + alpha * j[fit]))
    return alpha, max(1.0, math.exp(logK))


def _fitted_dichotomy(disc: DiscreteSystem, P_guess, fit_lags) -> DichotomyData:
    C = disc.C
    W, q, _ = C.shape
    meta = {}
    if P_guess is None:
        P_guess, _ = spectral_projection(C.mean(axis=0))
        meta["P_source"] = "spectral projection of the mean C"
    else:
        P_guess = np.atleast_2d(np.asarray(P_guess, dtype=float))
        if not np.allclose(P_guess @ P_guess, P_guess, atol=1e-10):
            raise ValueError("supplied P is not a projection")
        meta["P_source"] = "user"
    projections = _sweep_projections(C, P_guess)
    meta["P_mismatch"] = float(np.linalg.norm(projections[W // 2] - P_guess, 2))
    I = np.eye(q)
    if np.any(I - projections):
        Cinv = (I - projections[:-1]) @ np.linalg.solve(C, I - projections[1:])
    else:
        Cinv = np.zeros_like(C)
    if fit_lags is None:
        fit_lags = max(4, min(60, W // 8))
    margin = max(1, W // 8)
    E = _envelope(C, Cinv, projections, 2 * fit_lags, margin)
    alpha, K = fit_envelope(E, fit_lags)
    bound = K * np.exp(-alpha * np.arange(len(E)))
    violation = float(np.max(E / bound) - 1.0)
    meta.update(fit_lags=fit_lags, violation=violation, envelope=E)
    if violation > FIT_SLACK:
        raise FitRejected(
            f"fitted (alpha={alpha:.4g}, K={K:.4g}) underestimates the Green function by {100 * violation:.1f}%",
            alpha=alpha,
            K=K,
        )
    mid = W // 2
    return DichotomyData(alpha, K, projections[mid], disc.n_min, C, projections, Cinv, "fitted", False, meta)


def detect_dichotomy(disc: DiscreteSystem, P=None, delta_gap: float = DELTA_GAP, fit_lags: int | None = None) -> DichotomyData:
    """Find (alpha, K, P) for the homogeneous part of ``disc``.

    Constant ``C``: spectral projection, rate from the eigenvalue moduli
    closest to the unit circle, ``K`` from the eigenvector condition
    number.  Variable ``C``: projections from subspace sweeps seeded by
    ``P`` (default: spectral projection of the mean C), then ``(alpha, K)``
    from a log-linear upper-envelope fit that must hold within 5% out to
    twice the fitted lag range.
    """
    constant = disc.constant or bool(np.all(disc.C == disc.C[0]))
    if constant:
        dd = _constant_dichotomy(disc, delta_gap)
        if P is not None and not np.allclose(np.asarray(P, dtype=float), dd.P, atol=1e-8):
            dd.meta["user_P_mismatch"] = float(np.linalg.norm(np.asarray(P, dtype=float) - dd.P, 2))
        return dd
    return _fitted_dichotomy(disc, P, fit_lags)


# ---------------------------------------------------------------------------
# Green function and series
# ---------------------------------------------------------------------------


def green(dd: DichotomyData, n: int, m: int) -> np.ndarray:
    """``G(n, m) = Phi(n) P Phi(m)^{-1}`` (n >= m), ``-Phi(n)(I-P)Phi(m)^{-1}`` (n < m)."""
    i, k = dd._idx(n), dd._idx(m)
    q = dd.q
    if i >= k:
        X = dd.projections[k].copy()
        if dd.constant:
            return np.linalg.matrix_power(dd.C[0], i - k) @ X
        for r in range(k, i):
            X = dd.C[r] @ X
        return X
    X = -(np.eye(q) - dd.projections[k])
    if dd.constant:
        return np.linalg.matrix_power(dd.Cinv[0], k - i) @ X
    for r in range(k - 1, i - 1, -1):
        X = dd.Cinv[r] @ X
    return X


def truncation_index(dd: DichotomyData, h_sup: float, tol: float) -> int:
    """Smallest N with ``K |h| e^{-alpha N} / (1 - e^{-alpha}) <= tol``."""
    if h_sup <= 0:
        return 0
    num = math.log(dd.K * h_sup) - math.log(tol * (1.0 - dd.decay))
    return max(0, math.ceil(num / dd.alpha))


def projected_sums(dd: DichotomyData, h: np.ndarray) -> np.ndarray:
    """``y(n) = sum_k G(n, k+1) h(k)`` with zero data beyond the window
    (window-truncated series), for ``n = n_min .. n_max``."""
    W, q = h.shape
    I = np.eye(q)
    C = np.concatenate([np.asarray(dd.C), np.zeros((1, q, q))])
    hp = np.concatenate([h, np.zeros((1, q))])
    P = np.asarray(dd.projections)
    Q = I - P
    Cinv = np.concatenate([np.asarray(dd.Cinv), np.zeros((1, q, q))])
    s = kernels.projected_sweep_forward(C, hp, P)
    if np.any(Q):
        u = kernels.projected_sweep_backward(Cinv, hp, Q)
    else:
        u = np.zeros_like(s)
    return s + u


def bounded_solution(disc: DiscreteSystem, dd: DichotomyData, tol: float = 1e-10, out=None) -> SequenceWindow:
    """Bounded solution of ``x(n+1) = C(n) x(n) + h(n)``.

    The series is truncated at ``|n - k| >= N`` with ``N`` from the
    dichotomy bound, so values in the returned range carry a tail error of
    at most ``tol``.

    Parameters
    ----------
    out : None, (a, b) or "full"
        Range of integers to return.  ``None`` returns every integer at
        least ``N`` away from both window edges.  ``"full"`` returns the
        whole recursion range without the truncation guarantee near the
        edges (used by windowed fixed-point iterations).

    Raises
    ------
    WindowTooSmall
        If the requested range is not ``N`` inside the window.
    BoundViolation
        If the result exceeds ``K(1+e^{-a})/(1-e^{-a}) |h|`` or the
        recursion residual exceeds ``10 tol``.
    """
    if disc.n_min != dd.n_min or disc.W != dd.C.shape[0]:
        raise ValueError("dichotomy data and discrete system cover different windows")
    h = disc.h
    h_sup = float(np.max(np.linalg.norm(h, axis=1))) if h.size else 0.0
    N = truncation_index(dd, h_sup, tol)
    lo_all, hi_all = disc.n_min, disc.n_max + 1
    if out == "full":
        a, b = lo_all, hi_all
    elif out is None:
        a, b = lo_all + N, hi_all - N
        if a > b:
            raise WindowTooSmall(
                f"truncation index N={N} needs a window of at least {2 * N + 1} integers, have {hi_all - lo_all + 1}",
                needed=2 * N + 1,
            )
    else:
        a, b = int(out[0]), int(out[1])
        if a < lo_all + N or b > hi_all - N:
            raise WindowTooSmall(
                f"range [{a}, {b}] needs the window to cover [{a - N}, {b + N}], have [{lo_all}, {hi_all}]",
                needed=(a - N, b + N),
            )
    y_all = projected_sums(dd, h)
    y = y_all[a - lo_all : b - lo_all + 1]

    bound = dd.series_factor * h_sup
    scale = max(1.0, bound)
    ys = float(np.max(np.linalg.norm(y, axis=1))) if y.size else 0.0
    guaranteed = out != "full"
    if guaranteed and ys > bound * (1 + 1e-9) + 1e-300:
        raise BoundViolation(f"sup |y| = {ys:.6g} exceeds dichotomy bound {bound:.6g}", sup=ys, bound=bound)
    res = 0.0
    if b > a:
        i0 = a - lo_all
        i1 = b - lo_all
        pred = np.einsum("nij,nj->ni", disc.C[i0:i1], y_all[i0:i1]) + h[i0:i1]
        res = float(np.max(np.linalg.norm(y_all[i0 + 1 : i1 + 1] - pred, axis=1)))
    roundoff = 1e3 * np.finfo(float).eps * scale
    if guaranteed and res > max(10 * tol, roundoff):
        raise BoundViolation(f"recursion residual {res:.3g} exceeds 10*tol", residual=res)
    meta = {
        "N": N,
        "tol": tol,
        "h_sup": h_sup,
        "bound": bound,
        "residual": res,
        "reliable": (lo_all + N, hi_all - N),
        "note": "unique bounded solution on the window; series tail beyond N bounded by tol",
    }
    return SequenceWindow(a, y, meta)


# ---------------------------------------------------------------------------
# bi-summability proxy
# ---------------------------------------------------------------------------


def green_rows(dd: DichotomyData, ns, depth: int) -> np.ndarray:
    """``G(n, n + d)`` for ``d = -depth .. depth``; shape (len(ns), 2 depth + 1, q, q)."""
    ns = np.asarray(ns, dtype=int)
    idx = ns - dd.n_min
    if idx.min() - depth < 0 or idx.max() + depth > dd.C.shape[0]:
        raise WindowTooSmall("Green rows leave the dichotomy window", needed=(int(ns.min()) - depth, int(ns.max()) + depth))
    q = dd.q
    I = np.eye(q)
    out = np.empty((len(ns), 2 * depth + 1, q, q))
    P = np.asarray(dd.projections)
    C = np.asarray(dd.C)
    Cinv = np.asarray(dd.Cinv)
    X = P[idx].copy()
    out[:, depth] = X
    for d in range(1, depth + 1):
        # G(n, n-d) = G(n, n-d+1) C(n-d)
        X = X @ C[idx - d]
        out[:, depth - d] = X
    Y = -(I - P[idx]) @ Cinv[idx]
    out[:, depth + 1] = Y
    for d in range(2, depth + 1):
        # G(n, n+d) = G(n, n+d-1) C(n+d-1)^{-1}
        Y = Y @ Cinv[idx + d - 1]
        out[:, depth + d] = Y
    return out


@dataclass
class ScanTable:
    rows: list
    proxy: dict
    depth: int
    tail_start: int

    def to_csv(self, path):
        return write_csv(path, ["tau", "n", "sum"], self.rows)


def bisummability_scan(dd: DichotomyData, taus, n_scan, depth: int | None = None, tol: float = 1e-10, tail_start=None) -> ScanTable:
    """``sum_k |G(n+tau, k+tau) - G(n, k)|`` truncated at ``|n-k| <= depth``.

    ``depth`` defaults to the truncation index for unit forcing at ``tol``.
    The proxy per tau is the max over scan points with ``|n| >= tail_start``
    (default: half the largest ``|n|`` scanned).  A finite-window proxy,
    not a certificate.
    """
    ns = np.asarray(list(n_scan), dtype=int)
    if depth is None:
        depth = truncation_index(dd, 1.0, tol)
    if tail_start is None:
        tail_start = int(np.max(np.abs(ns))) // 2
    base = green_rows(dd, ns, depth)
    rows, proxy = [], {}
    tail = np.abs(ns) >= tail_start
    for tau in taus:
        tau = int(tau)
        shifted = base if tau == 0 else green_rows(dd, ns + tau, depth)
        diff = np.linalg.norm(shifted - base, 2, axis=(2, 3)) if dd.q > 1 else np.abs(shifted - base)[..., 0, 0]
        sums = diff.sum(axis=1)
        rows.extend([tau, int(n), float(v)] for n, v in zip(ns, sums))
        proxy[tau] = float(sums[tail].max()) if tail.any() else float(sums.max())
    return ScanTable(rows, proxy, depth, tail_start)
