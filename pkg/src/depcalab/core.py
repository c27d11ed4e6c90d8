"""Shared scaffolding: integer-aligned time grids, coefficient systems,
sequence windows and configuration parsing.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Integral, Real
from typing import Any, Callable, Mapping

import numpy as np

from .errors import ConfigError

M_FLOOR = 1e-12
M_SAFETY = 1.01


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


# ---------------------------------------------------------------------------
# time grids
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on ``[t_start, t_end]`` with step ``1/m``.

    Node ``k`` is ``t_start + k // m + (k % m) / m``; nodes are never
    produced by repeated addition, so every integer in range is a node
    and ``anchor(k)`` is exact.
    """

    t_start: int
    t_end: int
    m: int

    def __post_init__(self):
        for name in ("t_start", "t_end"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, Integral):
                if isinstance(v, Real) and float(v).is_integer():
                    object.__setattr__(self, name, int(v))
                else:
                    raise ConfigError(f"{name} must be an integer, got {v!r}")
        if isinstance(self.m, bool) or not isinstance(self.m, Integral) or self.m < 1:
            raise ConfigError(f"subdivisions per unit must be a positive integer, got {self.m!r}")
        if self.t_start >= self.t_end:
            raise ConfigError("t_start must be smaller than t_end")

    @property
    def n_intervals(self) -> int:
        return self.t_end - self.t_start

    @property
    def n_nodes(self) -> int:
        return self.n_intervals * self.m + 1

    @property
    def h(self) -> float:
        return 1.0 / self.m

    def anchor(self, k: int) -> int:
        """Integer part of node ``k``."""
        return self.t_start + k // self.m

    def offset(self, k: int) -> Fraction:
        return Fraction(k % self.m, self.m)

    def node(self, k: int) -> float:
        if not 0 <= k < self.n_nodes:
            raise IndexError(f"node {k} outside grid of {self.n_nodes} nodes")
        return self.anchor(k) + (k % self.m) / self.m

    def node_exact(self, k: int) -> Fraction:
        return self.anchor(k) + self.offset(k)

    @property
    def times(self) -> np.ndarray:
        k = np.arange(self.n_nodes)
        return (self.t_start + k // self.m) + (k % self.m) / self.m

    @property
    def integers(self) -> np.ndarray:
        return np.arange(self.t_start, self.t_end + 1)

    def index_of(self, t) -> int:
        """Node index of ``t``; raises ``ValueError`` if ``t`` is not a node."""
        if isinstance(t, (Fraction, Integral)):
            km = (Fraction(t) - self.t_start) * self.m
            if km.denominator != 1:
                raise ValueError(f"{t} is not a grid node")
            k = int(km)
        else:
            x = (float(t) - self.t_start) * self.m
            k = int(round(x))
            if abs(x - k) > 1e-9 * max(1.0, abs(x)):
                raise ValueError(f"{t} is not a grid node")
        if not 0 <= k < self.n_nodes:
            raise ValueError(f"{t} outside grid [{self.t_start}, {self.t_end}]")
        return k

    def integer_index(self, n: int) -> int:
        return (n - self.t_start) * self.m

    def split(self, k: int) -> tuple[int, int]:
        """(interval index, offset index) of node ``k``; the last node is
        reported as offset ``m`` of the last interval."""
        if k == self.n_nodes - 1:
            return self.n_intervals - 1, self.m
        return k // self.m, k % self.m

    def contains(self, t) -> bool:
        return self.t_start <= t <= self.t_end


def build_grid(t_start: int, t_end: int, m: int) -> TimeGrid:
    return TimeGrid(t_start, t_end, m)


def floor_anchor(t) -> int:
    """Greatest integer not exceeding ``t``.

    Exact for ``int``/``Fraction`` input (grid nodes carry their exact
    rational value via :meth:`TimeGrid.node_exact`).
    """
    if isinstance(t, Integral):
        return int(t)
    if isinstance(t, Fraction):
        return math.floor(t)
    return math.floor(float(t))


# ---------------------------------------------------------------------------
# sequences
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SequenceWindow:
    """Values of a q-vector sequence on the integers ``n_min..n_max``."""

    n_min: int
    values: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] == 0:
            raise ValueError("values must be a non-empty (W, q) array")
        object.__setattr__(self, "values", _frozen(v))
        object.__setattr__(self, "n_min", int(self.n_min))

    @property
    def n_max(self) -> int:
        return self.n_min + self.values.shape[0] - 1

    @property
    def q(self) -> int:
        return self.values.shape[1]

    @property
    def ns(self) -> np.ndarray:
        return np.arange(self.n_min, self.n_max + 1)

    def __len__(self):
        return self.values.shape[0]

    def __getitem__(self, n: int) -> np.ndarray:
        if not self.n_min <= n <= self.n_max:
            raise IndexError(f"n={n} outside window [{self.n_min}, {self.n_max}]")
        return self.values[n - self.n_min]

    def __contains__(self, n) -> bool:
        return self.n_min <= n <= self.n_max

    def restrict(self, a: int, b: int) -> "SequenceWindow":
        if a < self.n_min or b > self.n_max or a > b:
            raise IndexError(f"[{a}, {b}] not inside [{self.n_min}, {self.n_max}]")
        return SequenceWindow(a, self.values[a - self.n_min : b - self.n_min + 1], dict(self.meta))

    def sup_norm(self) -> float:
        return float(np.max(np.linalg.norm(self.values, axis=1)))

    @classmethod
    def from_function(cls, fn: Callable, n_min: int, n_max: int) -> "SequenceWindow":
        ns = np.arange(n_min, n_max + 1)
        return cls(n_min, np.array([np.atleast_1d(fn(int(n))) for n in ns], dtype=float))

    @classmethod
    def constant(cls, value, n_min: int, n_max: int) -> "SequenceWindow":
        v = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(n_min, np.tile(v, (n_max - n_min + 1, 1)))


# ---------------------------------------------------------------------------
# coefficient systems
# ---------------------------------------------------------------------------


def interval_aware(fn):
    """Mark ``fn(t, n)`` as needing the interval index ``n = [t]``.

    The kernels always know which unit interval a time belongs to, so an
    interval-aware coefficient gets the left-limit value at ``t = n + 1``
    right (``x([t])`` is ``x(n)`` there, not ``x(n + 1)``).
    """
    fn.interval_aware = True
    return fn


def evaluate(fn, ts, ns, shape) -> np.ndarray:
    """Evaluate a coefficient on an array of times; returns ``ts.shape + shape``."""
    ts = np.asarray(ts, dtype=float)
    if getattr(fn, "interval_aware", False):
        if ns is None:
            ns = np.floor(ts)
        out = fn(ts, np.broadcast_to(np.asarray(ns), ts.shape))
    else:
        out = fn(ts)
    out = np.asarray(out, dtype=float)
    target = ts.shape + tuple(shape)
    if out.shape == target:
        return out
    if out.shape == tuple(shape):
        return np.broadcast_to(out, target).copy()
    if out.size == int(np.prod(target)):
        return out.reshape(target)
    # scalar-only callable
    flat_t = ts.reshape(-1)
    if getattr(fn, "interval_aware", False):
        flat_n = np.broadcast_to(np.asarray(ns), ts.shape).reshape(-1)
        vals = [np.asarray(fn(t, n), dtype=float) for t, n in zip(flat_t, flat_n)]
    else:
        vals = [np.asarray(fn(t), dtype=float) for t in flat_t]
    return np.array(vals).reshape(target)


def _const_fn(value):
    value = np.array(value, dtype=float)

    def fn(ts):
        return value

    return fn


@dataclass(frozen=True)
class CoefficientSystem:
    """Data ``(A, B, f)`` of ``x' = A(t) x + B(t) x([t]) + f(t)``.

    ``A``, ``B``, ``f`` are callables on arrays of times (or
    :func:`interval_aware` callables).  They must be pure; nothing checks
    this and impure coefficients void every downstream guarantee.
    ``autonomous`` declares time-invariance, letting reductions tile a
    single unit interval.
    """

    q: int
    A: Callable
    B: Callable
    f: Callable
    M: float = math.inf
    autonomous: bool = False
    name: str = ""

    def eval_A(self, ts, ns=None):
        return evaluate(self.A, ts, ns, (self.q, self.q))

    def eval_B(self, ts, ns=None):
        return evaluate(self.B, ts, ns, (self.q, self.q))

    def eval_f(self, ts, ns=None):
        return evaluate(self.f, ts, ns, (self.q,))

    def with_forcing(self, f, name=None) -> "CoefficientSystem":
        return CoefficientSystem(self.q, self.A, self.B, f, self.M, False, name or self.name)

    @classmethod
    def constant(cls, A, B, f, name="constant") -> "CoefficientSystem":
        A = np.atleast_2d(np.asarray(A, dtype=float))
        q = A.shape[0]
        B = np.asarray(B, dtype=float).reshape(q, q)
        f = np.asarray(f, dtype=float).reshape(q)
        return cls(q, _const_fn(A), _const_fn(B), _const_fn(f), autonomous=True, name=name)

    @classmethod
    def scalar(cls, a, b, c) -> "CoefficientSystem":
        return cls.constant([[a]], [[b]], [c], name=f"scalar(a={a}, b={b}, c={c})")


def _op_norms(X: np.ndarray) -> np.ndarray:
    if X.shape[-1] == 1 and X.ndim >= 2 and X.shape[-2] == 1:
        return np.abs(X[..., 0, 0])
    return np.linalg.norm(X, ord=2, axis=(-2, -1))


def sample_times(grid: TimeGrid) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and cell midpoints of ``grid`` with their interval indices."""
    k = np.arange(grid.n_intervals * grid.m)
    n = grid.t_start + k // grid.m
    left = n + (k % grid.m) / grid.m
    mid = n + ((k % grid.m) + 0.5) / grid.m
    right = n + ((k % grid.m) + 1) / grid.m
    ts = np.concatenate([left, mid, right])
    ns = np.concatenate([n, n, n])
    return ts, ns


def measure_bound(system: CoefficientSystem, grid: TimeGrid) -> float:
    """Sampled sup of max(|A|, |B|, |f|) (operator / Euclidean norms)."""
    ts, ns = sample_times(grid)
    A = system.eval_A(ts, ns)
    B = system.eval_B(ts, ns)
    f = system.eval_f(ts, ns)
    for name, X in (("A", A), ("B", B), ("f", f)):
        if not np.all(np.isfinite(X)):
            bad = ts[~np.isfinite(X.reshape(len(ts), -1)).all(axis=1)][0]
            raise ConfigError(f"coefficient {name} is not finite at t={bad}")
    return float(max(_op_norms(A).max(), _op_norms(B).max(), np.linalg.norm(f, axis=-1).max()))


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

_EXPR_NAMES = {
    "pi": np.pi,
    "e": np.e,
    "sqrt": np.sqrt,
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "exp": np.exp,
    "log": np.log,
    "abs": np.abs,
    "floor": np.floor,
    "tanh": np.tanh,
    "arctan": np.arctan,
    "minimum": np.minimum,
    "maximum": np.maximum,
    "where": np.where,
}


def compile_expression(expr: str, variables: tuple[str, ...] = ("t",)):
    """Compile a numpy expression in ``variables`` with a closed namespace."""
    if isinstance(expr, (int, float)):
        value = float(expr)
        return lambda *args: np.full(np.shape(args[0]), value) if args else value
    try:
        code = compile(str(expr), "<expression>", "eval")
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse expression {expr!r}: {exc}") from None
    allowed = set(_EXPR_NAMES) | set(variables)
    unknown = set(code.co_names) - allowed
    if unknown:
        raise ConfigError(f"unknown names {sorted(unknown)} in expression {expr!r}")

    def fn(*args):
        env = dict(_EXPR_NAMES)
        env.update(zip(variables, args))
        out = eval(code, {"__builtins__": {}}, env)
        return np.broadcast_to(np.asarray(out, dtype=float), np.shape(args[0]))

    fn.expression = str(expr)
    return fn


def demo_sequence(n):
    """``cos n + cos(sqrt2 n) + sin(n + sqrt|n|) + 3n^2/(n^2+1)``."""
    n = np.asarray(n, dtype=float)
    return np.cos(n) + np.cos(np.sqrt(2.0) * n) + np.sin(n + np.sqrt(np.abs(n))) + 3 * n**2 / (n**2 + 1)


def _matrix_value(value, q, what):
    v = np.asarray(value, dtype=float)
    if v.ndim == 0:
        return v * np.eye(q)
    try:
        return v.reshape(q, q)
    except ValueError:
        raise ConfigError(f"{what} must be a {q}x{q} matrix") from None


def _vector_value(value, q, what):
    v = np.asarray(value, dtype=float)
    if v.ndim == 0:
        if q != 1:
            raise ConfigError(f"{what} must be a vector of length {q}")
        return v.reshape(1)
    if v.size != q:
        raise ConfigError(f"{what} must be a vector of length {q}")
    return v.reshape(q)


def _trig_sum(spec, q, matrix, what):
    if not isinstance(spec, Mapping):
        spec = {"const": spec}
    shape_fn = _matrix_value if matrix else _vector_value
    const = shape_fn(spec.get("const", 0.0), q, what)
    terms = []
    for i, term in enumerate(spec.get("terms", [])):
        kind = term.get("fn", "cos")
        if kind not in ("cos", "sin"):
            raise ConfigError(f"{what} term {i}: fn must be cos or sin")
        terms.append(
            (
                shape_fn(term.get("amp", 1.0), q, f"{what} term {i}"),
                float(term.get("freq", 1.0)),
                float(term.get("phase", 0.0)),
                np.cos if kind == "cos" else np.sin,
            )
        )

    def fn(ts):
        ts = np.asarray(ts, dtype=float)
        out = np.broadcast_to(const, ts.shape + const.shape).copy()
        for amp, freq, phase, trig in terms:
            out += trig(freq * ts + phase)[(...,) + (None,) * amp.ndim] * amp
        return out

    return fn


def _expression_coefficient(spec, q, matrix, what):
    if matrix:
        if q == 1 and not isinstance(spec, list):
            spec = [[spec]]
        rows = [[compile_expression(e) for e in row] for row in spec]
        if len(rows) != q or any(len(r) != q for r in rows):
            raise ConfigError(f"{what} must be a {q}x{q} array of expressions")

        def fn(ts):
            ts = np.asarray(ts, dtype=float)
            return np.stack([np.stack([e(ts) for e in row], axis=-1) for row in rows], axis=-2)

    else:
        if q == 1 and not isinstance(spec, list):
            spec = [spec]
        entries = [compile_expression(e) for e in spec]
        if len(entries) != q:
            raise ConfigError(f"{what} must have {q} expressions")

        def fn(ts):
            ts = np.asarray(ts, dtype=float)
            return np.stack([e(ts) for e in entries], axis=-1)

    return fn


KINDS = ("constant", "trig-sum", "rap-demo", "expression")


@dataclass(frozen=True)
class CoefficientSpec:
    """Configuration form of a coefficient system.

    ``params`` per ``kind``:

    * ``constant``: ``{"A": [[...]], "B": [[...]], "f": [...]}``
    * ``trig-sum``: each of A, B, f is ``{"const": v, "terms": [{"amp": v,
      "freq": w, "phase": p, "fn": "cos"|"sin"}]}``
    * ``rap-demo`` (q = 1): ``{"a": .., "b": .., "scale": ..}``, forcing
      ``scale * demo_sequence(t)``
    * ``expression``: numpy expressions in ``t`` for every entry
    """

    kind: str
    q: int
    params: Mapping[str, Any]
    window: tuple[int, int, int] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown coefficient kind {self.kind!r}; expected one of {KINDS}")
        if isinstance(self.q, bool) or not isinstance(self.q, Integral) or self.q < 1:
            raise ConfigError("q must be a positive integer")
        if self.kind == "rap-demo" and self.q != 1:
            raise ConfigError("rap-demo is scalar (q = 1)")

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "CoefficientSpec":
        try:
            kind = d["kind"]
            q = d.get("q", 1)
            params = d.get("params", {})
        except (KeyError, TypeError):
            raise ConfigError("configuration needs at least a 'kind' field") from None
        window = None
        if "window" in d:
            w = d["window"]
            try:
                window = (w["start"], w["end"], w.get("m", 10))
            except (KeyError, TypeError):
                raise ConfigError("window must be {'start', 'end', 'm'}") from None
        return cls(kind, q, params, window)

    def grid(self) -> TimeGrid:
        if self.window is None:
            raise ConfigError("configuration has no window")
        return build_grid(*self.window)

    def build(self) -> CoefficientSystem:
        q, p = self.q, self.params
        if self.kind == "constant":
            return CoefficientSystem.constant(
                _matrix_value(p.get("A", 0.0), q, "A"),
                _matrix_value(p.get("B", 0.0), q, "B"),
                _vector_value(p.get("f", 0.0), q, "f") if q > 1 or np.ndim(p.get("f", 0.0)) else np.array([float(p.get("f", 0.0))]),
                name="constant",
            )
        if self.kind == "trig-sum":
            return CoefficientSystem(
                q,
                _trig_sum(p.get("A", 0.0), q, True, "A"),
                _trig_sum(p.get("B", 0.0), q, True, "B"),
                _trig_sum(p.get("f", 0.0 if q == 1 else [0.0] * q), q, False, "f"),
                name="trig-sum",
            )
        if self.kind == "rap-demo":
            a, b, scale = float(p.get("a", -1.0)), float(p.get("b", 0.0)), float(p.get("scale", 1.0))
            return CoefficientSystem(
                1,
                _const_fn([[a]]),
                _const_fn([[b]]),
                lambda ts: scale * demo_sequence(ts)[..., None],
                name="rap-demo",
            )
        return CoefficientSystem(
            q,
            _expression_coefficient(p.get("A", [["0"] * q] * q), q, True, "A"),
            _expression_coefficient(p.get("B", [["0"] * q] * q), q, True, "B"),
            _expression_coefficient(p.get("f", "0" if q == 1 else ["0"] * q), q, False, "f"),
            name="expression",
        )


def validate_system(spec: CoefficientSpec | CoefficientSystem, grid: TimeGrid) -> CoefficientSystem:
    """Build (if needed) and bound-check a system on ``grid``.

    ``M`` is the sampled sup of ``max(|A|, |B|, |f|)`` times 1.01, floored
    at 1e-12 so a zero system still has a positive bound.
    """
    system = spec.build() if isinstance(spec, CoefficientSpec) else spec
    sup = measure_bound(system, grid)
    M = max(sup * M_SAFETY, M_FLOOR)
    return CoefficientSystem(system.q, system.A, system.B, system.f, M, system.autonomous, system.name)


def load_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from None


def thread_cap() -> int:
    """Worker cap from ``DEPCA_LAB_THREADS`` (default: CPU count)."""
    raw = os.environ.get("DEPCA_LAB_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            raise ConfigError("DEPCA_LAB_THREADS must be an integer") from None
    return os.cpu_count() or 1


def parallel_map(fn, items):
    """Map ``fn`` over ``items`` with at most :func:`thread_cap` threads,
    preserving order."""
    items = list(items)
    workers = min(thread_cap(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
