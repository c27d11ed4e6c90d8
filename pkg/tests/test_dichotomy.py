import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from depcalab.dichotomy import (
    bisummability_scan,
    bounded_solution,
    detect_dichotomy,
    green,
    green_rows,
    spectral_projection,
    truncation_index,
)
from depcalab.errors import NoDichotomy, WindowTooSmall
from depcalab.reduction import DiscreteSystem

from strategies import dims, hyperbolic_matrix, seeds


def _window_for(C, h, tol=1e-10, n_out=5):
    probe = detect_dichotomy(DiscreteSystem.constant_system(C, h, 0, 1))
    N = truncation_index(probe, float(np.linalg.norm(h)), tol)
    half = N + n_out
    return DiscreteSystem.constant_system(C, h, -half, half)


def test_scalar_constant_dichotomy():
    disc = DiscreteSystem.constant_system([[0.5]], [1.0], -40, 40)
    dd = detect_dichotomy(disc)
    assert dd.alpha == pytest.approx(math.log(2))
    assert dd.K == 1.0 and dd.P[0, 0] == 1.0
    y = bounded_solution(disc, dd)
    assert np.allclose(y.values, 2.0, atol=1e-10)


def test_unstable_scalar():
    disc = DiscreteSystem.constant_system([[3.0]], [2.0], -30, 30)
    dd = detect_dichotomy(disc)
    assert dd.P[0, 0] == 0.0
    y = bounded_solution(disc, dd)
    assert np.allclose(y.values, -1.0, atol=1e-10)


def test_unit_circle_rejected():
    with pytest.raises(NoDichotomy):
        detect_dichotomy(DiscreteSystem.constant_system([[1.0]], [1.0], 0, 10))
    rot = np.array([[0.0, -1.0], [1.0, 0.0]])
    with pytest.raises(NoDichotomy):
        detect_dichotomy(DiscreteSystem.constant_system(rot, [0, 0], 0, 10))


@given(seeds, dims)
def test_spectral_projection_is_invariant_projection(seed, q):
    C = hyperbolic_matrix(np.random.default_rng(seed), q)
    P, moduli = spectral_projection(C)
    assert np.allclose(P @ P, P, atol=1e-8)
    assert np.allclose(P @ C, C @ P, atol=1e-8)
    assert round(np.trace(P)) == int(np.sum(moduli < 1))


@given(seeds, dims)
def test_green_jump_and_bound(seed, q):
    rng = np.random.default_rng(seed)
    C = hyperbolic_matrix(rng, q)
    dd = detect_dichotomy(DiscreteSystem.constant_system(C, np.zeros(q), -10, 10))
    I = np.eye(q)
    for n in range(-8, 8):
        for m in range(-8, 8):
            G = green(dd, n, m)
            if n != m - 1:
                assert np.allclose(green(dd, n + 1, m), C @ G, atol=1e-8 * max(1, np.abs(G).max()))
            bound = dd.K * math.exp(-dd.alpha * abs(n - m))
            assert np.linalg.norm(G, 2) <= bound * (1 + 1e-8) + 1e-12
        assert np.allclose(green(dd, n + 1, n + 1) - C @ green(dd, n, n + 1), I, atol=1e-8)


@given(seeds, dims)
def test_bounded_solution_residual_and_bound(seed, q):
    rng = np.random.default_rng(seed)
    C = hyperbolic_matrix(rng, q)
    h = rng.normal(size=q)
    disc = _window_for(C, h)
    dd = detect_dichotomy(disc)
    y = bounded_solution(disc, dd)
    assert y.meta["residual"] <= 1e-8
    assert np.max(np.linalg.norm(y.values, axis=1)) <= dd.series_factor * np.linalg.norm(h) * (1 + 1e-9)
    # constant forcing: the bounded solution is the fixed point (I - C)^{-1} h
    fixed = np.linalg.solve(np.eye(q) - C, h)
    assert np.allclose(y.values, fixed, atol=1e-8 * max(1, np.linalg.norm(fixed)))


@given(st.floats(0.05, 0.9), st.floats(-3, 3))
def test_geometric_series_oracle(c, h):
    disc = DiscreteSystem.constant_system([[c]], [h], -60, 60)
    n = np.arange(-60, 61)
    hn = h * np.cos(n)
    disc = disc.with_forcing(hn[:, None])
    y = bounded_solution(disc, detect_dichotomy(disc), out="full")
    # y(n) = sum_{j >= 0} c^j h(n-1-j), truncated at the window edge
    for k in (0, 3, -2):
        ref = sum(c**j * h * math.cos(k - 1 - j) for j in range(0, k + 60))
        assert y[k][0] == pytest.approx(ref, abs=1e-9)


def test_variable_dichotomy_fit():
    n = np.arange(-120, 121)
    C = np.zeros((len(n), 2, 2))
    C[:, 0, 0] = 0.5 + 0.1 * np.sin(n)
    C[:, 1, 1] = 2.0 + 0.3 * np.cos(np.sqrt(2) * n)
    C[:, 0, 1] = 0.2
    h = np.stack([np.cos(n), np.ones_like(n, dtype=float)], axis=1)
    disc = DiscreteSystem(-120, C, h)
    dd = detect_dichotomy(disc)
    assert dd.provenance != "spectral"
    assert 0.3 < dd.alpha < math.log(2.0) + 0.1
    for a in range(-20, 21, 5):
        for b in range(-20, 21, 5):
            assert np.linalg.norm(green(dd, a, b), 2) <= dd.K * math.exp(-dd.alpha * abs(a - b)) * (1 + 1e-9)
    y = bounded_solution(disc, dd, out=(-20, 20))
    pred = np.einsum("nij,nj->ni", C[100:140], y.values[:-1]) + h[100:140]
    assert np.allclose(y.values[1:], pred, atol=1e-8)


def test_variable_unit_circle_rejected():
    n = np.arange(-60, 61)
    C = (1.0 + 0.0 * n)[:, None, None] * np.ones((1, 1, 1))
    C = C + 1e-3 * np.sin(n)[:, None, None]
    with pytest.raises(NoDichotomy):
        detect_dichotomy(DiscreteSystem(-60, C, np.ones((len(n), 1))))


def test_window_too_small():
    disc = DiscreteSystem.constant_system([[0.9]], [1.0], -5, 5)
    dd = detect_dichotomy(disc)
    with pytest.raises(WindowTooSmall):
        bounded_solution(disc, dd)
    with pytest.raises(WindowTooSmall):
        bounded_solution(disc, dd, out=(0, 0))
    assert len(bounded_solution(disc, dd, out="full")) == 12


def test_green_rows_match_green():
    C = hyperbolic_matrix(np.random.default_rng(3), 3)
    dd = detect_dichotomy(DiscreteSystem.constant_system(C, np.zeros(3), -20, 20))
    rows = green_rows(dd, [-2, 0, 4], 5)
    for r, n in enumerate([-2, 0, 4]):
        for d in range(-5, 6):
            assert np.allclose(rows[r, d + 5], green(dd, n, n + d), atol=1e-10)
    with pytest.raises(WindowTooSmall):
        green_rows(dd, [18], 5)


def test_bisummability_constant_is_zero():
    dd = detect_dichotomy(DiscreteSystem.constant_system([[0.5]], [1.0], -100, 100))
    scan = bisummability_scan(dd, [0, 1, 7], range(-40, 41, 10))
    assert all(v < 1e-12 for v in scan.proxy.values())
    assert len(scan.rows) == 3 * 9


def test_dichotomy_summary_has_no_arrays_beyond_P():
    dd = detect_dichotomy(DiscreteSystem.constant_system([[0.5]], [1.0], 0, 5))
    s = dd.summary()
    assert s["provenance"] == "spectral" and s["window"] == [0, 6]
