import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import brentq

from depcalab.core import build_grid
from depcalab.errors import ConfigError, NoContraction, NoDichotomy, NonGridShift
from depcalab.lasota import (
    LasotaParams,
    bohr_mean,
    ergodic_kernel_scan,
    gamma_sweep,
    rap_positive_solution,
    simulate,
    truncation_depth,
    write_sweep,
)

Y_STAR = 0.9127652716086226  # y = exp(-0.1 y), frozen from bisection


def _quasi():
    return LasotaParams(
        delta=lambda t: 1.0 + 0.5 * np.cos(t) * np.cos(np.sqrt(2) * t),
        p=lambda t: 1.0 + 0.3 * np.sin(np.sqrt(3) * t),
        gamma=0.05,
        mean_window=200.0,
    )


def test_frozen_equilibrium():
    ref = brentq(lambda y: y - math.exp(-0.1 * y), 0, 2, xtol=1e-15)
    assert ref == pytest.approx(Y_STAR, abs=1e-13)


def test_constant_coefficients_equilibrium():
    sol = rap_positive_solution(LasotaParams(1.0, 1.0, 0.1), build_grid(-5, 5, 10))
    assert np.allclose(sol.values, Y_STAR, atol=1e-8)
    assert sol.meta["kappa"] == pytest.approx(0.1, rel=1e-6)
    assert sol.meta["gamma_star"] == pytest.approx(1.0, rel=1e-6)
    assert all(r <= 0.1 * 1.1 for r in sol.meta["residual_ratios"])


@given(st.floats(0.2, 3.0), st.floats(0.2, 3.0), st.floats(0.01, 0.5))
def test_constant_equilibrium_property(d, p, g):
    params = LasotaParams(d, p, g, mean_window=50.0)
    # RK4 error ~ (d/m)^4; m = 40 keeps it under 1e-9 for d <= 3
    grid = build_grid(-2, 2, 40)
    if g * p / d >= 1:
        with pytest.raises(NoContraction):
            rap_positive_solution(params, grid)
        return
    sol = rap_positive_solution(params, grid)
    y = brentq(lambda y: d * y - p * math.exp(-g * y), 0, p / d + 1)
    assert np.allclose(sol.values, y, atol=1e-8)


def test_simulation_approaches_equilibrium():
    sol = simulate(LasotaParams(1.0, 1.0, 0.1), 0.0, build_grid(0, 40, 10))
    assert np.all(sol.values >= 0)
    assert sol.values[-1, 0] == pytest.approx(Y_STAR, abs=1e-8)
    with pytest.raises(ConfigError):
        simulate(LasotaParams(), -1.0, build_grid(0, 2, 2))


def test_quasi_periodic_positive_and_bounded():
    params = _quasi()
    sol = rap_positive_solution(params, build_grid(-60, 60, 10))
    v = sol.values[:, 0]
    S = sol.meta["S"]
    assert v.min() > 0
    # 0 < f <= 1, so the solution is dominated by the unit-forcing solution
    assert v.max() <= S * (1 + 1e-9)
    assert sol.meta["kappa"] < 1
    # agrees with a forward simulation started far in the past
    sim = simulate(params, 0.0, build_grid(-120, 60, 10)).restrict(-60, 60)
    assert np.max(np.abs(sim.values - sol.values)) < 1e-8


def test_threshold():
    params = LasotaParams(1.0, 2.0, 0.1)
    grid = build_grid(-3, 3, 4)
    gstar = rap_positive_solution(params, grid).meta["gamma_star"]
    assert gstar == pytest.approx(0.5, rel=1e-6)
    with pytest.raises(NoContraction) as info:
        rap_positive_solution(params.with_gamma(0.6), grid)
    assert info.value.details["gamma_star"] == pytest.approx(0.5, rel=1e-6)


def test_gamma_sweep(tmp_path):
    rows = gamma_sweep(LasotaParams(1.0, 2.0, 0.1), build_grid(-3, 3, 4), [0.1, 0.4, 0.6])
    assert [r["converged"] for r in rows] == [True, True, False]
    assert write_sweep(tmp_path / "s.csv", rows).read_text().startswith("gamma,kappa,converged")


def test_lower_mean_and_validate():
    with pytest.raises(NoDichotomy):
        LasotaParams(delta=lambda t: np.cos(t), mean_window=100.0).lower_mean()
    with pytest.raises(NoDichotomy):
        LasotaParams(delta=1.0, delta_minus=2.0).lower_mean()
    with pytest.raises(ConfigError):
        LasotaParams(delta=lambda t: 0.5 + np.cos(t)).validate(build_grid(0, 5, 4))
    assert LasotaParams(delta=2.0).lower_mean() == pytest.approx(1.0)


def test_bohr_mean():
    assert bohr_mean(lambda t: 3.0 + 0 * t, 10) == pytest.approx(3.0)
    assert abs(bohr_mean(np.cos, 500)) < 1e-2
    assert bohr_mean(lambda t: np.cos(t) ** 2, 500) == pytest.approx(0.5, abs=1e-3)
    with pytest.raises(ValueError):
        bohr_mean(np.cos, 0)


def test_truncation_depth():
    L = truncation_depth(0.5, 1e-8)
    assert L == math.ceil(math.log(4 / 1e-8) / 0.5)
    assert 2 / 0.5 * math.exp(-0.5 * L) <= 1e-8
    assert truncation_depth(0.5, 1e-8, K=10) > L


def test_kernel_scan():
    const = ergodic_kernel_scan(1.0, [0, 1, 2.5], 20, 40)
    assert np.all(const.proxy < 1e-12)
    osc = ergodic_kernel_scan(lambda t: 1 + 0.5 * np.cos(t), [0, 1, 2 * np.pi * 0 + 6.28], 20, 60)
    assert osc.proxy[0] == 0.0
    assert osc.proxy[1] > 0.05
    assert osc.proxy[2] < osc.proxy[1]
    assert osc.K >= 1
    with pytest.raises(NonGridShift):
        ergodic_kernel_scan(1.0, [0.013], 10, 20)
    with pytest.raises(NoDichotomy):
        ergodic_kernel_scan(lambda t: -1 + 0 * t, [0], 10, 20)
