import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from depcalab.core import CoefficientSystem, build_grid
from depcalab.depca import rap_solution
from depcalab.dichotomy import bounded_solution, detect_dichotomy
from depcalab.errors import JacobianFailure, NoContraction, NonConvergence
from depcalab.perturb import (
    Perturbation,
    jacobian,
    jacobian_agreement,
    nu_ladder,
    solve_perturbed_depca,
    solve_perturbed_discrete,
    write_ladder,
)
from depcalab.reduction import DiscreteSystem

ROOT = 2.1656464943847187  # 0.5 y = 1 + 0.1 sin y, frozen from bisection


def _sin_g(t, x, y, nu):
    return nu * np.sin(x)


def _discrete(R=60):
    disc = DiscreteSystem.constant_system([[0.5]], [1.0], -R, R)
    dd = detect_dichotomy(disc)
    xi = bounded_solution(disc, dd, out="full")
    return disc, dd, xi


def test_discrete_fixed_point():
    disc, dd, xi = _discrete()
    psi = solve_perturbed_discrete(disc, dd, Perturbation(_sin_g, 0.1, r=0.5), xi)
    cert = psi.meta["certificate"]
    assert psi[0][0] == pytest.approx(ROOT, abs=1e-8)
    assert cert.contraction_factor == pytest.approx(0.3, rel=1e-3)
    assert cert.ratios_ok
    assert cert.distance <= cert.r


def test_discrete_no_contraction():
    disc, dd, xi = _discrete()
    with pytest.raises(NoContraction) as info:
        solve_perturbed_discrete(disc, dd, Perturbation(_sin_g, 0.5, r=5.0), xi)
    assert info.value.details["kappa"] >= 1


def test_radius_check_fails_for_small_ball():
    disc, dd, xi = _discrete()
    with pytest.raises(NoContraction):
        solve_perturbed_discrete(disc, dd, Perturbation(_sin_g, 0.1, r=0.01), xi)


def test_non_convergence():
    disc, dd, xi = _discrete()
    with pytest.raises(NonConvergence):
        solve_perturbed_discrete(disc, dd, Perturbation(_sin_g, 0.1, r=0.5), xi, tol=1e-30, max_iter=3)


def test_discrete_needs_covering_xi():
    disc, dd, xi = _discrete()
    with pytest.raises(ValueError):
        solve_perturbed_discrete(disc, dd, Perturbation(_sin_g, 0.1), xi.restrict(-10, 10))


@given(st.floats(0.01, 2.0), st.floats(-2, 2), st.floats(-2, 2))
def test_measured_lipschitz_linear_g(nu, a, b):
    pert = Perturbation(lambda t, x, y, nu: nu * (a * x + b * y), nu, r=0.7, samples=2000)
    t = np.zeros(3)
    x = np.array([[0.0], [1.0], [2.0]])
    m = pert.measure(t, t.astype(int), x, x)
    # near pairs sit 1e-4 r apart, so roundoff in g enters at ~1e-12 |g| / 1e-4
    slack = 1e-8 * nu * (abs(a) + abs(b) + 1)
    assert m.Lx == pytest.approx(abs(nu * a), rel=1e-6, abs=slack)
    assert m.Ly == pytest.approx(abs(nu * b), rel=1e-6, abs=slack)
    assert m.M0 == max(m.Lx, m.Ly)


def test_measure_is_seeded():
    g = lambda t, x, y, nu: nu * np.sin(x) * np.cos(y)
    t = np.linspace(0, 1, 5)
    x = np.linspace(0, 1, 5)[:, None]
    a = Perturbation(g, 0.2, seed=7).measure(t, t.astype(int), x, x)
    b = Perturbation(g, 0.2, seed=7).measure(t, t.astype(int), x, x)
    c = Perturbation(g, 0.2, seed=8).measure(t, t.astype(int), x, x)
    assert (a.Lx, a.Ly) == (b.Lx, b.Ly)
    assert (a.Lx, a.Ly) != (c.Lx, c.Ly)
    assert a.Lx <= 0.2 * (1 + 1e-9)
    assert not a.at(0.1).measured


def test_vanishes_at_zero():
    pert = Perturbation(_sin_g, 0.3)
    x = np.ones((4, 1))
    assert pert.vanishes_at_zero(np.zeros(4), np.zeros(4), x, x)
    shifted = Perturbation(lambda t, x, y, nu: nu * np.sin(x) + 1e-3, 0.3)
    assert not shifted.vanishes_at_zero(np.zeros(4), np.zeros(4), x, x)


def test_depca_perturbed_center_value():
    system = CoefficientSystem.scalar(-1.0, 0.5, 1.0)
    grid = build_grid(-40, 40, 20)
    xi = rap_solution(system, grid, scan_taus=())
    psi = solve_perturbed_depca(system, xi, Perturbation(_sin_g, 0.1, r=0.5, samples=4000))
    cert = psi.meta["certificate"]
    assert psi.at(0.0)[0] == pytest.approx(ROOT, abs=1e-6)
    assert psi.at(0.5)[0] == pytest.approx(ROOT, abs=1e-6)
    assert cert.contraction_factor < 1 and cert.ratios_ok
    assert cert.contraction_factor <= cert.kappa_bound


def test_ladder_rows(tmp_path):
    disc, dd, xi = _discrete()

    def solve(nu):
        return solve_perturbed_discrete(disc, dd, Perturbation(_sin_g, nu, r=0.5), xi)

    rows = nu_ladder(solve, [0.1, 0.05, 0.6])
    assert [r["converged"] for r in rows] == [True, True, False]
    assert rows[1]["distance"] < rows[0]["distance"]
    assert math.isnan(rows[2]["distance"])
    text = write_ladder(tmp_path / "l.csv", rows).read_text().splitlines()
    assert text[0] == "nu,distance,kappa,iterations,converged"


def test_certificate_json(tmp_path):
    disc, dd, xi = _discrete()
    psi = solve_perturbed_discrete(disc, dd, Perturbation(_sin_g, 0.1, r=0.5), xi)
    data = json.loads(psi.meta["certificate"].to_json(tmp_path / "c.json").read_text())
    assert data["ratios_ok"] and data["iterations"] >= 2


def test_jacobian_exact_and_agreement():
    f = lambda t, x, y: np.stack([np.sin(x[:, 0]) * y[:, 1], x[:, 1] ** 3 + t], axis=1)
    rng = np.random.default_rng(0)
    x = rng.normal(size=(20, 2))
    y = rng.normal(size=(20, 2))
    t = rng.normal(size=20)
    Jx = jacobian(f, t, x, y, "x")
    ref = np.zeros((20, 2, 2))
    ref[:, 0, 0] = np.cos(x[:, 0]) * y[:, 1]
    ref[:, 1, 1] = 3 * x[:, 1] ** 2
    assert np.allclose(Jx, ref, atol=1e-9)
    Jy = jacobian(f, t, x, y, "y")
    assert np.allclose(Jy[:, 0, 1], np.sin(x[:, 0]), atol=1e-9)
    assert jacobian_agreement(f, t, x, y, "x") <= 1e-5


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_jacobian_failure():
    with pytest.raises(JacobianFailure):
        jacobian(lambda t, x, y: np.log(x), np.zeros(1), np.zeros((1, 1)), np.zeros((1, 1)))


@given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=5, unique=True))
def test_measurements_shrink_with_nu(nus):
    g = lambda t, x, y, nu: nu * np.sin(x) * np.cos(y) + nu**2 * y
    t = np.linspace(-2, 2, 9)
    x = np.cos(t)[:, None]
    ladder = [Perturbation(g, nu, r=0.5, samples=2000).measure(t, np.floor(t), x, x) for nu in sorted(nus, reverse=True)]
    for big, small in zip(ladder, ladder[1:]):
        assert small.M0 <= big.M0 * (1 + 1e-9) + 1e-15
        assert small.g_norm <= big.g_norm * (1 + 1e-9) + 1e-15
    assert ladder[-1].vanishes_at_zero(t, np.floor(t), x, x)
