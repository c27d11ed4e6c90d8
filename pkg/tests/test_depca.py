import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from depcalab.core import CoefficientSpec, CoefficientSystem, SequenceWindow, build_grid
from depcalab.depca import closed_form_oracle, kernels_R_G, oracle_suite, rap_solution, reconstruct
from depcalab.errors import ContinuityDefect, NoDichotomy
from depcalab.transition import GAUSS_X, build_kernels


def test_equilibrium_solution():
    sol = rap_solution(CoefficientSystem.scalar(-1.0, 0.5, 1.0), build_grid(-3, 3, 10))
    assert np.allclose(sol.values, 2.0, atol=1e-9)
    assert sol.meta["dichotomy"]["provenance"] == "spectral"
    assert sol.meta["bisummability_proxy"][1] < 1e-12


@given(st.floats(-2, -0.3), st.floats(-1.5, 1.5), st.floats(-2, 2), st.floats(-3, 3))
def test_closed_form_oracle_matches_reconstruction(a, b, c, x0):
    grid = build_grid(0, 4, 20)
    system = CoefficientSystem.scalar(a, b, c)
    hk = build_kernels(system, grid)
    anchors = SequenceWindow(0, closed_form_oracle(a, b, c, x0, np.arange(0, 5.0))[:, None])
    sol = reconstruct(hk, system, anchors)
    ref = closed_form_oracle(a, b, c, x0, grid.times)
    assert np.max(np.abs(sol.values[:, 0] - ref)) <= 1e-8 * max(1.0, np.max(np.abs(ref)))


def test_closed_form_oracle_backward():
    a, b, c = -1.0, 0.5, 1.0
    xs = closed_form_oracle(a, b, c, 0.3, np.array([-2.0, -1.0, 0.0]))
    C = math.exp(a) + (b / a) * (math.exp(a) - 1)
    h = (c / a) * (math.exp(a) - 1)
    assert C * xs[0] + h == pytest.approx(xs[1])
    assert C * xs[1] + h == pytest.approx(xs[2])


def test_oracle_suite_small():
    rows = oracle_suite(cases=4, seed=1, m=40, t_end=5)
    assert len(rows) == 4
    assert max(r["error"] for r in rows) < 1e-6
    assert all(abs(abs(r["C"]) - 1) > 0.01 for r in rows)


def test_periodic_forcing_mesh_independent():
    spec = CoefficientSpec("expression", 1, {"A": "-1", "B": "0.5", "f": "cos(t)"})
    system = spec.build()
    coarse = rap_solution(system, build_grid(-2, 2, 10), scan_taus=())
    fine = rap_solution(system, build_grid(-2, 2, 40), scan_taus=())
    assert np.allclose(coarse.values, fine.values[::4], atol=1e-9)


def test_solution_satisfies_equation_between_nodes():
    system = CoefficientSpec("expression", 1, {"A": "-1+0.2*sin(t)", "B": "0.4", "f": "cos(t)"}).build()
    sol = rap_solution(system, build_grid(-3, 3, 20), scan_taus=())
    t = sol.times
    dx = np.gradient(sol.values[:, 0], t)
    # compare only the interior of each cell; one-sided at integers
    inner = (np.abs(t - np.round(t)) > 0.06)
    x_floor = sol.at(np.floor(t))[:, 0]
    rhs = (-1 + 0.2 * np.sin(t)) * sol.values[:, 0] + 0.4 * x_floor + np.cos(t)
    assert np.max(np.abs(dx - rhs)[inner]) < 5e-3


def test_continuity_and_gauss_values():
    system = CoefficientSystem.scalar(-0.8, 0.3, 1.0)
    sol = rap_solution(system, build_grid(0, 3, 8), scan_taus=())
    assert sol.continuity_defect < 1e-12
    g = sol.at_gauss()
    t = 1 + (2 + GAUSS_X[3]) / 8
    assert g[1, 2, 3] == pytest.approx(sol.at(t)[0], abs=1e-14)
    x_ref = closed_form_oracle(-0.8, 0.3, 1.0, sol.values[0, 0], np.array([t]))
    assert g[1, 2, 3, 0] == pytest.approx(x_ref[0], abs=1e-7)
    with pytest.raises(ValueError):
        sol.at(3.5)


def test_reconstruct_rejects_bad_anchors():
    system = CoefficientSystem.scalar(-1.0, 0.5, 1.0)
    hk = build_kernels(system, build_grid(0, 3, 4))
    with pytest.raises(ContinuityDefect):
        reconstruct(hk, system, SequenceWindow(0, np.array([[0.0], [5.0], [0.0], [1.0]])))
    with pytest.raises(ValueError):
        reconstruct(hk, system, SequenceWindow(0, np.zeros((2, 1))))
    sol = reconstruct(hk, system, SequenceWindow(0, np.array([[0.0], [5.0], [0.0], [1.0]])), check=False)
    assert sol.meta["continuity_defect"] > 1


def test_no_dichotomy_propagates():
    # C = e^a + (b/a)(e^a - 1) = 1 when b = -a e^a / (e^a - 1) ... choose a = -1
    a = -1.0
    b = (1 - math.exp(a)) * a / (math.exp(a) - 1)
    with pytest.raises(NoDichotomy):
        rap_solution(CoefficientSystem.scalar(a, b, 1.0), build_grid(0, 2, 4))


def test_R_G_recursion_consistency():
    system = CoefficientSpec("expression", 2, {
        "A": [["-1", "0.3*sin(t)"], ["0.2", "-0.5"]],
        "B": [["0.4", "0"], ["0.1", "0.2"]],
        "f": ["cos(t)", "1"],
    }).build()
    grid = build_grid(-4, 4, 10)
    hk = build_kernels(system, grid)
    sol = rap_solution(system, grid, scan_taus=())
    for s, t in [(-3, 2), (-3, 2.3), (0, 0.7), (1, 1)]:
        rg = kernels_R_G(hk, t, s, system)
        pred = rg.R @ sol.at(s)[0] + rg.forcing_term
        assert np.allclose(pred, sol.at(t)[0], atol=1e-9)
    with pytest.raises(ValueError):
        kernels_R_G(hk, 0, 1)


def test_G_integral_matches_forcing_term():
    system = CoefficientSystem.scalar(-0.7, 0.4, 0.0)
    hk = build_kernels(system, build_grid(0, 3, 10))
    rg = kernels_R_G(hk, 2.5, 0, CoefficientSpec("expression", 1, {"A": "-0.7", "B": "0.4", "f": "sin(3*t)"}).build())
    pieces = [(0, 1), (1, 2), (2, 2.5)]
    total = sum(quad(lambda u: rg.G(u)[0, 0] * math.sin(3 * u), lo, hi, epsabs=1e-12)[0] for lo, hi in pieces)
    assert total == pytest.approx(rg.forcing_term[0], abs=1e-8)


def test_restrict_and_csv(tmp_path):
    sol = rap_solution(CoefficientSystem.scalar(-1.0, 0.5, 1.0), build_grid(-2, 2, 4), scan_taus=())
    part = sol.restrict(-1, 1)
    assert part.grid.n_nodes == 9
    assert np.allclose(part.values, sol.values[4:13])
    lines = sol.to_csv(tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "t,x0" and len(lines) == 18
    assert len(sol.plot_data(tmp_path)) == 1
