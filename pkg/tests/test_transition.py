import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from depcalab.core import CoefficientSpec, CoefficientSystem, build_grid
from depcalab.errors import NearSingularJ
from depcalab.transition import build_kernels, fundamental, hybrid_kernels, restrict


def test_scalar_transition_is_exponential():
    tk = fundamental(CoefficientSystem.scalar(-0.7, 0.0, 0.0), build_grid(-2, 3, 8))
    assert tk.tiled
    assert tk.phi(2.5, -1.25)[0, 0] == pytest.approx(math.exp(-0.7 * 3.75), rel=1e-8)
    assert tk.phi(-1.25, 2.5)[0, 0] == pytest.approx(math.exp(0.7 * 3.75), rel=1e-8)


def test_time_varying_transition():
    # x' = cos(t) x has Phi(1, 0) = exp(sin 1)
    sys_ = CoefficientSpec("expression", 1, {"A": "cos(t)"}).build()
    tk = fundamental(sys_, build_grid(0, 2, 20))
    assert not tk.tiled
    assert tk.phi(1, 0)[0, 0] == pytest.approx(math.exp(math.sin(1.0)), rel=1e-9)
    assert tk.phi(2, 0.5)[0, 0] == pytest.approx(math.exp(math.sin(2.0) - math.sin(0.5)), rel=1e-9)


def _rotating():
    return CoefficientSpec(
        "expression",
        2,
        {"A": [["-0.5", "sin(t)"], ["-1", "0.2*cos(2*t)"]], "B": [["0.3", "0"], ["0.1", "-0.4"]]},
    ).build()


@given(st.data())
def test_cocycle(data):
    grid = build_grid(-2, 2, 4)
    tk = fundamental(_rotating(), grid)
    idx = st.integers(0, grid.n_nodes - 1)
    t, s, r = (grid.node(data.draw(idx)) for _ in range(3))
    lhs = tk.phi(t, s) @ tk.phi(s, r)
    assert np.allclose(lhs, tk.phi(t, r), rtol=1e-9, atol=1e-10)
    assert np.allclose(tk.phi(t, t), np.eye(2))


@given(st.integers(0, 3), st.integers(0, 4), st.integers(0, 4))
def test_Z_is_phi_times_J(n, jt, js):
    hk = build_kernels(_rotating(), build_grid(0, 4, 4))
    t, s = n + jt / 4, n + js / 4
    assert np.allclose(hk.Z(t, s), hk.transition.phi(t, s) @ hk.J(t, s), atol=1e-12)
    if js == 0:
        assert np.allclose(hk.Z_nodes[n, jt], hk.Z(t, s), atol=1e-12)


def test_scalar_C_and_Z():
    # a = b = 1: Z(1, 0) = e + (e - 1)
    hk = build_kernels(CoefficientSystem.scalar(1.0, 1.0, 0.0), build_grid(0, 3, 10))
    assert hk.C()[0, 0, 0] == pytest.approx(2 * math.e - 1, rel=1e-8)
    assert hk.J(1, 0.5)[0, 0] == pytest.approx(1 + (1 - math.exp(-0.5)), rel=1e-8)


def test_near_singular_J():
    b = -1.0 / (1.0 - math.exp(-0.5))
    with pytest.raises(NearSingularJ) as info:
        build_kernels(CoefficientSystem.scalar(1.0, b, 0.0), build_grid(0, 2, 2), cond_ceiling=1e6)
    assert info.value.details["interval"] == 0
    assert "condition" in info.value.describe()


def test_cond_ceiling_tight():
    # J(1, 0) = 1 - 1.5 (1 - 1/e) ~ 0.052
    sys_ = CoefficientSystem.scalar(1.0, -1.5, 0.0)
    tk = fundamental(sys_, build_grid(0, 1, 4))
    assert 15 < hybrid_kernels(tk, sys_).j_condition < 25
    with pytest.raises(NearSingularJ):
        hybrid_kernels(tk, sys_, cond_ceiling=10.0)


def test_restrict_matches():
    hk = build_kernels(_rotating(), build_grid(-3, 3, 5))
    sub = restrict(hk, -1, 2)
    assert sub.grid.t_start == -1 and sub.grid.n_intervals == 3
    assert np.allclose(sub.Z_nodes, hk.Z_nodes[2:5])
    with pytest.raises(ValueError):
        restrict(hk, -4, 0)


def test_K0_positive_and_sane():
    tk = fundamental(CoefficientSystem.scalar(-1.0, 0.0, 0.0), build_grid(0, 3, 10))
    assert 1.0 <= tk.K0 <= math.e + 1e-9


def test_csv(tmp_path):
    hk = build_kernels(CoefficientSystem.scalar(-1.0, 0.5, 1.0), build_grid(0, 2, 2))
    text = hk.to_csv(tmp_path / "z.csv").read_text().splitlines()
    assert text[0].startswith("t,s,")
    assert len(text) == 1 + 2 * 3
