import math

import numpy as np
import pytest
from scipy import special

from glosten_eq.equilibrium import (
    MarketParams,
    SolverControls,
    Status,
    UnboundedDemand,
    apply_T,
    apply_T_values,
    distance,
    initial_guess,
    invert,
    jacobian_T,
    operator_for,
    phi_map,
    solve,
)
from glosten_eq.numerics import GridFunction, GridParams, cumulative_average_nodes
from glosten_eq.signals import make_distribution

from conftest import solved

SMALL = GridParams(core_halfwidth_sigmas=6.0, core_step_sigmas=0.1, tail_max_sigmas=20.0)


@pytest.mark.parametrize("n", [1, 2, 5])
def test_bernoulli_single_step(n):
    dist = make_distribution("bernoulli")
    op = operator_for(GridParams(), 1.0)
    F0 = GridFunction(op.grid, initial_guess(dist, op.nodes, n))
    # any F inside (-1, 1) makes phi+ = 1 and phi- = -1
    phi = phi_map(F0, dist, op=op)
    assert np.allclose(phi.values, np.where(op.nodes >= 0, 1.0, -1.0))
    c = special.erf(op.nodes / math.sqrt(2))
    expect = c if n == 1 else c / n + (n - 1) / n * cumulative_average_nodes(op.nodes, c)
    out = apply_T(F0, dist, MarketParams(n), op)
    assert np.max(np.abs(out.values - expect)) <= 1e-10


def test_market_params_validation():
    with pytest.raises(ValueError):
        MarketParams(0)
    with pytest.raises(ValueError):
        MarketParams(1.5)
    with pytest.raises(ValueError):
        MarketParams(1, 0.0)
    student = make_distribution("student", {"alpha": 3.0})
    assert not MarketParams(1).feasible(student)
    assert MarketParams(2).feasible(student)


def test_distance_is_relative_beyond_one():
    assert distance(np.array([0.5]), np.array([0.25])) == 0.25
    assert distance(np.array([110.0]), np.array([100.0])) == pytest.approx(0.1)


@pytest.mark.parametrize("family,params,n", [("gaussian", {}, 1), ("truncated_gaussian", {}, 3)])
def test_jacobian_matches_finite_differences(family, params, n):
    dist = make_distribution(family, params)
    op = operator_for(SMALL, 1.0)
    f = 0.8 * initial_guess(dist, op.nodes, n)
    J = jacobian_T(f, dist, n, op)
    rng = np.random.default_rng(3)
    dv = rng.standard_normal(len(f)) * np.exp(-0.5 * (op.nodes / 3) ** 2)
    eps = 1e-6
    fd = (apply_T_values(f + eps * dv, dist, n, op) - apply_T_values(f - eps * dv, dist, n, op)) / (2 * eps)
    assert np.max(np.abs(J @ dv - fd)) <= 1e-4 * max(1.0, np.max(np.abs(fd)))


def test_newton_and_picard_agree():
    dist = make_distribution("gaussian")
    ctl = SolverControls(tol=1e-10)
    a = solve(dist, MarketParams(2), ctl, SMALL, method="picard")
    b = solve(dist, MarketParams(2), ctl, SMALL, method="newton")
    assert a.converged and b.converged
    assert np.max(np.abs(a.F.values - b.F.values)) <= 1e-8


def test_solution_is_independent_of_start():
    dist = make_distribution("truncated_gaussian")
    ctl = SolverControls(tol=1e-10)
    base = solve(dist, MarketParams(2), ctl, SMALL)
    other = solve(dist, MarketParams(2), ctl, SMALL, F0=0.5 * np.tanh(operator_for(SMALL).nodes))
    assert np.max(np.abs(base.F.values - other.F.values)) <= 1e-8


def test_solution_fields():
    sol = solved("gaussian", n=1)
    assert sol.status is Status.converged
    assert sol.iterations == len(sol.history)
    assert sol.F.monotone
    d = sol.to_dict()
    assert d["status"] == "converged" and len(d["F"]) == len(sol.nodes)


def test_invert_round_trip():
    sol = solved("gaussian", n=1)
    for x0 in (-3.0, -0.2, 0.7, 5.0):
        assert invert(sol, float(sol.F(x0))) == pytest.approx(x0, abs=1e-8)
    x, flag = invert(sol, float(sol.F.values[-1]) * 1.5, return_flag=True)
    assert flag and x > sol.nodes[-1]


def test_invert_outside_support():
    sol = solved("truncated_gaussian", n=25)
    with pytest.raises(UnboundedDemand):
        invert(sol, 1.0)
    with pytest.raises(UnboundedDemand):
        invert(sol, -2.0)


def test_F_flattens_as_N_grows():
    # more insiders trade larger amounts on the same signal
    x = np.array([0.3, 1.0, 2.0, 5.0, 50.0])
    vals = np.array([solved("truncated_gaussian", n=n).F(x) for n in (1, 2, 5, 25)])
    assert np.all(np.diff(vals, axis=0) < 0)
    assert np.all(vals <= 1.0)


def test_student_N1_diverges():
    sol = solved("student", {"alpha": 3.0}, n=1)
    assert sol.status is Status.diverged
    assert not sol.feasible
