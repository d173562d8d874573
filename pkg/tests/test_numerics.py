import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special

from glosten_eq.numerics import (
    Grid,
    GridFunction,
    GridParams,
    TailLaw,
    averaged_kernel,
    convolve,
    cumulative_average,
    cumulative_average_nodes,
    fit_tail_exponent,
    gaussian_density,
)

GRID = Grid.build(GridParams(tail_max_sigmas=100.0))


def test_kernel_values():
    assert gaussian_density(1.0, 0.0) == pytest.approx(0.3989422804, abs=1e-10)
    assert averaged_kernel(1.0, 0.0, 0.7) == pytest.approx(0.3122539334, abs=1e-10)
    assert averaged_kernel(1.0, 2.0, 1.0) == pytest.approx(0.3413447461, abs=1e-10)
    with pytest.raises(ValueError):
        gaussian_density(0.0, 1.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.1, 5.0), st.floats(-6.0, 6.0), st.floats(-4.0, 4.0))
def test_averaged_kernel_is_an_average(sigma, x, z):
    if abs(x) < 1e-3:
        return
    ref, _ = integrate.quad(lambda y: gaussian_density(sigma, y - z), 0.0, x)
    assert averaged_kernel(sigma, x, z) == pytest.approx(ref / x, rel=1e-8, abs=1e-12)


def test_grid_layout():
    g = GRID
    assert g.nodes[g.zero_index] == 0.0
    assert np.allclose(g.nodes, -g.nodes[::-1])
    assert g.nodes[-1] == pytest.approx(100.0)
    assert np.all(np.diff(g.nodes) > 0)
    steps = np.diff(g.nodes[g.nodes >= 12.0])
    assert np.all(steps[1:] / steps[:-1] <= 1.05 + 1e-9)
    assert np.allclose(g.scaled(2.0).nodes, 2 * g.nodes)


def test_convolve_oracles():
    const = GridFunction(GRID, np.full(len(GRID), 3.0))
    assert convolve(const, 1.0, 0.4) == pytest.approx(3.0, abs=1e-12)
    lin = GridFunction(GRID, GRID.nodes.copy(), extrapolation_hi="linear", extrapolation_lo="linear")
    assert np.allclose(convolve(lin, 2.0, np.array([-3.0, 0.0, 5.0])), [-3.0, 0.0, 5.0], atol=1e-12)
    sign = GridFunction(GRID, np.sign(GRID.nodes))
    val = convolve(sign, 1.0, 1.0, jump_at_zero=(-1.0, 1.0))
    assert val == pytest.approx(0.6826894921, abs=1e-10)


def test_convolve_hermite_agrees_with_exact():
    g = GridFunction(GRID, np.tanh(GRID.nodes))
    x = np.linspace(-3, 3, 7)
    assert np.allclose(convolve(g, 1.0, x), convolve(g, 1.0, x, method="hermite"), atol=1e-4)


def test_cumulative_average_of_erf():
    g = GridFunction(GRID, special.erf(GRID.nodes / math.sqrt(2)))
    ref = integrate.quad(lambda y: special.erf(y / math.sqrt(2)), 0, 3)[0] / 3
    assert ref == pytest.approx(0.7342932, abs=1e-7)
    assert cumulative_average(g, 3.0) == pytest.approx(ref, abs=1e-5)
    nodal = cumulative_average_nodes(GRID.nodes, g.values)
    i = int(np.argmin(np.abs(GRID.nodes - 3.0)))
    assert nodal[i] == pytest.approx(ref, abs=1e-5)
    assert cumulative_average(g, 0.0) == 0.0


def test_cumulative_average_needs_origin():
    with pytest.raises(ValueError):
        cumulative_average_nodes(np.array([0.5, 1.0, 2.0]), np.ones(3))


def test_grid_function_extrapolation():
    law = TailLaw("power", 0.5, 2.0)
    f = GridFunction(GRID, GRID.nodes.copy(), extrapolation_hi="asymptote", tail_hi=law)
    x = 400.0
    assert f(x) == pytest.approx(100.0 + 2.0 * (20.0 - 10.0))
    assert f(-1000.0) == pytest.approx(-100.0)
    with pytest.raises(ValueError):
        GridFunction(GRID, GRID.nodes.copy(), extrapolation_hi="asymptote")
    with pytest.raises(ValueError):
        GridFunction(GRID, np.full(len(GRID), np.nan))


@pytest.mark.parametrize("slope", [-0.5, 0.5, 2.0])
def test_fit_recovers_power(slope):
    x = np.logspace(0, 4, 200)
    fit = fit_tail_exponent(x, 3.0 * x ** slope, window=2.0)
    assert fit.slope == pytest.approx(slope, abs=1e-10)
    assert fit.intercept == pytest.approx(math.log(3.0))


def test_fit_logloglog_and_noise():
    x = np.logspace(1, 8, 300)
    fit = fit_tail_exponent(x, np.log(x) ** 0.5, window=3.0, mode="logloglog")
    assert fit.slope == pytest.approx(0.5, abs=1e-10)
    rng = np.random.default_rng(7)
    noisy = x ** -1.0 * np.exp(0.01 * rng.standard_normal(x.size))
    fit = fit_tail_exponent(x, noisy, window=3.0, downweight_last=5)
    assert abs(fit.slope + 1.0) < 5 * fit.stderr + 1e-3
    with pytest.raises(ValueError):
        fit_tail_exponent(x, -x)
    with pytest.raises(ValueError):
        fit_tail_exponent(x[:5], x[:5])
