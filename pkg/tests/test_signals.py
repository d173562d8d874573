import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from glosten_eq.signals import FAMILIES, Regime, Side, make_distribution, psi, tail_spec

CONTINUOUS = [f for f in FAMILIES if f not in ("bernoulli", "trinomial", "discrete")]


def _probe(d):
    lo = d.support_lo if math.isfinite(d.support_lo) else d.mean - 4 * d.std
    hi = d.support_hi if math.isfinite(d.support_hi) else d.mean + 4 * d.std
    return np.linspace(lo, hi, 41)[1:-1]


@pytest.mark.parametrize("family", CONTINUOUS)
def test_masses_and_means_add_up(family):
    d = make_distribution(family)
    y = _probe(d)
    assert np.allclose(d.pi_plus(y) + d.pi_minus(y), 1.0, atol=1e-10)
    assert np.allclose(d.phi_plus(y) + d.phi_minus(y), d.mean, atol=1e-8)
    assert abs(d.mean) < 1e-9  # centred by default


@pytest.mark.parametrize("family", ["truncated_gaussian", "squashed_laplace", "gaussian", "lognormal",
                                    "student", "exponential", "weibull", "nig"])
def test_phi_plus_against_quadrature(family):
    # Phi+(y) = y Pi+(y) + int_y^hi Pi+(u) du
    d = make_distribution(family)
    hi = d.support_hi if math.isfinite(d.support_hi) else math.inf
    for y in _probe(d)[::6]:
        tail, _ = integrate.quad(lambda u: float(d.pi_plus(u)), y, hi, limit=200)
        assert d.phi_plus(y) == pytest.approx(y * d.pi_plus(y) + tail, abs=1e-7)


def test_gaussian_functionals_match_scipy():
    d = make_distribution("gaussian", {"Sigma": 2.0})
    y = np.linspace(-5, 5, 21)
    s = math.sqrt(2.0)
    assert np.allclose(d.pi_plus(y), stats.norm.sf(y, scale=s), atol=1e-14)
    assert np.allclose(d.phi_plus(y), s * stats.norm.pdf(y / s), atol=1e-14)


@pytest.mark.parametrize("family", CONTINUOUS)
def test_psi_monotone_and_above_y(family):
    d = make_distribution(family)
    y = _probe(d)
    up = psi(d, Side.upper, y)
    dn = psi(d, Side.lower, y)
    assert np.all(np.diff(up) >= -1e-10)
    assert np.all(np.diff(dn) >= -1e-10)
    assert np.all(up > y)
    assert np.all(dn <= y + 1e-12)


def test_psi_discrete_examples():
    assert psi(make_distribution("trinomial"), "upper", -0.5) == pytest.approx(0.5)
    assert psi(make_distribution("bernoulli"), "upper", 0.3) == pytest.approx(1.0)
    assert psi(make_distribution("bernoulli"), "lower", 0.3) == pytest.approx(-1.0)


def test_tail_specs():
    tg = tail_spec(make_distribution("truncated_gaussian"), Side.upper)
    assert tg.regime is Regime.power_law and tg.psi_slope == 0.5 and tg.bounded
    st_ = tail_spec(make_distribution("student", {"alpha": 3.0}), Side.upper)
    assert st_.regime is Regime.power_law and st_.psi_slope == pytest.approx(1.5)
    g = tail_spec(make_distribution("gaussian", {"Sigma": 0.01}), Side.upper)
    assert g.regime is Regime.log_law and g.flatness_order == 2
    sl = tail_spec(make_distribution("squashed_laplace", {"Sigma": 2.0}), Side.lower)
    assert sl.regime is Regime.log_law and sl.flatness_order == 1 and sl.flatness_const == 2.0
    assert sl.bounded


def test_squashed_laplace_tail_mass():
    sigma = 1.5
    d = make_distribution("squashed_laplace", {"Sigma": sigma})
    y = np.array([0.1, 0.5, 0.9, 0.99])
    assert np.allclose(2 * d.pi_plus(y), np.exp(-sigma * y / (1 - y)), rtol=1e-12)
    # deep tail, where the closed form switches to its asymptotic series
    yy = np.array([0.98, 0.99, 0.995])
    u = 1.0 - yy
    assert np.allclose(psi(d, Side.upper, yy) - yy, u ** 2 / sigma, rtol=0.03)


def test_scaled_law():
    d = make_distribution("gaussian", {"Sigma": 1.0})
    t = d.scaled(3.0)
    assert t.std == pytest.approx(3.0)
    assert t.pi_plus(3.0) == pytest.approx(d.pi_plus(1.0))
    assert t.phi_plus(3.0) == pytest.approx(3.0 * d.phi_plus(1.0))


def test_bad_inputs():
    with pytest.raises(ValueError):
        make_distribution("cauchy")
    with pytest.raises(ValueError):
        make_distribution("gaussian", {"Sigma": -1.0})
    with pytest.raises(ValueError):
        make_distribution("gaussian").scaled(0.0)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 5.0), st.floats(-3.0, 3.0))
def test_gaussian_psi_exceeds_y_property(var, y):
    d = make_distribution("gaussian", {"Sigma": var})
    assert psi(d, Side.upper, y) > y
    assert psi(d, Side.lower, y) < y
