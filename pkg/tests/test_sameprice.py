import numpy as np
import pytest

from glosten_eq.equilibrium import MarketParams, Status, operator_for
from glosten_eq.numerics import GridFunction, GridParams
from glosten_eq.sameprice import apply_T_sameprice, compare, sameprice_parts
from glosten_eq.signals import make_distribution

from conftest import solved


@pytest.mark.parametrize("n", [2, 25])
def test_converged_and_antisymmetric(n):
    sp = solved("truncated_gaussian", n=n, variant="same_price")
    assert sp.status is Status.converged and sp.monotone_ok
    f = sp.F.values
    assert np.max(np.abs(f + f[::-1])) <= 1e-10
    assert sp.residual() <= 10 * sp.controls.tol
    assert sp.to_dict()["variant"] == "same_price"


def test_overshoot_is_flagged():
    # one insider: the fixed point rises past the support edge and falls back
    sp = solved("truncated_gaussian", n=1, variant="same_price")
    assert sp.residual() <= 10 * sp.controls.tol
    assert sp.status is Status.nonmonotone and not sp.monotone_ok
    assert sp.F.values.max() > sp.dist.support_hi


def test_slope_term_vanishes_for_many_insiders():
    dist = make_distribution("truncated_gaussian")
    op = operator_for(GridParams(), 1.0)
    f = solved("truncated_gaussian", n=2, variant="same_price").F.values
    a1 = sameprice_parts(f, dist, 1, op)
    a50 = sameprice_parts(f, dist, 50, op)
    for p, q in zip(a1[:2], a50[:2]):
        assert np.allclose(p, 50 * q)
    for p, q in zip(a1[2:], a50[2:]):
        assert np.array_equal(p, q)


def test_limit_in_N():
    fs = {n: solved("truncated_gaussian", n=n, variant="same_price").F.values for n in (5, 25, 100)}
    assert np.max(np.abs(fs[100] - fs[25])) < np.max(np.abs(fs[25] - fs[5]))
    # the limit solves F = E[hbar(x + Z)]
    dist = make_distribution("truncated_gaussian")
    op = operator_for(GridParams(), 1.0)
    _, _, bl, br = sameprice_parts(fs[100], dist, 100, op)
    assert np.max(np.abs(op.conv_split(bl, br) - fs[100])) < 0.02


def test_operator_wrapper_matches_values():
    sp = solved("gaussian", n=2, variant="same_price")
    F = GridFunction(sp.F.grid, sp.F.values)
    out = apply_T_sameprice(F, sp.dist, MarketParams(2))
    assert np.max(np.abs(out.values - sp.F.values)) <= 1e-7 * max(1.0, np.max(np.abs(sp.F.values)))


def test_close_to_dealer_with_one_insider():
    sp = solved("gaussian", n=1, variant="same_price")
    rep = compare(sp, solved("gaussian", n=1))
    assert rep["sup_rel"] <= 0.05
    with pytest.raises(ValueError):
        compare(sp, solved("gaussian", n=1, tail_max=100.0))
