import json
from functools import lru_cache

import pytest

from glosten_eq.equilibrium import MarketParams, SolverControls, solve
from glosten_eq.numerics import GridParams
from glosten_eq.sameprice import solve_sameprice
from glosten_eq.signals import make_distribution

SOLVED = {}


def _key(family, params, n, sigma, tail_max, tol, variant):
    return (family, json.dumps(params, sort_keys=True), n, sigma, tail_max, tol, variant)


@lru_cache(maxsize=None)
def _solve(key):
    family, params, n, sigma, tail_max, tol, variant = key
    dist = make_distribution(family, json.loads(params))
    mp = MarketParams(n_insiders=n, sigma=sigma)
    gp = GridParams(tail_max_sigmas=tail_max)
    ctl = SolverControls(tol=tol)
    sol = solve_sameprice(dist, mp, ctl, gp) if variant == "same_price" else solve(dist, mp, ctl, gp)
    SOLVED[key] = sol
    return sol


def solved(family, params=None, n=1, sigma=1.0, tail_max=1.0e4, tol=1e-8, variant="dealer"):
    """Solve once per session; repeated requests share the result."""
    return _solve(_key(family, params or {}, n, sigma, tail_max, tol, variant))


@pytest.fixture(scope="session")
def solver():
    return solved
