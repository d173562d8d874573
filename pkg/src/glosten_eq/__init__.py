"""Glosten limit-order-book equilibria with several insiders and a Gaussian dealer inventory."""

from .asymptotics import AsymptoticPrediction, AsymptoticRegime, is_ratio_check, predict, validate
from .book import (
    OrderBook,
    aggregate_profit,
    build_book,
    curves,
    foc_residual,
    implementation_shortfall,
    lp_profit_check,
    volume_tail,
)
from .equilibrium import (
    EquilibriumSolution,
    MarketParams,
    SolverControls,
    Status,
    apply_T,
    invert,
    solve,
    solve_envelopes,
)
from .numerics import Grid, GridFunction, GridParams, convolve, fit_tail_exponent
from .sameprice import SamePriceSolution, apply_T_sameprice, solve_sameprice
from .signals import FAMILIES, SignalDistribution, make_distribution, psi, tail_spec

__version__ = "0.1.0"

__all__ = [
    "AsymptoticPrediction", "AsymptoticRegime", "EquilibriumSolution", "FAMILIES", "Grid", "GridFunction",
    "GridParams", "MarketParams", "OrderBook", "SamePriceSolution", "SignalDistribution", "SolverControls",
    "Status", "aggregate_profit", "apply_T", "apply_T_sameprice", "build_book", "convolve", "curves",
    "fit_tail_exponent", "foc_residual", "implementation_shortfall", "invert", "is_ratio_check",
    "lp_profit_check", "make_distribution", "predict", "psi", "solve", "solve_envelopes",
    "solve_sameprice", "tail_spec", "validate", "volume_tail",
]
