"""Same-price liquidation: every order in a block receives the block's average price.

The first-order condition becomes

    F(x) = E[ (x / w) (h(w) - hbar(w)) / N + hbar(w) ],   w = x + Z,

with the same tail-expectation book h and its running average
hbar(w) = (1/w) int_0^w h(u) du taken on the branch of w's sign.  Writing the
integrand as x a(w) + b(w) turns both terms into ordinary convolutions of
functions with a jump at the origin.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .equilibrium import (
    EquilibriumSolution,
    MarketParams,
    Operator,
    SolverControls,
    Status,
    _picard,
    distance,
    initial_guess,
    operator_for,
    phi_values,
)
from .numerics import GridFunction, GridParams, cumulative_average_nodes
from .signals import SignalDistribution

log = logging.getLogger(__name__)


def book_averages(f: np.ndarray, dist: SignalDistribution, op: Operator):
    """(h, hbar) on each branch: four arrays (h_left, h_right, hbar_left, hbar_right).

    Right arrays hold the buy branch for w >= 0, left arrays the sell branch
    for w <= 0; both are defined at the origin by their one-sided limits.
    """
    F = GridFunction(op.grid, f)
    pp, pm, _ = phi_values(F, dist, op)
    return pm, pp, cumulative_average_nodes(op.nodes, pm), cumulative_average_nodes(op.nodes, pp)


def sameprice_parts(f: np.ndarray, dist: SignalDistribution, n: int, op: Operator):
    """Coefficients a(w) = (h - hbar)/(N w) and b(w) = hbar, split at the origin."""
    hl, hr, bl, br = book_averages(f, dist, op)
    x, k = op.nodes, op.k0
    with np.errstate(divide="ignore", invalid="ignore"):
        al = (hl - bl) / (n * x)
        ar = (hr - br) / (n * x)
    # w -> 0: (h - hbar)/w -> h'(0)/2, one-sided
    ar[k] = (hr[k + 1] - hr[k]) / (2.0 * n * x[k + 1])
    al[k] = (hl[k - 1] - hl[k]) / (2.0 * n * x[k - 1])
    al[k + 1:] = 0.0
    ar[:k] = 0.0
    return al, ar, bl, br


def apply_T_sameprice_values(f: np.ndarray, dist: SignalDistribution, n: int, op: Operator) -> np.ndarray:
    al, ar, bl, br = sameprice_parts(f, dist, n, op)
    return op.nodes * op.conv_split(al, ar) + op.conv_split(bl, br)


def apply_T_sameprice(F: GridFunction, dist: SignalDistribution, params: MarketParams,
                      op: Operator | None = None) -> GridFunction:
    """One application of the same-price operator at every grid node."""
    if op is None or not np.array_equal(op.nodes, F.nodes):
        op = Operator(F.grid)
    if not np.all(np.isfinite(F.values)):
        raise FloatingPointError("non-finite nodes in F")
    out = apply_T_sameprice_values(F.values, dist, params.n_insiders, op)
    return F.with_values(out, monotone=bool(np.all(np.diff(out) > 0)))


@dataclass(eq=False)
class SamePriceSolution(EquilibriumSolution):
    monotone_ok: bool = True
    variant: str = "same_price"

    def residual(self) -> float:
        f = self.unit_values()
        op = operator_for(self.grid_params, 1.0)
        return distance(apply_T_sameprice_values(f, self.dist, self.params.n_insiders, op), f)

    def unit_values(self) -> np.ndarray:
        return self.F.values

    def to_dict(self) -> dict:
        d = super().to_dict()
        d.update(variant=self.variant, monotone_ok=self.monotone_ok)
        return d


def solve_sameprice(dist: SignalDistribution, params: MarketParams,
                    controls: SolverControls = SolverControls(), grid_params: GridParams = GridParams(),
                    F0: np.ndarray | None = None) -> SamePriceSolution:
    """Picard iteration of the same-price operator, then a monotonicity audit.

    Nothing guarantees the fixed point is increasing; a decreasing step larger
    than 10 tol marks the run ``nonmonotone``.
    """
    op = operator_for(grid_params, 1.0)
    n = params.n_insiders
    f0 = initial_guess(dist, op.nodes, n) if F0 is None else np.asarray(F0, dtype=float).copy()
    history: list[float] = []
    warnings: list[str] = []
    feasible = params.feasible(dist)
    if not feasible:
        warnings.append("N below the tail slope Psi+_x(inf): no equilibrium is expected")
    f, status = _picard(f0, dist, n, op, controls, history, warnings, step=apply_T_sameprice_values)
    drop = float(np.max(-np.diff(f), initial=0.0))
    monotone_ok = drop <= 10 * controls.tol * max(1.0, float(np.max(np.abs(f))))
    if status is Status.converged and not monotone_ok:
        warnings.append(f"fixed point decreases by {drop:.3e} somewhere")
        status = Status.nonmonotone
    grid = op.grid.scaled(params.sigma) if params.sigma != 1.0 else op.grid
    F = GridFunction(grid, f, monotone=bool(np.all(np.diff(f) > 0)),
                     extrapolation_hi="clamp" if math.isfinite(dist.support_hi) else "linear",
                     extrapolation_lo="clamp" if math.isfinite(dist.support_lo) else "linear")
    log.info("same-price %s N=%d: %s after %d iterations", dist.family, n, status.value, len(history))
    return SamePriceSolution(F=F, params=params, dist=dist, history=history, status=status,
                             iterations=len(history), controls=controls, feasible=feasible,
                             warnings=warnings, method="picard", grid_params=grid_params,
                             monotone_ok=monotone_ok)


def compare(sp: EquilibriumSolution, dealer: EquilibriumSolution, core_only: bool = True) -> dict:
    """Sup distance between two solutions on shared nodes, absolute and relative to sup|F_dealer|."""
    if not np.array_equal(sp.nodes, dealer.nodes):
        raise ValueError("solutions live on different grids")
    mask = dealer.F.grid.core_mask if core_only else np.ones(len(dealer.nodes), bool)
    diff = np.abs(sp.F.values - dealer.F.values)[mask]
    ref = float(np.max(np.abs(dealer.F.values[mask] - dealer.dist.mean)))
    i = int(np.argmax(diff))
    return {"sup_abs": float(diff[i]), "sup_rel": float(diff[i] / ref), "at": float(dealer.nodes[mask][i])}


__all__ = [
    "SamePriceSolution", "apply_T_sameprice", "apply_T_sameprice_values", "book_averages", "compare",
    "sameprice_parts", "solve_sameprice",
]
