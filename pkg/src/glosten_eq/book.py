"""Economic quantities derived from a solved equilibrium.

The limit order book is the tail-expectation schedule

    h(y) = E[V | X* + Z >= y]   (y > 0),     h(y) = E[V | X* + Z <= y]   (y < 0),

which equals phi+_F / phi-_F of the solution.  Everything else (execution
price, implementation shortfall, profit, volume tails) follows from F and h.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special
from scipy.integrate import trapezoid

from .equilibrium import (
    EquilibriumSolution,
    UnboundedDemand,
    discrete_phi,
    invert,
    invert_many,
    phi_values,
)
from .numerics import (
    Grid,
    GridFunction,
    convolution_matrix,
    cumulative_average_nodes,
    jacobi_rule,
)
from .signals import Side

CSV_COLUMNS = ("x", "F", "h", "IS", "exec_price", "profit", "informed_tail", "total_tail")


@dataclass(eq=False)
class OrderBook:
    """Buy branch on y >= 0, sell branch on y <= 0, best quotes at the origin."""

    h_buy: GridFunction
    h_sell: GridFunction
    best_ask: float
    best_bid: float
    nodes: np.ndarray
    values: np.ndarray  # h at every node, ask side stored at 0
    sigma: float

    @property
    def spread(self) -> float:
        return self.best_ask - self.best_bid

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        out = np.where(y > 0, self.h_buy(np.maximum(y, 0.0)), self.h_sell(np.minimum(y, 0.0)))
        out = np.where(y == 0, 0.5 * (self.best_ask + self.best_bid), out)
        return out if out.ndim else float(out)

    def left_values(self) -> np.ndarray:
        """h at every node with the sell-side limit at the origin."""
        v = self.values.copy()
        v[np.searchsorted(self.nodes, 0.0)] = self.best_bid
        return v

    def convolve(self, x=None) -> np.ndarray:
        """E[h(x + Z)] at ``x`` (default: the nodes), honouring the jump at 0."""
        pts = self.nodes if x is None else np.atleast_1d(np.asarray(x, dtype=float))
        WL, WR = convolution_matrix(self.nodes, self.sigma, pts, split_at=0.0)
        return WL @ self.left_values() + WR @ self.values


def _branch(grid: Grid, mask: np.ndarray, values: np.ndarray) -> GridFunction:
    sub = Grid(nodes=grid.nodes[mask], core_step=grid.core_step, sigma=grid.sigma,
               core_halfwidth=grid.core_halfwidth)
    return GridFunction(sub, values[mask], monotone=bool(np.all(np.diff(values[mask]) >= 0)))


def branch_values(sol: EquilibriumSolution, y) -> tuple[np.ndarray, np.ndarray]:
    """(phi+_F(y), phi-_F(y)) at arbitrary points ``y``."""
    dist = sol.dist
    y = np.atleast_1d(np.asarray(y, dtype=float))
    op = sol.operator()
    if dist.is_discrete:
        return discrete_phi(sol.F, dist, y, op.sigma)
    W = convolution_matrix(sol.nodes, op.sigma, y)
    f = sol.F.values
    with np.errstate(invalid="ignore", divide="ignore"):
        pp = (W @ dist.phi_plus(f)) / (W @ dist.pi_plus(f))
        pm = (W @ dist.phi_minus(f)) / (W @ dist.pi_minus(f))
    return pp, pm


def build_book(sol: EquilibriumSolution) -> OrderBook:
    """Order book of a converged solution; best quotes by Richardson at y = +-eps."""
    op = sol.operator()
    grid = sol.F.grid
    pp, pm, _ = phi_values(sol.F, sol.dist, op)
    nodes = grid.nodes
    values = np.where(nodes >= 0, pp, pm)
    eps = grid.core_step / 10.0
    bp, bm = branch_values(sol, [eps, 2 * eps, -eps, -2 * eps])
    ask = 2 * bp[0] - bp[1]
    bid = 2 * bm[2] - bm[3]
    lo, hi = sol.dist.support_lo, sol.dist.support_hi
    ask, bid = float(np.clip(ask, lo, hi)), float(np.clip(bid, lo, hi))
    return OrderBook(
        h_buy=_branch(grid, nodes >= 0, np.where(nodes == 0, ask, values)),
        h_sell=_branch(grid, nodes <= 0, np.where(nodes == 0, bid, values)),
        best_ask=ask, best_bid=bid, nodes=nodes, values=values, sigma=op.sigma)


# --------------------------------------------------------------------------
# Prices and costs
# --------------------------------------------------------------------------


@lru_cache(maxsize=32)
def _rule(power: int, n: int = 48):
    return jacobi_rule(power, n)


def expected_exec_price(sol: EquilibriumSolution, x):
    """E[h(x + Z)] = F(x) + N(N-1) int_0^1 (F(x) - F(xy)) y^{N-1} dy."""
    n = sol.params.n_insiders
    x = np.asarray(x, dtype=float)
    fx = sol.F(x)
    if n == 1:
        return fx
    y, w = _rule(n - 1)
    fxy = sol.F(x[..., None] * y)
    out = fx + n * (n - 1) * (fx * w.sum() - fxy @ w)
    return out if np.ndim(out) else float(out)


def implementation_shortfall(sol: EquilibriumSolution, x):
    """IS(x) = N int_0^1 F(xy) y^{N-1} dy, with IS(0) = F(0)."""
    n = sol.params.n_insiders
    x = np.asarray(x, dtype=float)
    y, w = _rule(n - 1)
    out = n * (sol.F(x[..., None] * y) @ w)
    out = np.where(x == 0, sol.F(np.zeros_like(x)), out)
    return out if np.ndim(out) else float(out)


def profit_at_demand(sol: EquilibriumSolution, x):
    """Aggregate profit when the realised signal is v = F(x)."""
    n = sol.params.n_insiders
    x = np.asarray(x, dtype=float)
    y, w = _rule(n - 1)
    fx = sol.F(x)
    out = x * n * (fx * w.sum() - sol.F(x[..., None] * y) @ w)
    return out if np.ndim(out) else float(out)


def aggregate_profit(sol: EquilibriumSolution, v: float, book: OrderBook | None = None) -> float:
    """pi*(v) = X* N int_0^1 (v - F(y X*)) y^{N-1} dy with X* = F^{-1}(v).

    At an atom on the support boundary X* is infinite; the profit is then
    int_0^inf (v - E[h(y + Z)]) dy (mirrored on the sell side).
    """
    dist = sol.dist
    v = float(v)
    edge_atom = dist.is_discrete and v in (dist.support_lo, dist.support_hi)
    if not edge_atom:
        x = invert(sol, v)
        return float(profit_at_demand(sol, x))
    book = book or build_book(sol)
    nodes = book.nodes
    g = book.convolve()
    if v == dist.support_hi:
        m = nodes >= 0
        return float(trapezoid(v - g[m], nodes[m]))
    m = nodes <= 0
    return float(trapezoid(g[m] - v, nodes[m]))


# --------------------------------------------------------------------------
# Volume
# --------------------------------------------------------------------------


def informed_tail(sol: EquilibriumSolution, y, side: Side | str = Side.upper):
    """P(X* > y) = Pi+(F(y)) (upper) or P(X* <= y) = Pi-(F(y)) (lower)."""
    side = Side(side)
    f = sol.F(np.asarray(y, dtype=float))
    return sol.dist.pi_plus(f) if side is Side.upper else sol.dist.pi_minus(f)


def total_tail(sol: EquilibriumSolution, y, side: Side | str = Side.upper):
    """P(Y* > y) (upper) or P(Y* <= y) (lower) for total demand Y* = X* + Z."""
    side = Side(side)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    f = sol.F.values
    vals = sol.dist.pi_plus(f) if side is Side.upper else sol.dist.pi_minus(f)
    W = convolution_matrix(sol.nodes, sol.params.sigma, y)
    out = W @ vals
    return out if out.size > 1 else float(out[0])


def volume_tail(sol: EquilibriumSolution, y, side: Side | str = Side.upper) -> dict:
    """Informed and total volume tail probabilities at ``y``."""
    return {"informed": informed_tail(sol, y, side), "total": total_tail(sol, y, side)}


# --------------------------------------------------------------------------
# Liquidity-provider profit
# --------------------------------------------------------------------------


def _tail_excess(x, h, edge, mean):
    """x -> int_L^x (h(y) - h(L)) dy beyond the last node L, from a power-law fit of the book.

    The distance of h to the support edge (or to the mean on an unbounded
    side) is fitted as c y^rho on the last decade of nodes.
    """
    L, hL = x[-1], h[-1]
    top = x >= L / 10
    gap = np.abs(edge - h[top]) if np.isfinite(edge) else np.abs(h[top] - mean)
    if top.sum() < 8 or np.any(gap <= 0) or L <= 0:
        return lambda xs: np.zeros_like(xs)
    rho = np.polyfit(np.log(x[top]), np.log(gap), 1)[0]
    g_L = abs(edge - hL) if np.isfinite(edge) else abs(hL - mean)
    sgn = -1.0 if np.isfinite(edge) else 1.0  # gap shrinks toward the edge, grows away from the mean

    def excess(xs):
        r = np.maximum(np.asarray(xs, dtype=float) / L, 1.0)
        if abs(1.0 + rho) < 1e-9:
            integral = L * np.log(r)
        else:
            integral = L * (r ** (1.0 + rho) - 1.0) / (1.0 + rho)
        # h - h(L) = sgn (gap(y) - gap(L)) with gap(y) = g_L (y/L)^rho
        return sgn * g_L * (integral - L * (r - 1.0))

    return excess


def _partial_moment(d):
    """E[(Z + d)^+] for standard Z."""
    return np.exp(-0.5 * d * d) / np.sqrt(2 * np.pi) + d * special.ndtr(d)


def lp_profit_check(sol: EquilibriumSolution, book: OrderBook | None = None, n_tail: int = 40) -> float:
    """E[int_0^Y (h(y) - V) dy] over V and Z; zero in a competitive book.

    For finite demand x the inner expectation is, by Fubini,
    int_0^inf h(y) P(x + Z > y) dy - int_-inf^0 h(y) P(x + Z < y) dy - v x,
    integrated by the trapezoid rule on the book nodes.  Atoms are enumerated;
    a continuous V is integrated through v = F(x) with the cell masses
    P(F(x_i) < V <= F(x_i+1)).
    """
    book = book or build_book(sol)
    dist = sol.dist
    sigma = sol.params.sigma
    x = book.nodes
    k = int(np.searchsorted(x, 0.0))
    right, left = book.values.copy(), book.left_values()
    right[k], left[k] = book.best_ask, book.best_bid
    xr, hr = x[k:], right[k:]
    xl, hl = x[:k + 1], left[:k + 1]

    def expected(xs, v):
        xs = np.atleast_1d(xs)[:, None]
        buy = trapezoid(hr * special.ndtr((xs - xr) / sigma), xr, axis=1)
        sell = trapezoid(hl * special.ndtr((xl - xs) / sigma), xl, axis=1)
        # beyond the grid: end value times the expected overshoot, plus the
        # fitted tail growth of the book up to the demand
        buy += hr[-1] * sigma * _partial_moment((xs[:, 0] - xr[-1]) / sigma)
        sell += hl[0] * sigma * _partial_moment((xl[0] - xs[:, 0]) / sigma)
        buy += excess_hi(xs[:, 0])
        sell -= excess_lo(-xs[:, 0])
        return buy - sell - v * xs[:, 0]

    excess_hi = _tail_excess(xr, hr, dist.support_hi, dist.mean)
    excess_lo = _tail_excess(-xl[::-1], -hl[::-1], -dist.support_lo, -dist.mean)

    def unbounded(v):
        # infinite demand: int_0^{+-inf} (h - v) dy
        if v >= dist.support_hi:
            return float(trapezoid(hr - v, xr))
        return float(-trapezoid(hl - v, xl))

    if dist.is_discrete:
        total = 0.0
        for a, p in dist.atoms:
            try:
                xs = invert(sol, a)
            except UnboundedDemand:
                total += p * unbounded(a)
                continue
            total += p * float(expected(xs, a)[0])
        return total
    f = sol.F.values
    e = expected(x, f)
    cdf = dist.pi_minus(f)
    total = 0.5 * (e[1:] + e[:-1]) @ np.diff(cdf)
    # signals beyond the computed range of F: Gauss-Legendre in probability
    # with demand from the extrapolated inverse
    # (substituting a square to absorb the endpoint singularity of the demand)
    t, w = np.polynomial.legendre.leggauss(n_tail)
    tau, w = 0.5 * (t + 1.0), 0.5 * w
    for mass, outer in ((float(cdf[0]), 0.0), (float(dist.pi_plus(f[-1])), 1.0)):
        if mass <= 0:
            continue
        u = outer + (1.0 if outer == 0.0 else -1.0) * mass * tau ** 2
        vs = np.asarray(dist.ppf(u), dtype=float)
        inside = (vs > dist.support_lo) & (vs < dist.support_hi)
        xs, _ = invert_many(sol, vs[inside])
        total += 2.0 * mass * float(expected(xs, vs[inside]) @ (w * tau)[inside])
    return float(total)


# --------------------------------------------------------------------------
# Identities
# --------------------------------------------------------------------------


def foc_residual(sol: EquilibriumSolution, book: OrderBook | None = None, core_only: bool = True) -> float:
    """sup |(1/N) E[h(x+Z)] + ((N-1)/N) avg_0^x E[h(u+Z)] du - F(x)| on the nodes."""
    book = book or build_book(sol)
    n = sol.params.n_insiders
    c = book.convolve()
    lhs = c if n == 1 else c / n + (n - 1) / n * cumulative_average_nodes(book.nodes, c)
    diff = np.abs(lhs - sol.F.values)
    if core_only:
        diff = diff[sol.F.grid.core_mask]
    return float(diff.max())


def curves(sol: EquilibriumSolution, book: OrderBook | None = None, x=None) -> list[dict]:
    """One CSV row per node (or requested point) with the book-module columns."""
    book = book or build_book(sol)
    x = sol.nodes if x is None else np.asarray(x, dtype=float)
    F = sol.F(x)
    h = book(x)
    IS = implementation_shortfall(sol, x)
    g = expected_exec_price(sol, x)
    prof = profit_at_demand(sol, x)
    up = x >= 0
    inf_t = np.where(up, informed_tail(sol, x, Side.upper), informed_tail(sol, x, Side.lower))
    tot_t = np.where(up, total_tail(sol, x, Side.upper), total_tail(sol, x, Side.lower))
    rows = []
    for i in range(len(x)):
        rows.append(dict(zip(CSV_COLUMNS, (x[i], F[i], h[i], IS[i], g[i], prof[i], inf_t[i], tot_t[i]))))
    return rows


def spread(sol: EquilibriumSolution) -> float:
    return build_book(sol).spread


__all__ = [
    "CSV_COLUMNS", "OrderBook", "aggregate_profit", "branch_values", "build_book", "curves",
    "expected_exec_price", "foc_residual", "implementation_shortfall", "informed_tail",
    "lp_profit_check", "profit_at_demand", "spread", "total_tail", "volume_tail",
]
