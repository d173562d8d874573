"""Fixed-point engine for the marginal-cost function F.

The operator ``T`` maps a candidate marginal cost F to

    T F(x) = (1/N) c(x) + ((N-1)/N) (1/x) int_0^x c(y) dy,    c = q * phi_F,

where ``phi_F`` is the tail-expectation book induced by F (``phi_F = h``).
The solver works at sigma = 1 by default; solutions for other noise scales are
the rescaled curves ``x -> F(1; x / sigma)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import lru_cache

import numpy as np
from scipy import special
from scipy.interpolate import PchipInterpolator

from .numerics import (
    Grid,
    GridFunction,
    GridParams,
    convolution_matrix,
    cumulative_average_nodes,
)
from .signals import Regime, Side, SignalDistribution, psi, tail_spec

log = logging.getLogger(__name__)

PHI_FLOOR = 1e-300


class Status(str, Enum):
    converged = "converged"
    max_iter = "max_iter"
    diverged = "diverged"
    nonmonotone = "nonmonotone"


@dataclass(frozen=True)
class MarketParams:
    n_insiders: int = 1
    sigma: float = 1.0

    def __post_init__(self):
        if int(self.n_insiders) != self.n_insiders or self.n_insiders < 1:
            raise ValueError("number of insiders must be an integer >= 1")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    def feasible(self, dist: SignalDistribution) -> bool:
        """N >= Psi+_x(inf) for unbounded power tails (always true otherwise)."""
        for side in (Side.upper, Side.lower):
            spec = tail_spec(dist, side)
            if not spec.bounded and spec.regime is Regime.power_law and self.n_insiders < spec.psi_slope:
                return False
        return True


@dataclass(frozen=True)
class SolverControls:
    tol: float = 1e-8
    max_iter: int = 500
    damping: float = 0.0
    growth_factor: float = 1000.0
    rising_steps: int = 20
    quantile_level: float = 1e-6


@dataclass(eq=False)
class EquilibriumSolution:
    F: GridFunction
    params: MarketParams
    dist: SignalDistribution
    history: list[float]
    status: Status
    iterations: int
    controls: SolverControls = field(default_factory=SolverControls)
    feasible: bool = True
    warnings: list[str] = field(default_factory=list)
    method: str = "picard"
    grid_params: GridParams = field(default_factory=GridParams)

    @property
    def converged(self) -> bool:
        return self.status is Status.converged

    @property
    def nodes(self) -> np.ndarray:
        return self.F.nodes

    @property
    def sigma(self) -> float:
        return self.params.sigma

    def operator(self) -> Operator:
        """Convolution weights on the solution grid at the solution's sigma."""
        return operator_for(self.grid_params, self.params.sigma)

    def residual(self) -> float:
        """Scaled sup distance between T F and F."""
        tf = apply_T_values(self.F.values, self.dist, self.params.n_insiders, self.operator())
        return distance(tf, self.F.values)

    @property
    def unit(self) -> GridFunction:
        """The solution on the sigma = 1 grid."""
        s = self.params.sigma
        return self.F if s == 1.0 else replace(self.F, grid=self.F.grid.scaled(1.0 / s), _interp=None)

    def to_dict(self) -> dict:
        return {
            "family": self.dist.family,
            "params": self.dist.params,
            "shift": self.dist.shift,
            "N": self.params.n_insiders,
            "sigma": self.params.sigma,
            "status": self.status.value,
            "iterations": self.iterations,
            "method": self.method,
            "feasible": self.feasible,
            "warnings": list(self.warnings),
            "nodes": self.nodes.tolist(),
            "F": self.F.values.tolist(),
            "history": list(self.history),
        }


# --------------------------------------------------------------------------
# Discretised operator
# --------------------------------------------------------------------------


class Operator:
    """Convolution weights for one grid; the kernel scale is the grid's sigma."""

    def __init__(self, grid: Grid):
        self.grid = grid
        self.sigma = grid.sigma
        self.nodes = grid.nodes
        self.k0 = grid.zero_index
        self.W = convolution_matrix(self.nodes, self.sigma)
        self.WL, self.WR = convolution_matrix(self.nodes, self.sigma, split_at=0.0)

    def conv(self, values: np.ndarray) -> np.ndarray:
        return self.W @ values

    def conv_split(self, left: np.ndarray, right: np.ndarray) -> np.ndarray:
        """Convolve a function equal to ``left`` on z <= 0 and ``right`` on z >= 0."""
        return self.WL @ left + self.WR @ right

    def mix(self, c: np.ndarray, n: int) -> np.ndarray:
        """(1/N) c + ((N-1)/N) * running average of c from the origin."""
        if n == 1:
            return c.copy()
        return c / n + (n - 1) / n * cumulative_average_nodes(self.nodes, c)


@lru_cache(maxsize=8)
def operator_for(params: GridParams, sigma: float = 1.0) -> Operator:
    return Operator(Grid.build(params, sigma))


def _crossings(F: GridFunction, atoms: np.ndarray) -> np.ndarray:
    """c_j = inf{u : F(u) >= a_j} for the piecewise-linear F (+-inf when never/always)."""
    x, f = F.nodes, F.values
    out = np.empty(len(atoms))
    for j, a in enumerate(atoms):
        if f[0] >= a:
            out[j] = -np.inf
        elif f[-1] < a:
            out[j] = np.inf
        else:
            i = int(np.argmax(f >= a))
            x0, x1, f0, f1 = x[i - 1], x[i], f[i - 1], f[i]
            out[j] = x1 if f1 == f0 else x0 + (a - f0) * (x1 - x0) / (f1 - f0)
    return out


def _ratio(num, den, fallback):
    bad = ~(den > PHI_FLOOR)
    out = np.where(bad, fallback, num / np.where(bad, 1.0, den))
    return out, int(bad.sum())


def phi_values(F: GridFunction, dist: SignalDistribution, op: Operator
               ) -> tuple[np.ndarray, np.ndarray, int]:
    """phi+_F and phi-_F at every node of a unit-noise grid.

    Returns ``(phi_plus, phi_minus, n_underflow)``.  Where a denominator
    underflows, the conditional mean is replaced by its local limit
    ``Psi(F(z))``.
    """
    f = F.values
    lo, hi = dist.support_lo, dist.support_hi
    z = op.nodes
    if dist.is_discrete:
        phi_p, phi_m = discrete_phi(F, dist, z, op.sigma)
        return phi_p, phi_m, 0
    pp, fp = dist.pi_plus(f), dist.phi_plus(f)
    pm, fm = dist.pi_minus(f), dist.phi_minus(f)
    den_p, num_p = op.conv(pp), op.conv(fp)
    den_m, num_m = op.conv(pm), op.conv(fm)
    phi_p, bad_p = _ratio(num_p, den_p, psi(dist, Side.upper, f))
    phi_m, bad_m = _ratio(num_m, den_m, psi(dist, Side.lower, f))
    phi_p = np.clip(phi_p, lo, hi)
    phi_m = np.clip(phi_m, lo, hi)
    return phi_p, phi_m, bad_p + bad_m


def discrete_phi(F: GridFunction, dist: SignalDistribution, z, sigma: float = 1.0):
    """phi+_F and phi-_F at points ``z`` for a law with finitely many atoms."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    atoms = np.array([a for a, _ in dist.atoms])
    probs = np.array([p for _, p in dist.atoms])
    c = _crossings(F, atoms)
    logp = np.log(probs)
    # P(V > F(u)) = sum_j p_j 1{u < c_j}; convolved: p_j Phi((c_j - z) / sigma)
    with np.errstate(invalid="ignore"):
        lw_up = logp[None, :] + special.log_ndtr((c[None, :] - z[:, None]) / sigma)
        lw_dn = logp[None, :] + special.log_ndtr((z[:, None] - c[None, :]) / sigma)
    return (_weighted_atoms(lw_up, atoms, dist.support_hi),
            _weighted_atoms(lw_dn, atoms, dist.support_lo))


def _weighted_atoms(logw: np.ndarray, atoms: np.ndarray, edge: float) -> np.ndarray:
    m = np.max(logw, axis=1)
    empty = ~np.isfinite(m)
    w = np.exp(logw - np.where(empty, 0.0, m)[:, None])
    w = np.nan_to_num(w)
    tot = w.sum(axis=1)
    out = np.where(empty | (tot == 0), edge, (w @ atoms) / np.where(tot == 0, 1.0, tot))
    return out


def phi_map(F: GridFunction, dist: SignalDistribution, sigma: float = 1.0,
            op: Operator | None = None) -> GridFunction:
    """phi_F = phi+_F on z >= 0 and phi-_F on z < 0, as a grid function.

    The value stored at the origin is the right limit phi+_F(0); the left limit
    is available from :func:`phi_values`.
    """
    op = _operator(F, sigma, op)
    pp, pm, bad = phi_values(F, dist, op)
    if bad:
        log.debug("phi_map: %d underflowed denominators replaced by Psi(F)", bad)
    vals = np.where(op.nodes >= 0, pp, pm)
    return GridFunction(F.grid, vals, monotone=False)


def _operator(F: GridFunction, sigma: float, op: Operator | None) -> Operator:
    """Reuse ``op`` when it matches F's nodes and kernel scale, else build one."""
    if op is not None and op.sigma == sigma and np.array_equal(op.nodes, F.nodes):
        return op
    return Operator(replace(F.grid, sigma=sigma))


def apply_T_values(f: np.ndarray, dist: SignalDistribution, n: int, op: Operator,
                   return_parts: bool = False):
    F = GridFunction(op.grid, f)
    pp, pm, bad = phi_values(F, dist, op)
    c = op.conv_split(pm, pp)
    out = op.mix(c, n)
    if return_parts:
        return out, pp, pm, c, bad
    return out


def apply_T(F: GridFunction, dist: SignalDistribution, params: MarketParams,
            op: Operator | None = None) -> GridFunction:
    """One application of the equilibrium operator at every grid node."""
    op = _operator(F, params.sigma, op)
    out = apply_T_values(F.values, dist, params.n_insiders, op)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite value in T F")
    monotone = bool(np.all(np.diff(out) > 0))
    return F.with_values(out, monotone=monotone)


# --------------------------------------------------------------------------
# Initialisation
# --------------------------------------------------------------------------


def initial_guess(dist: SignalDistribution, nodes: np.ndarray, n: int, sigma: float = 1.0) -> np.ndarray:
    """Quantile-matched start G_V^{-1}(Phi(x / sigma)), continued by a tail law.

    Discrete laws get a smooth two-sided ramp between the mean and the
    support edges, because their quantile function is a step.
    """
    x = np.asarray(nodes, dtype=float) / sigma
    mean = dist.mean
    if dist.is_discrete:
        ramp = 2.0 * special.ndtr(x) - 1.0
        return np.where(x >= 0, mean + (dist.support_hi - mean) * ramp,
                        mean + (mean - dist.support_lo) * ramp)
    # quantile match inside |x| <= x_cut, where Phi(-x_cut) = 1e-6
    x_cut = 4.75
    u = special.ndtr(np.clip(x, -x_cut, x_cut))
    f = np.asarray(dist.ppf(u), dtype=float)
    for side, sgn in ((Side.upper, 1.0), (Side.lower, -1.0)):
        mask = sgn * x > x_cut
        if not np.any(mask):
            continue
        edge_val = float(dist.ppf(special.ndtr(sgn * x_cut)))
        r = np.abs(x[mask]) / x_cut
        edge = dist.support_hi if sgn > 0 else dist.support_lo
        spec = tail_spec(dist, side)
        if math.isfinite(edge):
            if spec.regime is Regime.log_law or spec.psi_slope == 1.0:
                # flat boundary: a power decay would underflow P(V > F) deep in the tail
                order = spec.flatness_order if spec.regime is Regime.log_law else 1.0
                decay = (1 + np.log(r)) ** (-1.0 / max(order, 1.0))
            else:
                decay = r ** -0.5
            f[mask] = edge - (edge - edge_val) * decay
        else:
            if spec.regime is Regime.power_law:
                rho = 0.5
                if n > spec.psi_slope:
                    rho = (spec.psi_slope - 1) / (1 - spec.psi_slope / n)
                grow = r ** rho
            else:
                # log law (log x)^{1/n}; square-root growth when the order is unknown
                order = spec.flatness_order if spec.regime is Regime.log_law else 2.0
                grow = (1 + np.log(r)) ** (1.0 / max(order, 1.0))
            f[mask] = mean + (edge_val - mean) * grow
    return f


# --------------------------------------------------------------------------
# Linearisation
# --------------------------------------------------------------------------


def _density(dist: SignalDistribution, y: np.ndarray) -> np.ndarray:
    """Density of V by central differences of the tail on the far side of the median."""
    eps = 1e-6 * np.maximum(dist.std, np.abs(y))
    upper = y >= dist.mean
    with np.errstate(invalid="ignore"):
        p_up = (dist.pi_plus(y - eps) - dist.pi_plus(y + eps)) / (2 * eps)
        p_dn = (dist.pi_minus(y + eps) - dist.pi_minus(y - eps)) / (2 * eps)
    return np.where(upper, p_up, p_dn)


def _psi_slope(dist: SignalDistribution, side: Side, y: np.ndarray) -> np.ndarray:
    eps = 1e-6 * np.maximum(dist.std, np.abs(y))
    return (psi(dist, side, y + eps) - psi(dist, side, y - eps)) / (2 * eps)


def jacobian_T(f: np.ndarray, dist: SignalDistribution, n: int, op: Operator) -> np.ndarray:
    """Dense derivative of F -> T F at the nodal vector ``f`` (continuous laws)."""
    if dist.is_discrete:
        raise ValueError("the operator is not differentiable for discrete laws")
    p = _density(dist, f)
    W = op.W
    blocks = []
    for side, pi, phi, sgn in ((Side.upper, dist.pi_plus, dist.phi_plus, -1.0),
                               (Side.lower, dist.pi_minus, dist.phi_minus, 1.0)):
        den = W @ pi(f)
        num = W @ phi(f)
        bad = ~(den > PHI_FLOOR)
        ratio = num / np.where(bad, 1.0, den)
        # d(pi(f_j))/df_j = sgn p_j and d(phi(f_j))/df_j = sgn f_j p_j
        D = W * (sgn * p)[None, :]
        D = D * (f[None, :] - ratio[:, None]) / np.where(bad, 1.0, den)[:, None]
        if np.any(bad):
            idx = np.flatnonzero(bad)
            D[idx, :] = 0.0
            D[idx, idx] = _psi_slope(dist, side, f[idx])
        edge = (ratio >= dist.support_hi) | (ratio <= dist.support_lo)
        D[edge & ~bad, :] = 0.0
        blocks.append(D)
    C = op.WR @ blocks[0] + op.WL @ blocks[1]
    if n == 1:
        return C
    return C / n + (n - 1) / n * cumulative_average_nodes(op.nodes, C)


def distance(a: np.ndarray, b: np.ndarray) -> float:
    """Sup-norm distance, relative where |F| exceeds one (unbounded tails)."""
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b))))


# --------------------------------------------------------------------------
# Solver
# --------------------------------------------------------------------------


def _picard(f, dist, n, op, controls, history, warnings, step=None):
    step = step or apply_T_values
    scale = max(_quantile_range(dist, controls.quantile_level), float(np.max(np.abs(f))))
    rising = 0
    for _ in range(controls.max_iter):
        with np.errstate(over="ignore", invalid="ignore"):
            tf = step(f, dist, n, op)
        if not np.all(np.isfinite(tf)):
            warnings.append("non-finite iterate")
            return f, Status.diverged
        new = (1.0 - controls.damping) * tf + controls.damping * f
        d = distance(new, f)
        history.append(d)
        f = new
        if d <= controls.tol:
            return f, Status.converged
        if np.max(np.abs(f)) > controls.growth_factor * scale:
            warnings.append("iterates left the signal range")
            return f, Status.diverged
        rising = rising + 1 if len(history) > 1 and d > history[-2] else 0
        if rising >= controls.rising_steps:
            warnings.append(f"successive distances grew for {rising} iterations")
            return f, Status.diverged
    return f, Status.max_iter


def _newton(f, dist, n, op, controls, history, warnings, max_steps=40):
    eye = np.eye(len(f))
    tf = apply_T_values(f, dist, n, op)
    res = distance(tf, f)
    for _ in range(max_steps):
        J = jacobian_T(f, dist, n, op)
        try:
            step = np.linalg.solve(eye - J, tf - f)
        except np.linalg.LinAlgError:
            warnings.append("singular Newton system")
            return f, Status.diverged
        t = 1.0
        for _ in range(12):
            cand = f + t * step
            with np.errstate(over="ignore", invalid="ignore"):
                tc = apply_T_values(cand, dist, n, op)
            rc = distance(tc, cand) if np.all(np.isfinite(tc)) else np.inf
            if rc < res or rc <= controls.tol:
                break
            t *= 0.5
        else:
            warnings.append("Newton line search failed")
            return f, Status.diverged
        history.append(distance(cand, f))
        f, tf, res = cand, tc, rc
        if res <= controls.tol:
            return f, Status.converged
    return f, Status.max_iter


def solve(dist: SignalDistribution, params: MarketParams, controls: SolverControls = SolverControls(),
          grid_params: GridParams = GridParams(), F0: np.ndarray | None = None,
          method: str = "auto", normalize: bool = True) -> EquilibriumSolution:
    """Picard iteration F <- (1 - d) T F + d F from a quantile-matched start.

    With ``method="auto"`` a Picard run that does not converge is retried by
    Newton's method for continuous laws when N is feasible; ``"picard"`` and
    ``"newton"`` force one scheme.  The iteration runs at sigma = 1 and is
    rescaled afterwards unless ``normalize`` is false, in which case the
    kernel and grid are built for ``params.sigma`` directly.
    """
    op = operator_for(grid_params, 1.0 if normalize else params.sigma)
    n = params.n_insiders
    f0 = (initial_guess(dist, op.nodes, n, op.sigma) if F0 is None
          else np.asarray(F0, dtype=float).copy())
    feasible = params.feasible(dist)
    warnings: list[str] = []
    if not feasible:
        warnings.append("N below the tail slope Psi+_x(inf): no equilibrium is expected")
    history: list[float] = []
    used = "picard"
    if method == "newton":
        f, status = _newton(f0, dist, n, op, controls, history, warnings)
        used = "newton"
    else:
        f, status = _picard(f0, dist, n, op, controls, history, warnings)
        if (method == "auto" and status is not Status.converged and feasible
                and not dist.is_discrete):
            log.info("Picard %s after %d steps; switching to Newton", status.value, len(history))
            warnings.append(f"Picard {status.value}; solved by Newton")
            f, status = _newton(f0, dist, n, op, controls, history, warnings)
            used = "picard+newton"
    grid = op.grid if op.sigma == params.sigma else op.grid.scaled(params.sigma)
    F = GridFunction(grid, f, monotone=bool(np.all(np.diff(f) > 0)),
                     extrapolation_hi="clamp" if math.isfinite(dist.support_hi) else "linear",
                     extrapolation_lo="clamp" if math.isfinite(dist.support_lo) else "linear")
    if status is Status.converged and not F.monotone:
        warnings.append("converged iterate is not strictly increasing")
    log.info("solve %s N=%d: %s via %s after %d iterations (last distance %.3e)", dist.family,
             n, status.value, used, len(history), history[-1] if history else float("nan"))
    return EquilibriumSolution(F=F, params=params, dist=dist, history=history, status=status,
                               iterations=len(history), controls=controls, feasible=feasible,
                               warnings=warnings, method=used, grid_params=grid_params)


def _quantile_range(dist: SignalDistribution, level: float) -> float:
    if dist.is_discrete:
        return dist.support_hi - dist.support_lo
    return float(dist.ppf(1 - level) - dist.ppf(level))


# --------------------------------------------------------------------------
# Inversion
# --------------------------------------------------------------------------


class UnboundedDemand(ValueError):
    """The signal lies outside (m, M); the optimal demand is infinite."""


def invert(sol: EquilibriumSolution, v: float, return_flag: bool = False):
    """Optimal aggregate demand X* = F^{-1}(v).

    Inside the computed range of F the inverse is the monotone interpolant of
    the (F, x) pairs.  Beyond it a power law fitted on the last decade is
    inverted and the result is flagged as extrapolated.
    """
    dist = sol.dist
    v = float(v)
    if not dist.support_lo < v < dist.support_hi:
        raise UnboundedDemand(f"v={v} outside the open support ({dist.support_lo}, {dist.support_hi})")
    out, flag = invert_many(sol, np.array([v]))
    if flag[0]:
        log.warning("invert: v=%g beyond the computed range of F, extrapolated to x=%g", v, out[0])
    return (float(out[0]), bool(flag[0])) if return_flag else float(out[0])


def invert_many(sol: EquilibriumSolution, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised inverse of F for signals strictly inside the support; returns (x, extrapolated)."""
    x, f = sol.nodes, sol.F.values
    # strictly increasing subsequence from the left
    keep = np.concatenate([[True], f[1:] > np.maximum.accumulate(f)[:-1]])
    xs, fs = x[keep], f[keep]
    v = np.asarray(v, dtype=float)
    out = np.asarray(PchipInterpolator(fs, xs, extrapolate=False)(np.clip(v, fs[0], fs[-1])), dtype=float)
    hi, lo = v > fs[-1], v < fs[0]
    if np.any(hi):
        out[hi] = _extrapolate_inverse(xs, fs, v[hi], sol.dist, True)
    if np.any(lo):
        out[lo] = _extrapolate_inverse(xs, fs, v[lo], sol.dist, False)
    return out, hi | lo


def _extrapolate_inverse(xs, fs, v, dist, upper):
    sgn = 1.0 if upper else -1.0
    sel = sgn * xs > 0
    ax, fv = np.abs(xs[sel]), fs[sel]
    top = ax >= ax.max() / 10
    edge = dist.support_hi if upper else dist.support_lo
    if math.isfinite(edge):
        gap = np.abs(edge - fv[top])
        slope, icpt = np.polyfit(np.log(ax[top]), np.log(gap), 1)
        return sgn * np.exp((np.log(np.abs(edge - v)) - icpt) / slope)
    slope, icpt = np.polyfit(np.log(ax[top]), np.log(np.abs(fv[top] - dist.mean)), 1)
    return sgn * np.exp((np.log(np.abs(v - dist.mean)) - icpt) / slope)


# --------------------------------------------------------------------------
# Envelopes
# --------------------------------------------------------------------------


@dataclass(eq=False)
class Envelopes:
    upper: GridFunction
    lower: GridFunction
    iterations: tuple[int, int]
    converged: bool


def solve_envelopes(dist: SignalDistribution, params: MarketParams,
                    controls: SolverControls = SolverControls(),
                    grid_params: GridParams = GridParams()) -> Envelopes:
    """Maximal solution R and minimal solution l of the comparison equations.

    R replaces phi+_F by q * Psi+(R) on z > 0 and phi-_F by E[V] on z < 0; l is
    the mirror image.  Both operators are monotone, so iterating from R = M
    (downwards) and from l = m (upwards) converges to the extremal solutions.
    """
    if not dist.bounded:
        raise ValueError("envelopes require a bounded signal support")
    op = operator_for(grid_params, 1.0)
    n = params.n_insiders
    ev = np.full(len(op.nodes), dist.mean)
    results, its, ok = [], [], True
    for side, start in ((Side.upper, dist.support_hi), (Side.lower, dist.support_lo)):
        r = np.full(len(op.nodes), start)
        done = False
        it = 0
        for it in range(1, controls.max_iter + 1):
            smooth = op.conv(psi(dist, side, r))
            c = op.conv_split(ev, smooth) if side is Side.upper else op.conv_split(smooth, ev)
            new = op.mix(c, n)
            d = distance(new, r)
            r = new
            if d <= controls.tol:
                done = True
                break
        ok &= done
        its.append(it)
        grid = op.grid if params.sigma == 1.0 else op.grid.scaled(params.sigma)
        results.append(GridFunction(grid, r, monotone=bool(np.all(np.diff(r) >= 0))))
    return Envelopes(upper=results[0], lower=results[1], iterations=(its[0], its[1]), converged=ok)
