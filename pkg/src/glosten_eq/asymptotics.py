"""Tail laws of the marginal cost F: predictions and empirical fits.

For a boundary slope s = lim Psi'(x) of the conditional tail mean on one side,

* bounded side, s < 1:   M - F(x) is regularly varying of index rho = (s - 1) / (1 - s/N);
* unbounded side, s > 1: F(x) grows like x^rho with the same rho, provided N > s;
* s = 1 with (Psi - x) ~ (edge - x)^{n+1} / (k n) flatness: a logarithmic law,
  M - F ~ (N/(N-1) n/k)^{-1/n} (log x)^{-1/n} on a bounded side and
  F ~ (N/(N-1) n/k)^{1/n} (log x)^{1/n} on an unbounded one.

The volume tail P(Y* > y) has index -zeta with zeta = s / (1 - s/N), and the
implementation shortfall satisfies (M - IS)/(M - F) -> N / (N + rho).
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import asdict, dataclass
from enum import Enum

import numpy as np

from .book import implementation_shortfall, total_tail
from .equilibrium import EquilibriumSolution, MarketParams
from .numerics import fit_tail_exponent
from .signals import Regime, Side, SignalDistribution, make_distribution, tail_spec

log = logging.getLogger(__name__)


class AsymptoticRegime(str, Enum):
    power_law = "power_law"
    log_law = "log_law"
    heuristic = "heuristic"
    none = "none"


@dataclass(frozen=True)
class AsymptoticPrediction:
    """Leading tail behaviour of F on one side.

    ``exponent`` is rho for power laws and 1/n for log laws.  ``constant`` is the
    log-law prefactor: of (log x)^{-1/n} for the distance to a finite edge,
    of (log x)^{1/n} for growth on an unbounded side.
    """

    side: Side
    regime: AsymptoticRegime
    exponent: float = math.nan
    constant: float = math.nan
    vol_exponent: float = math.nan
    is_ratio: float = math.nan
    bounded: bool = True
    psi_slope: float = math.nan
    flatness_order: float = math.nan
    note: str = ""

    def to_dict(self) -> dict:
        d = asdict(self)
        d["side"] = self.side.value
        d["regime"] = self.regime.value
        return d


def rho(psi_slope: float, n: int) -> float:
    """Regular-variation index (s - 1) / (1 - s/N)."""
    return (psi_slope - 1.0) / (1.0 - psi_slope / n)


def zeta(psi_slope: float, n: int) -> float:
    """Volume tail index s / (1 - s/N)."""
    return psi_slope / (1.0 - psi_slope / n)


def log_constant(n_insiders: int, order: float, k: float, bounded: bool) -> float:
    base = n_insiders / (n_insiders - 1.0) * order / k
    return base ** (-1.0 / order) if bounded else base ** (1.0 / order)


def _predict_side(dist: SignalDistribution, n: int, side: Side) -> AsymptoticPrediction:
    if dist.is_discrete:
        return AsymptoticPrediction(side, AsymptoticRegime.none, note="discrete law: F saturates at the atoms")
    spec = tail_spec(dist, side)
    s, bounded = spec.psi_slope, spec.bounded
    base = dict(bounded=bounded, psi_slope=s, flatness_order=spec.flatness_order)
    if not bounded and math.isfinite(s) and s > 1 and n <= s:
        return AsymptoticPrediction(side, AsymptoticRegime.none, **base,
                                    note=f"N = {n} does not exceed the tail slope {s:.4g}: no equilibrium")
    if n == 1:
        warnings.warn(f"tail theory needs N > 1; {dist.family} reported as heuristic", stacklevel=3)
        return AsymptoticPrediction(side, AsymptoticRegime.heuristic, **base,
                                    note="N = 1: only F -> edge and monotonicity are checked")
    if spec.regime is Regime.power_law:
        r = rho(s, n)
        return AsymptoticPrediction(side, AsymptoticRegime.power_law, exponent=r,
                                    vol_exponent=zeta(s, n), is_ratio=n / (n + r), **base)
    if spec.regime is Regime.log_law:
        c = log_constant(n, spec.flatness_order, spec.flatness_const, bounded)
        return AsymptoticPrediction(side, AsymptoticRegime.log_law, exponent=1.0 / spec.flatness_order,
                                    constant=c, vol_exponent=zeta(1.0, n), is_ratio=1.0, **base)
    vol = zeta(s, n) if math.isfinite(s) and s < n else math.nan
    if dist.heuristic and bounded and s == 1.0:
        return AsymptoticPrediction(side, AsymptoticRegime.heuristic, vol_exponent=vol, is_ratio=1.0,
                                    **base, note=f"fitted form {dist.heuristic}; {spec.note}")
    return AsymptoticPrediction(side, AsymptoticRegime.none, vol_exponent=vol, **base, note=spec.note)


def predict(dist: SignalDistribution, params: MarketParams
            ) -> tuple[AsymptoticPrediction, AsymptoticPrediction]:
    """(upper, lower) tail predictions for F."""
    n = params.n_insiders
    return _predict_side(dist, n, Side.upper), _predict_side(dist, n, Side.lower)


# --------------------------------------------------------------------------
# Empirical side
# --------------------------------------------------------------------------


def _oriented(sol: EquilibriumSolution, side: Side):
    """Tail nodes, F and support edge mirrored so the side looks like the upper one."""
    x, f = sol.nodes, sol.F.values
    if side is Side.upper:
        sel = x > 0
        return x[sel], f[sel], sol.dist.support_hi, sol.dist.mean
    sel = x < 0
    return -x[sel][::-1], -f[sel][::-1], -sol.dist.support_lo, -sol.dist.mean


def default_window(sol: EquilibriumSolution, side: Side | str = Side.upper,
                   min_nodes: int = 40) -> tuple[float, float]:
    """Top decade of the tail, widened to hold at least ``min_nodes`` nodes."""
    xs = _oriented(sol, Side(side))[0]
    hi = float(xs[-1])
    lo = hi / 10.0
    if np.sum(xs >= lo) < min_nodes and len(xs) >= min_nodes:
        lo = float(xs[-min_nodes])
    return lo, hi


def _report(pred, predicted, fitted, window, quantity, tol, **extra) -> dict:
    rel = abs(fitted - predicted) / abs(predicted) if predicted and math.isfinite(predicted) else math.nan
    fallback = extra.pop("passed", None)
    ok = bool(rel <= tol) if math.isfinite(rel) else fallback
    out = {"side": pred.side.value, "regime": pred.regime.value, "quantity": quantity,
           "predicted": predicted, "fitted": fitted, "rel_error": rel,
           "window": [float(window[0]), float(window[1])], "passed": ok}
    out.update(extra)
    return out


def validate(sol: EquilibriumSolution, prediction: AsymptoticPrediction,
             window: tuple[float, float] | None = None, tol: float = 0.10,
             downweight_last: int = 5) -> dict:
    """Compare the solved tail with the prediction on ``window`` (in |x|).

    Power laws fit the log-log slope of the distance to the edge (bounded) or
    of F - E[V] (unbounded).  Log laws compare the leading constant, averaged
    over the window; the exponent fit in log log x is attached as well.
    """
    side = prediction.side
    xs, f, edge, mean = _oriented(sol, side)
    if window is None:
        window = default_window(sol, side)
    lo, hi = window
    if lo <= 0 or hi > xs[-1] * (1 + 1e-12) or lo >= hi:
        raise ValueError(f"window {window} outside the tail grid (0, {xs[-1]:g}]")
    sel = (xs >= lo) & (xs <= hi)
    bounded = math.isfinite(edge)
    gap = edge - f if bounded else f - mean
    regime = prediction.regime

    if regime is AsymptoticRegime.none:
        return _report(prediction, math.nan, math.nan, window, "none", tol, passed=None,
                       note=prediction.note)
    if regime is AsymptoticRegime.power_law:
        fit = fit_tail_exponent(xs, gap, (lo, hi), downweight_last=downweight_last)
        extra = {"stderr": fit.stderr}
        if bounded and prediction.psi_slope == 0.5:
            # the decay exponent quoted alongside simulations, -(N-1)/(2N), next to the formula value
            n = sol.params.n_insiders
            alt = -(n - 1) / (2.0 * n)
            favored = "formula" if abs(fit.slope - prediction.exponent) <= abs(fit.slope - alt) else "printed"
            extra.update(printed_exponent=alt, printed_rel_error=abs(fit.slope - alt) / abs(alt),
                         favored=favored)
            log.info("decay exponent fitted %.5f, formula %.5f, printed %.5f (%s favored)",
                     fit.slope, prediction.exponent, alt, favored)
        return _report(prediction, prediction.exponent, fit.slope, window, "exponent", tol, **extra)
    if regime is AsymptoticRegime.log_law:
        n = 1.0 / prediction.exponent
        lx = np.log(xs[sel])
        scaled = gap[sel] * lx ** (1.0 / n) if bounded else gap[sel] / lx ** (1.0 / n)
        const = float(np.mean(scaled))
        try:
            fit = fit_tail_exponent(xs, gap, (lo, hi), mode="logloglog", downweight_last=downweight_last)
            loglog = fit.slope
        except ValueError:
            loglog = math.nan
        return _report(prediction, prediction.constant, const, window, "constant", tol,
                       exponent_predicted=-1.0 / n if bounded else 1.0 / n, exponent_fitted=loglog,
                       constant_range=[float(scaled.min()), float(scaled.max())])
    # heuristic: N = 1, or a flat boundary outside the theory
    increasing = bool(np.all(np.diff(sol.F.values) >= -1e-12))
    extra = {"monotone": increasing, "note": prediction.note}
    if bounded:
        extra["edge_gap"] = float(gap[-1])
        if sol.dist.heuristic == "one_minus_exp_sqrt_log" and np.all(gap[sel] > 0):
            # edge - F = e^{-k sqrt(log x)}: least squares through the origin
            a, b = -np.log(gap[sel] / (edge - sol.dist.mean)), np.sqrt(np.log(xs[sel]))
            k = float(a @ b / (b @ b))
            extra.update(k_fitted=k, k_spread=float(np.ptp(a / b)))
            return _report(prediction, math.nan, k, window, "k", tol, passed=increasing, **extra)
        passed = increasing and gap[-1] < gap[np.searchsorted(xs, lo)]
    else:
        passed = increasing and gap[-1] > gap[np.searchsorted(xs, lo)]
    return _report(prediction, math.nan, math.nan, window, "shape", tol, passed=bool(passed), **extra)


def is_ratio_check(sol: EquilibriumSolution, prediction: AsymptoticPrediction,
                   window: tuple[float, float] | None = None, tol: float = 0.10) -> dict:
    """Tail ratio of shortfall to marginal cost against N / (N + rho).

    Bounded side: (M - IS)/(M - F); unbounded side: (IS - E V)/(F - E V);
    the sell side is mirrored.
    """
    side = prediction.side
    if window is None:
        window = default_window(sol, side)
    lo, hi = window
    sgn = 1.0 if side is Side.upper else -1.0
    xs = np.geomspace(lo, hi, 12) * sgn
    f = sgn * sol.F(xs)
    IS = sgn * np.asarray(implementation_shortfall(sol, xs))
    edge = sol.dist.support_hi if side is Side.upper else -sol.dist.support_lo
    mean = sgn * sol.dist.mean
    with np.errstate(divide="ignore", invalid="ignore"):
        r = (edge - IS) / (edge - f) if math.isfinite(edge) else (IS - mean) / (f - mean)
    fitted = float(r[-1])
    return _report(prediction, prediction.is_ratio, fitted, window, "is_ratio", tol,
                   ratio_range=[float(np.nanmin(r)), float(np.nanmax(r))],
                   passed=None)


def volume_exponent_fit(sol: EquilibriumSolution, prediction: AsymptoticPrediction | None = None,
                        window: tuple[float, float] | None = None, side: Side | str = Side.upper,
                        tol: float = 0.15) -> dict:
    """Fit zeta from the log-log slope of P(Y* > y) (or P(Y* <= -y))."""
    side = Side(prediction.side if prediction is not None else side)
    if window is None:
        window = default_window(sol, side)
    lo, hi = window
    ys = np.geomspace(lo, hi, 60)
    sgn = 1.0 if side is Side.upper else -1.0
    p = np.asarray(total_tail(sol, sgn * ys, side), dtype=float)
    keep = p > 0
    fit = fit_tail_exponent(ys[keep], p[keep], (lo, hi), downweight_last=5)
    pred = prediction or AsymptoticPrediction(side, AsymptoticRegime.none)
    return _report(pred, pred.vol_exponent, -fit.slope, window, "vol_exponent", tol,
                   stderr=fit.stderr)


def predicted_curve(prediction: AsymptoticPrediction, dist: SignalDistribution, x) -> np.ndarray:
    """Leading-order F on the side of ``prediction`` (log laws only carry a constant)."""
    x = np.abs(np.asarray(x, dtype=float))
    sgn = 1.0 if prediction.side is Side.upper else -1.0
    edge = dist.support_hi if sgn > 0 else dist.support_lo
    if prediction.regime is not AsymptoticRegime.log_law:
        raise ValueError("only log laws have an absolute leading term")
    lx = np.log(x)
    n = 1.0 / prediction.exponent
    if math.isfinite(edge):
        return edge - sgn * prediction.constant * lx ** (-1.0 / n)
    return dist.mean + sgn * prediction.constant * lx ** (1.0 / n)


# --------------------------------------------------------------------------
# Reference tables
# --------------------------------------------------------------------------

#: Power-law growth exponent on the upper side: ((N-1) alpha / N - 1)^{-1}.
TABLE1 = {
    "beta_prime": {"alpha": 3.0, "lam": 1.0},
    "frechet": {"alpha": 3.0, "s": 1.0},
    "lomax": {"alpha": 3.0, "lam": 1.0},
    "pareto": {"alpha": 3.0, "xm": 1.0},
    "student": {"alpha": 3.0},
}


def table1_exponent(alpha: float, n: int) -> float:
    return 1.0 / ((n - 1) * alpha / n - 1.0)


def table2_constant(family: str, params: dict, n: int) -> float:
    """Closed-form growth constant c in F ~ c (log x)^{1/p}."""
    q = n / (n - 1.0)
    if family == "exponential":
        return q / params["lam"]
    if family == "gaussian":
        return math.sqrt(2.0 * params["Sigma"] * q)
    if family == "inverse_gaussian":
        return 2.0 * q * params["mu"] ** 2 / params["lam"]
    if family == "nig":
        return q / (params["alpha"] - params.get("beta", 0.0))
    if family == "weibull":
        return (q / params["lam"] ** params["p"]) ** (1.0 / params["p"])
    raise KeyError(family)


TABLE2 = {
    "exponential": {"lam": 1.0},
    "gaussian": {"Sigma": 1.0},
    "inverse_gaussian": {"mu": 1.0, "lam": 1.0},
    "nig": {"alpha": 2.0, "beta": 0.5, "delta": 1.0},
    "weibull": {"p": 2.0, "lam": 1.0},
}


def reproduce_tables(n: int = 25) -> list[dict]:
    """Predicted against closed-form entries for every reference row."""
    rows = []
    params = MarketParams(n_insiders=n)
    for fam, p in TABLE1.items():
        up, _ = predict(make_distribution(fam, p), params)
        ref = table1_exponent(p["alpha"], n)
        rows.append({"table": 1, "family": fam, "quantity": "exponent",
                     "predicted": up.exponent, "reference": ref})
    for fam, p in TABLE2.items():
        up, _ = predict(make_distribution(fam, p), params)
        rows.append({"table": 2, "family": fam, "quantity": "constant",
                     "predicted": up.constant, "reference": table2_constant(fam, p, n)})
    return rows


__all__ = [
    "AsymptoticPrediction", "AsymptoticRegime", "TABLE1", "TABLE2", "default_window", "is_ratio_check",
    "log_constant", "predict", "predicted_curve", "reproduce_tables", "rho", "table1_exponent",
    "table2_constant", "validate", "volume_exponent_fit", "zeta",
]
