"""Command-line driver: ``glosten-eq {solve,validate,sweep}``.

Exit codes: 0 converged / all checks pass, 1 configuration or I/O error,
2 solver did not converge or a check failed, 3 infeasible N under ``--strict``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import asymptotics, book
from .equilibrium import (
    EquilibriumSolution,
    MarketParams,
    SolverControls,
    Status,
    solve,
    solve_envelopes,
)
from .numerics import GridParams
from .sameprice import compare, solve_sameprice
from .signals import FAMILIES, SignalDistribution, from_config

log = logging.getLogger("glosten_eq")

EXIT_OK, EXIT_ERROR, EXIT_FAIL, EXIT_INFEASIBLE = 0, 1, 2, 3
VARIANTS = ("dealer", "same_price", "both")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    distribution: dict = field(default_factory=lambda: {"family": "bernoulli", "params": {}, "shift": None})
    market: dict = field(default_factory=lambda: {"N": 1, "sigma": 1.0})
    grid: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=lambda: {"dir": "out", "formats": ["csv", "json"]})
    variant: str = "dealer"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls()
        for k, v in d.items():
            if isinstance(getattr(cfg, k), dict):
                v = {**getattr(cfg, k), **v}
            setattr(cfg, k, v)
        cfg.check()
        return cfg

    def check(self) -> None:
        fam = self.distribution.get("family")
        if fam not in FAMILIES:
            raise ConfigError(f"unknown family {fam!r}; choose from {', '.join(FAMILIES)}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}")
        if not set(self.outputs.get("formats", [])) <= {"csv", "json"}:
            raise ConfigError("output formats must be a subset of {csv, json}")
        try:
            self.grid_params()
            self.controls()
            self.market_params()
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from e

    def grid_params(self) -> GridParams:
        return GridParams(**self.grid)

    def controls(self) -> SolverControls:
        return SolverControls(**self.solver)

    def market_params(self) -> MarketParams:
        return MarketParams(n_insiders=int(self.market.get("N", 1)), sigma=float(self.market.get("sigma", 1.0)))

    def dist(self) -> SignalDistribution:
        try:
            d = from_config(self.distribution)
        except (KeyError, ValueError) as e:
            raise ConfigError(f"bad distribution: {e}") from e
        t = self.distribution.get("scale_t")
        return d.scaled(float(t)) if t not in (None, 1, 1.0) else d

    def to_dict(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------------
# Serialisation
# --------------------------------------------------------------------------


def _clean(obj):
    """JSON-safe copy: non-finite floats become null, numpy scalars become Python numbers."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if hasattr(obj, "value") and not isinstance(obj, (int, str)):
        return obj.value
    return obj


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_clean(obj), indent=1, allow_nan=False) + "\n")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g") if math.isfinite(v) else ""
    return str(v)


def write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(r.get(h)) for h in header])


# --------------------------------------------------------------------------
# Solve
# --------------------------------------------------------------------------


def run_variant(cfg: RunConfig, variant: str) -> EquilibriumSolution:
    dist, params = cfg.dist(), cfg.market_params()
    if variant == "same_price":
        return solve_sameprice(dist, params, cfg.controls(), cfg.grid_params())
    return solve(dist, params, cfg.controls(), cfg.grid_params())


def _curve_rows(sol: EquilibriumSolution, variant: str) -> list[dict]:
    if variant == "dealer":
        rows = book.curves(sol)
    else:
        # price, shortfall and profit identities of the dealer model do not carry over
        b = book.build_book(sol)
        x = sol.nodes
        up = x >= 0
        inf_t = np.where(up, book.informed_tail(sol, x, "upper"), book.informed_tail(sol, x, "lower"))
        tot_t = np.where(up, book.total_tail(sol, x, "upper"), book.total_tail(sol, x, "lower"))
        rows = [{"x": x[i], "F": sol.F.values[i], "h": b(x[i]), "informed_tail": inf_t[i],
                 "total_tail": tot_t[i]} for i in range(len(x))]
    for r in rows:
        r["variant"] = variant
    return rows


def summarize(sol: EquilibriumSolution) -> dict:
    out = {"status": sol.status.value, "iterations": sol.iterations, "method": sol.method,
           "feasible": sol.feasible, "warnings": sol.warnings}
    if sol.converged:
        b = book.build_book(sol)
        out.update(residual=sol.residual(), spread=b.spread, best_ask=b.best_ask, best_bid=b.best_bid)
    return out


def write_solution(sol: EquilibriumSolution, cfg: RunConfig, variant: str, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    formats = cfg.outputs.get("formats", ["csv", "json"])
    up, lo = asymptotics.predict(sol.dist, sol.params)
    summary = summarize(sol)
    if "json" in formats:
        write_json(out / "solution.json", {
            "config": cfg.to_dict(), "variant": variant, **summary,
            "grid": {"nodes": sol.nodes, "core_step": sol.F.grid.core_step, "sigma": sol.F.grid.sigma},
            "F": sol.F.values, "history": sol.history,
            "predictions": {"upper": up.to_dict(), "lower": lo.to_dict()},
        })
    if "csv" in formats:
        write_csv(out / "convergence.csv", ["iteration", "distance"],
                  [{"iteration": i + 1, "distance": d} for i, d in enumerate(sol.history)])
        if sol.converged:
            write_csv(out / "curves.csv", list(book.CSV_COLUMNS) + ["variant"], _curve_rows(sol, variant))
    return summary


def _variants(cfg: RunConfig) -> list[str]:
    return ["dealer", "same_price"] if cfg.variant == "both" else [cfg.variant]


def _status_code(sol: EquilibriumSolution, strict: bool) -> int:
    if sol.status is Status.converged:
        return EXIT_OK
    if sol.status is Status.nonmonotone and not strict:
        return EXIT_OK
    return EXIT_FAIL


def cmd_solve(cfg: RunConfig, strict: bool = False) -> int:
    dist, params = cfg.dist(), cfg.market_params()
    if strict and not params.feasible(dist):
        log.error("N = %d is infeasible for %s (tail slope exceeds N)", params.n_insiders, dist.family)
        return EXIT_INFEASIBLE
    base = Path(cfg.outputs.get("dir", "out"))
    code = EXIT_OK
    for variant in _variants(cfg):
        sol = run_variant(cfg, variant)
        out = base if cfg.variant != "both" else base / variant
        s = write_solution(sol, cfg, variant, out)
        log.info("%s: %s after %d iterations", variant, s["status"], s["iterations"])
        code = max(code, _status_code(sol, strict))
    return code


# --------------------------------------------------------------------------
# Validate
# --------------------------------------------------------------------------


def _check(name, measured, target=None, tol=None, passed=None, **extra) -> dict:
    if passed is None and target is not None and tol is not None and measured is not None:
        passed = bool(abs(measured - target) <= tol)
    return {"name": name, "measured": measured, "target": target, "tol": tol, "passed": passed, **extra}


def _reference_v(dist: SignalDistribution) -> float:
    hi = dist.support_hi
    step = dist.std if math.isfinite(dist.std) else 1.0
    if math.isfinite(hi):
        step = min(step, 0.5 * (hi - dist.mean))
    return dist.mean + step


def validation_checks(sol: EquilibriumSolution, variant: str = "dealer") -> list[dict]:
    """Every applicable invariant of a solved run, with measured values."""
    dist, params, ctl = sol.dist, sol.params, sol.controls
    tol = ctl.tol
    checks = [_check("converged", sol.status.value, passed=sol.converged)]
    if not sol.converged:
        return checks
    x, f = sol.nodes, sol.F.values
    core = sol.F.grid.core_mask
    checks.append(_check("fixed_point_residual", sol.residual(), passed=sol.residual() <= 10 * tol,
                         bound=10 * tol))
    checks.append(_check("monotone", float(np.min(np.diff(f))), passed=bool(np.all(np.diff(f) >= -10 * tol))))
    hist = np.asarray(sol.history)
    if len(hist) > 6:
        tail = hist[-min(10, len(hist) - 5):]
        rate = float((tail[-1] / tail[0]) ** (1.0 / max(len(tail) - 1, 1))) if tail[0] > 0 else 0.0
        checks.append(_check("geometric_decay_rate", rate, passed=rate <= 0.9, bound=0.9))
    if dist.symmetric and dist.mean == 0.0:
        sym = float(np.max(np.abs(f + f[::-1])))
        checks.append(_check("antisymmetry", sym, passed=sym <= 1e-6, bound=1e-6))
    b = book.build_book(sol)
    if variant == "same_price":
        dealer = solve(dist, params, ctl, sol.grid_params)
        if dealer.converged:
            cmp = compare(sol, dealer)
            checks.append(_check("same_price_vs_dealer_rel", cmp["sup_rel"],
                                 passed=cmp["sup_rel"] <= 0.05 if params.n_insiders == 1 else None, **cmp))
        checks.append(_check("monotone_audit", getattr(sol, "monotone_ok", True),
                             passed=getattr(sol, "monotone_ok", True)))
        return checks
    checks.append(_check("foc_identity", book.foc_residual(sol, b), passed=book.foc_residual(sol, b) <= 5 * tol,
                         bound=5 * tol))
    xp = x[core & (x > 0)]
    gap = float(np.min(sol.F(xp) - book.implementation_shortfall(sol, xp)))
    checks.append(_check("is_below_F", gap, passed=gap > 0))
    up, lo = asymptotics.predict(dist, params)
    if math.isfinite(dist.std):
        lp = book.lp_profit_check(sol, b)
        bound = 1e-3 * params.sigma * dist.std
        # demand beyond the grid carries a share ~ L^(1 - zeta) of E[Y*]
        zetas = [p.vol_exponent for p in (up, lo) if math.isfinite(p.vol_exponent)]
        reach = float(np.max(np.abs(x))) / params.sigma
        cut = max((reach ** (1.0 - z) if z > 1 else 1.0 for z in zetas), default=0.0)
        ok = abs(lp) <= bound if cut <= 1e-2 else None
        checks.append(_check("lp_zero_profit", lp, passed=ok, bound=bound, truncated_share=cut))
    if dist.bounded:
        env = solve_envelopes(dist, params, ctl, sol.grid_params)
        slack = 1e-9 * max(1.0, dist.support_hi - dist.support_lo)
        lo_gap = float(np.min(f - env.lower.values))
        hi_gap = float(np.min(env.upper.values - f))
        checks.append(_check("envelopes", min(lo_gap, hi_gap), passed=min(lo_gap, hi_gap) >= -slack))
    if dist.family == "trinomial":
        a = float(dist.params.get("scale", 1.0))
        checks.append(_check("trinomial_spread", b.spread, 4 * a / 3, 1e-3))
    if dist.family == "bernoulli" and float(dist.params.get("p", 0.5)) == 0.5:
        a = float(dist.params.get("scale", 1.0))
        prof = book.aggregate_profit(sol, dist.support_hi, b)
        checks.append(_check("bernoulli_profit", prof, a * params.sigma * math.sqrt(2 / math.pi), 1e-3))
    for pred in (up, lo):
        if pred.regime is asymptotics.AsymptoticRegime.none:
            continue
        try:
            rep = asymptotics.validate(sol, pred)
        except ValueError as e:
            checks.append(_check(f"asymptotics_{pred.side.value}", None, passed=None, note=str(e)))
            continue
        checks.append(_check(f"asymptotics_{pred.side.value}", rep["fitted"], rep["predicted"],
                             passed=rep["passed"], report=rep))
        if pred.regime in (asymptotics.AsymptoticRegime.power_law, asymptotics.AsymptoticRegime.log_law):
            r = asymptotics.is_ratio_check(sol, pred)
            checks.append(_check(f"is_ratio_{pred.side.value}", r["fitted"], r["predicted"],
                                 passed=None, report=r))
    return checks


def cmd_validate(cfg: RunConfig, strict: bool = False) -> int:
    base = Path(cfg.outputs.get("dir", "out"))
    base.mkdir(parents=True, exist_ok=True)
    report = {"config": cfg.to_dict(), "variants": {}}
    ok = True
    for variant in _variants(cfg):
        sol = run_variant(cfg, variant)
        checks = validation_checks(sol, variant)
        failed = [c["name"] for c in checks if c["passed"] is False]
        ok = ok and not failed
        report["variants"][variant] = {"summary": summarize(sol), "checks": checks, "failed": failed}
        for c in checks:
            log.info("%-28s %-6s %s", c["name"], {True: "pass", False: "FAIL", None: "info"}[c["passed"]],
                     c["measured"])
    report["passed"] = ok
    write_json(base / "validation.json", report)
    return EXIT_OK if ok else EXIT_FAIL


# --------------------------------------------------------------------------
# Sweep
# --------------------------------------------------------------------------

SWEEP_AXES = ("N", "sigma", "scale_t")
SUMMARY_COLUMNS = ("axis", "value", "variant", "status", "iterations", "spread", "v_ref", "profit",
                   "fitted_upper", "fitted_lower")


def _with_axis(cfg: RunConfig, axis: str, value: float, out: Path) -> RunConfig:
    c = replace(cfg, market=dict(cfg.market), distribution=dict(cfg.distribution),
                outputs={**cfg.outputs, "dir": str(out)})
    if axis == "N":
        c.market["N"] = int(value)
    elif axis == "sigma":
        c.market["sigma"] = float(value)
    else:
        c.distribution["scale_t"] = float(value)
    return c


def _sweep_one(args) -> list[dict]:
    cfg, axis, value, v_ref = args
    rows = []
    for variant in _variants(cfg):
        sol = run_variant(cfg, variant)
        out = Path(cfg.outputs["dir"]) / (variant if cfg.variant == "both" else "")
        s = write_solution(sol, cfg, variant, out)
        row = {"axis": axis, "value": value, "variant": variant, "status": s["status"],
               "iterations": s["iterations"], "spread": s.get("spread")}
        if sol.converged and variant == "dealer":
            v = v_ref if v_ref is not None else _reference_v(sol.dist)
            row.update(v_ref=v, profit=book.aggregate_profit(sol, v))
            up, lo = asymptotics.predict(sol.dist, sol.params)
            for pred in (up, lo):
                if pred.regime is asymptotics.AsymptoticRegime.none:
                    continue
                try:
                    row[f"fitted_{pred.side.value}"] = asymptotics.validate(sol, pred)["fitted"]
                except ValueError:
                    pass
        rows.append(row)
    return rows


def cmd_sweep(cfg: RunConfig, axis: str, values: list[float]) -> int:
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}")
    if not values:
        raise ConfigError("sweep needs at least one value")
    base = Path(cfg.outputs.get("dir", "out"))
    base.mkdir(parents=True, exist_ok=True)
    v_ref = cfg.outputs.get("v_ref")
    jobs = [(_with_axis(cfg, axis, v, base / f"{axis}={v:g}"), axis, v, v_ref) for v in values]
    workers = max(1, min(int(os.environ.get("GLOSTEN_EQ_THREADS", "1")), len(jobs)))
    if workers == 1:
        results = [_sweep_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_one, jobs))
    rows = [r for res in results for r in res]
    write_csv(base / "summary.csv", SUMMARY_COLUMNS, rows)
    return EXIT_OK if all(r["status"] == Status.converged.value for r in rows) else EXIT_FAIL


# --------------------------------------------------------------------------
# Argument handling
# --------------------------------------------------------------------------

PARAM_FLAGS = ("alpha", "Sigma", "lam", "M", "scale", "mu", "p", "beta", "delta", "xm", "s")


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="RunConfig JSON file")
    common.add_argument("--family", help="signal family")
    common.add_argument("--N", type=int, help="number of insiders")
    common.add_argument("--sigma", type=float, help="noise standard deviation")
    common.add_argument("--tol", type=float, help="fixed-point tolerance")
    common.add_argument("--max-iter", type=int, dest="max_iter")
    common.add_argument("--tail-max", type=float, dest="tail_max", help="grid extent in units of sigma")
    common.add_argument("--variant", choices=VARIANTS)
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--format", action="append", choices=("csv", "json"), dest="formats")
    common.add_argument("--strict", action="store_true", help="treat an infeasible N as a failure")
    common.add_argument("--param", action="append", default=[], metavar="KEY=VALUE",
                        help="distribution parameter (repeatable)")
    for name in PARAM_FLAGS:
        common.add_argument(f"--{name}", type=float, dest=f"p_{name}", help=argparse.SUPPRESS)
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="glosten-eq", description="Glosten limit-order-book equilibria.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="solve one configuration")
    sub.add_parser("validate", parents=[common], help="solve and check every invariant")
    sw = sub.add_parser("sweep", parents=[common], help="solve over a range of one parameter")
    sw.add_argument("--axis", required=True, choices=SWEEP_AXES)
    sw.add_argument("--values", required=True, type=float, nargs="+")
    sw.add_argument("--v-ref", type=float, dest="v_ref", help="signal value for the profit column")
    return p


def config_from_args(args: argparse.Namespace) -> RunConfig:
    raw: dict = {}
    if args.config is not None:
        try:
            raw = json.loads(args.config.read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {args.config}: {e}") from e
    cfg = RunConfig.from_dict(raw) if raw else RunConfig()
    dist = {**cfg.distribution, "params": dict(cfg.distribution.get("params", {}))}
    if args.family:
        if args.family != dist.get("family"):
            dist["params"] = {}
        dist["family"] = args.family
    for item in args.param:
        if "=" not in item:
            raise ConfigError(f"--param expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        dist["params"][k] = _parse_value(v)
    for name in PARAM_FLAGS:
        v = getattr(args, f"p_{name}")
        if v is not None:
            dist["params"][name] = v
    cfg.distribution = dist
    if args.N is not None:
        cfg.market["N"] = args.N
    if args.sigma is not None:
        cfg.market["sigma"] = args.sigma
    if args.tol is not None:
        cfg.solver["tol"] = args.tol
    if args.max_iter is not None:
        cfg.solver["max_iter"] = args.max_iter
    if args.tail_max is not None:
        cfg.grid["tail_max_sigmas"] = args.tail_max
    if args.variant:
        cfg.variant = args.variant
    if args.out is not None:
        cfg.outputs["dir"] = str(args.out)
    if args.formats:
        cfg.outputs["formats"] = sorted(set(args.formats))
    if getattr(args, "v_ref", None) is not None:
        cfg.outputs["v_ref"] = args.v_ref
    cfg.check()
    return cfg


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        if args.command == "solve":
            return cmd_solve(cfg, args.strict)
        if args.command == "validate":
            return cmd_validate(cfg, args.strict)
        return cmd_sweep(cfg, args.axis, args.values)
    except ConfigError as e:
        print(f"glosten-eq: {e}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as e:
        print(f"glosten-eq: I/O error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
