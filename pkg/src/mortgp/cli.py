"""Command-line interface.

Subcommands: fit, predict, backtest, select-rank, aggregate, improvement,
adjust-trend.  Runs are driven by a JSON config file (flat, typed key-value
document) plus per-command flags; all randomness flows from a single seed.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric/conditioning
error, 5 optimization failure.  Errors print a single machine-parseable line
``ERROR <category>: <detail>`` on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import norm

from . import analytics, artifacts
from .datastore import parse_csv
from .errors import (
    ConfigError,
    DataError,
    MortalityModelError,
    category_for,
    exit_code_for,
)
from .gp_core import TrendBasis, predict
from .inference import OptimizerConfig, optimize, select_rank

CONFIG_DEFAULTS = {
    "zero_deaths": "drop",
    "trend": {"shared_intercept": False},
    "optimizer": {"seed": 0, "starts": 5, "max_iter": 500, "tol": 1e-6,
                  "gradient": "analytic"},
    "out": ".",
}


@dataclass
class RunConfig:
    """Parsed contents of the JSON config file with defaults applied."""

    data: str
    dimensions: list[str]
    levels: dict = field(default_factory=dict)
    zero_deaths: str = "drop"
    subset: dict = field(default_factory=dict)
    family: str = "icm"
    rank: object = None
    shared_intercept: bool = False
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    out: str = "."


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    try:
        schema = raw["schema"]
        data = raw["data"]
        dimensions = list(schema["dimensions"])
    except (KeyError, TypeError):
        raise ConfigError(f"{path}: config requires 'data' and 'schema.dimensions'") from None
    model = raw.get("model", {})
    rank = model.get("ranks", model.get("rank"))
    if isinstance(rank, list):
        rank = tuple(rank)
    opt_raw = {**CONFIG_DEFAULTS["optimizer"], **raw.get("optimizer", {})}
    try:
        optimizer = OptimizerConfig(
            seed=int(opt_raw["seed"]),
            starts=int(opt_raw["starts"]),
            max_iter=int(opt_raw["max_iter"]),
            tol=float(opt_raw["tol"]),
            gradient=str(opt_raw["gradient"]),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{path}: bad optimizer settings ({exc})") from None
    return RunConfig(
        data=str(data),
        dimensions=dimensions,
        levels=dict(schema.get("levels", {})),
        zero_deaths=str(raw.get("zero_deaths", CONFIG_DEFAULTS["zero_deaths"])),
        subset=dict(raw.get("subset", {})),
        family=str(model.get("family", "icm")).lower(),
        rank=rank,
        shared_intercept=bool(raw.get("trend", {}).get("shared_intercept", False)),
        optimizer=optimizer,
        out=str(raw.get("out", ".")),
    )


def load_dataset(config: RunConfig):
    data = parse_csv(config.data, config.dimensions, config.levels or None,
                     zero_deaths=config.zero_deaths)
    sub = config.subset
    if sub:
        data = data.subset(
            age_range=tuple(sub["age_range"]) if sub.get("age_range") else None,
            year_range=tuple(sub["year_range"]) if sub.get("year_range") else None,
            populations=sub.get("populations"),
        )
    return data


# ---------------------------------------------------------------------------
# small parsing helpers
# ---------------------------------------------------------------------------


def _parse_number_list(text: str) -> list[float]:
    """Comma list of numbers; ``a:b`` and ``a:b:step`` expand inclusively."""
    out: list[float] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ":" in part:
            bits = part.split(":")
            if len(bits) not in (2, 3):
                raise ConfigError(f"bad range {part!r}")
            lo, hi = float(bits[0]), float(bits[1])
            step = float(bits[2]) if len(bits) == 3 else 1.0
            if step <= 0:
                raise ConfigError(f"bad range step in {part!r}")
            out.extend(np.arange(lo, hi + 0.5 * step, step).tolist())
        else:
            out.append(float(part))
    if not out:
        raise ConfigError(f"empty number list {text!r}")
    return out


def _parse_windows(text: str) -> list[tuple[int, int]]:
    windows = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        lo, sep, hi = part.partition(":")
        if not sep:
            raise ConfigError(f"bad window {part!r}; expected START:END")
        windows.append((int(lo), int(hi)))
    if not windows:
        raise ConfigError("no backtest windows given")
    return windows


def _parse_rank_candidates(text: str) -> list:
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "x" in part:
            out.append(tuple(int(v) for v in part.split("x")))
        else:
            out.append(int(part))
    if not out:
        raise ConfigError("no rank candidates given")
    return out


def _fmt(value: float) -> str:
    return repr(float(value))


def _ensure_parent(path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_fit(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config.optimizer = OptimizerConfig(
            seed=args.seed, starts=config.optimizer.starts,
            max_iter=config.optimizer.max_iter, tol=config.optimizer.tol,
            gradient=config.optimizer.gradient)
    out_dir = Path(args.out or config.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    data = load_dataset(config)
    trend = TrendBasis.for_dataset(data, config.shared_intercept)
    model, report = optimize(data, config.family, config.rank, config.optimizer, trend)
    model_path = out_dir / "model.json"
    report_path = out_dir / "fit_report.json"
    artifacts.save_model(model, model_path, seed=config.optimizer.seed)
    artifacts.save_fit_report(report, report_path)
    if args.verbose:
        for flag in report.flags:
            print(f"note: {flag}", file=sys.stderr)
    print(f"model: {model_path}")
    print(f"report: {report_path}")
    print(f"log_likelihood: {model.log_likelihood:.6f}")
    print(f"bic: {model.bic:.6f}")
    print(f"kernel_hyperparameters: {model.kernel_params}")
    return 0


def cmd_predict(args) -> int:
    model = artifacts.load_model(args.model)
    schema = model.dataset.schema
    ages = _parse_number_list(args.ages)
    years = _parse_number_list(args.years)
    if args.populations:
        pops = [p.strip() for p in args.populations.split(",") if p.strip()]
        flats = [schema.flat_index(p) for p in pops]
    else:
        flats = list(range(schema.n_populations))
    levels = [float(q) for q in args.quantiles.split(",")] if args.quantiles else []
    if any(not 0 < q < 1 for q in levels):
        raise ConfigError("quantile levels must lie in (0, 1)")

    cells = [(a, y, l) for l in flats for y in years for a in ages]
    dist = predict(model, cells, mode=args.mode)
    sd_for_bands = dist.sd if args.mode == "latent" else dist.sd_observational
    z = norm.ppf(levels) if levels else []

    age_lo, age_hi = model.dataset.age_range
    year_lo, year_hi = model.dataset.year_range
    out = Path(args.out)
    _ensure_parent(out)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = list(schema.dimensions) + ["age", "year", "mean", "sd_latent", "sd_obs"]
        header += [f"q_{q:g}" for q in levels]
        header += ["extrapolation"]
        writer.writerow(header)
        for i, (a, y, l) in enumerate(cells):
            parts = [schema.levels[d][j] for d, j in enumerate(schema.level_indices(l))]
            row = parts + [_fmt(a), _fmt(y), _fmt(dist.mean[i]),
                           _fmt(dist.sd_latent[i]), _fmt(dist.sd_observational[i])]
            row += [_fmt(dist.mean[i] + zz * sd_for_bands[i]) for zz in z]
            extrap = not (age_lo <= a <= age_hi and year_lo <= y <= year_hi)
            row.append("true" if extrap else "false")
            writer.writerow(row)
    print(f"predictions: {out} ({len(cells)} cells)")
    return 0


def cmd_backtest(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config.optimizer = OptimizerConfig(
            seed=args.seed, starts=config.optimizer.starts,
            max_iter=config.optimizer.max_iter, tol=config.optimizer.tol,
            gradient=config.optimizer.gradient)
    data = load_dataset(config)
    windows = _parse_windows(args.windows)
    model_config = analytics.BacktestModelConfig(
        family=config.family, rank=config.rank,
        shared_intercept=config.shared_intercept)
    report = analytics.backtest(
        data, model_config, windows, horizon=args.horizon,
        optimizer_config=config.optimizer, aggregate=args.aggregate,
        sum_over=args.sum_over, n_samples=args.samples,
    )
    out = Path(args.out or (Path(config.out) / "backtest.csv"))
    _ensure_parent(out)
    report.to_csv(out)
    print(f"backtest: {out}")
    print(f"median_ape_improvement_pct: {report.median_ape_improvement:.4f}")
    print(f"median_crps_improvement_pct: {report.median_crps_improvement:.4f}")
    return 0


def cmd_select_rank(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config.optimizer = OptimizerConfig(
            seed=args.seed, starts=config.optimizer.starts,
            max_iter=config.optimizer.max_iter, tol=config.optimizer.tol,
            gradient=config.optimizer.gradient)
    data = load_dataset(config)
    candidates = _parse_rank_candidates(args.candidates)
    trend = TrendBasis.for_dataset(data, config.shared_intercept)
    selection = select_rank(data, config.family, candidates, config.optimizer, trend)
    out = Path(args.out or (Path(config.out) / "rank_table.csv"))
    _ensure_parent(out)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rank", "log_likelihood", "kernel_params", "n_params",
                         "bic", "chosen", "error"])
        for cand in selection.table:
            rank_text = ("x".join(str(v) for v in cand.rank)
                         if isinstance(cand.rank, tuple) else str(cand.rank))
            writer.writerow([
                rank_text,
                "" if cand.log_likelihood is None else _fmt(cand.log_likelihood),
                "" if cand.kernel_params is None else cand.kernel_params,
                "" if cand.n_params is None else cand.n_params,
                "" if cand.bic is None else _fmt(cand.bic),
                "true" if cand.rank == selection.chosen else "false",
                cand.error or "",
            ])
    print(f"rank table: {out}")
    print(f"chosen: {selection.chosen}")
    return 0


def cmd_aggregate(args) -> int:
    model = artifacts.load_model(args.model)
    ages = _parse_number_list(args.ages) if args.ages else sorted(set(model.dataset.age))
    years = _parse_number_list(args.years) if args.years else sorted(set(model.dataset.year))
    levels = ([float(q) for q in args.quantiles.split(",")]
              if args.quantiles else analytics.DEFAULT_QUANTILE_LEVELS)
    forecast = analytics.aggregate_forecast(
        model, ages, years, sum_over=args.sum_over,
        n_samples=args.samples, seed=args.seed if args.seed is not None else 0,
        quantile_levels=levels, mode=args.mode,
    )
    base = Path(args.out)
    _ensure_parent(base)
    csv_path = base.with_suffix(".csv")
    json_path = base.with_suffix(".json")
    forecast.to_csv(csv_path)
    forecast.to_json(json_path)
    print(f"aggregate bands: {csv_path} {json_path}")
    return 0


def cmd_improvement(args) -> int:
    if not args.model and not args.config:
        raise ConfigError("improvement needs --model and/or --config")
    surfaces = {}
    if args.config:
        config = load_config(args.config)
        data = load_dataset(config)
        obs = analytics.observed_improvement(data)
        for i in range(obs.mi.shape[0]):
            key = (obs.labels[i], float(obs.age[i]), float(obs.year[i]))
            surfaces.setdefault(key, {})["mi_obs"] = float(obs.mi[i])
    if args.model:
        model = artifacts.load_model(args.model)
        ages = (_parse_number_list(args.ages) if args.ages
                else sorted(set(model.dataset.age)))
        years = (_parse_number_list(args.years) if args.years
                 else sorted(set(model.dataset.year))[1:])
        smooth = analytics.model_improvement(model, ages, years)
        for i in range(smooth.mi.shape[0]):
            key = (smooth.labels[i], float(smooth.age[i]), float(smooth.year[i]))
            surfaces.setdefault(key, {})["mi_model"] = float(smooth.mi[i])
    out = Path(args.out)
    _ensure_parent(out)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["population", "age", "year", "mi_obs", "mi_model"])
        for (label, a, y) in sorted(surfaces):
            vals = surfaces[(label, a, y)]
            writer.writerow([
                label, _fmt(a), _fmt(y),
                "" if "mi_obs" not in vals else _fmt(vals["mi_obs"]),
                "" if "mi_model" not in vals else _fmt(vals["mi_model"]),
            ])
    print(f"improvement factors: {out} ({len(surfaces)} cells)")
    return 0


def cmd_adjust_trend(args) -> int:
    model = artifacts.load_model(args.model)
    adjusted = analytics.adjust_trend(model, args.population, args.scale)
    out = Path(args.out)
    _ensure_parent(out)
    previous = artifacts.load_model_dict(args.model).get("provenance", {})
    notes = list(previous.get("trend_adjustments", []))
    notes.append({"population": args.population, "scale": args.scale})
    artifacts.save_model(adjusted, out, provenance={"trend_adjustments": notes})
    print(f"adjusted model: {out}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mortgp",
        description="Joint mortality-surface models across populations.",
        epilog=(
            "Config defaults: zero_deaths=drop, trend.shared_intercept=false, "
            "optimizer.seed=0, optimizer.starts=5, optimizer.max_iter=500, "
            "optimizer.tol=1e-6, optimizer.gradient=analytic, out=."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, config_required=False):
        p.add_argument("--config", required=config_required,
                       help="JSON run-config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--verbose", action="store_true", help="extra progress output")

    p = sub.add_parser("fit", help="fit one model and write the artifact")
    add_common(p, config_required=True)
    p.add_argument("--out", default=None, help="output directory (default: config out)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="tabulate the predictive distribution on a grid")
    add_common(p)
    p.add_argument("--model", required=True, help="model artifact JSON")
    p.add_argument("--ages", required=True, help="e.g. 52,57 or 52:82:5")
    p.add_argument("--years", required=True, help="e.g. 2014:2016")
    p.add_argument("--populations", default=None, help="comma list of labels (default all)")
    p.add_argument("--mode", choices=("latent", "observational"), default="latent")
    p.add_argument("--quantiles", default=None, help="comma list of levels in (0,1)")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("backtest", help="rolling-window evaluation vs per-population baselines")
    add_common(p, config_required=True)
    p.add_argument("--windows", required=True, help="e.g. 1998:2013,1999:2014,2000:2015")
    p.add_argument("--horizon", type=int, default=1, help="years ahead per window (default 1)")
    p.add_argument("--aggregate", action="store_true",
                   help="score the summed series instead of per-cell rates")
    p.add_argument("--sum-over", default=None, help="dimension to sum over when aggregating")
    p.add_argument("--samples", type=int, default=analytics.DEFAULT_AGGREGATE_SAMPLES,
                   help="Monte-Carlo samples for aggregate scoring (default 500000)")
    p.add_argument("--out", default=None, help="output CSV path")
    p.set_defaults(func=cmd_backtest)

    p = sub.add_parser("select-rank", help="fit candidate ranks and pick by BIC")
    add_common(p, config_required=True)
    p.add_argument("--candidates", required=True, help="e.g. 1,2,3,4 or 2x4x2,3x5x2")
    p.add_argument("--out", default=None, help="output CSV path")
    p.set_defaults(func=cmd_select_rank)

    p = sub.add_parser("aggregate", help="Monte-Carlo all-cause bands from a by-cause model")
    add_common(p)
    p.add_argument("--model", required=True, help="model artifact JSON")
    p.add_argument("--sum-over", required=True, help="dimension to sum over")
    p.add_argument("--ages", default=None, help="default: training ages")
    p.add_argument("--years", default=None, help="default: training years")
    p.add_argument("--samples", type=int, default=analytics.DEFAULT_AGGREGATE_SAMPLES)
    p.add_argument("--quantiles", default=None,
                   help="default: 60/80/95/99 percent central bands")
    p.add_argument("--mode", choices=("latent", "observational"), default="latent")
    p.add_argument("--out", required=True, help="output base path (.csv and .json)")
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("improvement", help="year-over-year mortality improvement factors")
    add_common(p)
    p.add_argument("--model", default=None, help="model artifact for smoothed factors")
    p.add_argument("--ages", default=None)
    p.add_argument("--years", default=None)
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_improvement)

    p = sub.add_parser("adjust-trend", help="scale the year trend of selected populations")
    add_common(p)
    p.add_argument("--model", required=True, help="model artifact JSON")
    p.add_argument("--population", required=True, help="population label or * for all")
    p.add_argument("--scale", type=float, required=True)
    p.add_argument("--out", required=True, help="adjusted artifact path")
    p.set_defaults(func=cmd_adjust_trend)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MortalityModelError as exc:
        print(f"ERROR {category_for(exc)}: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    except KeyError as exc:
        detail = exc.args[0] if exc.args else exc
        print(f"ERROR data: {detail}", file=sys.stderr)
        return exit_code_for(exc)
    except FileNotFoundError as exc:
        print(f"ERROR data: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
