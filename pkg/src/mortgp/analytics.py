"""Forecast scoring, improvement factors, aggregation, backtesting, adjustment.

Scores are computed on log-mortality rates.  APE is the absolute percentage
error of the predictive mean; CRPS is the closed-form continuous ranked
probability score of a Gaussian forecast, evaluated with the observational
variance (posterior variance plus noise variance).

Aggregation rolls by-cause predictive distributions up to an all-cause
distribution by joint Monte-Carlo sampling: draw the latent surfaces jointly
across the summed populations, exponentiate, sum, and report quantiles of the
summed rate on the log scale.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.stats import norm

from .datastore import LABEL_SEPARATOR, StackedDataset
from .errors import ConditioningError, DataError, OptimizationError, ParameterError
from .gp_core import (
    FittedModel,
    PredictiveDistribution,
    chol_with_jitter,
    predict,
    with_adjusted_beta,
)
from .inference import OptimizerConfig, optimize

#: Quantile levels covering the default 60/80/95/99 percent central bands.
DEFAULT_QUANTILE_LEVELS = (0.005, 0.025, 0.1, 0.2, 0.5, 0.8, 0.9, 0.975, 0.995)

DEFAULT_AGGREGATE_SAMPLES = 500_000


def ape(y_star, m_star):
    """Absolute percentage error |(y - m) / y| of a point forecast."""
    y_star = np.asarray(y_star, dtype=float)
    m_star = np.asarray(m_star, dtype=float)
    if np.any(y_star == 0.0):
        raise DataError("APE undefined for a zero observed value")
    out = np.abs((y_star - m_star) / y_star)
    return float(out) if out.ndim == 0 else out


_INV_SQRT_PI = 1.0 / math.sqrt(math.pi)


def crps_gaussian(mean, total_variance, y_star):
    """Closed-form CRPS of a Gaussian forecast N(mean, total_variance).

    With s = sqrt(total_variance) and z = (y - mean) / s:
    CRPS = s * (z (2 Phi(z) - 1) + 2 phi(z) - 1 / sqrt(pi)).
    """
    mean = np.asarray(mean, dtype=float)
    var = np.asarray(total_variance, dtype=float)
    y_star = np.asarray(y_star, dtype=float)
    if np.any(var <= 0.0) or not np.all(np.isfinite(var)):
        raise ParameterError("CRPS requires a positive finite forecast variance")
    s = np.sqrt(var)
    z = (y_star - mean) / s
    out = s * (z * (2.0 * norm.cdf(z) - 1.0) + 2.0 * norm.pdf(z) - _INV_SQRT_PI)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Metric reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MetricReport:
    """Per-cell APE/CRPS with grouping keys and their means."""

    labels: list[str]        # population or group label per scored cell
    age: np.ndarray
    year: np.ndarray
    observed: np.ndarray
    predicted: np.ndarray
    ape_values: np.ndarray
    crps_values: np.ndarray

    @property
    def n_cells(self) -> int:
        return int(self.observed.shape[0])

    @property
    def mean_ape(self) -> float:
        return float(np.mean(self.ape_values))

    @property
    def mean_crps(self) -> float:
        return float(np.mean(self.crps_values))

    def relative_improvement(self, baseline: "MetricReport") -> dict[str, float]:
        """(baseline - this) / baseline x 100 for each mean metric; positive is better."""
        out = {}
        for name in ("ape", "crps"):
            b = getattr(baseline, f"mean_{name}")
            m = getattr(self, f"mean_{name}")
            out[name] = float((b - m) / b * 100.0) if b != 0 else float("nan")
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["population", "age", "year", "observed", "predicted",
                             "ape", "crps"])
            for i in range(self.n_cells):
                writer.writerow([
                    self.labels[i], repr(float(self.age[i])), repr(float(self.year[i])),
                    repr(float(self.observed[i])), repr(float(self.predicted[i])),
                    repr(float(self.ape_values[i])), repr(float(self.crps_values[i])),
                ])


def score_cells(dist: PredictiveDistribution, observed: np.ndarray) -> MetricReport:
    """Score a predictive distribution against observed log-rates, cell by cell."""
    observed = np.asarray(observed, dtype=float)
    if observed.shape[0] != dist.n_cells:
        raise ParameterError("observed vector does not match predictive cells")
    var_obs = dist.sd_observational**2
    return MetricReport(
        labels=list(dist.labels),
        age=dist.rows[:, 0].copy(),
        year=dist.rows[:, 1].copy(),
        observed=observed,
        predicted=dist.mean.copy(),
        ape_values=ape(observed, dist.mean),
        crps_values=crps_gaussian(dist.mean, var_obs, observed),
    )


# ---------------------------------------------------------------------------
# Mortality improvement factors
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ImprovementSurface:
    """Annual mortality improvement 1 - rate(year)/rate(year-1) per cell."""

    labels: list[str]
    age: np.ndarray
    year: np.ndarray
    mi: np.ndarray
    kind: str               # "observed" | "model"
    n_skipped: int = 0      # cells with no predecessor year (observed only)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["population", "age", "year", f"mi_{self.kind}"])
            for i in range(self.mi.shape[0]):
                writer.writerow([self.labels[i], repr(float(self.age[i])),
                                 repr(float(self.year[i])), repr(float(self.mi[i]))])


def observed_improvement(dataset: StackedDataset) -> ImprovementSurface:
    """Raw year-over-year improvement factors from the observed rates.

    Cells whose predecessor year is absent for the same (population, age) are
    skipped and counted in ``n_skipped``.
    """
    index = {}
    for i in range(dataset.n_cells):
        index[(int(dataset.population[i]), float(dataset.age[i]), float(dataset.year[i]))] = i
    labels, ages, years, mi = [], [], [], []
    n_skipped = 0
    for i in range(dataset.n_cells):
        key = (int(dataset.population[i]), float(dataset.age[i]), float(dataset.year[i]) - 1.0)
        j = index.get(key)
        if j is None:
            n_skipped += 1
            continue
        labels.append(dataset.schema.label(int(dataset.population[i])))
        ages.append(dataset.age[i])
        years.append(dataset.year[i])
        mi.append(1.0 - math.exp(dataset.log_rate[i] - dataset.log_rate[j]))
    return ImprovementSurface(labels, np.array(ages), np.array(years), np.array(mi),
                              kind="observed", n_skipped=n_skipped)


def model_improvement(model: FittedModel, ages: Sequence[float], years: Sequence[float],
                      populations: Sequence | None = None) -> ImprovementSurface:
    """Smoothed improvement factors from posterior means on a year grid."""
    schema = model.dataset.schema
    if populations is None:
        flats = list(range(schema.n_populations))
    else:
        flats = [schema.flat_index(p) for p in populations]
    years = sorted(float(y) for y in years)
    year_set = set(years)
    all_years = sorted(year_set | {y - 1.0 for y in years})
    cells = [(a, y, l) for l in flats for y in all_years for a in ages]
    mean = predict(model, cells, mode="latent").mean
    lookup = {(float(a), float(y), l): mean[i] for i, (a, y, l) in enumerate(cells)}
    labels, out_age, out_year, mi = [], [], [], []
    for l in flats:
        for y in years:
            for a in ages:
                m_now = lookup[(float(a), float(y), l)]
                m_prev = lookup[(float(a), float(y) - 1.0, l)]
                labels.append(schema.label(l))
                out_age.append(a)
                out_year.append(y)
                mi.append(1.0 - math.exp(m_now - m_prev))
    return ImprovementSurface(labels, np.array(out_age, dtype=float),
                              np.array(out_year, dtype=float), np.array(mi), kind="model")


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------


def population_groups(schema, sum_over: str) -> dict[str, list[int]]:
    """Populations grouped by all dimensions except ``sum_over``.

    Returns a mapping from group label (remaining dimensions joined, or
    ``"all"`` for a one-dimensional schema) to the flat population indices
    summed within the group.
    """
    if sum_over not in schema.dimensions:
        raise ParameterError(f"unknown dimension {sum_over!r}; schema has {schema.dimensions}")
    d_sum = schema.dimensions.index(sum_over)
    groups: dict[str, list[int]] = {}
    for flat in range(schema.n_populations):
        idx = schema.level_indices(flat)
        rest = [schema.levels[d][idx[d]] for d in range(schema.n_dimensions) if d != d_sum]
        key = LABEL_SEPARATOR.join(rest) if rest else "all"
        groups.setdefault(key, []).append(flat)
    return groups


def _check_groups(groups: dict[str, list[int]]) -> None:
    seen: set[int] = set()
    for name, pops in groups.items():
        if not pops:
            raise ParameterError(f"group {name!r} is empty")
        overlap = seen.intersection(pops)
        if overlap:
            raise ParameterError(
                f"group {name!r} overlaps another group on population index(es) "
                f"{sorted(overlap)}"
            )
        seen.update(pops)


@dataclass(frozen=True, eq=False)
class AggregateForecast:
    """Monte-Carlo quantiles of summed (unlogged) rates, reported on log scale."""

    group_labels: list[str]   # per row
    age: np.ndarray
    year: np.ndarray
    quantile_levels: tuple[float, ...]
    quantiles: np.ndarray     # (n_rows, n_levels), log of summed-rate quantiles
    mean_log: np.ndarray      # sample mean of log summed rate
    sd_log: np.ndarray        # sample sd of log summed rate
    n_samples: int
    seed: int
    mode: str

    @property
    def n_rows(self) -> int:
        return int(self.age.shape[0])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            header = ["group", "age", "year", "mean_log", "sd_log"]
            header += [f"q_{lev:g}" for lev in self.quantile_levels]
            writer.writerow(header)
            for i in range(self.n_rows):
                row = [self.group_labels[i], repr(float(self.age[i])), repr(float(self.year[i])),
                       repr(float(self.mean_log[i])), repr(float(self.sd_log[i]))]
                row += [repr(float(v)) for v in self.quantiles[i]]
                writer.writerow(row)

    def to_json_dict(self) -> dict:
        """Bands keyed by quantile level, ready for json.dump."""
        return {
            "mode": self.mode,
            "n_samples": self.n_samples,
            "seed": self.seed,
            "quantile_levels": list(self.quantile_levels),
            "rows": [
                {
                    "group": self.group_labels[i],
                    "age": float(self.age[i]),
                    "year": float(self.year[i]),
                    "mean_log": float(self.mean_log[i]),
                    "sd_log": float(self.sd_log[i]),
                    "bands": {f"{lev:g}": float(self.quantiles[i, j])
                              for j, lev in enumerate(self.quantile_levels)},
                }
                for i in range(self.n_rows)
            ],
        }

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def aggregate_forecast(model: FittedModel, ages: Sequence[float], years: Sequence[float],
                       sum_over: str | None = None,
                       groups: dict[str, list[int]] | None = None,
                       n_samples: int = DEFAULT_AGGREGATE_SAMPLES, seed: int = 0,
                       quantile_levels: Sequence[float] = DEFAULT_QUANTILE_LEVELS,
                       mode: str = "latent") -> AggregateForecast:
    """Monte-Carlo all-cause bands from a by-cause joint model.

    For each (age, year) the latent log-rates of the summed populations are
    drawn jointly (preserving their posterior cross-covariance), exponentiated
    and summed; quantiles of the summed rate are reported on the log scale.
    Populations summed within a group must share the same exposure basis.
    """
    if groups is None:
        if sum_over is None:
            raise ParameterError("either sum_over or explicit groups are required")
        groups = population_groups(model.dataset.schema, sum_over)
    else:
        groups = {k: [model.dataset.schema.flat_index(p) for p in v]
                  for k, v in groups.items()}
    _check_groups(groups)
    levels = tuple(float(q) for q in quantile_levels)
    if any(not 0.0 < q < 1.0 for q in levels):
        raise ParameterError("quantile levels must lie strictly inside (0, 1)")
    if n_samples < 2:
        raise ParameterError("n_samples must be at least 2")

    rng = np.random.default_rng(seed)
    ages = [float(a) for a in ages]
    years = [float(y) for y in years]
    out_labels, out_age, out_year = [], [], []
    out_q, out_mean, out_sd = [], [], []
    for name in sorted(groups):
        pops = groups[name]
        cells = [(a, y, l) for y in years for a in ages for l in pops]
        dist = predict(model, cells, mode=mode)
        block = len(pops)
        for b, (y, a) in enumerate((y, a) for y in years for a in ages):
            idx = slice(b * block, (b + 1) * block)
            mean = dist.mean[idx]
            cov = dist.cov[idx, idx]
            samples = _sample_block(mean, cov, n_samples, rng)
            agg = np.exp(samples).sum(axis=1)
            log_agg = np.log(agg)
            out_labels.append(name)
            out_age.append(a)
            out_year.append(y)
            out_q.append(np.log(np.quantile(agg, levels)))
            out_mean.append(float(log_agg.mean()))
            out_sd.append(float(log_agg.std()))
    return AggregateForecast(
        group_labels=out_labels,
        age=np.array(out_age),
        year=np.array(out_year),
        quantile_levels=levels,
        quantiles=np.array(out_q),
        mean_log=np.array(out_mean),
        sd_log=np.array(out_sd),
        n_samples=int(n_samples),
        seed=int(seed),
        mode=mode,
    )


def _sample_block(mean: np.ndarray, cov: np.ndarray, n: int,
                  rng: np.random.Generator) -> np.ndarray:
    factor, _ = chol_with_jitter(np.atleast_2d(cov))
    z = rng.standard_normal((n, mean.shape[0]))
    return mean[None, :] + z @ factor.T


# ---------------------------------------------------------------------------
# Backtesting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BacktestModelConfig:
    family: str
    rank: object = None
    shared_intercept: bool = False


@dataclass(frozen=True, eq=False)
class WindowResult:
    window: tuple[int, int]
    test_years: tuple[int, ...]
    model_metrics: MetricReport
    baseline_metrics: MetricReport
    ape_improvement: float
    crps_improvement: float


@dataclass(frozen=True, eq=False)
class BacktestReport:
    windows: list[WindowResult]
    aggregate: bool

    @property
    def median_ape_improvement(self) -> float:
        return float(np.median([w.ape_improvement for w in self.windows]))

    @property
    def median_crps_improvement(self) -> float:
        return float(np.median([w.crps_improvement for w in self.windows]))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["window_start", "window_end", "model_mean_ape",
                             "model_mean_crps", "baseline_mean_ape", "baseline_mean_crps",
                             "ape_improvement_pct", "crps_improvement_pct"])
            for w in self.windows:
                writer.writerow([
                    int(w.window[0]), int(w.window[1]),
                    repr(w.model_metrics.mean_ape), repr(w.model_metrics.mean_crps),
                    repr(w.baseline_metrics.mean_ape), repr(w.baseline_metrics.mean_crps),
                    repr(w.ape_improvement), repr(w.crps_improvement),
                ])
            writer.writerow(["median", "", "", "", "", "",
                             repr(self.median_ape_improvement),
                             repr(self.median_crps_improvement)])


def _fit_baselines(train: StackedDataset, config: OptimizerConfig, seed_base: int,
                   shared_intercept: bool) -> dict[int, FittedModel]:
    from .gp_core import TrendBasis

    models = {}
    for l in range(train.n_populations):
        sub = train.subset(populations=[l])
        cfg = replace(config, seed=seed_base + l + 1)
        trend = TrendBasis.for_dataset(sub, shared_intercept)
        model, _ = optimize(sub, "sogp", None, cfg, trend)
        models[l] = model
    return models


def _baseline_predictions(models: dict[int, FittedModel], test: StackedDataset):
    """Per-cell observational means/vars from independent per-population fits."""
    mean = np.zeros(test.n_cells)
    var = np.zeros(test.n_cells)
    for l, model in models.items():
        mask = test.population_mask(l)
        if not mask.any():
            continue
        cells = [(a, y, 0) for a, y in zip(test.age[mask], test.year[mask])]
        dist = predict(model, cells, mode="observational")
        mean[mask] = dist.mean
        var[mask] = np.diag(dist.cov)
    return mean, var


def _observed_aggregate(test: StackedDataset, groups: dict[str, list[int]]):
    """Observed all-cause log-rates sum(D_l)/E per (group, age, year)."""
    rows = {}
    for i in range(test.n_cells):
        rows.setdefault((int(test.population[i]), float(test.age[i]), float(test.year[i])), i)
    out = {}
    for name in sorted(groups):
        pops = groups[name]
        keys = {(float(test.age[i]), float(test.year[i]))
                for i in range(test.n_cells) if test.population[i] in pops}
        for a, y in sorted(keys):
            idxs = [rows.get((l, a, y)) for l in pops]
            if any(i is None for i in idxs):
                continue  # incomplete cause coverage for this cell
            exposures = test.exposure[idxs]
            if np.max(np.abs(exposures - exposures[0])) > 1e-6 * abs(exposures[0]):
                raise DataError(
                    f"populations in group {name!r} have different exposures at "
                    f"(age={a:g}, year={y:g}); cannot sum cause rates"
                )
            total = float(np.sum(test.deaths[idxs])) / float(exposures[0])
            out[(name, a, y)] = math.log(total)
    if not out:
        raise DataError("no complete aggregate cells in the test window")
    return out


def _score_aggregate_joint(model: FittedModel, observed: dict, groups, n_samples, seed):
    names = sorted({k[0] for k in observed})
    ages = sorted({k[1] for k in observed})
    years = sorted({k[2] for k in observed})
    fc = aggregate_forecast(model, ages, years, groups={n: groups[n] for n in names},
                            n_samples=n_samples, seed=seed, mode="observational")
    return _score_from_aggregate(fc, observed)


def _score_aggregate_independent(models: dict[int, FittedModel], observed: dict,
                                 groups, n_samples, seed):
    rng = np.random.default_rng(seed)
    labels, ages, years, obs, pred, apes, crps = [], [], [], [], [], [], []
    for name, a, y in sorted(observed):
        agg = np.zeros(n_samples)
        for l in groups[name]:
            dist = predict(models[l], [(a, y, 0)], mode="observational")
            s = math.sqrt(max(float(dist.cov[0, 0]), 0.0))
            agg += np.exp(dist.mean[0] + s * rng.standard_normal(n_samples))
        log_agg = np.log(agg)
        m, sd = float(log_agg.mean()), float(log_agg.std())
        y_obs = observed[(name, a, y)]
        labels.append(name)
        ages.append(a)
        years.append(y)
        obs.append(y_obs)
        pred.append(m)
        apes.append(ape(y_obs, m))
        crps.append(crps_gaussian(m, sd**2, y_obs))
    return MetricReport(labels, np.array(ages), np.array(years), np.array(obs),
                        np.array(pred), np.array(apes), np.array(crps))


def _score_from_aggregate(fc: AggregateForecast, observed: dict) -> MetricReport:
    labels, ages, years, obs, pred, apes, crps = [], [], [], [], [], [], []
    for i in range(fc.n_rows):
        key = (fc.group_labels[i], float(fc.age[i]), float(fc.year[i]))
        if key not in observed:
            continue
        y_obs = observed[key]
        m, sd = float(fc.mean_log[i]), float(fc.sd_log[i])
        labels.append(key[0])
        ages.append(key[1])
        years.append(key[2])
        obs.append(y_obs)
        pred.append(m)
        apes.append(ape(y_obs, m))
        crps.append(crps_gaussian(m, sd**2, y_obs))
    return MetricReport(labels, np.array(ages), np.array(years), np.array(obs),
                        np.array(pred), np.array(apes), np.array(crps))


def backtest(dataset: StackedDataset, model_config: BacktestModelConfig,
             windows: Sequence[tuple[int, int]], horizon: int = 1,
             optimizer_config: OptimizerConfig | None = None,
             aggregate: bool = False, sum_over: str | None = None,
             n_samples: int = DEFAULT_AGGREGATE_SAMPLES) -> BacktestReport:
    """Rolling-window out-of-sample evaluation against per-population baselines.

    For each (start, end) training window the joint model and one single-output
    baseline per population are fitted on the same window with the same
    optimizer budget, then scored on the held-out years end+1 .. end+horizon.
    Positive improvement percentages mean the joint model beats the baselines.
    """
    if horizon < 1:
        raise ParameterError("horizon must be at least 1")
    config = optimizer_config or OptimizerConfig()
    all_years = set(float(y) for y in np.unique(dataset.year))
    results = []
    from .gp_core import TrendBasis  # local alias for trend construction

    for wi, (start, end) in enumerate(windows):
        test_years = [float(end + k) for k in range(1, horizon + 1)]
        missing = [y for y in test_years if y not in all_years]
        if missing:
            raise DataError(
                f"window {start}-{end}: test year(s) {', '.join(str(int(y)) for y in missing)} "
                "absent from the dataset"
            )
        train = dataset.subset(year_range=(start, end))
        test = dataset.subset(year_range=(min(test_years), max(test_years)))
        seed_w = config.seed + 1009 * (wi + 1)

        baselines = _fit_baselines(train, config, seed_w, model_config.shared_intercept)

        if model_config.family.lower() == "sogp":
            joint_is_baseline = True
            model = None
        else:
            joint_is_baseline = False
            trend = TrendBasis.for_dataset(train, model_config.shared_intercept)
            model, _ = optimize(train, model_config.family, model_config.rank,
                                replace(config, seed=seed_w), trend)

        if aggregate:
            if sum_over is None:
                raise ParameterError("aggregate backtests need sum_over")
            groups = population_groups(dataset.schema, sum_over)
            observed = _observed_aggregate(test, groups)
            base_metrics = _score_aggregate_independent(baselines, observed, groups,
                                                        n_samples, seed_w + 17)
            if joint_is_baseline:
                model_metrics = _score_aggregate_independent(baselines, observed, groups,
                                                             n_samples, seed_w + 17)
            else:
                model_metrics = _score_aggregate_joint(model, observed, groups,
                                                       n_samples, seed_w + 29)
        else:
            cells = list(zip(test.age, test.year, test.population))
            b_mean, b_var = _baseline_predictions(baselines, test)
            base_metrics = MetricReport(
                labels=[test.schema.label(int(p)) for p in test.population],
                age=test.age.copy(), year=test.year.copy(), observed=test.y.copy(),
                predicted=b_mean, ape_values=ape(test.y, b_mean),
                crps_values=crps_gaussian(b_mean, b_var, test.y),
            )
            if joint_is_baseline:
                model_metrics = base_metrics
            else:
                dist = predict(model, cells, mode="observational")
                model_metrics = score_cells(dist, test.y)

        imp = model_metrics.relative_improvement(base_metrics)
        results.append(WindowResult(
            window=(int(start), int(end)),
            test_years=tuple(int(y) for y in test_years),
            model_metrics=model_metrics,
            baseline_metrics=base_metrics,
            ape_improvement=imp["ape"],
            crps_improvement=imp["crps"],
        ))
    return BacktestReport(windows=results, aggregate=aggregate)


# ---------------------------------------------------------------------------
# Expert trend adjustment
# ---------------------------------------------------------------------------


def adjust_trend(model: FittedModel, populations, year_coefficient_scale: float) -> FittedModel:
    """Scale the year trend coefficient of selected populations.

    ``populations`` is ``"*"`` for all, or an iterable of labels / flat
    indices.  Returns a copy of the model with the kriging caches recomputed
    against the modified trend; downstream predictions reflect the adjustment.
    """
    scale = float(year_coefficient_scale)
    if not math.isfinite(scale):
        raise ParameterError("year coefficient scale must be finite")
    schema = model.dataset.schema
    if populations == "*":
        flats = list(range(schema.n_populations))
    elif isinstance(populations, (str, int, np.integer, tuple)):
        flats = [schema.flat_index(populations)]
    else:
        flats = [schema.flat_index(p) for p in populations]
    beta = model.beta.copy()
    for l in flats:
        beta[model.trend.year_slope_index(l)] *= scale
    return with_adjusted_beta(model, beta)
