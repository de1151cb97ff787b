"""Model artifact serialization.

A fitted model is saved as JSON carrying the factor schema, all kernel and
noise hyperparameters, the trend definition and coefficients, the training
cells, and reporting matrices (B, per-dimension factors, R).  Floats are
written with ``repr`` precision so reloading reproduces predictions exactly.
Artifacts are versioned; loading an artifact with an unknown version fails
loudly rather than reinterpreting it.
"""

from __future__ import annotations

import json

import numpy as np

from . import __version__
from .datastore import FactorSchema, StackedDataset
from .errors import ConfigError
from .gp_core import FittedModel, TrendBasis, build_model
from .inference import FitReport
from .kernels import (
    ICMKernel,
    KernelSpec,
    MaternParams,
    MultiLevelICMKernel,
    NoiseParams,
    SLFMKernel,
    SOGPKernel,
    cross_correlation,
    family_name,
)

ARTIFACT_VERSION = 1


def _matern_dict(m: MaternParams) -> dict:
    return {"theta_age": m.theta_age, "theta_year": m.theta_year}


def _kernel_dict(kernel) -> dict:
    fam = family_name(kernel)
    out: dict = {"family": fam}
    if fam == "sogp":
        out["eta2"] = kernel.eta2
        out["matern"] = _matern_dict(kernel.matern)
    elif fam == "icm":
        out["loadings"] = kernel.loadings.tolist()
        out["matern"] = _matern_dict(kernel.matern)
    elif fam == "slfm":
        out["loadings"] = kernel.loadings.tolist()
        out["materns"] = [_matern_dict(m) for m in kernel.materns]
    else:
        out["loadings"] = [a.tolist() for a in kernel.loadings]
        out["matern"] = _matern_dict(kernel.matern)
    return out


def _kernel_from_dict(d: dict):
    fam = d["family"]
    if fam == "sogp":
        return SOGPKernel(eta2=float(d["eta2"]),
                          matern=MaternParams(**d["matern"]))
    if fam == "icm":
        return ICMKernel(loadings=np.array(d["loadings"], dtype=float),
                         matern=MaternParams(**d["matern"]))
    if fam == "slfm":
        return SLFMKernel(loadings=np.array(d["loadings"], dtype=float),
                          materns=tuple(MaternParams(**m) for m in d["materns"]))
    if fam == "mlicm":
        return MultiLevelICMKernel(
            loadings=tuple(np.array(a, dtype=float) for a in d["loadings"]),
            matern=MaternParams(**d["matern"]),
        )
    raise ConfigError(f"unknown kernel family {fam!r} in artifact")


def model_to_dict(model: FittedModel, seed: int | None = None,
                  provenance: dict | None = None) -> dict:
    kernel = model.spec.kernel
    coreg: dict = {"B": kernel.coreg_matrix().tolist(),
                   "R": cross_correlation(kernel).tolist()}
    if isinstance(kernel, MultiLevelICMKernel):
        coreg["levels"] = [b.tolist() for b in kernel.level_coreg_matrices()]
    ds = model.dataset
    return {
        "artifact_version": ARTIFACT_VERSION,
        "library_version": __version__,
        "seed": seed,
        "provenance": provenance or {},
        "schema": ds.schema.to_dict(),
        "population_labels": ds.schema.population_labels,
        "kernel": _kernel_dict(kernel),
        "noise_sd": model.spec.noise.sigma.tolist(),
        "coregionalization": coreg,
        "trend": {
            "shared_intercept": model.trend.shared_intercept,
            "age_center": model.trend.age_center,
            "year_center": model.trend.year_center,
            "beta": model.beta.tolist(),
            "coefficient_labels": model.trend.coefficient_labels(
                ds.schema.population_labels),
        },
        "log_likelihood": model.log_likelihood,
        "bic": model.bic,
        "param_counts": {"kernel": model.kernel_params, "total": model.n_params},
        "dataset": {
            "age": ds.age.tolist(),
            "year": ds.year.tolist(),
            "population": ds.population.tolist(),
            "deaths": ds.deaths.tolist(),
            "exposure": ds.exposure.tolist(),
        },
    }


def model_from_dict(d: dict) -> FittedModel:
    version = d.get("artifact_version")
    if version != ARTIFACT_VERSION:
        raise ConfigError(
            f"unsupported artifact version {version!r}; this build reads version "
            f"{ARTIFACT_VERSION}"
        )
    schema = FactorSchema.from_dict(d["schema"])
    ds = d["dataset"]
    dataset = StackedDataset(schema, ds["age"], ds["year"], ds["population"],
                             ds["deaths"], ds["exposure"])
    spec = KernelSpec(kernel=_kernel_from_dict(d["kernel"]),
                      noise=NoiseParams(np.array(d["noise_sd"], dtype=float)))
    t = d["trend"]
    trend = TrendBasis(
        n_populations=schema.n_populations,
        shared_intercept=bool(t["shared_intercept"]),
        age_center=float(t["age_center"]),
        year_center=float(t["year_center"]),
    )
    model = build_model(dataset, spec, trend)
    saved_beta = np.array(t["beta"], dtype=float)
    if not np.array_equal(saved_beta, model.beta):
        # an adjusted (non-GLS) trend was saved; rebuild the caches against it
        from .gp_core import with_adjusted_beta

        model = with_adjusted_beta(model, saved_beta)
    return model


def save_model(model: FittedModel, path, seed: int | None = None,
               provenance: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model, seed=seed, provenance=provenance), fh,
                  indent=1, sort_keys=True)
        fh.write("\n")


def load_model(path) -> FittedModel:
    with open(path, encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not a valid model artifact ({exc})") from None
    return model_from_dict(payload)


def load_model_dict(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def save_fit_report(report: FitReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")
