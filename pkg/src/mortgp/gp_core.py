"""Universal kriging core: trend profiling, likelihood, prediction, sampling.

The observation model is y = H beta + f + eps with a latent GP f whose
covariance comes from :mod:`mortgp.kernels` and per-population iid noise.
beta is profiled out in closed form (generalized least squares) inside every
likelihood evaluation, and predictions use the universal-kriging covariance:
prior variance, minus the data reduction, plus the trend-estimation term.

All solves go through one Cholesky factorization of (C + Sigma); no explicit
inverses.  The factorization adds a diagonal jitter of 1e-8 x mean(diag),
escalating tenfold up to 1e-4 x mean(diag) before failing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

from .datastore import StackedDataset
from .errors import ConditioningError, ParameterError
from .kernels import (
    KernelSpec,
    assemble_covariance,
    cross_covariance,
    kernel_param_count,
)

LOG_2PI = math.log(2.0 * math.pi)

BASE_JITTER = 1e-8
MAX_JITTER = 1e-4


def chol_with_jitter(K: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of K plus escalating diagonal jitter.

    Returns the factor and the jitter actually added.  An all-zero matrix is
    treated as degenerate and gets a zero factor.
    """
    K = np.asarray(K, dtype=float)
    scale = float(np.mean(np.diag(K)))
    if scale == 0.0 and not K.any():
        return np.zeros_like(K), 0.0
    if not np.isfinite(scale) or scale <= 0:
        raise ConditioningError("covariance diagonal is not positive")
    jitter = BASE_JITTER * scale
    eye = np.eye(K.shape[0])
    while jitter <= MAX_JITTER * scale * (1 + 1e-12):
        try:
            return cholesky(K + jitter * eye, lower=True), jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise ConditioningError(
        f"covariance not positive definite within jitter budget ({MAX_JITTER:g} x mean diag)"
    )


@dataclass(frozen=True)
class TrendBasis:
    """Per-population basis (1, age, age^2, year) with optional shared intercept.

    Age and year enter centered at ``age_center`` / ``year_center`` (the
    training means by default); centering is an equivalent reparameterization
    that keeps the normal equations well conditioned with raw calendar-year
    inputs.  The year coefficient is the per-year slope of the trend and is
    unaffected by centering.
    """

    n_populations: int
    shared_intercept: bool = False
    age_center: float = 0.0
    year_center: float = 0.0

    @classmethod
    def for_dataset(cls, dataset: StackedDataset, shared_intercept: bool = False) -> "TrendBasis":
        return cls(
            n_populations=dataset.n_populations,
            shared_intercept=shared_intercept,
            age_center=float(dataset.age.mean()),
            year_center=float(dataset.year.mean()),
        )

    @property
    def n_coefficients(self) -> int:
        L = self.n_populations
        return 3 * L + 1 if self.shared_intercept else 4 * L

    def coefficient_labels(self, population_labels: Sequence[str] | None = None) -> list[str]:
        L = self.n_populations
        labels = list(population_labels or [str(l) for l in range(L)])
        names = []
        if self.shared_intercept:
            names.append("intercept")
            per_pop = ("age", "age2", "year")
        else:
            per_pop = ("intercept", "age", "age2", "year")
        for lab in labels:
            names.extend(f"{lab}/{n}" for n in per_pop)
        return names

    def year_slope_index(self, population: int) -> int:
        if not 0 <= population < self.n_populations:
            raise ParameterError(f"population index {population} out of range")
        if self.shared_intercept:
            return 1 + 3 * population + 2
        return 4 * population + 3

    def matrix(self, rows: np.ndarray) -> np.ndarray:
        rows = np.asarray(rows, dtype=float)
        n = rows.shape[0]
        da = rows[:, 0] - self.age_center
        dy = rows[:, 1] - self.year_center
        pops = rows[:, 2].astype(int)
        H = np.zeros((n, self.n_coefficients))
        if self.shared_intercept:
            H[:, 0] = 1.0
            base, width = 1, 3
            cols = (da, da * da, dy)
        else:
            base, width = 0, 4
            cols = (np.ones(n), da, da * da, dy)
        for l in range(self.n_populations):
            mask = pops == l
            if not mask.any():
                continue
            for j, col in enumerate(cols):
                H[mask, base + width * l + j] = col[mask]
        return H


def gls_beta(H: np.ndarray, chol_factor: np.ndarray, y: np.ndarray):
    """Generalized least squares coefficients via triangular solves.

    Returns (beta, gram_chol, w, v) where w = L^-1 H, v = L^-1 y and
    gram_chol is the Cholesky factor of H^T (C+Sigma)^-1 H, reused by the
    predictive trend-uncertainty term.
    """
    w = solve_triangular(chol_factor, H, lower=True)
    v = solve_triangular(chol_factor, y, lower=True)
    gram = w.T @ w
    try:
        gram_chol = cholesky(gram, lower=True)
    except np.linalg.LinAlgError:
        raise ConditioningError(
            "trend basis is rank-deficient on this design (singular H^T (C+Sigma)^-1 H)"
        ) from None
    beta = cho_solve((gram_chol, True), w.T @ v)
    return beta, gram_chol, w, v


def _profiled_loglik(chol_factor: np.ndarray, H: np.ndarray, y: np.ndarray):
    """Profile out beta and evaluate the Gaussian log-likelihood.

    Returns (logL, beta, alpha, gram_chol, w) with alpha = (C+Sigma)^-1 (y - H beta).
    """
    beta, gram_chol, w, v = gls_beta(H, chol_factor, y)
    resid_white = v - w @ beta
    alpha = solve_triangular(chol_factor, resid_white, lower=True, trans="T")
    n = y.shape[0]
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol_factor))))
    logl = -0.5 * float(resid_white @ resid_white) - 0.5 * logdet - 0.5 * n * LOG_2PI
    return logl, beta, alpha, gram_chol, w


@dataclass(frozen=True, eq=False)
class PredictiveDistribution:
    """Joint Gaussian over requested cells, latent or observational."""

    rows: np.ndarray            # (M, 3) design rows (age, year, population)
    labels: list[str]           # population label per row
    mean: np.ndarray            # (M,)
    cov: np.ndarray             # (M, M), includes noise on the diagonal if observational
    mode: str                   # "latent" | "observational"
    noise_sd: np.ndarray        # (M,) per-cell observation noise sd

    @property
    def n_cells(self) -> int:
        return int(self.mean.shape[0])

    @property
    def sd(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))

    @property
    def sd_latent(self) -> np.ndarray:
        var = np.diag(self.cov).copy()
        if self.mode == "observational":
            var = var - self.noise_sd**2
        return np.sqrt(np.clip(var, 0.0, None))

    @property
    def sd_observational(self) -> np.ndarray:
        var = np.diag(self.cov).copy()
        if self.mode == "latent":
            var = var + self.noise_sd**2
        return np.sqrt(np.clip(var, 0.0, None))


@dataclass(frozen=True, eq=False)
class FittedModel:
    """Kernel spec, trend, and cached factorization artifacts for one dataset."""

    dataset: StackedDataset
    spec: KernelSpec
    trend: TrendBasis
    beta: np.ndarray
    log_likelihood: float
    bic: float
    kernel_params: int
    n_params: int
    jitter: float
    # cached solves (consistent with the parameters above)
    chol: np.ndarray
    alpha: np.ndarray
    gram_chol: np.ndarray
    w: np.ndarray
    H: np.ndarray

    @property
    def n_populations(self) -> int:
        return self.spec.n_populations

    def population_label(self, flat: int) -> str:
        return self.dataset.schema.label(flat)


def noise_variance_vector(spec: KernelSpec, pops: np.ndarray) -> np.ndarray:
    return spec.noise.sigma[pops] ** 2


def build_model(dataset: StackedDataset, spec: KernelSpec,
                trend: TrendBasis | None = None) -> FittedModel:
    """Factorize (C + Sigma), profile the trend, and cache everything needed to predict."""
    if spec.n_populations != dataset.n_populations:
        raise ParameterError(
            f"kernel spec covers {spec.n_populations} populations, dataset has "
            f"{dataset.n_populations}"
        )
    if trend is None:
        trend = TrendBasis.for_dataset(dataset)
    rows = dataset.design_matrix()
    pops = dataset.population
    K = assemble_covariance(spec.kernel, rows)
    K[np.diag_indices_from(K)] += noise_variance_vector(spec, pops)
    chol_factor, jitter = chol_with_jitter(K)
    H = trend.matrix(rows)
    logl, beta, alpha, gram_chol, w = _profiled_loglik(chol_factor, H, dataset.y)
    k_params = kernel_param_count(spec.kernel)
    n_params = k_params + spec.noise.n_populations + trend.n_coefficients
    from .inference import bic as _bic  # local import to avoid a cycle

    return FittedModel(
        dataset=dataset,
        spec=spec,
        trend=trend,
        beta=beta,
        log_likelihood=logl,
        bic=_bic(logl, n_params, dataset.n_cells),
        kernel_params=k_params,
        n_params=n_params,
        jitter=jitter,
        chol=chol_factor,
        alpha=alpha,
        gram_chol=gram_chol,
        w=w,
        H=H,
    )


def log_marginal_likelihood(spec: KernelSpec, dataset: StackedDataset,
                            trend: TrendBasis | None = None) -> float:
    """Log-density of the observed log-rates with the trend profiled out."""
    return build_model(dataset, spec, trend).log_likelihood


def as_design_rows(dataset_or_schema, cells) -> tuple[np.ndarray, list[str]]:
    """Normalize test cells to an (M, 3) design array plus population labels.

    ``cells`` may already be an (M, 3) array with flat population indices, or
    an iterable of (age, year, population) with populations given as flat
    indices, label strings, or label tuples.
    """
    schema = getattr(dataset_or_schema, "schema", dataset_or_schema)
    cells = list(cells)
    out = np.zeros((len(cells), 3), dtype=float)
    for i, cell in enumerate(cells):
        age, year, pop = cell[0], cell[1], cell[2]
        out[i, 0] = float(age)
        out[i, 1] = float(year)
        out[i, 2] = schema.flat_index(pop if not isinstance(pop, (float, np.floating)) else int(pop))
    labels = [schema.label(int(p)) for p in out[:, 2]]
    return out, labels


def predict(model: FittedModel, cells, mode: str = "latent") -> PredictiveDistribution:
    """Joint predictive distribution at the requested cells.

    ``mode="latent"`` returns the posterior of the log-mortality surface;
    ``mode="observational"`` adds the per-population noise variance to the
    diagonal, i.e. the predictive of a new observation.
    """
    if mode not in ("latent", "observational"):
        raise ParameterError(f"unknown predictive mode {mode!r}")
    rows, labels = as_design_rows(model.dataset, cells)
    train_rows = model.dataset.design_matrix()

    c_cross = cross_covariance(model.spec.kernel, train_rows, rows)       # (N, M)
    c_test = assemble_covariance(model.spec.kernel, rows)                 # (M, M)
    H_test = model.trend.matrix(rows)                                     # (M, p)

    mean = H_test @ model.beta + c_cross.T @ model.alpha

    u = solve_triangular(model.chol, c_cross, lower=True)                 # (N, M)
    trend_resid = H_test.T - model.w.T @ u                                # (p, M)
    cov = (
        c_test
        - u.T @ u
        + trend_resid.T @ cho_solve((model.gram_chol, True), trend_resid)
    )
    cov = 0.5 * (cov + cov.T)

    test_pops = rows[:, 2].astype(int)
    noise_sd = model.spec.noise.sigma[test_pops]
    if mode == "observational":
        cov = cov.copy()
        cov[np.diag_indices_from(cov)] += noise_sd**2
    return PredictiveDistribution(
        rows=rows, labels=labels, mean=mean, cov=cov, mode=mode, noise_sd=noise_sd
    )


def sample_joint(dist: PredictiveDistribution, n_samples: int, seed: int) -> np.ndarray:
    """Draw joint Gaussian samples (n_samples x n_cells), deterministic per seed."""
    if n_samples < 1:
        raise ParameterError("n_samples must be at least 1")
    rng = np.random.default_rng(seed)
    factor, _ = chol_with_jitter(dist.cov)
    z = rng.standard_normal((int(n_samples), dist.n_cells))
    return dist.mean[None, :] + z @ factor.T


def with_adjusted_beta(model: FittedModel, new_beta: np.ndarray) -> FittedModel:
    """Rebuild cached kriging quantities for a manually modified trend vector."""
    new_beta = np.asarray(new_beta, dtype=float)
    if new_beta.shape != model.beta.shape:
        raise ParameterError("adjusted beta has the wrong length")
    resid = model.dataset.y - model.H @ new_beta
    v = solve_triangular(model.chol, resid, lower=True)
    alpha = solve_triangular(model.chol, v, lower=True, trans="T")
    logdet = 2.0 * float(np.sum(np.log(np.diag(model.chol))))
    n = model.dataset.n_cells
    logl = -0.5 * float(v @ v) - 0.5 * logdet - 0.5 * n * LOG_2PI
    from .inference import bic as _bic

    return replace(
        model,
        beta=new_beta,
        alpha=alpha,
        log_likelihood=logl,
        bic=_bic(logl, model.n_params, n),
    )
