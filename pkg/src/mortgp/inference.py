"""Maximum marginal-likelihood estimation, BIC, and rank selection.

Hyperparameters are optimized in a transformed space: log lengthscales, raw
loadings, log noise standard deviations.  The transform keeps lengthscales
and noise positive for any real-valued optimizer iterate.

The likelihood gradient is computed analytically.  Because the trend
coefficients are profiled by exact GLS at every evaluation, the gradient of
the profiled likelihood equals the partial gradient with the coefficients
held fixed (envelope argument), i.e. the standard

    dlogL/dp = 0.5 alpha^T dK/dp alpha - 0.5 tr(K^-1 dK/dp)

with alpha = K^-1 (y - H beta_hat).  A central finite-difference gradient is
available both as an optimizer fallback and as a cross-check.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import cho_solve
from scipy.optimize import minimize

from .datastore import StackedDataset
from .errors import (
    ConditioningError,
    DataError,
    OptimizationError,
    ParameterError,
)
from .gp_core import FittedModel, TrendBasis, build_model, chol_with_jitter, _profiled_loglik
from .kernels import (
    ICMKernel,
    KernelSpec,
    MaternParams,
    MultiLevelICMKernel,
    NoiseParams,
    SLFMKernel,
    SOGPKernel,
    _matern52_1d,
    _matern52_1d_dtheta,
    kernel_param_count,
)

FAMILIES = ("sogp", "icm", "slfm", "mlicm")

LOG_THETA_BOUNDS = (np.log(1e-2), np.log(1e6))
LOADING_BOUNDS = (-1e3, 1e3)
LOG_SIGMA_BOUNDS = (np.log(1e-7), np.log(1e2))

_PENALTY = 1e12


def bic(log_likelihood: float, n_params: int, n_obs: int) -> float:
    """Penalized log-likelihood, larger is better: logL - (k/2) ln(n)."""
    if n_obs < 1:
        raise ParameterError("n_obs must be at least 1")
    return float(log_likelihood) - 0.5 * n_params * np.log(n_obs)


@dataclass(frozen=True)
class ParameterLayout:
    """Flat-vector encoding of all kernel and noise hyperparameters.

    Vector order: log lengthscales (one (age, year) pair, or one pair per
    latent function for SLFM), then raw loadings, then log noise sd per
    population.
    """

    family: str
    n_populations: int
    ranks: tuple[int, ...]               # (Q,) or per-dimension Q_p for mlicm
    level_sizes: tuple[int, ...] | None  # mlicm only

    @classmethod
    def for_family(cls, family: str, dataset: StackedDataset, rank=None) -> "ParameterLayout":
        family = family.lower()
        L = dataset.n_populations
        if family == "sogp":
            if L != 1:
                raise ParameterError(f"single-output model requested for {L} populations")
            return cls("sogp", 1, (1,), None)
        if family in ("icm", "slfm"):
            if rank is None:
                raise ParameterError(f"{family} requires a rank")
            Q = int(rank)
            if not 1 <= Q <= L:
                raise ParameterError(f"rank must satisfy 1 <= Q <= {L}, got {Q}")
            return cls(family, L, (Q,), None)
        if family == "mlicm":
            sizes = dataset.schema.sizes
            if rank is None:
                rank = sizes  # full rank by default
            ranks = tuple(int(q) for q in np.atleast_1d(rank))
            if len(ranks) != len(sizes):
                raise ParameterError(
                    f"multi-level ranks {ranks} do not match schema dimensions {sizes}"
                )
            for q, Lp, name in zip(ranks, sizes, dataset.schema.dimensions):
                if not 1 <= q <= Lp:
                    raise ParameterError(
                        f"rank for dimension {name!r} must satisfy 1 <= Q <= {Lp}, got {q}"
                    )
            return cls("mlicm", L, ranks, sizes)
        raise ParameterError(f"unknown model family {family!r}; expected one of {FAMILIES}")

    # -- sizes ----------------------------------------------------------

    @property
    def n_theta(self) -> int:
        return 2 * self.ranks[0] if self.family == "slfm" else 2

    @property
    def n_loadings(self) -> int:
        if self.family == "mlicm":
            return int(sum(q * lp for q, lp in zip(self.ranks, self.level_sizes)))
        return self.n_populations * self.ranks[0]

    @property
    def size(self) -> int:
        return self.n_theta + self.n_loadings + self.n_populations

    def coordinate_names(self) -> list[str]:
        names = []
        if self.family == "slfm":
            for q in range(self.ranks[0]):
                names += [f"log_theta_age[{q}]", f"log_theta_year[{q}]"]
        else:
            names += ["log_theta_age", "log_theta_year"]
        if self.family == "mlicm":
            for p, (Lp, Qp) in enumerate(zip(self.level_sizes, self.ranks)):
                names += [f"loading[{p}][{m},{k}]" for m in range(Lp) for k in range(Qp)]
        else:
            Q = self.ranks[0]
            names += [f"loading[{l},{q}]" for l in range(self.n_populations) for q in range(Q)]
        names += [f"log_sigma[{l}]" for l in range(self.n_populations)]
        return names

    def bounds(self) -> list[tuple[float, float]]:
        return (
            [LOG_THETA_BOUNDS] * self.n_theta
            + [LOADING_BOUNDS] * self.n_loadings
            + [LOG_SIGMA_BOUNDS] * self.n_populations
        )

    # -- pack / unpack ----------------------------------------------------

    def pack(self, spec: KernelSpec) -> np.ndarray:
        k = spec.kernel
        if self.family == "sogp":
            theta = [np.log(k.matern.theta_age), np.log(k.matern.theta_year)]
            loadings = [np.sqrt(k.eta2)]
        elif self.family == "icm":
            theta = [np.log(k.matern.theta_age), np.log(k.matern.theta_year)]
            loadings = k.loadings.ravel()
        elif self.family == "slfm":
            theta = []
            for m in k.materns:
                theta += [np.log(m.theta_age), np.log(m.theta_year)]
            loadings = k.loadings.ravel()
        else:
            theta = [np.log(k.matern.theta_age), np.log(k.matern.theta_year)]
            loadings = np.concatenate([a.ravel() for a in k.loadings])
        return np.concatenate([theta, np.asarray(loadings, dtype=float),
                               np.log(spec.noise.sigma)])

    def unpack(self, vec: np.ndarray) -> KernelSpec:
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (self.size,):
            raise ParameterError(f"parameter vector has length {vec.shape}, expected {self.size}")
        nt, nl, L = self.n_theta, self.n_loadings, self.n_populations
        theta = np.exp(vec[:nt])
        load = vec[nt:nt + nl]
        sigma = np.exp(vec[nt + nl:])
        if self.family == "sogp":
            kernel = SOGPKernel(eta2=float(load[0] ** 2),
                                matern=MaternParams(theta[0], theta[1]))
        elif self.family == "icm":
            kernel = ICMKernel(loadings=load.reshape(L, self.ranks[0]),
                               matern=MaternParams(theta[0], theta[1]))
        elif self.family == "slfm":
            materns = tuple(MaternParams(theta[2 * q], theta[2 * q + 1])
                            for q in range(self.ranks[0]))
            kernel = SLFMKernel(loadings=load.reshape(L, self.ranks[0]), materns=materns)
        else:
            mats, off = [], 0
            for Lp, Qp in zip(self.level_sizes, self.ranks):
                mats.append(load[off:off + Lp * Qp].reshape(Lp, Qp))
                off += Lp * Qp
            kernel = MultiLevelICMKernel(loadings=tuple(mats),
                                         matern=MaternParams(theta[0], theta[1]))
        return KernelSpec(kernel=kernel, noise=NoiseParams(sigma))


# ---------------------------------------------------------------------------
# Likelihood and gradient
# ---------------------------------------------------------------------------


def _population_starts(pops: np.ndarray, L: int) -> np.ndarray:
    counts = np.bincount(pops, minlength=L)
    if np.any(counts == 0):
        empty = [str(l) for l in np.nonzero(counts == 0)[0]]
        raise DataError(f"population(s) without cells: {', '.join(empty)}")
    return np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(np.intp)


def _group_pair_sum(M: np.ndarray, starts: np.ndarray) -> np.ndarray:
    """Sum matrix entries over (population block i, population block j)."""
    return np.add.reduceat(np.add.reduceat(M, starts, axis=0), starts, axis=1)


def _sogp_eta_penalty_guard(load):
    # loading exactly 0 gives a singular model; nudge the objective instead of crashing
    return abs(float(load)) < 1e-12


def log_likelihood_and_gradient(layout: ParameterLayout, vec: np.ndarray,
                                dataset: StackedDataset,
                                trend: TrendBasis | None = None):
    """Profiled log-likelihood and its gradient in the transformed space."""
    spec = layout.unpack(vec)
    if trend is None:
        trend = TrendBasis.for_dataset(dataset)
    pops = dataset.population
    L = layout.n_populations
    starts = _population_starts(pops, L)
    rows = dataset.design_matrix()
    y = dataset.y

    d_age = np.abs(rows[:, 0][:, None] - rows[None, :, 0])
    d_year = np.abs(rows[:, 1][:, None] - rows[None, :, 1])

    kernel = spec.kernel
    if layout.family == "slfm":
        Ka = [_matern52_1d(d_age, m.theta_age) for m in kernel.materns]
        Ky = [_matern52_1d(d_year, m.theta_year) for m in kernel.materns]
        A = kernel.loadings
        C_q = [Ka[q] * Ky[q] for q in range(layout.ranks[0])]
        K = np.zeros_like(d_age)
        for q in range(layout.ranks[0]):
            aq = A[:, q]
            K += np.outer(aq[pops], aq[pops]) * C_q[q]
    else:
        Ka = _matern52_1d(d_age, kernel.matern.theta_age)
        Ky = _matern52_1d(d_year, kernel.matern.theta_year)
        C = Ka * Ky
        B = kernel.coreg_matrix()
        Bmap = B[np.ix_(pops, pops)]
        K = Bmap * C

    sig2 = spec.noise.sigma[pops] ** 2
    K[np.diag_indices_from(K)] += sig2
    chol_factor, _ = chol_with_jitter(K)
    H = trend.matrix(rows)
    logl, beta, alpha, gram_chol, w = _profiled_loglik(chol_factor, H, y)

    Kinv = cho_solve((chol_factor, True), np.eye(len(y)))
    W = np.outer(alpha, alpha) - Kinv

    grad = np.zeros(layout.size)
    nt = layout.n_theta

    if layout.family == "slfm":
        A = kernel.loadings
        grad_A = np.zeros_like(A)
        for q in range(layout.ranks[0]):
            aq = A[:, q]
            U_q = _group_pair_sum(W * C_q[q], starts)
            grad_A[:, q] = U_q @ aq
            WBq = W * np.outer(aq[pops], aq[pops])
            m = kernel.materns[q]
            dKa = _matern52_1d_dtheta(d_age, m.theta_age)
            dKy = _matern52_1d_dtheta(d_year, m.theta_year)
            grad[2 * q] = 0.5 * m.theta_age * float(np.sum(WBq * dKa * Ky[q]))
            grad[2 * q + 1] = 0.5 * m.theta_year * float(np.sum(WBq * Ka[q] * dKy))
        grad[nt:nt + layout.n_loadings] = grad_A.ravel()
    else:
        U = _group_pair_sum(W * C, starts)
        if layout.family == "sogp":
            a = np.sqrt(kernel.eta2)
            grad[nt] = float(U[0, 0]) * a
        elif layout.family == "icm":
            grad_A = U @ kernel.loadings
            grad[nt:nt + layout.n_loadings] = grad_A.ravel()
        else:
            grad[nt:nt + layout.n_loadings] = _mlicm_loading_gradient(kernel, U)
        WB = W * Bmap
        m = kernel.matern
        dKa = _matern52_1d_dtheta(d_age, m.theta_age)
        dKy = _matern52_1d_dtheta(d_year, m.theta_year)
        grad[0] = 0.5 * m.theta_age * float(np.sum(WB * dKa * Ky))
        grad[1] = 0.5 * m.theta_year * float(np.sum(WB * Ka * dKy))

    # noise: dK/dlog sigma_l = 2 sigma_l^2 on the block diagonal
    diag_W = np.diag(W)
    sums = np.add.reduceat(diag_W, starts)
    grad[nt + layout.n_loadings:] = spec.noise.sigma**2 * sums

    return logl, grad


def _mlicm_loading_gradient(kernel: MultiLevelICMKernel, U: np.ndarray) -> np.ndarray:
    """Per-level loading gradients from the population-pair weight matrix U."""
    sizes = kernel.level_sizes
    P = len(sizes)
    Bs = kernel.level_coreg_matrices()
    U_tensor = U.reshape(sizes + sizes)
    letters_a = "abcdefgh"[:P]
    letters_b = "ijklmnop"[:P]
    pieces = []
    for p in range(P):
        operands = [U_tensor]
        script = letters_a + letters_b
        for pp in range(P):
            if pp == p:
                continue
            operands.append(Bs[pp])
            script += f",{letters_a[pp]}{letters_b[pp]}"
        script += f"->{letters_a[p]}{letters_b[p]}"
        U_p = np.einsum(script, *operands)
        pieces.append((U_p @ kernel.loadings[p]).ravel())
    return np.concatenate(pieces)


def log_likelihood_only(layout: ParameterLayout, vec: np.ndarray,
                        dataset: StackedDataset,
                        trend: TrendBasis | None = None) -> float:
    spec = layout.unpack(vec)
    from .gp_core import log_marginal_likelihood

    return log_marginal_likelihood(spec, dataset, trend)


def numerical_gradient(layout: ParameterLayout, vec: np.ndarray,
                       dataset: StackedDataset, h: float = 1e-5,
                       trend: TrendBasis | None = None) -> np.ndarray:
    """Central finite differences of the log-likelihood per transformed coordinate."""
    if h <= 0:
        raise ParameterError("finite-difference step must be positive")
    vec = np.asarray(vec, dtype=float)
    grad = np.zeros_like(vec)
    names = layout.coordinate_names()
    for i in range(vec.size):
        up, dn = vec.copy(), vec.copy()
        up[i] += h
        dn[i] -= h
        f_up = log_likelihood_only(layout, up, dataset, trend)
        f_dn = log_likelihood_only(layout, dn, dataset, trend)
        if not (np.isfinite(f_up) and np.isfinite(f_dn)):
            raise ConditioningError(
                f"non-finite likelihood while differencing coordinate {names[i]}"
            )
        grad[i] = (f_up - f_dn) / (2.0 * h)
    return grad


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------


def _per_population_scales(dataset: StackedDataset, trend: TrendBasis):
    """(residual sd, year-over-year sd / sqrt(2)) per population."""
    L = dataset.n_populations
    resid_sd = np.full(L, 0.1)
    noise_sd = np.full(L, 0.05)
    for l in range(L):
        mask = dataset.population_mask(l)
        if not mask.any():
            continue
        a, yr, yv = dataset.age[mask], dataset.year[mask], dataset.y[mask]
        X = np.column_stack([
            np.ones(a.size),
            a - trend.age_center,
            (a - trend.age_center) ** 2,
            yr - trend.year_center,
        ])
        if a.size >= 6:
            coef, *_ = np.linalg.lstsq(X, yv, rcond=None)
            resid = yv - X @ coef
            resid_sd[l] = max(float(np.std(resid)), 1e-3)
        else:
            resid_sd[l] = max(float(np.std(yv)), 1e-3)
        diffs = []
        for age in np.unique(a):
            sel = a == age
            order = np.argsort(yr[sel])
            if order.size >= 2:
                diffs.extend(np.diff(yv[sel][order]))
        if len(diffs) >= 2:
            noise_sd[l] = max(float(np.std(diffs)) / np.sqrt(2.0), 1e-4)
        else:
            noise_sd[l] = max(resid_sd[l] * 0.5, 1e-4)
    return resid_sd, noise_sd


def _loading_pattern(L: int, Q: int) -> np.ndarray:
    pat = np.zeros((L, Q))
    for l in range(L):
        pat[l, l % Q] = 1.0
    return pat


def _initial_vectors(layout: ParameterLayout, dataset: StackedDataset,
                     trend: TrendBasis, n_starts: int, rng: np.random.Generator):
    span_age = max(dataset.age.max() - dataset.age.min(), 2.0)
    span_year = max(dataset.year.max() - dataset.year.min(), 2.0)
    theta0 = np.array([span_age / 2.0, span_year / 2.0])
    resid_sd, noise_sd = _per_population_scales(dataset, trend)

    starts = []
    for s in range(n_starts):
        jitter_theta = np.ones(2) if s == 0 else np.exp(rng.uniform(-0.7, 0.7, size=2))
        jitter_sigma = np.ones(layout.n_populations) if s == 0 else np.exp(
            rng.uniform(-0.5, 0.5, size=layout.n_populations))
        if layout.family == "slfm":
            theta = np.tile(theta0 * jitter_theta, layout.ranks[0])
        else:
            theta = theta0 * jitter_theta
        if layout.family == "mlicm":
            loadings = _mlicm_initial_loadings(layout, resid_sd, rng)
        else:
            Q = layout.ranks[0]
            pat = _loading_pattern(layout.n_populations, Q)
            eps = rng.standard_normal(pat.shape)
            loadings = (resid_sd[:, None] * (pat + 0.1 * eps)).ravel()
        sigma = noise_sd * jitter_sigma
        starts.append(np.concatenate([np.log(theta), loadings, np.log(sigma)]))
    return starts


def _mlicm_initial_loadings(layout: ParameterLayout, resid_sd: np.ndarray,
                            rng: np.random.Generator) -> np.ndarray:
    # split log process variance into per-dimension multiplicative effects
    sizes = layout.level_sizes
    P = len(sizes)
    t = np.log(resid_sd**2).reshape(sizes)
    grand = float(t.mean())
    pieces = []
    for p, (Lp, Qp) in enumerate(zip(sizes, layout.ranks)):
        axis = tuple(i for i in range(P) if i != p)
        effect = t.mean(axis=axis) - grand
        row_var = np.exp(effect + grand / P)
        pat = _loading_pattern(Lp, Qp)
        eps = rng.standard_normal(pat.shape)
        pieces.append((np.sqrt(row_var)[:, None] * (pat + 0.1 * eps)).ravel())
    return np.concatenate(pieces)


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OptimizerConfig:
    seed: int = 0
    starts: int = 5
    max_iter: int = 500
    tol: float = 1e-6
    gradient: str = "analytic"  # "analytic" | "fd"
    fd_step: float = 1e-5


@dataclass(frozen=True)
class StartResult:
    index: int
    converged: bool
    log_likelihood: float
    iterations: int
    message: str

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "converged": self.converged,
            "log_likelihood": self.log_likelihood,
            "iterations": self.iterations,
            "message": self.message,
        }


@dataclass(frozen=True)
class FitReport:
    family: str
    ranks: tuple[int, ...]
    parameters: np.ndarray
    coordinate_names: list[str]
    log_likelihood: float
    bic: float
    n_params: int
    kernel_params: int
    best_start: int
    starts: list[StartResult]
    flags: list[str]
    seed: int
    duration_s: float

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "ranks": list(self.ranks),
            "parameters": [float(v) for v in self.parameters],
            "coordinate_names": list(self.coordinate_names),
            "log_likelihood": self.log_likelihood,
            "bic": self.bic,
            "n_params": self.n_params,
            "kernel_params": self.kernel_params,
            "best_start": self.best_start,
            "starts": [s.to_dict() for s in self.starts],
            "flags": list(self.flags),
            "seed": self.seed,
            "duration_s": self.duration_s,
        }


def optimize(dataset: StackedDataset, family: str, rank=None,
             config: OptimizerConfig | None = None,
             trend: TrendBasis | None = None) -> tuple[FittedModel, FitReport]:
    """Multi-start maximum likelihood fit of one model family.

    Returns the refitted model at the best converged start together with a
    report of all starts.  Deterministic for a fixed config seed.
    """
    config = config or OptimizerConfig()
    layout = ParameterLayout.for_family(family, dataset, rank)
    if trend is None:
        trend = TrendBasis.for_dataset(dataset)
    _population_starts(dataset.population, layout.n_populations)
    if dataset.n_cells <= trend.n_coefficients:
        raise DataError(
            f"{dataset.n_cells} cells cannot identify {trend.n_coefficients} trend coefficients"
        )

    t0 = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    x0s = _initial_vectors(layout, dataset, trend, config.starts, rng)
    bounds = layout.bounds()

    def objective(x):
        try:
            logl, grad = log_likelihood_and_gradient(layout, x, dataset, trend)
        except (ConditioningError, np.linalg.LinAlgError):
            return _PENALTY, np.zeros_like(x)
        if not np.isfinite(logl):
            return _PENALTY, np.zeros_like(x)
        return -logl, -grad

    def objective_f(x):
        try:
            val = log_likelihood_only(layout, x, dataset, trend)
        except (ConditioningError, np.linalg.LinAlgError):
            return _PENALTY
        return -val if np.isfinite(val) else _PENALTY

    def objective_fd_grad(x):
        try:
            return -numerical_gradient(layout, x, dataset, config.fd_step, trend)
        except (ConditioningError, np.linalg.LinAlgError):
            return np.zeros_like(x)

    results = []
    start_records = []
    for s, x0 in enumerate(x0s):
        if config.gradient == "analytic":
            res = minimize(objective, x0, jac=True, method="L-BFGS-B", bounds=bounds,
                           options={"maxiter": config.max_iter, "ftol": config.tol,
                                    "maxls": 50})
        else:
            res = minimize(objective_f, x0, jac=objective_fd_grad, method="L-BFGS-B",
                           bounds=bounds,
                           options={"maxiter": config.max_iter, "ftol": config.tol,
                                    "maxls": 50})
        logl = -float(res.fun)
        usable = np.isfinite(logl) and logl > -0.5 * _PENALTY
        converged = bool(res.success) and usable
        message = str(res.message)
        start_records.append(StartResult(s, converged, logl if usable else -np.inf,
                                         int(res.nit), message))
        results.append((converged, logl if usable else -np.inf, s, res.x))

    converged_results = [r for r in results if r[0]]
    if not converged_results:
        raise OptimizationError(
            "no optimizer start converged", starts=[r.to_dict() for r in start_records]
        )
    _, best_logl, best_idx, best_x = max(converged_results, key=lambda r: (r[1], -r[2]))

    spec = layout.unpack(best_x)
    model = build_model(dataset, spec, trend)

    flags = _lengthscale_flags(spec, dataset)
    n_not_conv = sum(1 for r in start_records if not r.converged)
    if n_not_conv:
        flags.append(f"{n_not_conv} of {len(start_records)} starts did not converge")

    report = FitReport(
        family=layout.family,
        ranks=layout.ranks,
        parameters=np.array(best_x, dtype=float),
        coordinate_names=layout.coordinate_names(),
        log_likelihood=model.log_likelihood,
        bic=model.bic,
        n_params=model.n_params,
        kernel_params=model.kernel_params,
        best_start=best_idx,
        starts=start_records,
        flags=flags,
        seed=config.seed,
        duration_s=time.perf_counter() - t0,
    )
    return model, report


def _lengthscale_flags(spec: KernelSpec, dataset: StackedDataset) -> list[str]:
    span_age = max(dataset.age.max() - dataset.age.min(), 1.0)
    span_year = max(dataset.year.max() - dataset.year.min(), 1.0)
    kernel = spec.kernel
    materns = kernel.materns if isinstance(kernel, SLFMKernel) else (kernel.matern,)
    flags = []
    for q, m in enumerate(materns):
        tag = f" (latent function {q})" if len(materns) > 1 else ""
        if m.theta_age > 10.0 * span_age:
            flags.append(f"over-smoothed: age lengthscale {m.theta_age:.3g} exceeds "
                         f"10x data range{tag}")
        if m.theta_year > 10.0 * span_year:
            flags.append(f"over-smoothed: year lengthscale {m.theta_year:.3g} exceeds "
                         f"10x data range{tag}")
    return flags


# ---------------------------------------------------------------------------
# Rank selection
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RankCandidate:
    rank: object
    log_likelihood: float | None
    kernel_params: int | None
    n_params: int | None
    bic: float | None
    error: str | None = None


@dataclass(frozen=True)
class RankSelection:
    table: list[RankCandidate]
    chosen: object
    model: FittedModel
    report: FitReport


def select_rank(dataset: StackedDataset, family: str, candidates: Sequence,
                config: OptimizerConfig | None = None,
                trend: TrendBasis | None = None) -> RankSelection:
    """Fit every candidate rank and pick the BIC maximizer (ties: smaller rank)."""
    cands = list(candidates)
    if not cands:
        raise ParameterError("no rank candidates given")
    cands = sorted(cands, key=lambda r: (tuple(np.atleast_1d(r).tolist())))
    table = []
    best = None
    for cand in cands:
        rank = tuple(cand) if isinstance(cand, (tuple, list)) else int(cand)
        try:
            model, report = optimize(dataset, family, rank, config, trend)
        except (OptimizationError, ParameterError, ConditioningError, DataError) as exc:
            table.append(RankCandidate(rank, None, None, None, None, error=str(exc)))
            continue
        table.append(RankCandidate(rank, model.log_likelihood, model.kernel_params,
                                   model.n_params, model.bic))
        if best is None or model.bic > best[0]:
            best = (model.bic, rank, model, report)
    if best is None:
        raise OptimizationError(
            "all rank candidates failed: " + "; ".join(
                f"{c.rank}: {c.error}" for c in table)
        )
    return RankSelection(table=table, chosen=best[1], model=best[2], report=best[3])
