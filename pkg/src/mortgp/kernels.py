"""Spatial kernel and cross-population covariance structures.

The spatial kernel over (age, year) is a product of one-dimensional
Matern-5/2 correlations with separate lengthscales.  It is a correlation
(value 1 at zero distance); process variances live on the diagonal of the
cross-population matrix B.

Four structures couple populations:

* ``SOGPKernel``       -- a single output, covariance eta^2 * C(x, x').
* ``ICMKernel``        -- B = A A^T shared across one spatial kernel,
                          rank Q = number of latent functions.
* ``SLFMKernel``       -- sum over q of rank-one B_q, each latent function
                          with its own lengthscales.
* ``MultiLevelICMKernel`` -- B is a Kronecker product of per-factor-dimension
                          matrices B_p = A_p A_p^T, one shared spatial kernel.

Assembly works cell-by-cell from a design matrix of (age, year, population)
rows, so non-rectangular ("notched") designs need no special handling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import reduce
from typing import Union

import numpy as np

from .errors import ConditioningError, ParameterError

SQRT5 = math.sqrt(5.0)


@dataclass(frozen=True)
class MaternParams:
    """Lengthscales (in years) of the Matern-5/2 kernel over age and year."""

    theta_age: float
    theta_year: float

    def __post_init__(self):
        for name, v in (("theta_age", self.theta_age), ("theta_year", self.theta_year)):
            if not (math.isfinite(v) and v > 0):
                raise ParameterError(f"{name} must be positive and finite, got {v!r}")


def _matern52_1d(dist: np.ndarray, theta: float) -> np.ndarray:
    u = (SQRT5 / theta) * np.abs(dist)
    return (1.0 + u + u * u / 3.0) * np.exp(-u)


def _matern52_1d_dtheta(dist: np.ndarray, theta: float) -> np.ndarray:
    # d/dtheta of the 1-d factor: (u^2 / (3 theta)) (1 + u) exp(-u)
    u = (SQRT5 / theta) * np.abs(dist)
    return (u * u / (3.0 * theta)) * (1.0 + u) * np.exp(-u)


def matern52(x, x_prime, params: MaternParams) -> float:
    """Product Matern-5/2 correlation between two (age, year) points."""
    x = np.asarray(x, dtype=float)
    x_prime = np.asarray(x_prime, dtype=float)
    ka = _matern52_1d(x[0] - x_prime[0], params.theta_age)
    ky = _matern52_1d(x[1] - x_prime[1], params.theta_year)
    return float(ka * ky)


def matern52_matrix(X1: np.ndarray, X2: np.ndarray, params: MaternParams) -> np.ndarray:
    """Correlation matrix between two sets of (age, year) rows."""
    da = X1[:, 0][:, None] - X2[None, :, 0]
    dy = X1[:, 1][:, None] - X2[None, :, 1]
    return _matern52_1d(da, params.theta_age) * _matern52_1d(dy, params.theta_year)


def _as_loading_matrix(arr, L=None, Q=None) -> np.ndarray:
    a = np.array(arr, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2 or a.size == 0:
        raise ParameterError("loadings must be a nonempty 2-d array")
    if not np.all(np.isfinite(a)):
        raise ParameterError("loadings must be finite")
    if L is not None and a.shape[0] != L:
        raise ParameterError(f"loadings have {a.shape[0]} rows, expected {L}")
    if Q is not None and a.shape[1] != Q:
        raise ParameterError(f"loadings have {a.shape[1]} columns, expected {Q}")
    if a.shape[1] > a.shape[0]:
        raise ParameterError(
            f"rank {a.shape[1]} exceeds population count {a.shape[0]}"
        )
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SOGPKernel:
    """Single-output kernel: process variance times the spatial correlation."""

    eta2: float
    matern: MaternParams

    def __post_init__(self):
        if not (math.isfinite(self.eta2) and self.eta2 > 0):
            raise ParameterError(f"process variance must be positive, got {self.eta2!r}")

    @property
    def n_populations(self) -> int:
        return 1

    def coreg_matrix(self) -> np.ndarray:
        return np.array([[self.eta2]])

    def param_count(self) -> int:
        return 3  # eta^2 and the two lengthscales


@dataclass(frozen=True, eq=False)
class ICMKernel:
    """Rank-Q coupling B = A A^T with one shared spatial kernel."""

    loadings: np.ndarray  # (L, Q)
    matern: MaternParams

    def __post_init__(self):
        object.__setattr__(self, "loadings", _as_loading_matrix(self.loadings))

    @property
    def n_populations(self) -> int:
        return self.loadings.shape[0]

    @property
    def rank(self) -> int:
        return self.loadings.shape[1]

    def coreg_matrix(self) -> np.ndarray:
        return self.loadings @ self.loadings.T

    def param_count(self) -> int:
        L, Q = self.loadings.shape
        return Q * L + 2


@dataclass(frozen=True, eq=False)
class SLFMKernel:
    """Sum of rank-one couplings, each latent function with its own lengthscales."""

    loadings: np.ndarray  # (L, Q), column q loads latent function q
    materns: tuple[MaternParams, ...]

    def __post_init__(self):
        object.__setattr__(self, "loadings", _as_loading_matrix(self.loadings))
        object.__setattr__(self, "materns", tuple(self.materns))
        if len(self.materns) != self.loadings.shape[1]:
            raise ParameterError(
                f"{len(self.materns)} lengthscale pairs for {self.loadings.shape[1]} latent functions"
            )

    @property
    def n_populations(self) -> int:
        return self.loadings.shape[0]

    @property
    def rank(self) -> int:
        return self.loadings.shape[1]

    def coreg_matrix(self) -> np.ndarray:
        return self.loadings @ self.loadings.T

    def param_count(self) -> int:
        L, Q = self.loadings.shape
        return Q * L + 2 * Q


@dataclass(frozen=True, eq=False)
class MultiLevelICMKernel:
    """Kronecker-factored coupling over factor dimensions, shared spatial kernel.

    ``loadings[p]`` has shape (L_p, Q_p); the combined matrix is
    B = kron(B_1, ..., B_P) with B_p = A_p A_p^T, whose rank is the product
    of the per-dimension ranks.
    """

    loadings: tuple[np.ndarray, ...]
    matern: MaternParams

    def __post_init__(self):
        mats = tuple(_as_loading_matrix(a) for a in self.loadings)
        if not mats:
            raise ParameterError("multi-level kernel needs at least one dimension")
        object.__setattr__(self, "loadings", mats)

    @property
    def level_sizes(self) -> tuple[int, ...]:
        return tuple(a.shape[0] for a in self.loadings)

    @property
    def ranks(self) -> tuple[int, ...]:
        return tuple(a.shape[1] for a in self.loadings)

    @property
    def n_populations(self) -> int:
        return int(np.prod(self.level_sizes))

    def level_coreg_matrices(self) -> tuple[np.ndarray, ...]:
        return tuple(a @ a.T for a in self.loadings)

    def coreg_matrix(self) -> np.ndarray:
        return reduce(np.kron, self.level_coreg_matrices())

    def param_count(self) -> int:
        return int(sum(a.size for a in self.loadings)) + 2


KernelFamily = Union[SOGPKernel, ICMKernel, SLFMKernel, MultiLevelICMKernel]


@dataclass(frozen=True, eq=False)
class NoiseParams:
    """Observation-noise standard deviation per population."""

    sigma: np.ndarray

    def __post_init__(self):
        s = np.atleast_1d(np.array(self.sigma, dtype=float))
        if s.ndim != 1 or not np.all(np.isfinite(s)) or np.any(s <= 0):
            raise ParameterError("noise sd must be a 1-d array of positive finite values")
        s.setflags(write=False)
        object.__setattr__(self, "sigma", s)

    @property
    def n_populations(self) -> int:
        return self.sigma.shape[0]


@dataclass(frozen=True, eq=False)
class KernelSpec:
    """Full covariance specification: kernel family plus observation noise."""

    kernel: KernelFamily
    noise: NoiseParams

    def __post_init__(self):
        if self.kernel.n_populations != self.noise.n_populations:
            raise ParameterError(
                f"kernel covers {self.kernel.n_populations} populations but noise has "
                f"{self.noise.n_populations}"
            )

    @property
    def n_populations(self) -> int:
        return self.kernel.n_populations


def family_name(kernel: KernelFamily) -> str:
    return {
        SOGPKernel: "sogp",
        ICMKernel: "icm",
        SLFMKernel: "slfm",
        MultiLevelICMKernel: "mlicm",
    }[type(kernel)]


def _pop_indices(rows: np.ndarray, L: int) -> np.ndarray:
    pops = np.asarray(rows)[:, 2].astype(int)
    if pops.size and (pops.min() < 0 or pops.max() >= L):
        raise ParameterError(f"population index out of range 0..{L - 1}")
    return pops


def cross_covariance(kernel: KernelFamily, rows1: np.ndarray, rows2: np.ndarray) -> np.ndarray:
    """Latent covariance between two sets of design rows (age, year, population)."""
    rows1 = np.asarray(rows1, dtype=float)
    rows2 = np.asarray(rows2, dtype=float)
    L = kernel.n_populations
    p1 = _pop_indices(rows1, L)
    p2 = _pop_indices(rows2, L)
    if isinstance(kernel, SLFMKernel):
        out = np.zeros((rows1.shape[0], rows2.shape[0]))
        for q in range(kernel.rank):
            aq = kernel.loadings[:, q]
            out += np.outer(aq[p1], aq[p2]) * matern52_matrix(rows1, rows2, kernel.materns[q])
        return out
    B = kernel.coreg_matrix()
    return B[np.ix_(p1, p2)] * matern52_matrix(rows1, rows2, kernel.matern)


def assemble_covariance(kernel: KernelFamily, rows: np.ndarray) -> np.ndarray:
    """Latent N x N covariance over one set of design rows."""
    K = cross_covariance(kernel, rows, rows)
    return 0.5 * (K + K.T)


def cross_correlation(kernel: KernelFamily) -> np.ndarray:
    """Cross-population correlation matrix implied by the coupling structure.

    For the multi-level kernel this is the Kronecker product of the
    per-dimension correlation matrices, so any entry is the product of the
    per-factor correlations.
    """
    if isinstance(kernel, SOGPKernel):
        return np.array([[1.0]])
    if isinstance(kernel, MultiLevelICMKernel):
        return reduce(np.kron, [_normalize(B, f"level {p}") for p, B in
                                enumerate(kernel.level_coreg_matrices())])
    return _normalize(kernel.coreg_matrix(), "population")


def _normalize(B: np.ndarray, what: str) -> np.ndarray:
    d = np.diag(B)
    if np.any(d <= 0):
        bad = int(np.argmax(d <= 0))
        raise ConditioningError(
            f"degenerate loadings: zero process variance for {what} index {bad}"
        )
    s = 1.0 / np.sqrt(d)
    R = B * np.outer(s, s)
    np.fill_diagonal(R, 1.0)
    return np.clip(R, -1.0, 1.0)


def kernel_param_count(kernel: KernelFamily) -> int:
    """Number of kernel hyperparameters (loadings/variance plus lengthscales).

    ICM: Q L + 2.  SLFM: Q L + 2 Q.  Multi-level ICM: sum_p Q_p L_p + 2,
    the final 2 being the shared lengthscales.  SOGP: 3.
    """
    return kernel.param_count()
