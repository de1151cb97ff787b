"""Synthetic mortality datasets drawn from the model's own generative process.

Used by the test suite and the demo scripts: sample latent log-mortality
surfaces from a kernel spec, add per-population noise, and back out death
counts against a fixed exposure so the result round-trips through the normal
ingestion path.
"""

from __future__ import annotations

import numpy as np

from .datastore import FactorSchema, StackedDataset
from .gp_core import chol_with_jitter
from .kernels import ICMKernel, KernelSpec, MaternParams, NoiseParams, assemble_covariance


def default_mean(age: np.ndarray, year: np.ndarray, population: np.ndarray) -> np.ndarray:
    """A mortality-like trend: convex in age, slowly improving in year."""
    base = -6.2 + 0.35 * (population % 5)
    return (
        base
        + 0.030 * (age - 50.0)
        + 0.00055 * (age - 50.0) ** 2
        - 0.012 * (year - 2000.0)
    )


def simulate_dataset(schema: FactorSchema, ages, years, spec: KernelSpec,
                     mean_fn=default_mean, seed: int = 0, exposure: float = 1e5,
                     year_ranges: dict | None = None) -> StackedDataset:
    """Draw one dataset from the generative model defined by ``spec``.

    Parameters
    ----------
    schema, ages, years
        Population schema and the (age midpoint, calendar year) grid.
    spec : KernelSpec
        Latent covariance structure and per-population noise.
    mean_fn : callable
        Vectorized mean of the latent surface, mean_fn(age, year, population).
    year_ranges : dict, optional
        Inclusive (first, last) year per population label or flat index, for
        notched designs; populations not listed keep the full year list.
    exposure : float
        Exposed-to-risk per cell; deaths are exposure x exp(log-rate).
    """
    rng = np.random.default_rng(seed)
    L = schema.n_populations
    ranges = {}
    if year_ranges:
        for key, rg in year_ranges.items():
            ranges[schema.flat_index(key)] = (float(rg[0]), float(rg[1]))

    cells = []
    for l in range(L):
        lo, hi = ranges.get(l, (-np.inf, np.inf))
        for y in years:
            if not lo <= float(y) <= hi:
                continue
            for a in ages:
                cells.append((float(a), float(y), l))
    rows = np.array(cells, dtype=float)
    pops = rows[:, 2].astype(int)

    K = assemble_covariance(spec.kernel, rows)
    factor, _ = chol_with_jitter(K)
    f = factor @ rng.standard_normal(rows.shape[0])
    mean = mean_fn(rows[:, 0], rows[:, 1], pops)
    y = mean + f + spec.noise.sigma[pops] * rng.standard_normal(rows.shape[0])

    exposures = np.full(rows.shape[0], float(exposure))
    deaths = exposures * np.exp(y)
    return StackedDataset(schema, rows[:, 0], rows[:, 1], pops, deaths, exposures)


FIXTURE_LOADINGS = np.array([
    [0.16, 0.030],
    [0.13, -0.055],
    [0.11, 0.075],
    [0.15, -0.035],
    [0.12, 0.060],
])

FIXTURE_SIGMA = np.array([0.02, 0.035, 0.05, 0.065, 0.08])


def fixture_spec(sigma: np.ndarray | None = None) -> KernelSpec:
    """The bundled 5-population rank-2 generating spec (lengthscales 10 and 12)."""
    return KernelSpec(
        kernel=ICMKernel(loadings=FIXTURE_LOADINGS.copy(),
                         matern=MaternParams(theta_age=10.0, theta_year=12.0)),
        noise=NoiseParams(FIXTURE_SIGMA.copy() if sigma is None else np.asarray(sigma, float)),
    )


def fixture_dataset(seed: int = 2024, sigma: np.ndarray | None = None,
                    year_ranges: dict | None = None) -> tuple[StackedDataset, KernelSpec]:
    """Bundled synthetic fixture: 5 cause-like populations, 7 ages x 19 years.

    Returns the dataset together with the spec that generated it.
    """
    schema = FactorSchema.single(["CAU1", "CAU2", "CAU3", "CAU4", "CAU5"], name="cause")
    ages = [52.0 + 5.0 * k for k in range(7)]           # 52 .. 82
    years = [1998.0 + k for k in range(19)]             # 1998 .. 2016
    spec = fixture_spec(sigma)
    data = simulate_dataset(schema, ages, years, spec, seed=seed, year_ranges=year_ranges)
    return data, spec
