"""Stacked multi-population mortality tables.

A dataset is a flat list of cells (age midpoint, calendar year, population,
deaths, exposure) over a factor schema.  Populations are combinations of
categorical factor levels (e.g. country x cause x gender) addressed either by
a tuple of level indices or by a single flat index in row-major order.  Cells
are kept in a canonical order (population, year, age) which is the
vectorization used by all covariance assembly downstream.

Populations may cover different year ranges ("notched" coverage); nothing in
this module assumes a full rectangular grid.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, SchemaError

LABEL_SEPARATOR = ":"

#: Accepted policies for rows with zero recorded deaths.
ZERO_DEATH_POLICIES = ("drop", "adjust")


@dataclass(frozen=True)
class FactorSchema:
    """Ordered categorical dimensions describing the populations.

    Parameters
    ----------
    dimensions : tuple of str
        Factor names, e.g. ``("country", "cause", "gender")``.
    levels : tuple of tuple of str
        Level labels per dimension, in a fixed order.  The total number of
        populations is the product of the per-dimension sizes, and flat
        population indices enumerate level combinations in row-major order.
    """

    dimensions: tuple[str, ...]
    levels: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "dimensions", tuple(self.dimensions))
        object.__setattr__(self, "levels", tuple(tuple(lv) for lv in self.levels))
        if len(self.dimensions) < 1:
            raise SchemaError("schema needs at least one dimension")
        if len(self.dimensions) != len(self.levels):
            raise SchemaError("dimensions and levels must have equal length")
        for name, labels in zip(self.dimensions, self.levels):
            if len(labels) < 1:
                raise SchemaError(f"dimension {name!r} has no levels")
            if len(set(labels)) != len(labels):
                raise SchemaError(f"dimension {name!r} has duplicate level labels")
            if any(LABEL_SEPARATOR in str(lab) for lab in labels):
                raise SchemaError(
                    f"level labels may not contain {LABEL_SEPARATOR!r} (dimension {name!r})"
                )

    @classmethod
    def single(cls, labels: Sequence[str], name: str = "population") -> "FactorSchema":
        """One-dimensional schema over a flat list of population labels."""
        return cls((name,), (tuple(labels),))

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(lv) for lv in self.levels)

    @property
    def n_dimensions(self) -> int:
        return len(self.dimensions)

    @property
    def n_populations(self) -> int:
        return int(np.prod(self.sizes))

    def flat_index(self, key) -> int:
        """Flat population index for a label tuple, index tuple, label string, or int."""
        if isinstance(key, (int, np.integer)):
            if not 0 <= int(key) < self.n_populations:
                raise KeyError(f"population index {int(key)} out of range")
            return int(key)
        if isinstance(key, str):
            parts = key.split(LABEL_SEPARATOR)
            if len(parts) != self.n_dimensions:
                raise KeyError(f"population label {key!r} does not match schema dimensions")
            key = tuple(parts)
        key = tuple(key)
        if len(key) != self.n_dimensions:
            raise KeyError(f"population key {key!r} does not match schema dimensions")
        idx = []
        for part, labels, name in zip(key, self.levels, self.dimensions):
            if isinstance(part, (int, np.integer)):
                if not 0 <= int(part) < len(labels):
                    raise KeyError(f"level index {part} out of range for dimension {name!r}")
                idx.append(int(part))
            else:
                try:
                    idx.append(labels.index(str(part)))
                except ValueError:
                    raise KeyError(f"unknown level {part!r} for dimension {name!r}") from None
        return int(np.ravel_multi_index(idx, self.sizes))

    def level_indices(self, flat: int) -> tuple[int, ...]:
        """Per-dimension level indices of a flat population index (row-major)."""
        if not 0 <= flat < self.n_populations:
            raise KeyError(f"population index {flat} out of range")
        return tuple(int(i) for i in np.unravel_index(flat, self.sizes))

    def label(self, flat: int) -> str:
        parts = [self.levels[d][i] for d, i in enumerate(self.level_indices(flat))]
        return LABEL_SEPARATOR.join(parts)

    @property
    def population_labels(self) -> list[str]:
        return [self.label(l) for l in range(self.n_populations)]

    def to_dict(self) -> dict:
        return {
            "dimensions": list(self.dimensions),
            "levels": [list(lv) for lv in self.levels],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FactorSchema":
        return cls(tuple(d["dimensions"]), tuple(tuple(lv) for lv in d["levels"]))


@dataclass(frozen=True)
class MortalityCell:
    """One observed cell: age midpoint, year, population, counts, log-rate."""

    age: float
    year: float
    population: int
    deaths: float
    exposure: float
    log_rate: float


def parse_age(value) -> float:
    """Age midpoint from a numeric value or a group string like ``"50-54"``."""
    if isinstance(value, (int, float, np.integer, np.floating)):
        return float(value)
    text = str(value).strip()
    try:
        return float(text)
    except ValueError:
        pass
    for sep in ("-", "--"):
        if sep in text:
            lo, _, hi = text.partition(sep)
            try:
                return (float(lo) + float(hi.lstrip("-"))) / 2.0
            except ValueError:
                break
    raise DataError(f"cannot parse age value {value!r}")


class StackedDataset:
    """Validated, canonically ordered stack of mortality cells.

    Construction sorts cells by (population flat index, year, age); that
    order is the canonical vectorization shared with the GP core.  Instances
    are immutable: arrays are set read-only, and all transformation methods
    return new datasets.
    """

    def __init__(self, schema: FactorSchema, age, year, population, deaths, exposure):
        self.schema = schema
        age = np.asarray(age, dtype=float)
        year = np.asarray(year, dtype=float)
        population = np.asarray(population, dtype=int)
        deaths = np.asarray(deaths, dtype=float)
        exposure = np.asarray(exposure, dtype=float)
        n = age.shape[0]
        for name, arr in (("year", year), ("population", population),
                          ("deaths", deaths), ("exposure", exposure)):
            if arr.shape != (n,):
                raise DataError(f"column {name!r} has length {arr.shape}, expected {n}")
        if n == 0:
            raise DataError("dataset has no cells")
        if population.min(initial=0) < 0 or population.max(initial=0) >= schema.n_populations:
            raise DataError("population index out of schema range")
        if np.any(exposure <= 0):
            bad = int(np.argmax(exposure <= 0))
            raise DataError(f"exposure must be positive (cell {bad})")
        if np.any(deaths < 0):
            bad = int(np.argmax(deaths < 0))
            raise DataError(f"deaths must be nonnegative (cell {bad})")
        if np.any(deaths == 0):
            bad = int(np.argmax(deaths == 0))
            raise DataError(
                f"zero death count reached dataset construction (cell {bad}); "
                "apply a zero-count policy first"
            )

        order = np.lexsort((age, year, population))
        self.age = age[order]
        self.year = year[order]
        self.population = population[order]
        self.deaths = deaths[order]
        self.exposure = exposure[order]
        self.log_rate = np.log(self.deaths / self.exposure)
        if not np.all(np.isfinite(self.log_rate)):
            raise DataError("non-finite log-rate after validation")

        keys = np.stack([self.population.astype(float), self.year, self.age], axis=1)
        dup = np.all(keys[1:] == keys[:-1], axis=1)
        if np.any(dup):
            i = int(np.argmax(dup)) + 1
            raise DataError(
                "duplicate cell (population="
                f"{schema.label(int(self.population[i]))!r}, year={self.year[i]:g}, "
                f"age={self.age[i]:g})"
            )
        for arr in (self.age, self.year, self.population, self.deaths,
                    self.exposure, self.log_rate):
            arr.setflags(write=False)

    # -- basic views ---------------------------------------------------

    @property
    def n_cells(self) -> int:
        return int(self.age.shape[0])

    @property
    def n_populations(self) -> int:
        return self.schema.n_populations

    @property
    def per_population_counts(self) -> np.ndarray:
        return np.bincount(self.population, minlength=self.n_populations)

    @property
    def y(self) -> np.ndarray:
        """Observed log-mortality rates in canonical order."""
        return self.log_rate

    def design_matrix(self) -> np.ndarray:
        """(N, 3) array of (age, year, population flat index), canonical order."""
        return np.column_stack([self.age, self.year, self.population.astype(float)])

    def cells(self) -> list[MortalityCell]:
        return [
            MortalityCell(float(a), float(yr), int(p), float(d), float(e), float(lr))
            for a, yr, p, d, e, lr in zip(
                self.age, self.year, self.population, self.deaths, self.exposure, self.log_rate
            )
        ]

    @property
    def age_range(self) -> tuple[float, float]:
        return float(self.age.min()), float(self.age.max())

    @property
    def year_range(self) -> tuple[float, float]:
        return float(self.year.min()), float(self.year.max())

    def population_mask(self, flat: int) -> np.ndarray:
        return self.population == flat

    def equals(self, other: "StackedDataset") -> bool:
        return (
            self.schema == other.schema
            and np.array_equal(self.age, other.age)
            and np.array_equal(self.year, other.year)
            and np.array_equal(self.population, other.population)
            and np.array_equal(self.deaths, other.deaths)
            and np.array_equal(self.exposure, other.exposure)
        )

    # -- transformations -----------------------------------------------

    def subset(self, age_range=None, year_range=None, populations=None) -> "StackedDataset":
        """Filtered copy; ranges are inclusive, populations by label/index.

        Filtering populations projects the schema onto the retained levels.
        If the retained set of populations is not the full product of the
        retained per-dimension levels, the schema collapses to a single
        ``population`` dimension over the retained combined labels.
        """
        keep = np.ones(self.n_cells, dtype=bool)
        if age_range is not None:
            lo, hi = age_range
            keep &= (self.age >= lo) & (self.age <= hi)
            if not keep.any():
                raise DataError(f"no cells with age in [{lo:g}, {hi:g}]")
        if year_range is not None:
            lo, hi = year_range
            keep &= (self.year >= lo) & (self.year <= hi)
            if not keep.any():
                raise DataError(f"no cells left after year filter [{lo:g}, {hi:g}]")
        if populations is None:
            if not keep.any():
                raise DataError("subset is empty")
            return StackedDataset(
                self.schema, self.age[keep], self.year[keep], self.population[keep],
                self.deaths[keep], self.exposure[keep],
            )

        flats = sorted({self.schema.flat_index(p) for p in populations})
        if not flats:
            raise DataError("empty population filter")
        keep &= np.isin(self.population, flats)
        if not keep.any():
            raise DataError("no cells left after population filter")

        schema, remap = self._project_schema(flats)
        new_pop = np.array([remap[int(p)] for p in self.population[keep]], dtype=int)
        return StackedDataset(
            schema, self.age[keep], self.year[keep], new_pop,
            self.deaths[keep], self.exposure[keep],
        )

    def _project_schema(self, flats: list[int]) -> tuple[FactorSchema, dict[int, int]]:
        tuples = [self.schema.level_indices(f) for f in flats]
        kept_levels = [sorted({t[d] for t in tuples}) for d in range(self.schema.n_dimensions)]
        if int(np.prod([len(k) for k in kept_levels])) == len(flats):
            # retained set is a full product: keep the factor structure
            schema = FactorSchema(
                self.schema.dimensions,
                tuple(
                    tuple(self.schema.levels[d][i] for i in kept_levels[d])
                    for d in range(self.schema.n_dimensions)
                ),
            )
            remap = {
                f: schema.flat_index(tuple(kept_levels[d].index(t[d]) for d in range(len(t))))
                for f, t in zip(flats, tuples)
            }
        else:
            schema = FactorSchema.single([self.schema.label(f) for f in flats])
            remap = {f: i for i, f in enumerate(flats)}
        return schema, remap


def parse_csv(path, dimensions, levels=None, zero_deaths="drop") -> StackedDataset:
    """Read a stacked mortality table from CSV.

    The file must contain one column per factor dimension, an ``age`` or
    ``age_group`` column, and ``year``, ``deaths``, ``exposure`` columns.
    Age groups like ``"50-54"`` are encoded by their midpoint (52).

    Parameters
    ----------
    path : str or Path
        CSV file, UTF-8, comma separated, header row.
    dimensions : sequence of str or FactorSchema
        Factor column names; or a full schema fixing the level order.
    levels : dict, optional
        Explicit ordered level labels per dimension name.  Dimensions not
        listed get their levels from the data in sorted order.
    zero_deaths : {"drop", "adjust"}
        Rows with zero deaths are dropped with a warning (default), or kept
        with the death count replaced by 0.5 so the log-rate is finite.
    """
    if zero_deaths not in ZERO_DEATH_POLICIES:
        raise SchemaError(f"unknown zero_deaths policy {zero_deaths!r}")

    if isinstance(dimensions, FactorSchema):
        fixed_schema = dimensions
        dim_names = list(fixed_schema.dimensions)
    else:
        fixed_schema = None
        dim_names = list(dimensions)
        if not dim_names:
            raise SchemaError("at least one factor column is required")

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaError(f"{path}: empty file")
        header = [h.strip() for h in reader.fieldnames]
        age_col = "age" if "age" in header else ("age_group" if "age_group" in header else None)
        missing = [c for c in dim_names + ["year", "deaths", "exposure"] if c not in header]
        if age_col is None:
            missing.append("age|age_group")
        if missing:
            raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")
        raw = list(reader)

    if not raw:
        raise DataError(f"{path}: no data rows")

    if fixed_schema is None:
        level_map = dict(levels or {})
        schema_levels = []
        for name in dim_names:
            if name in level_map:
                schema_levels.append(tuple(str(v) for v in level_map[name]))
            else:
                schema_levels.append(tuple(sorted({str(row[name]).strip() for row in raw})))
        schema = FactorSchema(tuple(dim_names), tuple(schema_levels))
    else:
        schema = fixed_schema

    ages, years, pops, deaths, exposures = [], [], [], [], []
    n_dropped = 0
    for i, row in enumerate(raw, start=2):  # 1-based with header line
        try:
            key = tuple(str(row[name]).strip() for name in dim_names)
            flat = schema.flat_index(key)
        except KeyError as exc:
            raise DataError(f"{path}: row {i}: {exc.args[0]}") from None
        try:
            age = parse_age(row[age_col])
            year = float(row["year"])
            d = float(row["deaths"])
            e = float(row["exposure"])
        except (DataError, ValueError, TypeError):
            raise DataError(f"{path}: row {i}: unparseable numeric field") from None
        if not (math.isfinite(age) and math.isfinite(year) and math.isfinite(d) and math.isfinite(e)):
            raise DataError(f"{path}: row {i}: non-finite numeric field")
        if e <= 0:
            raise DataError(f"{path}: row {i}: exposure must be positive, got {e:g}")
        if d < 0:
            raise DataError(f"{path}: row {i}: deaths must be nonnegative, got {d:g}")
        if d == 0:
            if zero_deaths == "drop":
                n_dropped += 1
                continue
            d = 0.5
        ages.append(age)
        years.append(year)
        pops.append(flat)
        deaths.append(d)
        exposures.append(e)

    if n_dropped:
        warnings.warn(
            f"{path}: dropped {n_dropped} cell(s) with zero deaths", stacklevel=2
        )
    if not ages:
        raise DataError(f"{path}: no usable rows after zero-death policy")
    return StackedDataset(schema, ages, years, pops, deaths, exposures)


def write_csv(dataset: StackedDataset, path) -> None:
    """Write a dataset back to CSV with full float precision."""
    schema = dataset.schema
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(schema.dimensions) + ["age", "year", "deaths", "exposure"])
        for a, yr, p, d, e in zip(
            dataset.age, dataset.year, dataset.population, dataset.deaths, dataset.exposure
        ):
            parts = [schema.levels[dd][ii] for dd, ii in enumerate(schema.level_indices(int(p)))]
            writer.writerow(parts + [repr(float(a)), repr(float(yr)), repr(float(d)), repr(float(e))])
