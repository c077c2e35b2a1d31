"""Mortality table ingestion and panel assembly.

Raw tables come either from HMD 1x1 fixed-width files (read only) or from the
canonical CSV interchange format with columns
``population,year,age,deaths,exposure`` (alternatively ``log_mx`` or ``mx``).

A :class:`MortalityPanel` is the long-format training set consumed by the GP
code.  Rows are always stored population-major, then year, then age; the
Kronecker fast path relies on that ordering.
"""
from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import AssemblyError, DomainError, ParseError

logger = logging.getLogger(__name__)

MISSING_TOKENS = frozenset({".", ""})
QUANTITIES = ("mx", "deaths", "exposure")


@dataclass(frozen=True)
class RawRow:
    year: int
    age: int
    deaths: float | None = None
    exposure: float | None = None
    mx: float | None = None
    log_mx: float | None = None
    open_age: bool = False

    def log_mortality(self) -> float | None:
        """Observed log-mortality for this row, or None when the cell is masked.

        Raises DomainError for zero deaths / zero rate (the cell is unusable).
        """
        if self.log_mx is not None:
            return self.log_mx
        if self.deaths is not None and self.exposure is not None:
            return compute_log_mortality(self.deaths, self.exposure)
        if self.mx is not None:
            if self.mx <= 0.0:
                raise DomainError(f"zero mortality rate at year={self.year} age={self.age}")
            return math.log(self.mx)
        return None


@dataclass(frozen=True)
class RawTable:
    population: str
    rows: tuple[RawRow, ...]

    def __post_init__(self):
        seen = set()
        for r in self.rows:
            key = (r.year, r.age)
            if key in seen:
                raise ParseError(f"{self.population}: duplicate row for year={r.year} age={r.age}")
            seen.add(key)
        years = sorted({r.year for r in self.rows})
        if years and years[-1] - years[0] + 1 != len(years):
            raise ParseError(f"{self.population}: years are not contiguous ({years[0]}-{years[-1]})")

    def lookup(self) -> dict[tuple[int, int], RawRow]:
        return {(r.year, r.age): r for r in self.rows}

    @property
    def years(self) -> tuple[int, int]:
        ys = [r.year for r in self.rows]
        return min(ys), max(ys)


def compute_log_mortality(deaths: float, exposure: float) -> float:
    """Return ``log(deaths / exposure)``.

    Zero exposure and zero deaths both raise :class:`DomainError`; callers
    assembling panels treat the latter as a rejected cell.
    """
    if exposure is None or not exposure > 0.0:
        raise DomainError(f"exposure must be positive, got {exposure!r}")
    if deaths < 0.0:
        raise DomainError(f"deaths must be nonnegative, got {deaths!r}")
    if deaths == 0.0:
        raise DomainError("zero deaths: log-mortality undefined")
    return math.log(deaths / exposure)


# ---------------------------------------------------------------------------
# HMD 1x1 reader


def _parse_age(token: str, lineno: int) -> tuple[int, bool]:
    open_age = token.endswith("+")
    try:
        return int(token.rstrip("+")), open_age
    except ValueError:
        raise ParseError(f"line {lineno}: non-numeric age {token!r}") from None


def _parse_value(token: str, lineno: int) -> float | None:
    if token in MISSING_TOKENS:
        return None
    try:
        return float(token)
    except ValueError:
        raise ParseError(f"line {lineno}: non-numeric value {token!r}") from None


def parse_hmd_table(text: str | io.TextIOBase, population: str, column: str | None = None,
                    quantity: str | None = None) -> RawTable:
    """Parse an HMD 1x1 period file (Mx_1x1, Deaths_1x1 or Exposures_1x1).

    Parameters
    ----------
    text : str or text stream
        File contents. Line 1 is a free-text preamble, line 2 is blank and
        line 3 the column header starting with ``Year Age``.
    population : str
        Identifier attached to the returned table.
    column : str, optional
        Value column to extract (``Female``, ``Male`` or ``Total``). May be
        omitted when the header has a single value column.
    quantity : {"mx", "deaths", "exposure"}, optional
        What the values represent.  Inferred from a ``Deaths``/``Exposure``/
        ``Mx`` header column name, otherwise defaults to ``"mx"``.
    """
    if not isinstance(text, str):
        text = text.read()
    lines = text.splitlines()
    if len(lines) < 3:
        raise ParseError("line 3: missing header (file shorter than 3 lines)")
    if lines[1].strip():
        raise ParseError(f"line 2: expected blank line, got {lines[1].strip()!r}")
    header = lines[2].split()
    if len(header) < 3 or [h.lower() for h in header[:2]] != ["year", "age"]:
        raise ParseError(f"line 3: malformed header {lines[2].strip()!r}")
    value_cols = header[2:]
    if column is None:
        if len(value_cols) != 1:
            raise ParseError(f"line 3: several value columns {value_cols}; choose one")
        column = value_cols[0]
    lowered = [c.lower() for c in value_cols]
    if column.lower() not in lowered:
        raise ParseError(f"line 3: column {column!r} not in header {value_cols}")
    col_idx = 2 + lowered.index(column.lower())
    if quantity is None:
        quantity = {"deaths": "deaths", "exposure": "exposure", "exposures": "exposure"}.get(
            column.lower(), "mx")
    if quantity not in QUANTITIES:
        raise ValueError(f"quantity must be one of {QUANTITIES}")

    rows = []
    for lineno, line in enumerate(lines[3:], start=4):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) != len(header):
            raise ParseError(f"line {lineno}: expected {len(header)} fields, got {len(tokens)}")
        try:
            year = int(tokens[0])
        except ValueError:
            raise ParseError(f"line {lineno}: non-numeric year {tokens[0]!r}") from None
        age, open_age = _parse_age(tokens[1], lineno)
        value = _parse_value(tokens[col_idx], lineno)
        rows.append(RawRow(year=year, age=age, open_age=open_age, **{quantity: value}))
    return RawTable(population, tuple(rows))


def merge_tables(*tables: RawTable) -> RawTable:
    """Combine tables of the same population (e.g. deaths + exposures) cell by cell."""
    if not tables:
        raise ValueError("nothing to merge")
    pop = tables[0].population
    merged: dict[tuple[int, int], dict] = {}
    for t in tables:
        if t.population != pop:
            raise AssemblyError(f"cannot merge populations {pop!r} and {t.population!r}")
        for r in t.rows:
            d = merged.setdefault((r.year, r.age), {"year": r.year, "age": r.age,
                                                    "open_age": r.open_age})
            for name in ("deaths", "exposure", "mx", "log_mx"):
                v = getattr(r, name)
                if v is not None:
                    d[name] = v
    rows = tuple(RawRow(**d) for _, d in sorted(merged.items()))
    return RawTable(pop, rows)


# ---------------------------------------------------------------------------
# CSV interchange


def read_csv_tables(source: str | Path | io.TextIOBase) -> dict[str, RawTable]:
    """Read the canonical CSV format into one RawTable per population."""
    if isinstance(source, (str, Path)):
        with open(source, newline="", encoding="utf-8") as fh:
            return read_csv_tables(fh)
    reader = csv.DictReader(line for line in source if not line.startswith("#"))
    required = {"population", "year", "age"}
    if reader.fieldnames is None or not required <= set(reader.fieldnames):
        raise ParseError(f"line 1: CSV header must contain {sorted(required)}")
    value_names = [n for n in ("deaths", "exposure", "mx", "log_mx") if n in reader.fieldnames]
    if not value_names:
        raise ParseError("line 1: CSV needs deaths+exposure, log_mx or mx columns")
    by_pop: dict[str, list[RawRow]] = {}
    for i, rec in enumerate(reader, start=2):
        try:
            year = int(rec["year"])
        except (TypeError, ValueError):
            raise ParseError(f"line {i}: non-numeric year {rec['year']!r}") from None
        age, open_age = _parse_age(rec["age"].strip(), i)
        values = {n: _parse_value((rec[n] or "").strip(), i) for n in value_names}
        by_pop.setdefault(rec["population"], []).append(
            RawRow(year=year, age=age, open_age=open_age, **values))
    return {pop: RawTable(pop, tuple(rows)) for pop, rows in by_pop.items()}


# ---------------------------------------------------------------------------
# Panels


@dataclass(frozen=True)
class Scaling:
    mu_ag: float
    sigma_ag: float
    mu_yr: float
    sigma_yr: float

    def __post_init__(self):
        if not (self.sigma_ag > 0 and self.sigma_yr > 0):
            raise DomainError("standardization needs non-constant age and year covariates")

    def standardize(self, age, year):
        age = np.asarray(age, dtype=float)
        year = np.asarray(year, dtype=float)
        return (age - self.mu_ag) / self.sigma_ag, (year - self.mu_yr) / self.sigma_yr

    def destandardize(self, age_std, year_std):
        age_std = np.asarray(age_std, dtype=float)
        year_std = np.asarray(year_std, dtype=float)
        return age_std * self.sigma_ag + self.mu_ag, year_std * self.sigma_yr + self.mu_yr

    def to_dict(self) -> dict:
        return {"mu_ag": self.mu_ag, "sigma_ag": self.sigma_ag,
                "mu_yr": self.mu_yr, "sigma_yr": self.sigma_yr}

    @classmethod
    def identity(cls) -> "Scaling":
        return cls(0.0, 1.0, 0.0, 1.0)


def _frozen(a, dtype) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class MortalityPanel:
    """Long-format multi-population panel.

    ``pop`` holds 0-based population indices into ``populations``; rows are
    sorted by (pop, year, age).
    """
    populations: tuple[str, ...]
    pop: np.ndarray
    age: np.ndarray
    year: np.ndarray
    y: np.ndarray
    rejected: tuple[tuple[str, int, int], ...] = field(default=())

    def __post_init__(self):
        n = len(self.y)
        if not (len(self.pop) == len(self.age) == len(self.year) == n):
            raise AssemblyError("panel columns differ in length")
        if len(self.populations) < 1:
            raise AssemblyError("panel needs at least one population")
        if len(set(self.populations)) != len(self.populations):
            raise AssemblyError("duplicate population identifiers")
        pop = np.asarray(self.pop, dtype=np.intp)
        if n and (pop.min() < 0 or pop.max() >= len(self.populations)):
            raise AssemblyError("population index out of range")
        if not np.all(np.isfinite(self.y)):
            raise AssemblyError("non-finite log-mortality in panel")
        order = np.lexsort((self.age, self.year, pop))
        object.__setattr__(self, "pop", _frozen(pop[order], np.intp))
        object.__setattr__(self, "age", _frozen(np.asarray(self.age, float)[order], float))
        object.__setattr__(self, "year", _frozen(np.asarray(self.year, float)[order], float))
        object.__setattr__(self, "y", _frozen(np.asarray(self.y, float)[order], float))
        object.__setattr__(self, "populations", tuple(self.populations))

    @property
    def L(self) -> int:
        return len(self.populations)

    @property
    def M(self) -> int:
        return len(self.y)

    def counts(self) -> list[int]:
        return np.bincount(self.pop, minlength=self.L).tolist()

    @property
    def ages(self) -> np.ndarray:
        return np.unique(self.age)

    @property
    def years(self) -> np.ndarray:
        return np.unique(self.year)

    @property
    def age_range(self) -> tuple[float, float]:
        return float(self.age.min()), float(self.age.max())

    def year_ranges(self) -> dict[str, tuple[float, float]]:
        out = {}
        for l, name in enumerate(self.populations):
            yr = self.year[self.pop == l]
            out[name] = (float(yr.min()), float(yr.max())) if len(yr) else (math.nan, math.nan)
        return out

    @property
    def isotropic(self) -> bool:
        """True iff every population covers the same full rectangular Age x Year grid."""
        ages, years = self.ages, self.years
        n = len(ages) * len(years)
        if self.M != self.L * n:
            return False
        if not np.all(np.asarray(self.counts()) == n):
            return False
        grid_age = np.tile(ages, len(years))
        grid_year = np.repeat(years, len(ages))
        block_age = self.age.reshape(self.L, n)
        block_year = self.year.reshape(self.L, n)
        return bool(np.all(block_age == grid_age) and np.all(block_year == grid_year))

    def subset(self, mask) -> "MortalityPanel":
        mask = np.asarray(mask, dtype=bool)
        return MortalityPanel(self.populations, self.pop[mask], self.age[mask],
                              self.year[mask], self.y[mask], self.rejected)

    def with_coords(self, age, year) -> "MortalityPanel":
        return MortalityPanel(self.populations, self.pop, age, year, self.y, self.rejected)

    def population_index(self, name: str) -> int:
        try:
            return self.populations.index(name)
        except ValueError:
            raise AssemblyError(f"unknown population {name!r}; have {list(self.populations)}") from None

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update("\x1f".join(self.populations).encode())
        for a in (self.pop.astype(np.int64), self.age, self.year, self.y):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()[:16]

    def summary(self) -> dict:
        return {"L": self.L, "M": self.M, "isotropic": self.isotropic,
                "populations": list(self.populations), "counts": self.counts(),
                "age_range": list(self.age_range),
                "year_ranges": {k: list(v) for k, v in self.year_ranges().items()},
                "rejected_cells": len(self.rejected)}

    def write_csv(self, dest: str | Path | io.TextIOBase) -> None:
        """Write ``population,year,age,log_mx`` rows (canonical panel file)."""
        if isinstance(dest, (str, Path)):
            with open(dest, "w", newline="", encoding="utf-8") as fh:
                return self.write_csv(fh)
        w = csv.writer(dest, lineterminator="\n")
        w.writerow(["population", "year", "age", "log_mx"])
        for l, yr, ag, y in zip(self.pop, self.year, self.age, self.y):
            w.writerow([self.populations[l], _fmt_num(yr), _fmt_num(ag), repr(float(y))])

    @classmethod
    def read_csv(cls, source, populations: Sequence[str] | None = None) -> "MortalityPanel":
        tables = read_csv_tables(source)
        order = list(populations) if populations is not None else list(tables)
        return panel_from_tables([tables[p] for p in order])


def _fmt_num(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def panel_from_tables(tables: Sequence[RawTable]) -> MortalityPanel:
    """Build a panel from every usable cell of the given tables (no range filter)."""
    pops, pop, age, year, y, rejected = [], [], [], [], [], []
    for l, t in enumerate(tables):
        pops.append(t.population)
        for r in t.rows:
            try:
                v = r.log_mortality()
            except DomainError:
                rejected.append((t.population, r.year, r.age))
                continue
            if v is None:
                continue
            pop.append(l); age.append(r.age); year.append(r.year); y.append(v)
    return MortalityPanel(tuple(pops), pop, age, year, y, tuple(rejected))


def assemble_panel(tables: Sequence[RawTable], age_range: tuple[int, int],
                   year_spec: tuple[int, int] | Mapping[str, tuple[int, int]]) -> MortalityPanel:
    """Assemble the training panel for the requested ages and per-population years.

    ``year_spec`` is either one ``(first, last)`` pair for all populations or
    a mapping population -> ``(first, last)``; differing ranges give a notched
    panel.  Masked or absent cells inside the requested ranges are an error;
    zero-death cells are dropped and recorded in ``panel.rejected``.
    """
    a0, a1 = age_range
    if a1 < a0:
        raise AssemblyError(f"empty age range {age_range}")
    pops, pop, age, year, y, rejected, missing = [], [], [], [], [], [], []
    for l, t in enumerate(tables):
        pops.append(t.population)
        if isinstance(year_spec, Mapping):
            if t.population not in year_spec:
                raise AssemblyError(f"no year range given for population {t.population!r}")
            y0, y1 = year_spec[t.population]
        else:
            y0, y1 = year_spec
        if y1 < y0:
            raise AssemblyError(f"empty year range for {t.population!r}")
        cells = t.lookup()
        for yr in range(y0, y1 + 1):
            for ag in range(a0, a1 + 1):
                row = cells.get((yr, ag))
                if row is None:
                    missing.append((t.population, yr, ag))
                    continue
                try:
                    v = row.log_mortality()
                except DomainError:
                    rejected.append((t.population, yr, ag))
                    continue
                if v is None:
                    missing.append((t.population, yr, ag))
                    continue
                pop.append(l); age.append(ag); year.append(yr); y.append(v)
    if missing:
        shown = ", ".join(f"{p}:{yr}/{ag}" for p, yr, ag in missing[:10])
        more = f" (+{len(missing) - 10} more)" if len(missing) > 10 else ""
        raise AssemblyError(f"{len(missing)} requested cells missing or masked: {shown}{more}")
    if rejected:
        logger.warning("rejected %d zero-death cells", len(rejected))
    return MortalityPanel(tuple(pops), pop, age, year, y, tuple(rejected))


def standardize(panel: MortalityPanel) -> tuple[MortalityPanel, Scaling]:
    """Center and scale Age and Year over the pooled panel."""
    if panel.M == 0:
        raise AssemblyError("cannot standardize an empty panel")
    scaling = Scaling(float(panel.age.mean()), float(panel.age.std()),
                      float(panel.year.mean()), float(panel.year.std()))
    a, t = scaling.standardize(panel.age, panel.year)
    return panel.with_coords(a, t), scaling


def grid_panel(populations: Sequence[str], ages: Iterable[float], years: Iterable[float],
               y: np.ndarray) -> MortalityPanel:
    """Isotropic panel from an ``(L, n_years, n_ages)`` array of log-mortality."""
    ages = np.asarray(list(ages), float)
    years = np.asarray(list(years), float)
    y = np.asarray(y, float).reshape(len(populations), len(years), len(ages))
    L = len(populations)
    pop = np.repeat(np.arange(L), len(years) * len(ages))
    age = np.tile(ages, L * len(years))
    year = np.tile(np.repeat(years, len(ages)), L)
    return MortalityPanel(tuple(populations), pop, age, year, y.ravel())
