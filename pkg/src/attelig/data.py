"""Coarsened data model: schema, observations, eligibility rules, folds, CSV IO.

The unit of analysis is one subject's coarsened record (lstar, a, y, r,
r * lelig): baseline covariates split into an always-observed block and an
eligibility-defining block that is either fully observed (r = 1) or fully
missing (r = 0). Eligibility itself is never stored; it is derived on demand
by applying a declared rule to the eligibility-defining covariates.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence, Union

import numpy as np

RESERVED_COLUMNS = ("id", "a", "y", "r")


class AtteligError(Exception):
    """Base class for package errors."""


class SchemaMismatch(AtteligError):
    """CSV header does not match the declared schema."""


class InconsistentMissingness(AtteligError):
    """Complete-case flag disagrees with the population of covariate cells."""


class ParseError(AtteligError):
    """A cell could not be parsed under the declared covariate kind."""


class RuleReferencesMissingCovariate(AtteligError):
    """An eligibility rule names a covariate absent from the schema."""


class InvalidFoldCount(AtteligError):
    """Fold count outside [2, n]."""


class Partition(str, Enum):
    L_STAR = "lstar"
    L_ELIG_MISSING = "elig_missing"


@dataclass(frozen=True)
class Covariate:
    """One declared covariate: numeric, or categorical with a fixed level set."""

    name: str
    kind: str  # "numeric" | "categorical"
    partition: Partition
    levels: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in ("numeric", "categorical"):
            raise ValueError(f"unknown covariate kind {self.kind!r}")
        if self.kind == "categorical":
            if len(self.levels) < 2:
                raise ValueError(f"categorical {self.name!r} needs >= 2 levels")
            if len(set(self.levels)) != len(self.levels):
                raise ValueError(f"categorical {self.name!r} has duplicate levels")
        elif self.levels:
            raise ValueError(f"numeric {self.name!r} must not declare levels")


@dataclass(frozen=True)
class CovariateSchema:
    """Ordered covariate declarations with the lstar / elig-missing partition."""

    covariates: tuple[Covariate, ...]

    def __post_init__(self):
        names = [c.name for c in self.covariates]
        if len(set(names)) != len(names):
            raise ValueError("covariate names must be unique")
        for reserved in RESERVED_COLUMNS:
            if reserved in names:
                raise ValueError(f"covariate name {reserved!r} is reserved")

    @property
    def lstar(self) -> tuple[Covariate, ...]:
        return tuple(c for c in self.covariates if c.partition == Partition.L_STAR)

    @property
    def elig_missing(self) -> tuple[Covariate, ...]:
        return tuple(
            c for c in self.covariates if c.partition == Partition.L_ELIG_MISSING
        )

    def covariate(self, name: str) -> Covariate:
        for c in self.covariates:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.covariates)


Value = Union[float, str]


@dataclass(frozen=True)
class CoarsenedObservation:
    """One subject: (lstar, a, y, r, r * lelig).

    ``lelig`` is present exactly when ``r == 1``; values follow the schema's
    declared order within each block.
    """

    id: str
    lstar: tuple[Value, ...]
    a: int
    y: float
    r: int
    lelig: Optional[tuple[Value, ...]]

    def __post_init__(self):
        if self.a not in (0, 1):
            raise ValueError(f"treatment must be 0/1, got {self.a!r}")
        if self.r not in (0, 1):
            raise ValueError(f"complete-case flag must be 0/1, got {self.r!r}")
        if (self.r == 0) != (self.lelig is None):
            raise InconsistentMissingness(
                f"record {self.id!r}: r={self.r} but eligibility covariates "
                f"{'present' if self.lelig is not None else 'absent'}"
            )


@dataclass(frozen=True)
class CoarsenedDataset:
    """Immutable collection of coarsened observations conforming to one schema."""

    schema: CovariateSchema
    records: tuple[CoarsenedObservation, ...]

    def __post_init__(self):
        if len(self.records) < 1:
            raise ValueError("dataset needs at least one record")
        n_star = len(self.schema.lstar)
        n_elig = len(self.schema.elig_missing)
        for rec in self.records:
            if len(rec.lstar) != n_star:
                raise SchemaMismatch(
                    f"record {rec.id!r}: {len(rec.lstar)} lstar values, "
                    f"schema declares {n_star}"
                )
            if rec.lelig is not None and len(rec.lelig) != n_elig:
                raise SchemaMismatch(
                    f"record {rec.id!r}: {len(rec.lelig)} eligibility values, "
                    f"schema declares {n_elig}"
                )

    @property
    def n(self) -> int:
        return len(self.records)

    def value(self, rec: CoarsenedObservation, name: str) -> Value:
        """Look up a covariate value on one record (raises if masked)."""
        for i, c in enumerate(self.schema.lstar):
            if c.name == name:
                return rec.lstar[i]
        for i, c in enumerate(self.schema.elig_missing):
            if c.name == name:
                if rec.lelig is None:
                    raise InconsistentMissingness(
                        f"record {rec.id!r}: {name!r} requested but masked (r=0)"
                    )
                return rec.lelig[i]
        if name == "a":
            return rec.a
        raise KeyError(name)

    def column(self, name: str) -> np.ndarray:
        """Array of one reserved column over all records ('a', 'y', or 'r')."""
        if name == "a":
            return np.array([rec.a for rec in self.records], dtype=float)
        if name == "y":
            return np.array([rec.y for rec in self.records], dtype=float)
        if name == "r":
            return np.array([rec.r for rec in self.records], dtype=float)
        raise KeyError(name)

    def subset(self, indices: Sequence[int]) -> "CoarsenedDataset":
        recs = tuple(self.records[i] for i in indices)
        return CoarsenedDataset(self.schema, recs)


# ---------------------------------------------------------------------------
# Eligibility rules
# ---------------------------------------------------------------------------

_COMPARATORS = {
    ">=": lambda v, c: v >= c,
    ">": lambda v, c: v > c,
    "<=": lambda v, c: v <= c,
    "<": lambda v, c: v < c,
    "==": lambda v, c: v == c,
}


@dataclass(frozen=True)
class ThresholdRule:
    """E-component of the form  value(covariate) <comparator> cutoff."""

    covariate: str
    comparator: str
    cutoff: float

    def __post_init__(self):
        if self.comparator not in _COMPARATORS:
            raise ValueError(f"unknown comparator {self.comparator!r}")

    def referenced(self) -> tuple[str, ...]:
        return (self.covariate,)

    def check(self, lookup) -> bool:
        return _COMPARATORS[self.comparator](lookup(self.covariate), self.cutoff)


@dataclass(frozen=True)
class ConjunctionRule:
    """All sub-rules must hold."""

    rules: tuple[ThresholdRule, ...]

    def referenced(self) -> tuple[str, ...]:
        out: list[str] = []
        for r in self.rules:
            out.extend(r.referenced())
        return tuple(out)

    def check(self, lookup) -> bool:
        return all(r.check(lookup) for r in self.rules)


EligibilityRule = Union[ThresholdRule, ConjunctionRule]


def validate_rule(rule: EligibilityRule, schema: CovariateSchema) -> None:
    known = set(schema.names) | {"a"}
    for name in rule.referenced():
        if name not in known:
            raise RuleReferencesMissingCovariate(
                f"rule references {name!r}, not in schema"
            )


def evaluate_eligibility(
    rule: EligibilityRule, dataset: CoarsenedDataset, rec: CoarsenedObservation
) -> Optional[int]:
    """Apply the eligibility rule to one record.

    Returns 1/0 when the record is a complete case, None (unknown) when the
    eligibility-defining covariates are masked (r = 0).
    """
    validate_rule(rule, dataset.schema)
    if rec.r == 0:
        return None
    return int(rule.check(lambda name: dataset.value(rec, name)))


def eligibility_column(
    rule: EligibilityRule, dataset: CoarsenedDataset
) -> np.ndarray:
    """Vector of derived eligibility over a dataset: 1/0, -1 where unknown."""
    validate_rule(rule, dataset.schema)
    out = np.empty(dataset.n, dtype=int)
    for i, rec in enumerate(dataset.records):
        if rec.r == 0:
            out[i] = -1
        else:
            out[i] = int(rule.check(lambda name: dataset.value(rec, name)))
    return out


# ---------------------------------------------------------------------------
# Fold assignment
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FoldAssignment:
    """Partition of record indices into k folds with sizes differing by <= 1."""

    k: int
    assignment: tuple[int, ...]

    def indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(np.asarray(self.assignment) == fold)

    def complement(self, fold: int) -> np.ndarray:
        return np.flatnonzero(np.asarray(self.assignment) != fold)


def assign_folds(n: int, k: int, seed: int) -> FoldAssignment:
    """Deterministically split n records into k near-equal folds."""
    if not 2 <= k <= n:
        raise InvalidFoldCount(f"need 2 <= k <= n, got k={k}, n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    assignment = np.empty(n, dtype=int)
    assignment[perm] = np.arange(n) % k
    return FoldAssignment(k=k, assignment=tuple(int(x) for x in assignment))


# ---------------------------------------------------------------------------
# CSV ingestion / emission
# ---------------------------------------------------------------------------


def _parse_value(cell: str, cov: Covariate, where: str) -> Value:
    if cov.kind == "numeric":
        try:
            return float(cell)
        except ValueError:
            raise ParseError(f"{where}: non-numeric value {cell!r} for {cov.name!r}")
    if cell not in cov.levels:
        raise ParseError(
            f"{where}: unknown level {cell!r} for {cov.name!r} "
            f"(declared {list(cov.levels)})"
        )
    return cell


def load_csv(path, schema: CovariateSchema) -> CoarsenedDataset:
    """Read a coarsened dataset; empty eligibility cells mean missing.

    The header must be exactly id,a,y,r followed by the lstar columns then the
    eligibility-defining columns, each in schema order. Rows must have all
    eligibility cells populated when r = 1 and all empty when r = 0.
    """
    expected = list(RESERVED_COLUMNS) + [c.name for c in schema.lstar] + [
        c.name for c in schema.elig_missing
    ]
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaMismatch(f"{path}: empty file")
        if header != expected:
            raise SchemaMismatch(
                f"{path}: header {header} does not match expected {expected}"
            )
        for lineno, row in enumerate(reader, start=2):
            where = f"{path}:{lineno}"
            if len(row) != len(expected):
                raise SchemaMismatch(f"{where}: {len(row)} cells, expected {len(expected)}")
            rid, a_cell, y_cell, r_cell = row[:4]
            if a_cell not in ("0", "1"):
                raise ParseError(f"{where}: treatment must be literal 0/1, got {a_cell!r}")
            if r_cell not in ("0", "1"):
                raise ParseError(f"{where}: complete-case flag must be literal 0/1, got {r_cell!r}")
            try:
                y = float(y_cell)
            except ValueError:
                raise ParseError(f"{where}: non-numeric outcome {y_cell!r}")
            r = int(r_cell)
            n_star = len(schema.lstar)
            star_cells = row[4 : 4 + n_star]
            elig_cells = row[4 + n_star :]
            lstar = []
            for cell, cov in zip(star_cells, schema.lstar):
                if cell == "":
                    raise ParseError(f"{where}: empty cell in always-observed column {cov.name!r}")
                lstar.append(_parse_value(cell, cov, where))
            populated = [cell != "" for cell in elig_cells]
            if r == 1:
                if not all(populated):
                    raise InconsistentMissingness(
                        f"{where}: r=1 but eligibility cells not fully populated"
                    )
                lelig = tuple(
                    _parse_value(cell, cov, where)
                    for cell, cov in zip(elig_cells, schema.elig_missing)
                )
            else:
                if any(populated):
                    raise InconsistentMissingness(
                        f"{where}: r=0 but eligibility cells populated"
                    )
                lelig = None
            records.append(
                CoarsenedObservation(
                    id=rid, lstar=tuple(lstar), a=int(a_cell), y=y, r=r, lelig=lelig
                )
            )
    return CoarsenedDataset(schema=schema, records=tuple(records))


def _format_value(v: Value) -> str:
    if isinstance(v, str):
        return v
    return repr(float(v))


def write_csv(path, dataset: CoarsenedDataset) -> None:
    """Emit a dataset; numeric cells use full-precision repr for exact round-trips."""
    schema = dataset.schema
    header = list(RESERVED_COLUMNS) + [c.name for c in schema.lstar] + [
        c.name for c in schema.elig_missing
    ]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for rec in dataset.records:
            row = [rec.id, str(rec.a), repr(float(rec.y)), str(rec.r)]
            row.extend(_format_value(v) for v in rec.lstar)
            if rec.lelig is None:
                row.extend("" for _ in schema.elig_missing)
            else:
                row.extend(_format_value(v) for v in rec.lelig)
            writer.writerow(row)
