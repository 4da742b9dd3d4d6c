"""Loading, quantile binning, and count statistics for scored observations."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "Observation",
    "ColumnSchema",
    "BinSpec",
    "BinStats",
    "OverlapReport",
    "SchemaError",
    "RowValidationError",
    "BinningError",
    "load_dataset",
    "quantile_bin",
    "compute_bin_stats",
    "validate_overlap",
]


class SchemaError(ValueError):
    """The input is missing a required column or is malformed."""


class RowValidationError(ValueError):
    """A row failed validation; carries the offending 0-based row index."""

    def __init__(self, row: int, message: str):
        super().__init__(f"row {row}: {message}")
        self.row = row


class BinningError(ValueError):
    """Requested binning cannot be achieved; carries the achievable count."""

    def __init__(self, message: str, achievable: int):
        super().__init__(message)
        self.achievable = achievable


@dataclass(frozen=True)
class Observation:
    score: float
    label: int
    group: int


@dataclass(frozen=True)
class ColumnSchema:
    score: str = "score"
    label: str = "label"
    group: str = "group"
    delimiter: str = ","


def _group_sort_key(raw_labels: set[str]):
    try:
        return sorted(raw_labels, key=lambda s: (0, float(s), s))
    except ValueError:
        return sorted(raw_labels)


def load_dataset(
    source: str | Path | io.TextIOBase,
    schema: ColumnSchema = ColumnSchema(),
) -> list[Observation]:
    """Parse delimiter-separated text into validated observations.

    Row order is preserved. Group labels may be arbitrary tokens; they are
    remapped to dense ids 1..G (numeric sort when all tokens parse as
    numbers, lexicographic otherwise). Lines starting with ``#`` are
    treated as comments and skipped.
    """
    if isinstance(source, (str, Path)):
        with open(source, newline="") as fh:
            return load_dataset(fh, schema)

    filtered = (line for line in source if not line.startswith("#"))
    reader = csv.DictReader(filtered, delimiter=schema.delimiter)
    if reader.fieldnames is None:
        raise SchemaError("empty input: no header row")
    for col in (schema.score, schema.label, schema.group):
        if col not in reader.fieldnames:
            raise SchemaError(
                f"missing column {col!r}; available: {list(reader.fieldnames)}"
            )

    raw: list[tuple[float, int, str]] = []
    for i, rec in enumerate(reader):
        try:
            score = float(rec[schema.score])
        except (TypeError, ValueError):
            raise RowValidationError(i, f"score {rec.get(schema.score)!r} is not a number")
        if not 0.0 <= score <= 1.0:
            raise RowValidationError(i, f"score {score} outside [0, 1]")
        label_tok = (rec[schema.label] or "").strip()
        if label_tok not in ("0", "1"):
            raise RowValidationError(i, f"label {rec.get(schema.label)!r} is not binary")
        group_tok = (rec[schema.group] or "").strip()
        if not group_tok:
            raise RowValidationError(i, "empty group")
        raw.append((score, int(label_tok), group_tok))

    mapping = {tok: gid for gid, tok in enumerate(_group_sort_key({r[2] for r in raw}), start=1)}
    if len(mapping) < 2:
        raise SchemaError(f"need at least 2 groups, found {len(mapping)}")
    return [Observation(s, y, mapping[tok]) for s, y, tok in raw]


@dataclass(frozen=True)
class BinSpec:
    """Strictly increasing edges over [0, 1] plus bin midpoints.

    Membership rule: half-open [edges[b], edges[b+1]) with the last bin
    closed at 1.
    """

    edges: tuple[float, ...]
    requested_bins: int = 0

    def __post_init__(self):
        e = self.edges
        if len(e) < 3:
            raise ValueError("need at least 2 bins")
        if any(e[i] >= e[i + 1] for i in range(len(e) - 1)):
            raise ValueError("edges must be strictly increasing")
        if e[0] != 0.0 or e[-1] != 1.0:
            raise ValueError("edges must span [0, 1]")

    @property
    def nbins(self) -> int:
        return len(self.edges) - 1

    @property
    def midpoints(self) -> np.ndarray:
        e = np.asarray(self.edges)
        return (e[:-1] + e[1:]) / 2.0

    def assign(self, scores) -> np.ndarray:
        """Map scores to 0-based bin indices."""
        idx = np.searchsorted(self.edges, np.asarray(scores, dtype=float), side="right") - 1
        return np.clip(idx, 0, self.nbins - 1)


def quantile_bin(observations: Sequence[Observation], nbins: int) -> BinSpec:
    """Quantile-discretize scores into ``nbins`` bins over [0, 1].

    Interior edges are the empirical quantiles at k/nbins. Duplicate edges
    collapse; bins left empty by interpolation are merged rightward. The
    achieved bin count is available as ``spec.nbins`` (the requested count
    is kept on the spec); fewer than 2 achievable bins is an error.
    """
    if nbins < 2:
        raise BinningError(f"nbins must be >= 2, got {nbins}", achievable=nbins)
    scores = np.array([o.score for o in observations], dtype=float)
    if scores.size == 0:
        raise BinningError("no observations", achievable=0)
    distinct = np.unique(scores).size
    if distinct < nbins:
        raise BinningError(
            f"only {distinct} distinct score values; achievable bins = {distinct}, "
            f"requested {nbins}",
            achievable=distinct,
        )

    interior = np.quantile(scores, np.arange(1, nbins) / nbins)
    edges = np.concatenate(([0.0], interior, [1.0]))
    # collapse duplicates introduced by heavy ties
    edges = np.unique(edges)
    if len(edges) - 1 < 2:
        raise BinningError(
            f"quantile ties collapse the grid to {len(edges) - 1} bin(s)",
            achievable=len(edges) - 1,
        )

    # merge any bin the data never touches into its right neighbor
    while True:
        spec = BinSpec(tuple(edges), requested_bins=nbins)
        counts = np.bincount(spec.assign(scores), minlength=spec.nbins)
        empty = np.flatnonzero(counts == 0)
        if empty.size == 0:
            return spec
        if len(edges) - 2 < 2:
            raise BinningError(
                "cannot form 2 nonempty bins from these scores", achievable=1
            )
        drop = min(empty[0] + 1, len(edges) - 2)
        edges = np.delete(edges, drop)


@dataclass
class BinStats:
    """Per-group, per-bin totals and positives plus derived aggregates.

    Counts are float arrays so the same container carries both raw integer
    tallies and fractional expected-assignment results. Groups are dense
    ids 1..G; arrays are indexed [group-1, bin].
    """

    n: np.ndarray
    npos: np.ndarray
    midpoints: np.ndarray
    edges: tuple[float, ...] = field(default=())

    def __post_init__(self):
        self.n = np.asarray(self.n, dtype=float)
        self.npos = np.asarray(self.npos, dtype=float)
        self.midpoints = np.asarray(self.midpoints, dtype=float)
        if self.n.shape != self.npos.shape:
            raise ValueError("n and npos shapes differ")
        if self.n.shape[1] != self.midpoints.size:
            raise ValueError("midpoint count does not match bin count")
        if np.any(self.npos > self.n + 1e-9):
            raise ValueError("npos exceeds n")

    @property
    def ngroups(self) -> int:
        return self.n.shape[0]

    @property
    def nbins(self) -> int:
        return self.n.shape[1]

    @property
    def nneg(self) -> np.ndarray:
        return self.n - self.npos

    @property
    def group_totals(self) -> np.ndarray:
        return self.n.sum(axis=1)

    @property
    def group_pos(self) -> np.ndarray:
        return self.npos.sum(axis=1)

    @property
    def group_neg(self) -> np.ndarray:
        return self.nneg.sum(axis=1)

    @property
    def total(self) -> float:
        return float(self.n.sum())

    def to_json(self) -> str:
        def cell(x: float):
            return int(x) if float(x).is_integer() else float(x)

        doc = {
            "edges": list(self.edges) if self.edges else None,
            "midpoints": [float(m) for m in self.midpoints],
            "groups": [
                {
                    "group": g + 1,
                    "n": [cell(v) for v in self.n[g]],
                    "npos": [cell(v) for v in self.npos[g]],
                }
                for g in range(self.ngroups)
            ],
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "BinStats":
        doc = json.loads(text)
        groups = sorted(doc["groups"], key=lambda d: d["group"])
        n = np.array([d["n"] for d in groups], dtype=float)
        npos = np.array([d["npos"] for d in groups], dtype=float)
        edges = tuple(doc["edges"]) if doc.get("edges") else ()
        return cls(n=n, npos=npos, midpoints=np.array(doc["midpoints"]), edges=edges)


def compute_bin_stats(observations: Iterable[Observation], spec: BinSpec) -> BinStats:
    obs = list(observations)
    ngroups = max(o.group for o in obs) if obs else 0
    n = np.zeros((ngroups, spec.nbins))
    npos = np.zeros((ngroups, spec.nbins))
    if obs:
        scores = np.array([o.score for o in obs])
        bins = spec.assign(scores)
        for o, b in zip(obs, bins):
            n[o.group - 1, b] += 1
            npos[o.group - 1, b] += o.label
    return BinStats(n=n, npos=npos, midpoints=spec.midpoints, edges=spec.edges)


@dataclass(frozen=True)
class OverlapReport:
    passed: bool
    missing: tuple[tuple[int, int], ...]  # (bin, group) pairs, bin-major, 1-based group

    def describe(self) -> str:
        if self.passed:
            return "overlap: pass"
        pairs = ", ".join(f"(bin {b}, group {g})" for b, g in self.missing)
        return f"overlap: fail [{pairs}]"


def validate_overlap(stats: BinStats) -> OverlapReport:
    """Check that every bin holds at least one member of every group."""
    missing = [
        (b, g + 1)
        for b in range(stats.nbins)
        for g in range(stats.ngroups)
        if stats.n[g, b] <= 0
    ]
    return OverlapReport(passed=not missing, missing=tuple(missing))
