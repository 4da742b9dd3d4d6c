"""Fairness-constrained transition-plan model over binned scores.

Decision variables, per group g and source bin b: the fraction of the
bin's members sent to each destination bin within the move window.
Derived columns per (group, destination): total arriving mass, and the
positive rate among arrivals. The rate couples to the plan through a
bilinear product; this module owns every linear piece plus the link
descriptions, and leaves the linearization to the MILP layer.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .data import BinStats
from .lp import SENSE_EQ, SENSE_LE

__all__ = [
    "ModelBuildError",
    "ModelConfig",
    "LinearRows",
    "RateLink",
    "FairnessModel",
    "build_model",
    "identity_plan",
    "plan_matrices",
]


class ModelBuildError(ValueError):
    """The bin statistics cannot support the requested model."""


@dataclass(frozen=True)
class ModelConfig:
    """Tolerances and plan-structure knobs.

    `retention` is the largest fraction of a bin allowed to leave it, so
    every diagonal plan entry gets the lower bound 1 - retention. `window`
    caps movement: a transfer from bin b to b' exists only when
    |b - b'| < window, so window=1 pins the plan to the identity.
    """

    eps_dp: float = 0.03
    eps_eodds: float = 0.03
    eps_prp: float = 0.03
    retention: float = 0.5
    window: int = 13

    def __post_init__(self):
        for name in ("eps_dp", "eps_eodds", "eps_prp"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be nonnegative, got {getattr(self, name)}")
        if not 0.0 <= self.retention <= 1.0:
            raise ValueError(f"retention must lie in [0, 1], got {self.retention}")
        if self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")


@dataclass
class LinearRows:
    a: np.ndarray
    senses: np.ndarray
    rhs: np.ndarray
    names: list[str]

    @property
    def nrows(self) -> int:
        return self.a.shape[0]


def concat_rows(ncols: int, parts: Iterable[LinearRows]) -> LinearRows:
    parts = [p for p in parts if p.nrows]
    if not parts:
        return LinearRows(np.zeros((0, ncols)), np.zeros(0, np.int8), np.zeros(0), [])
    return LinearRows(
        a=np.vstack([p.a for p in parts]),
        senses=np.concatenate([p.senses for p in parts]),
        rhs=np.concatenate([p.rhs for p in parts]),
        names=[n for p in parts for n in p.names],
    )


class _RowBag:
    def __init__(self, ncols: int):
        self.ncols = ncols
        self._rows: list[np.ndarray] = []
        self._senses: list[int] = []
        self._rhs: list[float] = []
        self._names: list[str] = []

    def add(self, coeffs: dict[int, float], sense: int, rhs: float, name: str) -> None:
        row = np.zeros(self.ncols)
        for col, coef in coeffs.items():
            row[col] += coef
        self._rows.append(row)
        self._senses.append(sense)
        self._rhs.append(rhs)
        self._names.append(name)

    def freeze(self) -> LinearRows:
        if not self._rows:
            return LinearRows(
                np.zeros((0, self.ncols)), np.zeros(0, np.int8), np.zeros(0), []
            )
        return LinearRows(
            np.vstack(self._rows),
            np.array(self._senses, dtype=np.int8),
            np.array(self._rhs, dtype=float),
            list(self._names),
        )


@dataclass(frozen=True)
class RateLink:
    """Bilinear tie for one (group, destination): rate * mass = positives in.

    `x_cols`/`npos` describe the right side: sum of npos[source] * x over
    sources inside the window.
    """

    group: int
    dest: int
    v_col: int
    t_col: int
    x_cols: np.ndarray
    npos: np.ndarray


@dataclass
class FairnessModel:
    stats: BinStats
    config: ModelConfig
    x_cols: tuple[tuple[int, int, int], ...]
    x_index: dict[tuple[int, int, int], int]
    v_start: int
    t_start: int
    ncols: int
    rows_transport: LinearRows
    rows_parity: LinearRows
    rows_odds: LinearRows
    rows_rank: LinearRows
    rows_rate_gap: LinearRows
    links: tuple[RateLink, ...]
    objective: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    @property
    def nx(self) -> int:
        return len(self.x_cols)

    def v_col(self, group: int, dest: int) -> int:
        return self.v_start + group * self.stats.nbins + dest

    def t_col(self, group: int, dest: int) -> int:
        return self.t_start + group * self.stats.nbins + dest

    def linear_rows(self, *, include_rate_rows: bool) -> LinearRows:
        parts = [self.rows_transport, self.rows_parity, self.rows_odds]
        if include_rate_rows:
            parts += [self.rows_rank, self.rows_rate_gap]
        return concat_rows(self.ncols, parts)


def _window_span(center: int, nbins: int, window: int) -> range:
    return range(max(0, center - window + 1), min(nbins, center + window))


def build_model(stats: BinStats, config: ModelConfig) -> FairnessModel:
    G, B = stats.ngroups, stats.nbins
    if G < 2:
        raise ModelBuildError(f"need at least 2 groups, got {G}")
    empty = [(b, g + 1) for b in range(B) for g in range(G) if stats.n[g, b] <= 0]
    if empty:
        raise ModelBuildError(
            f"every bin must contain every group; empty (bin, group) pairs: {empty}"
        )
    for g in range(G):
        if stats.group_pos[g] <= 0 or stats.group_neg[g] <= 0:
            raise ModelBuildError(
                f"group {g + 1} needs both positives and negatives "
                f"(pos={stats.group_pos[g]:.0f}, neg={stats.group_neg[g]:.0f})"
            )

    x_cols: list[tuple[int, int, int]] = []
    for g in range(G):
        for b in range(B):
            for bp in _window_span(b, B, config.window):
                x_cols.append((g, b, bp))
    x_index = {trip: j for j, trip in enumerate(x_cols)}
    nx = len(x_cols)
    v_start = nx
    t_start = nx + G * B
    ncols = nx + 2 * G * B

    def vcol(g: int, bp: int) -> int:
        return v_start + g * B + bp

    def tcol(g: int, bp: int) -> int:
        return t_start + g * B + bp

    transport = _RowBag(ncols)
    for g in range(G):
        for b in range(B):
            coeffs = {x_index[(g, b, bp)]: 1.0 for bp in _window_span(b, B, config.window)}
            transport.add(coeffs, SENSE_EQ, 1.0, f"keep[{g + 1},{b}]")
    for g in range(G):
        for bp in range(B):
            coeffs = {
                x_index[(g, b, bp)]: float(stats.n[g, b])
                for b in _window_span(bp, B, config.window)
            }
            coeffs[vcol(g, bp)] = -1.0
            transport.add(coeffs, SENSE_EQ, 0.0, f"mass[{g + 1},{bp}]")

    pairs = [(g, h) for g in range(G) for h in range(g + 1, G)]
    totals = stats.group_totals

    parity = _RowBag(ncols)
    for g, h in pairs:
        for bp in range(B):
            base = {vcol(g, bp): 1.0 / totals[g], vcol(h, bp): -1.0 / totals[h]}
            parity.add(base, SENSE_LE, config.eps_dp, f"dp+[{g + 1},{h + 1},{bp}]")
            parity.add(
                {c: -v for c, v in base.items()},
                SENSE_LE,
                config.eps_dp,
                f"dp-[{g + 1},{h + 1},{bp}]",
            )

    odds = _RowBag(ncols)
    for g, h in pairs:
        for bp in range(B):
            for tag, weights, denom in (
                ("tpr", stats.npos, stats.group_pos),
                ("fpr", stats.nneg, stats.group_neg),
            ):
                base: dict[int, float] = {}
                for b in _window_span(bp, B, config.window):
                    base[x_index[(g, b, bp)]] = float(weights[g, b]) / denom[g]
                    base[x_index[(h, b, bp)]] = -float(weights[h, b]) / denom[h]
                odds.add(base, SENSE_LE, config.eps_eodds, f"{tag}+[{g + 1},{h + 1},{bp}]")
                odds.add(
                    {c: -v for c, v in base.items()},
                    SENSE_LE,
                    config.eps_eodds,
                    f"{tag}-[{g + 1},{h + 1},{bp}]",
                )

    rank = _RowBag(ncols)
    for g in range(G):
        for bp in range(B - 1):
            rank.add(
                {tcol(g, bp): 1.0, tcol(g, bp + 1): -1.0},
                SENSE_LE,
                0.0,
                f"rank[{g + 1},{bp}]",
            )

    rate_gap = _RowBag(ncols)
    for g, h in pairs:
        for bp in range(B):
            rate_gap.add(
                {tcol(g, bp): 1.0, tcol(h, bp): -1.0},
                SENSE_LE,
                config.eps_prp,
                f"prp+[{g + 1},{h + 1},{bp}]",
            )
            rate_gap.add(
                {tcol(g, bp): -1.0, tcol(h, bp): 1.0},
                SENSE_LE,
                config.eps_prp,
                f"prp-[{g + 1},{h + 1},{bp}]",
            )

    links = []
    for g in range(G):
        for bp in range(B):
            sources = list(_window_span(bp, B, config.window))
            links.append(
                RateLink(
                    group=g,
                    dest=bp,
                    v_col=vcol(g, bp),
                    t_col=tcol(g, bp),
                    x_cols=np.array([x_index[(g, b, bp)] for b in sources]),
                    npos=np.array([float(stats.npos[g, b]) for b in sources]),
                )
            )

    mids = stats.midpoints
    total = stats.total
    objective = np.zeros(ncols)
    for j, (g, b, bp) in enumerate(x_cols):
        objective[j] = (stats.n[g, b] / total) * abs(mids[b] - mids[bp])

    lo = np.zeros(ncols)
    hi = np.ones(ncols)
    for (g, b, bp), j in x_index.items():
        if b == bp:
            lo[j] = 1.0 - config.retention
    for g in range(G):
        for bp in range(B):
            inflow = sum(float(stats.n[g, b]) for b in _window_span(bp, B, config.window))
            lo[vcol(g, bp)] = float(stats.n[g, bp]) * (1.0 - config.retention)
            hi[vcol(g, bp)] = inflow

    return FairnessModel(
        stats=stats,
        config=config,
        x_cols=tuple(x_cols),
        x_index=x_index,
        v_start=v_start,
        t_start=t_start,
        ncols=ncols,
        rows_transport=transport.freeze(),
        rows_parity=parity.freeze(),
        rows_odds=odds.freeze(),
        rows_rank=rank.freeze(),
        rows_rate_gap=rate_gap.freeze(),
        links=tuple(links),
        objective=objective,
        lo=lo,
        hi=hi,
    )


def identity_plan(model: FairnessModel) -> np.ndarray:
    """The do-nothing plan with its induced masses and rates."""
    x = np.zeros(model.ncols)
    for (g, b, bp), j in model.x_index.items():
        if b == bp:
            x[j] = 1.0
    stats = model.stats
    for g in range(stats.ngroups):
        for bp in range(stats.nbins):
            x[model.v_col(g, bp)] = stats.n[g, bp]
            x[model.t_col(g, bp)] = stats.npos[g, bp] / stats.n[g, bp]
    return x


def plan_matrices(model: FairnessModel, solution: np.ndarray) -> np.ndarray:
    """Dense (group, source, dest) transition tensor from a solution vector."""
    G, B = model.stats.ngroups, model.stats.nbins
    plan = np.zeros((G, B, B))
    for (g, b, bp), j in model.x_index.items():
        plan[g, b, bp] = solution[j]
    return plan
