"""Dyadic linearization of the rate-mass products.

Each (group, destination) ties rate * mass to the positives arriving
there. The rate is rescaled to [0, 1] over its tightened range and split
into binary dyadic digits plus a small continuous remainder; each
digit-mass product gets a standard 4-row envelope. Two modes differ in
how the remainder-mass product enters the balance row:

- "exact": the product gets its own envelope column, so the MILP is a
  valid relaxation and any whole-digit solution carries a residual no
  larger than span * 2^power * (v_hi - v_lo) / 4 per link.
- "approx": the product is dropped from the balance row entirely, which
  biases rate * mass low by up to span * 2^power * v_hi per link.

`power` is the (negative) exponent of the finest digit; more digits mean
tighter products and more binaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bnb import MilpProblem
from .bounds import TightBounds
from .lp import (
    SENSE_EQ,
    SENSE_GE,
    SENSE_LE,
    LpProblem,
    LpStatus,
    point_violation,
    solve_lp,
)
from .model import FairnessModel, identity_plan

__all__ = [
    "LinkCols",
    "NmdtMilp",
    "power_for_precision",
    "build_milp",
    "initial_point",
    "completion_start",
    "link_residuals",
    "residual_caps",
    "certified_rate_slack",
]

_FIXED_SPAN = 1e-12


def power_for_precision(precision: float) -> int:
    """Smallest digit count whose remainder box is finer than `precision`."""
    if not 0.0 < precision < 1.0:
        raise ValueError(f"precision must lie in (0, 1), got {precision}")
    return -math.ceil(math.log2(1.0 / precision))


@dataclass(frozen=True)
class LinkCols:
    group: int
    dest: int
    t_col: int
    v_col: int
    fixed: bool
    lam: int = -1
    dlam: int = -1
    z: tuple[int, ...] = ()
    w: tuple[int, ...] = ()
    r: int = -1


@dataclass
class NmdtMilp:
    problem: MilpProblem
    model: FairnessModel
    bounds: TightBounds
    mode: str
    power: int
    links: tuple[LinkCols, ...]


def build_milp(
    model: FairnessModel,
    bounds: TightBounds,
    *,
    power: int,
    mode: str = "exact",
) -> NmdtMilp:
    if mode not in ("exact", "approx"):
        raise ValueError(f"mode must be 'exact' or 'approx', got {mode!r}")
    if power >= 0:
        raise ValueError(f"power must be negative, got {power}")
    ndigits = -power
    step = 2.0**power
    G, B = model.stats.ngroups, model.stats.nbins
    for arr in (bounds.v_lo, bounds.v_hi, bounds.t_lo, bounds.t_hi):
        if arr.shape != (G, B):
            raise ValueError(f"bounds shaped {arr.shape}, model needs {(G, B)}")

    layout: list[LinkCols] = []
    cursor = model.ncols
    for link in model.links:
        g, bp = link.group, link.dest
        span = bounds.t_hi[g, bp] - bounds.t_lo[g, bp]
        if span <= _FIXED_SPAN:
            layout.append(
                LinkCols(g, bp, link.t_col, link.v_col, fixed=True)
            )
            continue
        lam = cursor
        dlam = cursor + 1
        z = tuple(range(cursor + 2, cursor + 2 + ndigits))
        w = tuple(range(cursor + 2 + ndigits, cursor + 2 + 2 * ndigits))
        cursor += 2 + 2 * ndigits
        r = -1
        if mode == "exact":
            r = cursor
            cursor += 1
        layout.append(LinkCols(g, bp, link.t_col, link.v_col, False, lam, dlam, z, w, r))

    width = cursor
    lo = np.zeros(width)
    hi = np.ones(width)
    lo[: model.ncols] = model.lo
    hi[: model.ncols] = model.hi
    for g in range(G):
        for bp in range(B):
            lo[model.v_col(g, bp)] = bounds.v_lo[g, bp]
            hi[model.v_col(g, bp)] = bounds.v_hi[g, bp]
            lo[model.t_col(g, bp)] = bounds.t_lo[g, bp]
            hi[model.t_col(g, bp)] = bounds.t_hi[g, bp]

    base = model.linear_rows(include_rate_rows=True)
    extra_rows: list[np.ndarray] = []
    extra_senses: list[int] = []
    extra_rhs: list[float] = []

    def add(coeffs: dict[int, float], sense: int, rhs: float) -> None:
        row = np.zeros(width)
        for col, coef in coeffs.items():
            row[col] += coef
        extra_rows.append(row)
        extra_senses.append(sense)
        extra_rhs.append(rhs)

    for link, cols in zip(model.links, layout):
        g, bp = cols.group, cols.dest
        v_lo, v_hi = bounds.v_lo[g, bp], bounds.v_hi[g, bp]
        t_lo, t_hi = bounds.t_lo[g, bp], bounds.t_hi[g, bp]
        x_part = {int(c): float(p) for c, p in zip(link.x_cols, link.npos)}

        if cols.fixed:
            mid = (t_lo + t_hi) / 2.0
            add({**x_part, cols.v_col: -mid}, SENSE_EQ, 0.0)
            continue

        span = t_hi - t_lo
        hi[cols.dlam] = step
        for wl in cols.w:
            hi[wl] = v_hi
        if cols.r >= 0:
            hi[cols.r] = step * v_hi

        # rate column is an affine image of the scaled digit sum
        add({cols.t_col: 1.0, cols.lam: -span}, SENSE_EQ, t_lo)
        expansion = {cols.lam: 1.0, cols.dlam: -1.0}
        for j, zl in enumerate(cols.z):
            expansion[zl] = -(2.0 ** (power + j))
        add(expansion, SENSE_EQ, 0.0)

        for zl, wl in zip(cols.z, cols.w):
            add({wl: 1.0, zl: -v_hi}, SENSE_LE, 0.0)
            add({wl: 1.0, zl: -v_lo}, SENSE_GE, 0.0)
            add({wl: 1.0, cols.v_col: -1.0, zl: -v_lo}, SENSE_LE, -v_lo)
            add({wl: 1.0, cols.v_col: -1.0, zl: -v_hi}, SENSE_GE, -v_hi)

        if cols.r >= 0:
            add({cols.r: 1.0, cols.dlam: -v_lo}, SENSE_GE, 0.0)
            add({cols.r: 1.0, cols.v_col: -step, cols.dlam: -v_hi}, SENSE_GE, -step * v_hi)
            add({cols.r: 1.0, cols.v_col: -step, cols.dlam: -v_lo}, SENSE_LE, -step * v_lo)
            add({cols.r: 1.0, cols.dlam: -v_hi}, SENSE_LE, 0.0)

        balance = {c: -p for c, p in x_part.items()}
        balance[cols.v_col] = t_lo
        for j, wl in enumerate(cols.w):
            balance[wl] = span * (2.0 ** (power + j))
        if cols.r >= 0:
            balance[cols.r] = span
        add(balance, SENSE_EQ, 0.0)

    a = np.vstack(
        [np.hstack([base.a, np.zeros((base.nrows, width - model.ncols))])]
        + ([np.vstack(extra_rows)] if extra_rows else [])
    )
    senses = np.concatenate([base.senses, np.array(extra_senses, np.int8)])
    rhs = np.concatenate([base.rhs, np.array(extra_rhs)])
    c = np.zeros(width)
    c[: model.ncols] = model.objective

    binary_cols = np.array(
        [zl for cols in layout if not cols.fixed for zl in cols.z], dtype=int
    )
    nm = NmdtMilp(
        problem=MilpProblem(
            lp=LpProblem(c=c, a=a, senses=senses, rhs=rhs, lo=lo, hi=hi),
            binary_cols=binary_cols,
        ),
        model=model,
        bounds=bounds,
        mode=mode,
        power=power,
        links=tuple(layout),
    )
    nm.problem.rounder = _make_rounder(nm)
    return nm


def _make_rounder(nm: NmdtMilp):
    model = nm.model
    tb = nm.bounds
    ndigits = -nm.power
    levels = 2**ndigits

    def rounder(root_x: np.ndarray) -> list[np.ndarray]:
        G, B = model.stats.ngroups, model.stats.nbins
        rates = np.zeros((G, B))
        for link in model.links:
            num = float(root_x[link.x_cols] @ link.npos)
            den = max(float(root_x[link.v_col]), 1e-12)
            rates[link.group, link.dest] = num / den
        rates = np.clip(rates, tb.t_lo, tb.t_hi)
        rates = np.maximum.accumulate(rates, axis=1)
        eps = model.config.eps_prp
        for bp in range(B):
            spread = rates[:, bp].max() - rates[:, bp].min()
            if spread > eps:
                mid = (rates[:, bp].max() + rates[:, bp].min()) / 2.0
                rates[:, bp] = np.clip(rates[:, bp], mid - eps / 2.0, mid + eps / 2.0)
        rates = np.clip(rates, tb.t_lo, tb.t_hi)
        rates = np.maximum.accumulate(rates, axis=1)

        candidates = []
        for snap in (math.floor, math.ceil):
            digits: list[float] = []
            for cols in nm.links:
                if cols.fixed:
                    continue
                g, bp = cols.group, cols.dest
                span = tb.t_hi[g, bp] - tb.t_lo[g, bp]
                lam = (rates[g, bp] - tb.t_lo[g, bp]) / span
                k = min(max(snap(lam * levels), 0), levels - 1)
                digits.extend(float((k >> j) & 1) for j in range(ndigits))
            candidates.append(np.array(digits))
        if len(candidates) == 2 and np.array_equal(candidates[0], candidates[1]):
            candidates.pop()
        return candidates

    return rounder


def initial_point(nm: NmdtMilp) -> np.ndarray:
    """The identity plan completed with digits, products, and remainders.

    In exact mode this point satisfies every linearization row whenever the
    plan itself meets the fairness rows. In approx mode the balance row
    drops the remainder product, so the point generally violates it; the
    solver then simply rejects it as a starting incumbent.
    """
    base = identity_plan(nm.model)
    x = np.zeros(nm.problem.lp.ncols)
    x[: nm.model.ncols] = base
    tb = nm.bounds
    for cols in nm.links:
        g, bp = cols.group, cols.dest
        rate = float(np.clip(base[cols.t_col], tb.t_lo[g, bp], tb.t_hi[g, bp]))
        x[cols.t_col] = rate
        if cols.fixed:
            continue
        span = tb.t_hi[g, bp] - tb.t_lo[g, bp]
        lam = (rate - tb.t_lo[g, bp]) / span
        x[cols.lam] = lam
        v = x[cols.v_col]
        # peel digits from the most significant end down
        rem = lam
        for j in range(len(cols.z) - 1, -1, -1):
            weight = 2.0 ** (nm.power + j)
            bit = 1.0 if rem >= weight - 1e-15 else 0.0
            x[cols.z[j]] = bit
            x[cols.w[j]] = bit * v
            rem -= bit * weight
        rem = min(max(rem, 0.0), 2.0**nm.power)
        x[cols.dlam] = rem
        if cols.r >= 0:
            x[cols.r] = rem * v
    return x


# the rate boxes are padded outward when tightened; targets must stay off
# the pad or they pin rates no plan can realize
_BOX_INSET = 2e-7


def _feasible_rate_targets(
    nm: NmdtMilp, seed: np.ndarray, *, margin: float
) -> np.ndarray:
    """Pull seed rates inside the boxes, the ranking order, and the gap band.

    Clip, sort, and band-squeeze interact, so a few rounds are run; the
    final pass re-applies the ordering, leaving at worst a band overshoot
    the margin absorbs. Fixed links snap to the box midpoint their balance
    row hard-codes.
    """
    tb = nm.bounds
    eps = nm.model.config.eps_prp
    mid = (tb.t_lo + tb.t_hi) / 2.0
    box_lo = np.minimum(tb.t_lo + _BOX_INSET, mid)
    box_hi = np.maximum(tb.t_hi - _BOX_INSET, mid)
    band = max(eps - margin, 0.0)
    r = np.clip(seed, box_lo, box_hi)
    for _ in range(6):
        r = np.maximum.accumulate(r, axis=1)
        r = np.clip(r, box_lo, box_hi)
        r = np.clip(r, r.max(axis=0) - band, r.min(axis=0) + band)
        r = np.clip(r, box_lo, box_hi)
    r = np.maximum.accumulate(r, axis=1)
    r = np.clip(r, box_lo, box_hi)
    fixed = np.zeros(r.shape, dtype=bool)
    for cols in nm.links:
        fixed[cols.group, cols.dest] = cols.fixed
    return np.where(fixed, mid, r)


def _grid_quantize(nm: NmdtMilp, targets: np.ndarray) -> np.ndarray:
    """Snap targets onto each link's dyadic grid without breaking the order.

    Digits 0 and 2^-power sit on the padded box edges no realizable rate
    reaches, so they are excluded. Flooring alone can invert the ranking
    between neighbouring destinations (their grids differ), so each link
    also rounds up just far enough to clear its predecessor.
    """
    tb = nm.bounds
    step = 2.0**nm.power
    levels = 2**-nm.power
    q = targets.copy()
    for cols in nm.links:
        if cols.fixed:
            continue
        g, bp = cols.group, cols.dest
        span = tb.t_hi[g, bp] - tb.t_lo[g, bp]
        lam = (targets[g, bp] - tb.t_lo[g, bp]) / span
        k = int(min(max(math.floor(lam / step + 1e-12), 1), levels - 1))
        val = tb.t_lo[g, bp] + span * k * step
        if bp > 0 and val < q[g, bp - 1]:
            need = (q[g, bp - 1] - tb.t_lo[g, bp]) / (span * step)
            k = min(max(k, math.ceil(need - 1e-9)), levels - 1)
            val = tb.t_lo[g, bp] + span * k * step
        q[g, bp] = val
    return q


def _completion_lp(
    nm: NmdtMilp, rate_eq: np.ndarray, rate_pin: np.ndarray, *, elastic: bool
) -> LpProblem:
    """LP over the plan block with every link's rate pinned.

    `rate_eq` sits in the balance equalities, `rate_pin` in the rate-column
    bounds; the two differ only in approx mode where the balance must land
    on the dyadic grid. Elastic form adds signed slack per balance row and
    minimizes it; the hard form minimizes the movement objective.
    """
    model = nm.model
    tb = nm.bounds
    base = model.linear_rows(include_rate_rows=False)
    nlinks = len(model.links)
    extra = 2 * nlinks if elastic else 0
    a = np.zeros((base.nrows + nlinks, model.ncols + extra))
    a[: base.nrows, : model.ncols] = base.a
    senses = np.concatenate([base.senses, np.full(nlinks, SENSE_EQ, dtype=np.int8)])
    rhs = np.concatenate([base.rhs, np.zeros(nlinks)])
    for i, link in enumerate(model.links):
        row = base.nrows + i
        for col, npos in zip(link.x_cols, link.npos):
            a[row, col] = npos
        a[row, link.v_col] = -rate_eq[link.group, link.dest]
        if elastic:
            a[row, model.ncols + 2 * i] = -1.0
            a[row, model.ncols + 2 * i + 1] = 1.0
    lo = np.concatenate([model.lo, np.zeros(extra)])
    hi = np.concatenate([model.hi, np.full(extra, np.inf)])
    for link in model.links:
        lo[link.v_col] = tb.v_lo[link.group, link.dest]
        hi[link.v_col] = tb.v_hi[link.group, link.dest]
        lo[link.t_col] = hi[link.t_col] = rate_pin[link.group, link.dest]
    if elastic:
        c = np.concatenate([np.zeros(model.ncols), np.ones(extra)])
    else:
        c = np.concatenate([model.objective, np.zeros(extra)])
    return LpProblem(c=c, a=a, senses=senses, rhs=rhs, lo=lo, hi=hi)


def completion_start(
    nm: NmdtMilp, *, feas_tol: float = 1e-7, max_rounds: int = 12
) -> np.ndarray | None:
    """Whole-digit feasible point built without branching, or None.

    The identity lift is tried first; when the data is biased enough that
    staying put breaks a fairness row, per-link rates are pinned instead:
    targets start at the empirical positive fractions, get repaired into
    the rate rows, and an elastic LP loop moves them onto rates the mass
    constraints can actually realize. The hard completion then picks the
    cheapest plan at those rates and the point is lifted link by link into
    digits, digit products, and remainders.
    """
    lp = nm.problem.lp
    x0 = initial_point(nm)
    if point_violation(lp, x0) <= feas_tol:
        return x0

    model = nm.model
    tb = nm.bounds
    stats = model.stats
    step = 2.0**nm.power
    levels = 2**-nm.power
    quantize = nm.mode != "exact"
    span_all = tb.t_hi - tb.t_lo
    # approx mode pins rates on the grid, so the gap band must leave room
    # for quantization drift plus one rank-repair bump per link
    margin = 3.0 * step * float(span_all.max()) if quantize else 1e-10

    seed = np.divide(
        stats.npos.astype(float),
        stats.n.astype(float),
        out=np.zeros((stats.ngroups, stats.nbins)),
        where=stats.n > 0,
    )
    targets = _feasible_rate_targets(nm, seed, margin=margin)
    for _ in range(max_rounds):
        if quantize:
            targets = _grid_quantize(nm, targets)
        res = solve_lp(_completion_lp(nm, targets, targets, elastic=True))
        if res.status != LpStatus.OPTIMAL:
            return None
        if res.objective <= 1e-9:
            break
        x = res.x
        realized = np.zeros((stats.ngroups, stats.nbins))
        for link in model.links:
            num = float(x[link.x_cols] @ link.npos)
            realized[link.group, link.dest] = num / max(float(x[link.v_col]), 1e-12)
        targets = _feasible_rate_targets(nm, realized, margin=margin)
    else:
        return None

    res = solve_lp(_completion_lp(nm, targets, targets, elastic=False))
    if res.status != LpStatus.OPTIMAL:
        return None

    full = np.zeros(lp.ncols)
    full[: model.ncols] = res.x[: model.ncols]
    for cols in nm.links:
        g, bp = cols.group, cols.dest
        full[cols.t_col] = targets[g, bp]
        if cols.fixed:
            continue
        span = span_all[g, bp]
        lam = (targets[g, bp] - tb.t_lo[g, bp]) / span
        if quantize:
            k = int(min(round(lam / step), levels - 1))
            lam = k * step
            dlam = 0.0
        else:
            k = int(min(math.floor(lam / step + 1e-12), levels - 1))
            dlam = lam - k * step
        v = full[cols.v_col]
        full[cols.lam] = lam
        full[cols.dlam] = dlam
        for j, (zc, wc) in enumerate(zip(cols.z, cols.w)):
            bit = (k >> j) & 1
            full[zc] = float(bit)
            full[wc] = bit * v
        if cols.r >= 0:
            full[cols.r] = dlam * v
    if point_violation(lp, full) <= feas_tol:
        return full
    return None


def link_residuals(nm: NmdtMilp, x: np.ndarray) -> np.ndarray:
    """Per-link gap between rate * mass and the arriving positives."""
    out = np.zeros(len(nm.links))
    for i, (link, cols) in enumerate(zip(nm.model.links, nm.links)):
        out[i] = x[cols.t_col] * x[cols.v_col] - float(x[link.x_cols] @ link.npos)
    return out


def residual_caps(nm: NmdtMilp) -> np.ndarray:
    """Largest |residual| a whole-digit solution can carry, per link."""
    step = 2.0**nm.power
    out = np.zeros(len(nm.links))
    for i, cols in enumerate(nm.links):
        g, bp = cols.group, cols.dest
        span = nm.bounds.t_hi[g, bp] - nm.bounds.t_lo[g, bp]
        v_lo, v_hi = nm.bounds.v_lo[g, bp], nm.bounds.v_hi[g, bp]
        if cols.fixed:
            out[i] = span * v_hi
        elif nm.mode == "exact":
            out[i] = span * step * (v_hi - v_lo) / 4.0
        else:
            out[i] = span * step * v_hi
    return out


def certified_rate_slack(nm: NmdtMilp) -> float:
    """Worst-case drift between the rate columns and realized rates."""
    caps = residual_caps(nm)
    worst = 0.0
    for cap, cols in zip(caps, nm.links):
        worst = max(worst, cap / nm.bounds.v_lo[cols.group, cols.dest])
    return worst
