"""Best-bound branch and bound over the binary columns of a bounded LP.

Every node re-solves its LP from scratch through the deterministic simplex
kernel, so a given problem always explores the same tree in the same
order. The search certifies optimality through bound exhaustion: when no
open node can beat the incumbent, the lower bound is lifted to the
incumbent value and the reported gap is exactly zero.
"""

from __future__ import annotations

import heapq
import sys
import time
from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np

from .lp import LpProblem, LpResult, LpStatus, point_violation, solve_lp

__all__ = ["MilpStatus", "MilpProblem", "SolveReport", "solve_milp"]

_INT_TOL = 1e-6


class MilpStatus(str, Enum):
    OPTIMAL = "Optimal"
    GAP_LIMIT = "GapLimit"
    TIME_LIMIT = "TimeLimit"
    INFEASIBLE = "Infeasible"


@dataclass
class MilpProblem:
    """A bounded LP plus the columns that must come out 0/1.

    `rounder`, when present, maps a fractional relaxation point to a list
    of candidate 0/1 assignments for the binary columns; each candidate is
    completed into a full solution by one restricted LP solve.
    """

    lp: LpProblem
    binary_cols: np.ndarray
    rounder: Callable[[np.ndarray], list[np.ndarray]] | None = None

    def __post_init__(self):
        self.binary_cols = np.asarray(self.binary_cols, dtype=int)


@dataclass(frozen=True)
class SolveReport:
    status: MilpStatus
    incumbent: np.ndarray | None
    incumbent_objective: float
    best_lower_bound: float
    gap: float
    nodes_explored: int
    wall_seconds: float


def _is_integral(values: np.ndarray) -> bool:
    return bool(np.all(np.abs(values - np.round(values)) <= _INT_TOL))


def solve_milp(
    milp: MilpProblem,
    time_limit: float,
    gap_target: float,
    *,
    feas_tol: float = 1e-7,
    opt_tol: float = 1e-7,
    initial: np.ndarray | None = None,
    rounding: bool = True,
    log_every: int = 0,
) -> SolveReport:
    t0 = time.monotonic()
    lp = milp.lp
    bins = milp.binary_cols

    def elapsed() -> float:
        return time.monotonic() - t0

    def restricted(fixes: tuple[tuple[int, float], ...]) -> LpProblem:
        lo = lp.lo.copy()
        hi = lp.hi.copy()
        for col, val in fixes:
            lo[col] = val
            hi[col] = val
        return LpProblem(lp.c, lp.a, lp.senses, lp.rhs, lo, hi)

    incumbent: np.ndarray | None = None
    best_obj = np.inf
    if initial is not None:
        initial = np.asarray(initial, dtype=float).copy()
        if _is_integral(initial[bins]):
            # adopt the snapped point, not the handed-in one: a binary at
            # 1e-8 would otherwise leak fractional credit into the incumbent
            initial[bins] = np.round(initial[bins])
            if point_violation(lp, initial) <= feas_tol:
                incumbent = initial
                best_obj = float(lp.c @ initial)

    nodes = 0

    def solve_node(fixes) -> LpResult:
        nonlocal nodes
        nodes += 1
        return solve_lp(restricted(fixes), feas_tol=feas_tol, opt_tol=opt_tol)

    root = solve_node(())
    if root.status == LpStatus.INFEASIBLE:
        return SolveReport(
            MilpStatus.INFEASIBLE, None, np.inf, np.inf, 0.0, nodes, elapsed()
        )
    if root.status == LpStatus.UNBOUNDED:
        raise RuntimeError("relaxation is unbounded; the model lost its box bounds")

    if rounding and milp.rounder is not None and root.status == LpStatus.OPTIMAL:
        # candidates get a pivot budget tied to the root's: a completion that
        # needs far more than the relaxation did is degenerate crawling, and
        # one such solve must not eat the whole time limit
        cand_iters = 2000 + 2 * root.iterations
        for zvec in milp.rounder(root.x):
            if elapsed() > time_limit:
                break
            fixes = tuple(zip(bins.tolist(), np.asarray(zvec, dtype=float).tolist()))
            res = solve_lp(
                restricted(fixes), feas_tol=feas_tol, opt_tol=opt_tol, max_iters=cand_iters
            )
            if res.status == LpStatus.OPTIMAL and res.objective < best_obj:
                incumbent = res.x
                best_obj = res.objective

    # heap entries: (bound, insertion counter, fixes, cached root result or None)
    root_bound = root.objective if root.status == LpStatus.OPTIMAL else -np.inf
    heap: list[tuple[float, int, tuple, LpResult | None]] = [(root_bound, 0, (), root)]
    counter = 1
    status = MilpStatus.OPTIMAL
    lower = root_bound

    while True:
        if elapsed() > time_limit:
            status = MilpStatus.TIME_LIMIT
            lower = heap[0][0] if heap else best_obj
            break
        if not heap:
            if incumbent is None:
                return SolveReport(
                    MilpStatus.INFEASIBLE, None, np.inf, np.inf, 0.0, nodes, elapsed()
                )
            status = MilpStatus.OPTIMAL
            lower = best_obj
            break
        lower = heap[0][0]
        if incumbent is not None:
            if lower >= best_obj - opt_tol:
                status = MilpStatus.OPTIMAL
                lower = best_obj
                break
            gap_now = (best_obj - lower) / max(abs(best_obj), 1e-9)
            if gap_now <= gap_target:
                status = MilpStatus.GAP_LIMIT
                break

        bound, _, fixes, cached = heapq.heappop(heap)
        res = cached if cached is not None else solve_node(fixes)
        if res.status == LpStatus.INFEASIBLE:
            continue
        if res.status == LpStatus.ITERATION_LIMIT:
            # keep completeness: split on the first unfixed binary, reuse the
            # parent bound since this node's own value is unknown
            fixed_cols = {c for c, _ in fixes}
            open_cols = [c for c in bins.tolist() if c not in fixed_cols]
            if open_cols:
                col = open_cols[0]
                heapq.heappush(heap, (bound, counter, fixes + ((col, 0.0),), None))
                counter += 1
                heapq.heappush(heap, (bound, counter, fixes + ((col, 1.0),), None))
                counter += 1
            continue

        if res.objective >= best_obj - opt_tol:
            continue
        zvals = res.x[bins]
        off = np.abs(zvals - np.round(zvals))
        if np.all(off <= _INT_TOL):
            if np.max(off, initial=0.0) == 0.0:
                incumbent = res.x
                best_obj = res.objective
            else:
                # near-integral is not integral: a 1e-6 sliver of a binary can
                # prop up a cheaper objective than any 0/1 point admits. Pin
                # the rounded pattern as an incumbent heuristic, then branch
                # anyway so the subtree's true optimum stays reachable.
                pattern = np.round(zvals)
                res2 = solve_node(tuple(zip(bins.tolist(), pattern.tolist())))
                if (
                    res2.status == LpStatus.OPTIMAL
                    and res2.objective < best_obj - opt_tol
                ):
                    incumbent = res2.x
                    best_obj = res2.objective
                fixed_cols = {c for c, _ in fixes}
                open_off = np.where(
                    np.isin(bins, list(fixed_cols)), -1.0, off
                )
                pick = int(np.argmax(open_off))
                if open_off[pick] < 0.0:
                    # every binary is already pinned; res2 was this subtree's
                    # only integer point, so the node is exhausted
                    continue
                col = int(bins[pick])
                heapq.heappush(
                    heap, (res.objective, counter, fixes + ((col, 0.0),), None)
                )
                counter += 1
                heapq.heappush(
                    heap, (res.objective, counter, fixes + ((col, 1.0),), None)
                )
                counter += 1
        else:
            frac_ids = np.flatnonzero(off > _INT_TOL)
            pick = frac_ids[np.argmin(np.abs(zvals[frac_ids] - 0.5))]
            col = int(bins[pick])
            heapq.heappush(heap, (res.objective, counter, fixes + ((col, 0.0),), None))
            counter += 1
            heapq.heappush(heap, (res.objective, counter, fixes + ((col, 1.0),), None))
            counter += 1

        if log_every and nodes % log_every == 0:
            top = heap[0][0] if heap else best_obj
            print(
                f"[bnb] nodes={nodes} incumbent="
                f"{best_obj if np.isfinite(best_obj) else 'none'} "
                f"bound={top:.6g} elapsed={elapsed():.1f}s",
                file=sys.stderr,
            )

    if status == MilpStatus.OPTIMAL and incumbent is not None:
        gap = 0.0
    elif incumbent is not None and np.isfinite(lower):
        gap = (best_obj - lower) / max(abs(best_obj), 1e-9)
        gap = max(gap, 0.0)
    elif incumbent is not None:
        gap = np.inf
    else:
        gap = np.inf
    if status == MilpStatus.TIME_LIMIT and incumbent is None:
        lower = min(lower, np.inf)
        return SolveReport(status, None, np.inf, lower, np.inf, nodes, elapsed())
    return SolveReport(status, incumbent, best_obj, lower, gap, nodes, elapsed())
