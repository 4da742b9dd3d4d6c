"""End-to-end acceptance battery: one test per shipped guarantee.

Each test is self-contained apart from the flagship synthetic solve,
which is expensive and therefore shared through a module-scoped fixture.
The terminal summary hook in conftest prints a PASS/FAIL line per test.
"""

from __future__ import annotations

import time
from types import SimpleNamespace

import numpy as np
import pytest
from scipy.stats import mannwhitneyu

from fairbins.bnb import MilpStatus, solve_milp
from fairbins.bounds import BoundsError, tighten
from fairbins.cli import main
from fairbins.data import BinStats, compute_bin_stats, quantile_bin
from fairbins.frontier import (
    FrontierPoint,
    non_dominated,
    solve_once,
    tradeoff_query,
)
from fairbins.model import ModelBuildError, ModelConfig, build_model
from fairbins.nmdt import build_milp, link_residuals, residual_caps
from fairbins.postprocess import (
    TransitionPlan,
    auc_from_bins,
    expected_assignment_stats,
    fairness_violations,
)

from .conftest import FIXTURES, biased_synthetic, tiny_stats
from .oracle_helpers import enumerate_milp, grid_rate_bounds

TINY = str(FIXTURES / "tiny.csv")

FLAGSHIP_EPS = 0.05
FLAGSHIP_CONFIG = ModelConfig(
    eps_dp=FLAGSHIP_EPS,
    eps_eodds=FLAGSHIP_EPS,
    eps_prp=FLAGSHIP_EPS,
    retention=0.5,
    window=5,
)

LOOSE = ModelConfig(eps_dp=0.25, eps_eodds=0.25, eps_prp=0.25, retention=0.5, window=2)
TIGHT = ModelConfig(eps_dp=0.1, eps_eodds=0.1, eps_prp=0.1, retention=0.5, window=2)


@pytest.fixture(scope="module")
def flagship():
    """5000-row two-group beta synthetic, solved once at full precision."""
    obs = biased_synthetic()
    stats = compute_bin_stats(obs, quantile_bin(obs, 10))
    started = time.monotonic()
    out = solve_once(
        stats, FLAGSHIP_CONFIG, power=-12, mode="exact", time_limit=150.0
    )
    wall = time.monotonic() - started
    return SimpleNamespace(
        stats=stats,
        out=out,
        wall=wall,
        base_auc=auc_from_bins(stats),
        identity=fairness_violations(stats),
    )


# ---------------------------------------------------------------- criterion 1


def _small_instance(rng, nbins: int):
    n = rng.integers(8, 40, size=(2, nbins)).astype(float)
    base = np.sort(rng.uniform(0.15, 0.85, nbins))
    rates = np.sort(
        np.clip(np.stack([base, base + rng.uniform(-0.2, 0.2, nbins)]), 0.05, 0.95),
        axis=1,
    )
    npos = np.clip(np.rint(rates * n), 1.0, n - 1.0)
    mids = np.linspace(0.15, 0.85, nbins) + rng.uniform(-0.04, 0.04, nbins)
    stats = BinStats(n=n, npos=npos, midpoints=np.sort(mids))
    eps = float(rng.uniform(0.08, 0.35))
    config = ModelConfig(
        eps_dp=eps,
        eps_eodds=eps,
        eps_prp=eps,
        retention=float(rng.uniform(0.3, 0.6)),
        window=int(rng.integers(2, nbins + 1)),
    )
    return stats, config


def test_criterion_1_small_optima_match_exhaustive_enumeration():
    # every instance keeps the binary count enumerable: bins * digits per
    # group stays at or under 12, so 2^k patterns x one LP each is exact
    mix = [(2, -2)] * 8 + [(3, -1)] * 6 + [(4, -1)] * 6 + [(2, -3), (3, -2)]
    ch = {-1: "<", 0: "=", 1: ">"}
    started = time.monotonic()
    feasible = infeasible = 0
    for idx, (nbins, power) in enumerate(mix):
        rng = np.random.default_rng(1300 + idx)
        mode = "exact" if idx % 2 else "approx"
        stats, config = _small_instance(rng, nbins)
        try:
            model = build_model(stats, config)
            tb = tighten(model)
            nm = build_milp(model, tb, power=power, mode=mode)
        except (ModelBuildError, BoundsError):
            pytest.fail(f"instance {idx} failed to build")
        assert len(nm.problem.binary_cols) <= 12
        rep = solve_milp(nm.problem, time_limit=30.0, gap_target=0.0)
        lp = nm.problem.lp
        # hard_boxes keeps the two judges on one semantics: the solver's
        # simplex never lets a variable leave its box, while HiGHS tolerates
        # bound slips of ~1e-8, enough to admit a pattern the tightened
        # boxes genuinely cut off
        best, _ = enumerate_milp(
            lp.c,
            lp.a,
            [ch[int(s)] for s in lp.senses],
            lp.rhs,
            lp.lo,
            lp.hi,
            nm.problem.binary_cols.tolist(),
            hard_boxes=True,
        )
        if best is None:
            assert rep.status == MilpStatus.INFEASIBLE, f"instance {idx}"
            infeasible += 1
        else:
            assert rep.status == MilpStatus.OPTIMAL, f"instance {idx}"
            assert rep.incumbent_objective == pytest.approx(best, abs=1e-6), (
                f"instance {idx}"
            )
            feasible += 1
    assert feasible + infeasible == len(mix) >= 20
    assert feasible >= 10
    assert time.monotonic() - started < 60.0


# ------------------------------------------------------------ criteria 2 + 3


def test_criterion_2_flagship_solve_meets_tolerances(flagship):
    rep = flagship.out.report
    # the bias is real: doing nothing breaks all three tolerances
    assert flagship.identity.dp > FLAGSHIP_EPS
    assert flagship.identity.eodds > FLAGSHIP_EPS
    assert flagship.identity.prp > FLAGSHIP_EPS
    assert rep.incumbent is not None
    assert flagship.out.plan is not None
    moved = expected_assignment_stats(flagship.out.plan, flagship.stats)
    viol = fairness_violations(moved)
    assert viol.dp <= FLAGSHIP_EPS + 1e-6
    assert viol.eodds <= FLAGSHIP_EPS + 1e-6
    # predictive parity rides on the linearized rate columns, so its bound
    # carries the certified worst-case drift of that linearization
    assert viol.prp <= FLAGSHIP_EPS + flagship.out.rate_slack + 1e-6
    assert flagship.wall < 300.0


def test_criterion_3_flagship_auc_cost_is_small(flagship):
    assert flagship.out.plan is not None
    moved = expected_assignment_stats(flagship.out.plan, flagship.stats)
    assert abs(flagship.base_auc - auc_from_bins(moved)) < 0.01


# ---------------------------------------------------------------- criterion 4


def _window_span(b: int, nbins: int, window: int) -> list[int]:
    return [bp for bp in range(nbins) if abs(b - bp) < window]


def _sample_plan(rng, stats: BinStats, config: ModelConfig) -> TransitionPlan:
    G, B = stats.ngroups, stats.nbins
    xi = config.retention
    groups = np.zeros((G, B, B))
    for g in range(G):
        for b in range(B):
            allowed = _window_span(b, B, config.window)
            weights = rng.dirichlet(np.ones(len(allowed)))
            groups[g, b, b] += 1.0 - xi
            for k, bp in enumerate(allowed):
                groups[g, b, bp] += xi * weights[k]
    edges = stats.edges if stats.edges else tuple(np.linspace(0.0, 1.0, B + 1))
    return TransitionPlan(edges=edges, groups=groups)


def test_criterion_4_tightened_bounds_contain_all_sampled_plans():
    stats = tiny_stats()
    for config in (LOOSE, TIGHT):
        model = build_model(stats, config)
        tb = tighten(model)
        rng = np.random.default_rng(424242)
        accepted = 0
        tries = 0
        while accepted < 1000:
            tries += 1
            assert tries < 400000, "acceptance rate collapsed"
            plan = _sample_plan(rng, stats, config)
            moved = expected_assignment_stats(plan, stats)
            viol = fairness_violations(moved)
            # the bound LPs keep the transport, parity, and odds rows, so
            # any plan passing those must land inside the boxes
            if viol.dp > config.eps_dp or viol.eodds > config.eps_eodds:
                continue
            accepted += 1
            v = moved.n
            t = np.where(v > 0, moved.npos / np.where(v > 0, v, 1.0), 0.0)
            assert np.all(v >= tb.v_lo - 1e-7)
            assert np.all(v <= tb.v_hi + 1e-7)
            assert np.all(t >= tb.t_lo - 1e-7)
            assert np.all(t <= tb.t_hi + 1e-7)

    # the fractional-program bounds agree with a 0.01-step grid search that
    # sweeps each group's reachable mixtures directly
    model = build_model(stats, LOOSE)
    tb = tighten(model)
    for g in range(stats.ngroups):
        for bp in range(stats.nbins):
            grid_lo, grid_hi = grid_rate_bounds(
                list(stats.n[g]), list(stats.npos[g]), bp, retention=LOOSE.retention
            )
            assert tb.t_lo[g, bp] == pytest.approx(grid_lo, abs=1e-3)
            assert tb.t_hi[g, bp] == pytest.approx(grid_hi, abs=1e-3)


# ---------------------------------------------------------------- criterion 5


def test_criterion_5_link_residuals_stay_under_certified_caps(flagship):
    def check(out):
        rep = out.report
        assert rep.incumbent is not None
        res = np.abs(link_residuals(out.milp, rep.incumbent))
        caps = residual_caps(out.milp)
        assert np.all(res <= caps + 1e-9)

    # full-precision exact leg reuses the flagship solve
    check(flagship.out)
    for power, mode in [
        (-6, "approx"),
        (-10, "approx"),
        (-12, "approx"),
        (-6, "exact"),
        (-10, "exact"),
    ]:
        out = solve_once(
            flagship.stats, FLAGSHIP_CONFIG, power=power, mode=mode, time_limit=40.0
        )
        check(out)


# ---------------------------------------------------------------- criterion 6


def test_criterion_6_gap_accounting_is_sound(flagship):
    rep = flagship.out.report
    assert rep.best_lower_bound <= rep.incumbent_objective + 1e-12
    expected_gap = max(
        (rep.incumbent_objective - rep.best_lower_bound)
        / max(abs(rep.incumbent_objective), 1e-9),
        0.0,
    )
    if rep.status == MilpStatus.OPTIMAL:
        assert rep.gap == 0.0
    else:
        assert rep.gap == pytest.approx(expected_gap, rel=1e-12)

    # a solved-to-optimality run verified against enumeration reports a
    # gap of exactly zero, not merely a small one
    model = build_model(tiny_stats(), TIGHT)
    tb = tighten(model)
    nm = build_milp(model, tb, power=-2, mode="exact")
    rep = solve_milp(nm.problem, time_limit=120.0, gap_target=0.0)
    assert rep.status == MilpStatus.OPTIMAL
    ch = {-1: "<", 0: "=", 1: ">"}
    lp = nm.problem.lp
    best, _ = enumerate_milp(
        lp.c,
        lp.a,
        [ch[int(s)] for s in lp.senses],
        lp.rhs,
        lp.lo,
        lp.hi,
        nm.problem.binary_cols.tolist(),
    )
    assert rep.incumbent_objective == pytest.approx(best, abs=1e-6)
    assert rep.gap == 0.0
    assert rep.best_lower_bound <= rep.incumbent_objective + 1e-12


# ---------------------------------------------------------------- criterion 7


def _point(auc: float, dp: float, eodds: float, prp: float) -> FrontierPoint:
    return FrontierPoint(
        configured=(dp, eodds, prp),
        status="Optimal",
        gap=0.0,
        solve_seconds=0.0,
        auc=auc,
        eps_dp=dp,
        eps_eodds=eodds,
        eps_prp=prp,
    )


def test_criterion_7_nondomination_and_tradeoff_queries():
    # brute-force check: a point survives iff nothing beats it on every
    # axis and strictly on at least one
    rng = np.random.default_rng(975313)
    points = [
        _point(
            float(rng.uniform(0.5, 1.0)),
            float(rng.uniform(0.0, 0.3)),
            float(rng.uniform(0.0, 0.3)),
            float(rng.uniform(0.0, 0.3)),
        )
        for _ in range(500)
    ]

    def beats(q: FrontierPoint, p: FrontierPoint) -> bool:
        ge = (
            q.auc >= p.auc
            and q.eps_dp <= p.eps_dp
            and q.eps_eodds <= p.eps_eodds
            and q.eps_prp <= p.eps_prp
        )
        gt = (
            q.auc > p.auc
            or q.eps_dp < p.eps_dp
            or q.eps_eodds < p.eps_eodds
            or q.eps_prp < p.eps_prp
        )
        return ge and gt

    expected = {
        (p.auc, p.eps_dp, p.eps_eodds, p.eps_prp)
        for p in points
        if not any(beats(q, p) for q in points if q is not p)
    }
    got = {
        (p.auc, p.eps_dp, p.eps_eodds, p.eps_prp) for p in non_dominated(points)
    }
    assert got == expected

    # a four-point frontier with a known answer for every axis pairing,
    # including the pairings where no admissible point exists
    operating = _point(0.7434, 0.0123, 0.0180, 0.0123)
    buy_prp_with_auc = _point(0.7422, 0.0123, 0.0180, 0.0067)
    near_twin = _point(0.7436, 0.0152, 0.0123, 0.0067)
    buy_with_dp = _point(0.7436, 0.0152, 0.0123, 0.006)
    frontier = [operating, buy_prp_with_auc, near_twin, buy_with_dp]

    def trade(cost: str, benefit: str):
        return tradeoff_query(frontier, operating, cost, benefit)

    assert trade("auc", "prp") == buy_prp_with_auc
    assert trade("auc", "dp") is None
    assert trade("auc", "eodds") is None
    assert trade("eodds", "prp") is None
    assert trade("eodds", "dp") is None
    # both dp-funded queries settle on the same point: it has the best
    # benefit, and the lower predictive-parity column breaks the tie
    assert trade("dp", "prp") == buy_with_dp
    assert trade("dp", "eodds") == buy_with_dp
    # the near twin is beaten on the one axis where the points differ
    kept = non_dominated(frontier)
    assert near_twin not in kept
    assert {operating, buy_prp_with_auc, buy_with_dp} == set(kept)


# ---------------------------------------------------------------- criterion 8


def test_criterion_8_frozen_audit_values_on_reference_rows():
    stats = tiny_stats()
    viol = fairness_violations(stats)
    # 4/5 - 3/5 lands one ulp off the literal, so exact equality here means
    # equality at the last-place scale, not bitwise string match
    assert viol.dp == pytest.approx(0.0, abs=1e-12)
    assert viol.eodds == pytest.approx(0.2, abs=1e-12)
    assert viol.prp == pytest.approx(0.2, abs=1e-12)

    pos: list[float] = []
    neg: list[float] = []
    for g in range(stats.ngroups):
        for b in range(stats.nbins):
            mid = float(stats.midpoints[b])
            pos += [mid] * int(stats.npos[g, b])
            neg += [mid] * int(stats.n[g, b] - stats.npos[g, b])
    u1 = mannwhitneyu(pos, neg).statistic
    assert auc_from_bins(stats) == pytest.approx(
        u1 / (len(pos) * len(neg)), abs=1e-9
    )


# ---------------------------------------------------------------- criterion 9


def test_criterion_9_identical_seed_pipelines_are_byte_identical(tmp_path):
    fast = [
        "--bins", "2", "--window", "2", "--precision", "0.0625",
        "--eps-dp", "0.25", "--eps-eodds", "0.25", "--eps-prp", "0.25",
    ]
    blobs = []
    for run in ("one", "two"):
        d = tmp_path / run
        d.mkdir()
        plan = d / "plan.json"
        report = d / "report.json"
        assert main(["solve", TINY, "--plan-out", str(plan),
                     "--report-out", str(report), *fast]) == 0
        applied = d / "applied.csv"
        assert main(["apply", TINY, "--plan", str(plan), "--mode", "stochastic",
                     "--seed", "7", "--output", str(applied)]) == 0
        audit = d / "audit.json"
        assert main(["audit", str(applied), "--eval-bins", "2", "--score-column",
                     "new_score", "--output", str(audit)]) == 0
        front = d / "front.csv"
        assert main(["frontier", TINY, *fast, "--grid-dp", "0.25",
                     "--grid-eodds", "0.25", "--grid-prp", "0.1,0.25",
                     "--budget-per-solve", "60", "--output", str(front)]) == 0
        blobs.append(
            tuple(p.read_bytes() for p in (plan, applied, audit, front))
        )
    assert blobs[0] == blobs[1]
