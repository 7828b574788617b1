import dataclasses
from decimal import Decimal

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tangleproof import ArrivalDecision, ModelParams, reference_params, run
from tangleproof.bottleneck import (
    BottleneckPlan,
    Label,
    find_anchor,
    force_bottlenecks,
    kappa_values,
    label_of,
    mesh_parents,
    plan_bottleneck,
    plan_step_A,
    plan_step_B,
    rho_bound,
    thresholds,
    verify_bottleneck,
    xi,
)
from tangleproof.errors import (
    ConfigurationError,
    ConstructionFailure,
    LabelRangeError,
    NoAnchorError,
    NotAtBottleneck,
    VerificationInputError,
)
from tangleproof.model import new_genesis


@pytest.fixture(scope="module")
def report(forced):
    trace, plan = forced
    return verify_bottleneck(trace, plan)


# ---------------------------------------------------------------------------
# constants


def test_reference_thresholds(params):
    thr = thresholds(params)
    assert (thr.b_min, thr.b) == (32, 33)
    assert (thr.kappa_A, thr.kappa_B, thr.kappa_C) == (20, 22, 12828)
    assert thr.delta_YF == 2 and thr.w_max == 6
    assert thr.a_star == 2 * 3 + 3 * 2 * 2 + 2
    assert Decimal(0) < thr.rho < Decimal(1)
    assert thr.rho_sci.endswith("E-68150")


def test_kappa_C_by_hand(params):
    kA, kB, kC = kappa_values(params)
    assert kB == kA + params.eps_min + 1
    assert kC == 22 + 2 * (33 + 2 * 22 + 3) ** 2 + 3 + 2 + 1


def test_kappa_A_strictly_exceeds_the_bound():
    for h in [(2, 3), (1, 2), (3, 4), (2, 5), (1, 7)]:
        for eps in [(1,), (2, 3), (4,)]:
            p = ModelParams(h=h, p_theta=[1 / len(h)] * len(h), eps_support=eps,
                            p_eps=[1 / len(eps)] * len(eps))
            bound = 1 + max(2 * h[-1], 3 * h[-1] * (h[-1] + eps[0]) / (h[-1] - 1))
            kA = kappa_values(p)[0]
            assert kA > bound and kA - 1 <= bound + 1


def test_threshold_errors():
    with pytest.raises(ConfigurationError, match="b_min"):
        reference_params(b=32)
    with pytest.raises(ConfigurationError, match="strictly increasing"):
        reference_params(h=(2, 2))


def test_rho_monotone(params):
    values = [rho_bound(params, k) for k in (5, 10, 50, 200)]
    assert all(a > b for a, b in zip(values, values[1:]))
    assert rho_bound(params, 40, b=33) > rho_bound(params, 40, b=80)
    base = Decimal(0.5) * Decimal(0.5) / Decimal(33 + 2 * 3 * 2)
    assert rho_bound(params, 3) == pytest.approx(base ** 3)


# ---------------------------------------------------------------------------
# labels


def _toy_plan(i, kappa_B, column1, kappa_C=200):
    return BottleneckPlan(i, kappa_B - 2, kappa_B, kappa_C, tuple(column1))


def test_xi_worked_values():
    plan = _toy_plan(47, 5, (2, 7, 50, 51))
    assert plan.start_C == 52
    assert xi(Label(47, 1, 3), plan) == 50
    assert xi(Label(47, 2, 3), plan) == 54
    assert xi(Label(47, 2, 1), plan) == plan.start_C


def test_step_C_parent_maps():
    plan = _toy_plan(50, 13, (1, 2, 3, 4))
    assert plan.start_C == 63

    def parents(j, k):
        return {label_of(v, plan) for v in mesh_parents(Label(50, j, k), plan)}

    assert parents(2, 1) == {Label(50, 1, 1), Label(50, 1, 2)}
    assert parents(7, 2) == {Label(50, 6, 1), Label(50, 6, 3)}
    assert parents(5, 4) == {Label(50, 4, 3), Label(50, 4, 4)}


def test_label_range_errors():
    plan = _toy_plan(47, 5, (2, 7, 50, 51), kappa_C=20)
    with pytest.raises(LabelRangeError):
        xi(Label(47, 1, 5), plan)
    with pytest.raises(LabelRangeError):
        xi(Label(48, 2, 1), plan)
    with pytest.raises(LabelRangeError):
        xi(Label(47, 0, 1), plan)
    with pytest.raises(LabelRangeError):
        xi(Label(47, 10, 1), plan)  # past i + kappa_C
    with pytest.raises(LabelRangeError):
        label_of(3, plan)
    with pytest.raises(LabelRangeError):
        plan.phase_of(68)


@given(st.integers(1, 500), st.integers(0, 30), st.integers(3, 12), st.integers(1, 150))
def test_xi_is_a_bijection_on_the_mesh(i, slack, c, extra):
    kappa_B = c + slack
    column1 = tuple(range(i + kappa_B - c, i + kappa_B))
    plan = _toy_plan(i, kappa_B, column1, kappa_C=kappa_B + extra)
    seen = set()
    for v in range(plan.start_C, plan.end + 1):
        lab = label_of(v, plan)
        assert lab.j >= 2 and 1 <= lab.k <= c
        assert xi(lab, plan) == v
        seen.add(lab)
    assert len(seen) == plan.end - plan.start_C + 1
    for k in range(1, c + 1):
        assert label_of(xi(Label(i, 1, k), plan), plan) == Label(i, 1, k)


# ---------------------------------------------------------------------------
# phases on the reference parameters


def test_phase_A_not_at_bottleneck(params):
    thr = dataclasses.replace(thresholds(params), b=0)
    with pytest.raises(NotAtBottleneck):
        plan_step_A(new_genesis(params), thr)


def test_phase_A_shape_and_free_tip_growth(params, forced):
    trace, plan = forced
    thr = thresholds(params)
    i, kA = plan.i, plan.kappa_A
    for n in range(i, i + kA):
        d = plan.overrides[n]
        assert (d.theta, d.eps) == (params.h_M, params.eps_min)
        assert len(set(d.parents)) == 1
    s_A = i + kA - 1
    assert trace.F[s_A] > 3 * (params.h_M + params.eps_min)
    inc = np.diff(trace.F[i + params.h_M: s_A + 1])
    assert set(inc.tolist()) <= {0, 1}
    zeros = np.flatnonzero(inc == 0)
    for z in zeros:
        tail = inc[z + 1: z + params.h_M]
        assert np.all(tail == 1)
    assert thr.kappa_A == kA


def test_phase_B_reserved_set(params, forced):
    trace, plan = forced
    fb = plan.fb_set
    assert len(fb) == 2 * (params.h_M + params.eps_min) == 8
    s_A = plan.i + plan.kappa_A - 1
    free_A = set(trace.life.free_at(s_A).tolist())
    assert set(fb) <= free_A and max(fb) < min(free_A - set(fb))
    for n in range(plan.i + plan.kappa_A, plan.start_C):
        assert not set(plan.overrides[n].parents) & set(fb)
    for s in range(s_A, plan.start_C):
        assert set(fb) <= set(trace.life.free_at(s).tolist())


def test_phase_B_needs_enough_free_tips(params):
    with pytest.raises(ConstructionFailure) as info:
        plan_step_B(new_genesis(params), thresholds(params))
    assert info.value.phase == "B"


def test_phase_C_follows_the_mesh(params, forced):
    _, plan = forced
    for n in list(range(plan.start_C, plan.start_C + 3 * plan.c_i)) + [plan.end]:
        d = plan.overrides[n]
        assert (d.theta, d.eps) == (params.h_M, params.eps_min)
        assert tuple(d.parents) == mesh_parents(label_of(n, plan), plan)


def test_mesh_width(params, forced):
    trace, plan = forced
    s_B = plan.start_C - 1
    assert plan.c_i == trace.F[s_B] + params.h_M
    assert 2 * (params.h_M + params.eps_min) < plan.c_i <= params.b + params.M * plan.kappa_B + params.h_M
    assert plan.columns >= 2 * plan.c_i


def test_every_override_is_feasible(params, forced):
    trace, plan = forced
    # the forced run validated them; re-running only the plan must also succeed
    rerun = run(params, trace.seed, plan.end, plan.overrides)
    for n in (plan.i, plan.i + plan.kappa_A, plan.start_C, plan.end):
        assert rerun.decision(n) == plan.overrides[n]


# ---------------------------------------------------------------------------
# verification


def test_forced_bottleneck_verifies(report, forced):
    _, plan = forced
    assert report.all_passed
    assert report.events == {"A": True, "B": True, "C": True}
    assert report.column1_matches_plan and report.fb_remained_free and report.tips_above_top_column
    assert report.deviations == []
    assert (report.kappa_A, report.kappa_B, report.kappa_C) == (20, 22, 12828)
    assert report.c_i == plan.c_i <= report.c_i_bound


def test_observe_mode_on_unforced_run(params, forced):
    trace, plan = forced
    free = run(params, trace.seed + 1, trace.T)
    rep = verify_bottleneck(free, plan, observe=True)
    assert rep.mode == "observe"
    assert rep.events == {"A": False, "B": False, "C": False}
    assert isinstance(rep.temp4, bool)
    strict = verify_bottleneck(free, plan)
    assert not (strict.temp2 or strict.temp3 or strict.temp4 or strict.cauchy1)


def test_redirected_mesh_edge_is_named(forced):
    trace, plan = forced
    victim = xi(Label(plan.i, 5, 3), plan)
    parents = trace.parents.copy()
    x, _ = mesh_parents(Label(plan.i, 5, 3), plan)
    parents[victim, :2] = x
    bad = dataclasses.replace(trace, parents=parents)
    rep = verify_bottleneck(bad, plan)
    assert not rep.temp4 and not rep.events["C"]
    assert f"({plan.i},5,3)" in rep.deviations


def test_verification_input_errors(params, forced):
    trace, plan = forced
    short = run(params, trace.seed, plan.end, plan.overrides)
    with pytest.raises(VerificationInputError, match="steps"):
        verify_bottleneck(short, plan)
    other = reference_params(b=40)
    with pytest.raises(VerificationInputError, match="parameters"):
        verify_bottleneck(run(other, 1, trace.T), plan)


def test_report_round_trip(report):
    back = type(report).from_dict(report.to_dict())
    assert back == report


# ---------------------------------------------------------------------------
# anchors and generalized parent counts


def test_find_anchor(short_trace):
    n = find_anchor(short_trace, 33, after=500)
    assert n == 500 and short_trace.L[n - 1] <= 33
    synthetic = dataclasses.replace(short_trace, L=np.full_like(short_trace.L, 50))
    with pytest.raises(NoAnchorError):
        find_anchor(synthetic, 33)


def test_pinned_anchor_must_leave_room(params):
    with pytest.raises(ConfigurationError, match="too early"):
        force_bottlenecks(params, 1, at=[0], start=5)


def test_random_parent_counts_pad_to_three():
    p = ModelParams(h=(2, 3), p_theta=(0.5, 0.5), eps_support=(1, 2), p_eps=(0.5, 0.5),
                    k_support=(1, 3), p_k=(0.5, 0.5))
    plan = plan_bottleneck(new_genesis(p))
    assert {len(plan.overrides[n].parents) for n in range(plan.i, plan.start_C)} == {1}
    assert {len(plan.overrides[n].parents) for n in range(plan.start_C, plan.end + 1)} == {3}


def test_single_parent_model_cannot_form_the_mesh():
    p = ModelParams(h=(2, 3), p_theta=(0.5, 0.5), eps_support=(1, 2), p_eps=(0.5, 0.5), k_parents=1)
    with pytest.raises(ConstructionFailure, match="parent count"):
        plan_bottleneck(new_genesis(p))


def test_step_override_round_trip_through_plan(forced):
    _, plan = forced
    d = plan.overrides[plan.start_C]
    assert isinstance(d, ArrivalDecision) and plan.phase_of(plan.start_C) == "C"
    assert plan.phase_of(plan.i) == "A" and plan.phase_of(plan.i + plan.kappa_A) == "B"
