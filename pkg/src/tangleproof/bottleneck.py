"""Forcing and checking the three-phase bottleneck event.

A bottleneck starting at arrival ``i`` drives arrivals ``[i, i+kappa_C]``
through three deterministic phases:

* A (tidy): every arrival takes duration h_M, lookback eps_min and selects a
  single pending tip where possible, so free tips accumulate.
* B (prepare): the smallest free tips are set aside as ``fb_set`` while the
  remaining arrivals keep selecting elsewhere.
* C (interchange): arrivals form a mesh of columns of width ``c_i`` in which
  each vertex joins its two diagonal neighbours in the previous column.

Afterwards every later vertex reaches every vertex that existed at ``i``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from decimal import Decimal, localcontext
from fractions import Fraction
from typing import Mapping

import numpy as np

from . import kernels
from .engine import Trace, run
from .errors import (
    ConfigurationError,
    ConstructionFailure,
    LabelRangeError,
    NoAnchorError,
    NotAtBottleneck,
    ProtocolViolation,
    VerificationInputError,
)
from .model import ArrivalDecision, ModelParams, TangleState, apply_step, tips_at_lookback


@dataclass(frozen=True)
class Thresholds:
    b: int
    b_min: int
    a_star: int
    delta_YF: int
    w_max: int
    kappa_A: int
    kappa_B: int
    kappa_C: int
    rho: Decimal

    @property
    def rho_sci(self) -> str:
        return f"{self.rho:.6E}"

    @property
    def a(self) -> int:
        """Free-tip level used by the coupled walk: a_star + 3 delta_YF."""
        return self.a_star + 3 * self.delta_YF


def kappa_values(params: ModelParams, b: int | None = None) -> tuple[int, int, int]:
    b = params.b if b is None else b
    h_M, M = params.h_M, params.M
    bound = 1 + max(Fraction(2 * h_M), Fraction(3 * h_M * (h_M + params.eps_min), h_M - 1))
    kA = math.floor(bound) + 1
    kB = kA + params.eps_min + 1
    kC = kB + 2 * (b + M * kB + h_M) ** 2 + h_M + params.eps_max + 1
    return kA, kB, kC


def rho_bound(params: ModelParams, kappa_C: int, b: int | None = None) -> Decimal:
    """Closed-form lower bound on the bottleneck probability (exact decimal)."""
    b = params.b if b is None else b
    with localcontext() as ctx:
        ctx.prec = 40
        base = Decimal(min(params.p_theta)) * Decimal(min(params.p_eps)) / Decimal(b + 2 * kappa_C * params.M)
        return base ** kappa_C


def thresholds(params: ModelParams) -> Thresholds:
    if params.b <= params.b_min:
        raise ConfigurationError(f"b={params.b} must exceed b_min={params.b_min}")
    h_M, h_1, M = params.h_M, params.h_1, params.M
    kA, kB, kC = kappa_values(params)
    a_star = params.w_max + 3 * M * params.eps_max + 2
    return Thresholds(
        b=params.b,
        b_min=params.b_min,
        a_star=a_star,
        delta_YF=2 * (h_M - h_1),
        w_max=params.w_max,
        kappa_A=kA,
        kappa_B=kB,
        kappa_C=kC,
        rho=rho_bound(params, kC),
    )


# ---------------------------------------------------------------------------
# Labels


@dataclass(frozen=True, order=True)
class Label:
    i: int
    j: int
    k: int

    def __str__(self):
        return f"({self.i},{self.j},{self.k})"


@dataclass(frozen=True)
class BottleneckPlan:
    """Schedule for arrivals ``[i, i + kappa_C]``.

    ``column1`` lists the free and in-flight vertices at the start of phase C
    in increasing order; its length is the mesh width ``c_i``.
    """

    i: int
    kappa_A: int
    kappa_B: int
    kappa_C: int
    column1: tuple[int, ...]
    fb_set: tuple[int, ...] = ()
    overrides: Mapping[int, ArrivalDecision] = field(default_factory=dict)
    params: ModelParams | None = None

    @property
    def c_i(self) -> int:
        return len(self.column1)

    @property
    def start_C(self) -> int:
        return self.i + self.kappa_B

    @property
    def end(self) -> int:
        return self.i + self.kappa_C

    @property
    def columns(self) -> int:
        """Number of complete columns with j >= 2."""
        return (self.end - self.start_C + 1) // self.c_i

    def phase_of(self, n: int) -> str:
        if self.i <= n < self.i + self.kappa_A:
            return "A"
        if self.i + self.kappa_A <= n < self.start_C:
            return "B"
        if self.start_C <= n <= self.end:
            return "C"
        raise LabelRangeError(f"arrival {n} outside plan [{self.i}, {self.end}]")


def xi(label: Label, plan: BottleneckPlan) -> int:
    c = plan.c_i
    if label.i != plan.i:
        raise LabelRangeError(f"label {label} belongs to another plan (i={plan.i})")
    if not 1 <= label.k <= c:
        raise LabelRangeError(f"k={label.k} outside [1, {c}]")
    if label.j == 1:
        return plan.column1[label.k - 1]
    if label.j < 1:
        raise LabelRangeError(f"j={label.j} must be >= 1")
    v = plan.start_C - 1 + (label.j - 2) * c + label.k
    if v > plan.end:
        raise LabelRangeError(f"label {label} maps to {v} beyond {plan.end}")
    return v


def label_of(v: int, plan: BottleneckPlan) -> Label:
    if plan.start_C <= v <= plan.end:
        off = v - plan.start_C
        return Label(plan.i, 2 + off // plan.c_i, off % plan.c_i + 1)
    if v in plan.column1:
        return Label(plan.i, 1, plan.column1.index(v) + 1)
    raise LabelRangeError(f"vertex {v} carries no label in plan i={plan.i}")


def mesh_parents(label: Label, plan: BottleneckPlan) -> tuple[int, int]:
    """Diagonal neighbours in the previous column."""
    c = plan.c_i
    x = xi(Label(label.i, label.j - 1, max(1, label.k - 1)), plan)
    y = xi(Label(label.i, label.j - 1, min(label.k + 1, c)), plan)
    return x, y


# ---------------------------------------------------------------------------
# Planning


@dataclass(frozen=True)
class PhasePlan:
    overrides: dict[int, ArrivalDecision]
    state: TangleState


def _pad(params: ModelParams, parents: tuple[int, ...], at_least: int) -> tuple[int, ...]:
    """Repeat the last parent to reach an admissible parent count."""
    k = next((k for k in params.k_support if k >= at_least), None)
    if k is None:
        raise ConstructionFailure(f"no admissible parent count >= {at_least} in {params.k_support}")
    return parents + (parents[-1],) * (k - len(parents))


def plan_step_A(state: TangleState, thr: Thresholds) -> PhasePlan:
    """Phase A from the state right before arrival ``i = state.now + 1``."""
    params = state.params
    if state.L > thr.b:
        raise NotAtBottleneck(f"L={state.L} exceeds b={thr.b} before arrival {state.now + 1}")
    i = state.now + 1
    out = {}
    for n in range(i, i + thr.kappa_A):
        look = tips_at_lookback(state, params.eps_min)
        pending = look - state.free_tips
        pick = min(pending) if pending else min(look)
        d = ArrivalDecision(params.h_M, params.eps_min, _pad(params, (pick,), 1))
        out[n] = d
        state = apply_step(state, d)
    return PhasePlan(out, state)


def plan_step_B(state: TangleState, thr: Thresholds) -> tuple[tuple[int, ...], PhasePlan]:
    params = state.params
    n_fb = 2 * (params.h_M + params.eps_min)
    if state.F <= 3 * (params.h_M + params.eps_min):
        raise ConstructionFailure(
            f"only {state.F} free tips after phase A, need more than {3 * (params.h_M + params.eps_min)}",
            phase="B", step=state.now + 1)
    fb = tuple(sorted(state.free_tips)[:n_fb])
    fb_s = set(fb)
    start = state.now + 1
    out = {}
    for n in range(start, start + thr.kappa_B - thr.kappa_A):
        allowed = tips_at_lookback(state, params.eps_min) - fb_s
        if not allowed:
            raise ConstructionFailure("no tip outside the reserved set", phase="B", step=n)
        d = ArrivalDecision(params.h_M, params.eps_min, _pad(params, (min(allowed),), 1))
        out[n] = d
        state = apply_step(state, d)
    return fb, PhasePlan(out, state)


def _condition_case(label: Label, plan: BottleneckPlan) -> int:
    if label.j == 2:
        return 1 if label.k <= len(plan.fb_set) else 2
    if label.k == 1:
        return 3
    return 5 if label.k == plan.c_i else 4


def plan_step_C(state: TangleState, thr: Thresholds, i: int, fb_set: tuple[int, ...] = ()) -> PhasePlan:
    """Phase C from the state right before arrival ``i + kappa_B``."""
    params = state.params
    if state.now + 1 != i + thr.kappa_B:
        raise ConstructionFailure(f"phase C must start at arrival {i + thr.kappa_B}", phase="C")
    column1 = tuple(sorted(state.free_tips | state.inflight))
    c = len(column1)
    if c <= 2 * (params.h_M + params.eps_min):
        raise ConstructionFailure(f"mesh width {c} too small", phase="C")
    if c > thr.b + params.M * thr.kappa_B + params.h_M:
        raise ConstructionFailure(f"mesh width {c} exceeds b + M kappa_B + h_M", phase="C")
    plan = BottleneckPlan(i, thr.kappa_A, thr.kappa_B, thr.kappa_C, column1, fb_set, {}, params)
    out = {}
    for n in range(plan.start_C, plan.end + 1):
        lab = label_of(n, plan)
        d = ArrivalDecision(params.h_M, params.eps_min, _pad(params, mesh_parents(lab, plan), 2))
        try:
            state = apply_step(state, d)
        except ProtocolViolation as exc:
            case = _condition_case(lab, plan)
            raise ConstructionFailure(f"label {lab}: {exc} (case {case})",
                                      phase="C", step=n, case=case) from exc
        out[n] = d
    return PhasePlan(out, state)


def plan_bottleneck(state: TangleState, thr: Thresholds | None = None) -> BottleneckPlan:
    """Full schedule from the state right before arrival ``i = state.now + 1``."""
    thr = thr or thresholds(state.params)
    i = state.now + 1
    a = plan_step_A(state, thr)
    fb, b = plan_step_B(a.state, thr)
    c = plan_step_C(b.state, thr, i, fb)
    column1 = tuple(sorted(b.state.free_tips | b.state.inflight))
    return BottleneckPlan(i, thr.kappa_A, thr.kappa_B, thr.kappa_C, column1, fb,
                          {**a.overrides, **b.overrides, **c.overrides}, state.params)


# ---------------------------------------------------------------------------
# Orchestration


def find_anchor(trace: Trace, b: int, after: int = 1) -> int:
    """First arrival ``n >= after`` whose pre-arrival tip count is at most ``b``."""
    L_pre = trace.L[max(after, 1) - 1: trace.T]
    hits = np.flatnonzero(L_pre <= b)
    if not len(hits):
        raise NoAnchorError(f"no step with L <= {b} in arrivals {after}..{trace.T}")
    return int(hits[0]) + max(after, 1)


def force_bottlenecks(params: ModelParams, seed: int, count: int = 1, *, start: int = 1,
                      margin: int = 500, at: list[int] | None = None,
                      search: int = 10_000) -> tuple[Trace, list[BottleneckPlan]]:
    """Force ``count`` bottlenecks spaced more than ``2 kappa_C`` apart.

    Each anchor is the first arrival with L <= b after ``start`` (or after the
    previous plan plus the spacing), unless ``at`` pins it.
    """
    thr = thresholds(params)
    plans: list[BottleneckPlan] = []
    overrides: dict[int, ArrivalDecision] = {}
    lo = start
    for idx in range(count):
        horizon = lo + search
        trace = run(params, seed, horizon, overrides)
        if at is not None:
            anchor = at[idx]
            if anchor < lo:
                raise ConfigurationError(f"anchor {anchor} too early, need >= {lo}")
            if trace.L[anchor - 1] > params.b:
                raise NotAtBottleneck(f"L={int(trace.L[anchor - 1])} > b before arrival {anchor}")
        else:
            anchor = find_anchor(trace, params.b, lo)
        plan = plan_bottleneck(trace.state(anchor - 1), thr)
        plans.append(plan)
        overrides.update(plan.overrides)
        lo = plan.i + 2 * thr.kappa_C + 1
    T = plans[-1].end + params.eps_max + params.h_M + margin
    return run(params, seed, T, overrides), plans


# ---------------------------------------------------------------------------
# Verification


@dataclass
class BottleneckReport:
    i: int
    c_i: int
    kappa_A: int
    kappa_B: int
    kappa_C: int
    rho: str
    horizon: int
    mode: str
    events: dict[str, bool]
    temp2: bool
    temp3: bool
    temp4: bool
    cauchy1: bool
    column1_matches_plan: bool
    fb_remained_free: bool
    tips_above_top_column: bool
    c_i_bound: int
    deviations: list[str] = field(default_factory=list)
    witnesses: dict[str, list] = field(default_factory=dict)

    @property
    def all_passed(self) -> bool:
        return self.temp2 and self.temp3 and self.temp4 and self.cauchy1

    def to_dict(self) -> dict:
        return {
            "i": self.i, "c_i": self.c_i, "kappa_A": self.kappa_A, "kappa_B": self.kappa_B,
            "kappa_C": self.kappa_C, "rho": self.rho, "horizon": self.horizon, "mode": self.mode,
            "events": dict(self.events), "temp2": self.temp2, "temp3": self.temp3,
            "temp4": self.temp4, "cauchy1": self.cauchy1,
            "column1_matches_plan": self.column1_matches_plan,
            "fb_remained_free": self.fb_remained_free,
            "tips_above_top_column": self.tips_above_top_column,
            "c_i_bound": self.c_i_bound,
            "deviations": list(self.deviations),
            "witnesses": {k: list(v) for k, v in self.witnesses.items()},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "BottleneckReport":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


def _missing_bits(row: np.ndarray, count: int) -> np.ndarray:
    """Indices ``< count`` whose bit is clear in a multi-word mask row."""
    bits = np.unpackbits(np.ascontiguousarray(row).view(np.uint8), bitorder="little")[:count]
    return np.flatnonzero(bits == 0)


def verify_bottleneck(trace: Trace, plan: BottleneckPlan, *, observe: bool = False,
                      max_witnesses: int = 10) -> BottleneckReport:
    """Check the four structural conclusions on the finite trace.

    Reachability uses every recorded edge, solid or still in flight, since
    in-flight edges are fixed at arrival. In the default mode a conclusion
    counts as established only when the phases it depends on were realized
    as planned; ``observe=True`` reports the bare graph facts instead.
    """
    params = trace.params
    if plan.params is not None and plan.params != params:
        raise VerificationInputError("plan and trace use different model parameters")
    need = plan.end + params.eps_max + params.h_M
    if trace.T < need:
        raise VerificationInputError(f"trace has {trace.T} steps, need at least {need}")
    i, T = plan.i, trace.T
    life = trace.life
    s_B = plan.start_C - 1  # state right before phase C

    # realized phases
    events = {"A": True, "B": True, "C": True}
    deviations = []
    for n in range(i, plan.end + 1):
        want = plan.overrides.get(n)
        got = trace.decision(n)
        if want is None or (want.theta, want.eps, sorted(want.parents)) != (got.theta, got.eps, sorted(got.parents)):
            ph = plan.phase_of(n)
            events[ph] = False
            tag = str(label_of(n, plan)) if ph == "C" and plan.c_i else f"({ph},{n})"
            deviations.append(tag)

    free_B = life.free_at(s_B)
    column1 = np.union1d(free_B, life.inflight_at(s_B))
    column1_ok = tuple(column1.tolist()) == tuple(plan.column1)
    c = len(column1)
    real_plan = BottleneckPlan(i, plan.kappa_A, plan.kappa_B, plan.kappa_C,
                               tuple(column1.tolist()), plan.fb_set, plan.overrides, params)

    witnesses: dict[str, list] = {}

    # (1) every solid non-free vertex at s_B is reached from column 1
    masks1 = kernels.reached_by(trace.parents, trace.npar, T, column1.astype(np.int64))
    solid_B = life.solid_at(s_B)
    targets = np.setdiff1d(solid_B, free_B)
    unreached = targets[~masks1[targets].any(axis=1)]
    temp2 = not len(unreached)
    witnesses["temp2_unreached"] = unreached[:max_witnesses].tolist()

    # (2) and (3): marks from every late arrival
    late = np.arange(plan.end + 1, T + 1, dtype=np.int64)
    masks = kernels.reached_by(trace.parents, trace.npar, T, late)
    full = kernels.full_mask(len(late))
    ncol = c * real_plan.columns
    top_first = xi(Label(i, 2 * c, 1), real_plan) if real_plan.columns >= 2 * c else None
    if top_first is None:
        temp3 = False
        witnesses["temp3_missing_column"] = [2 * c]
    else:
        top = np.arange(top_first, top_first + c)
        any_top = np.bitwise_or.reduce(masks[top], axis=0)
        miss_top = _missing_bits(any_top, len(late))
        col_full = np.all(masks[column1] == full, axis=1)
        temp3 = not len(miss_top) and bool(col_full.all())
        witnesses["temp3_no_top"] = late[miss_top][:max_witnesses].tolist()
        witnesses["temp3_column1_missed"] = column1[~col_full][:max_witnesses].tolist()
    # (3) every vertex solid right before phase C is reached by all late arrivals
    v_minus = solid_B
    not_all = v_minus[~np.all(masks[v_minus] == full, axis=1)]
    temp4 = not len(not_all)
    witnesses["temp4_not_reached_by_all"] = not_all[:max_witnesses].tolist()

    # (4) tips before arrival i are covered early enough
    tips_i = life.tips_at(i - 1)
    cut = plan.end - params.eps_max - params.h_M - 1
    late_tips = tips_i[life.cover[tips_i] > cut]
    cauchy1 = not len(late_tips)
    witnesses["cauchy1_lingering"] = late_tips[:max_witnesses].tolist()

    # extra observations
    if top_first is not None:
        s1 = plan.end - params.eps_max - 1
        old = np.arange(0, top_first)
        lingering = old[(life.solid[old] <= T) & (life.cover[old] > s1)]
        above_top = not len(lingering)
    else:
        above_top = False
    fb = np.asarray(plan.fb_set, dtype=np.int64)
    fb_free = bool(len(fb)) and bool(np.all(life.first_sel[fb] > s_B)) and bool(
        np.all(life.solid[fb] <= i + plan.kappa_A - 1))

    if not observe:
        temp2 = temp2 and events["A"] and events["B"]
        temp3 = temp3 and all(events.values())
        temp4 = temp4 and all(events.values())
        cauchy1 = cauchy1 and all(events.values())

    return BottleneckReport(
        i=i, c_i=c, kappa_A=plan.kappa_A, kappa_B=plan.kappa_B, kappa_C=plan.kappa_C,
        rho=f"{rho_bound(params, plan.kappa_C):.6E}", horizon=T,
        mode="observe" if observe else "strict", events=events,
        temp2=bool(temp2), temp3=bool(temp3), temp4=bool(temp4), cauchy1=bool(cauchy1),
        column1_matches_plan=column1_ok, fb_remained_free=fb_free,
        tips_above_top_column=bool(above_top),
        c_i_bound=params.b + params.M * plan.kappa_B + params.h_M,
        deviations=deviations[:max_witnesses * 10], witnesses=witnesses,
    )
