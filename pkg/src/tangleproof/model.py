"""Tangle data model: parameters, vertex records, immutable ledger states.

Time convention. Vertex ids are arrival times. A state with ``now == s`` is
the ledger after arrival ``s`` has been appended and after every POW that
finishes at time ``s`` has been attached. Arrival ``n`` therefore decides
against the state with ``now == n - 1``, and a lookback of ``eps`` reads the
tip set stored ``eps`` steps before that.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    ConfigurationError,
    OutOfHistoryError,
    ProtocolViolation,
    UnknownVertexError,
)

NEVER = np.iinfo(np.int64).max // 4
PROB_TOL = 1e-12


def _as_int_tuple(name, values) -> tuple[int, ...]:
    try:
        out = tuple(int(v) for v in values)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{name} must be a sequence of integers") from exc
    for raw, v in zip(values, out):
        if isinstance(raw, float) and raw != v:
            raise ConfigurationError(f"{name} must contain integers, got {raw!r}")
    return out


def _check_probs(name, probs, n) -> tuple[float, ...]:
    probs = tuple(float(p) for p in probs)
    if len(probs) != n:
        raise ConfigurationError(f"{name} has {len(probs)} entries, expected {n}")
    if any(not math.isfinite(p) or p <= 0 for p in probs):
        raise ConfigurationError(f"{name}: every probability must be strictly positive")
    if abs(math.fsum(probs) - 1.0) > PROB_TOL:
        raise ConfigurationError(f"{name}: probabilities do not sum to 1")
    return probs


def b_min_for(h: Sequence[int], eps_max: int, k_max: int = 2) -> int:
    """Smallest excluded tip threshold; ``b`` must be strictly larger.

    With ``k_max`` parents the pending-tip bound is ``k_max*h_M`` and the
    threshold is ``k_max*h_M + a_star + 3*delta``; at ``k_max == 2`` this is
    ``10h_M - 6h_1 + 3M eps_max + 2``.
    """
    h_1, h_M, M = h[0], h[-1], len(h)
    return 2 * k_max * h_M + 3 * M * eps_max + 2 + 6 * (h_M - h_1)


@dataclass(frozen=True)
class ModelParams:
    """All constants of one model instance.

    ``k_support``/``p_k`` give a per-arrival parent-count law; when omitted,
    every arrival draws exactly ``k_parents`` parents.
    """

    h: tuple[int, ...]
    p_theta: tuple[float, ...]
    eps_support: tuple[int, ...]
    p_eps: tuple[float, ...]
    k_parents: int = 2
    b: int | None = None
    k_support: tuple[int, ...] | None = None
    p_k: tuple[float, ...] | None = None

    def __post_init__(self):
        h = _as_int_tuple("h", self.h)
        if not h:
            raise ConfigurationError("h must be non-empty")
        if any(x < 1 for x in h):
            raise ConfigurationError("h: every POW duration must be >= 1")
        if any(a >= b for a, b in zip(h, h[1:])):
            raise ConfigurationError("h not strictly increasing")
        if h[-1] < 2:
            raise ConfigurationError("h: largest POW duration h_M must be >= 2")
        p_theta = _check_probs("p_theta", self.p_theta, len(h))

        eps = _as_int_tuple("eps_support", self.eps_support)
        if not eps or any(e < 1 for e in eps):
            raise ConfigurationError("eps_support must hold positive integers")
        if len(set(eps)) != len(eps):
            raise ConfigurationError("eps_support has duplicate entries")
        p_eps = _check_probs("p_eps", self.p_eps, len(eps))
        order = sorted(range(len(eps)), key=eps.__getitem__)
        eps = tuple(eps[i] for i in order)
        p_eps = tuple(p_eps[i] for i in order)

        if self.k_support is None:
            k = int(self.k_parents)
            if k < 1:
                raise ConfigurationError("k_parents must be >= 1")
            k_support, p_k = (k,), (1.0,)
        else:
            k_support = _as_int_tuple("k_support", self.k_support)
            if not k_support or any(k < 1 for k in k_support):
                raise ConfigurationError("k_support must hold integers >= 1")
            if any(a >= b for a, b in zip(k_support, k_support[1:])):
                raise ConfigurationError("k_support not strictly increasing")
            p_k = _check_probs("p_k", self.p_k if self.p_k is not None else (), len(k_support))
            k = k_support[-1]

        object.__setattr__(self, "h", h)
        object.__setattr__(self, "p_theta", p_theta)
        object.__setattr__(self, "eps_support", eps)
        object.__setattr__(self, "p_eps", p_eps)
        object.__setattr__(self, "k_parents", k)
        object.__setattr__(self, "k_support", k_support)
        object.__setattr__(self, "p_k", p_k)

        bmin = b_min_for(h, eps[-1], k_support[-1])
        b = bmin + 1 if self.b is None else int(self.b)
        if b <= bmin:
            raise ConfigurationError(f"b={b} must exceed b_min={bmin}")
        object.__setattr__(self, "b", b)

    @property
    def M(self) -> int:
        return len(self.h)

    @property
    def h_1(self) -> int:
        return self.h[0]

    @property
    def h_M(self) -> int:
        return self.h[-1]

    @property
    def eps_min(self) -> int:
        return self.eps_support[0]

    @property
    def eps_max(self) -> int:
        return self.eps_support[-1]

    @property
    def k_max(self) -> int:
        return self.k_support[-1]

    @property
    def k_min(self) -> int:
        return self.k_support[0]

    @property
    def random_k(self) -> bool:
        return len(self.k_support) > 1

    @property
    def b_min(self) -> int:
        return b_min_for(self.h, self.eps_max, self.k_max)

    @property
    def w_max(self) -> int:
        """Upper bound on pending tips: at most h_M in-flight arrivals, k_max parents each."""
        return self.k_max * self.h_M

    def with_b(self, b: int) -> "ModelParams":
        return ModelParams(**{**self.to_dict(), "b": b})

    def to_dict(self) -> dict:
        d = {
            "h": list(self.h),
            "p_theta": list(self.p_theta),
            "eps_support": list(self.eps_support),
            "p_eps": list(self.p_eps),
            "k_parents": self.k_parents,
            "b": self.b,
        }
        if self.random_k:
            d["k_support"] = list(self.k_support)
            d["p_k"] = list(self.p_k)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelParams":
        keys = ("h", "p_theta", "eps_support", "p_eps", "k_parents", "b", "k_support", "p_k")
        unknown = set(d) - set(keys)
        if unknown:
            raise ConfigurationError(f"unknown model fields: {sorted(unknown)}")
        return cls(**{k: d[k] for k in keys if k in d})


def reference_params(b: int = 33, **overrides) -> ModelParams:
    """The reference instance h=(2,3), uniform POW, eps in {1,2}, two parents."""
    base = dict(h=(2, 3), p_theta=(0.5, 0.5), eps_support=(1, 2), p_eps=(0.5, 0.5), k_parents=2, b=b)
    base.update(overrides)
    return ModelParams(**base)


@dataclass(frozen=True)
class ArrivalDecision:
    """Randomness of one arrival; ``parents`` keeps repeated draws."""

    theta: int
    eps: int
    parents: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "theta", int(self.theta))
        object.__setattr__(self, "eps", int(self.eps))
        object.__setattr__(self, "parents", tuple(int(p) for p in self.parents))

    @property
    def parent_set(self) -> frozenset[int]:
        return frozenset(self.parents)


@dataclass(frozen=True)
class VertexRecord:
    id: int
    theta: int
    eps: int
    parents: tuple[int, ...]

    @property
    def completion_time(self) -> int:
        return self.id + self.theta

    @property
    def parent_set(self) -> frozenset[int]:
        return frozenset(self.parents)


class _Ledger:
    """Append-only per-vertex storage shared by successive snapshots.

    A snapshot only reads ids ``<= now``. Stepping an old snapshot whose
    ledger has already grown past it forks a private copy of the prefix.
    """

    __slots__ = ("theta", "eps", "parents")

    def __init__(self, theta=None, eps=None, parents=None):
        self.theta: list[int] = theta if theta is not None else [0]
        self.eps: list[int] = eps if eps is not None else [0]
        self.parents: list[tuple[int, ...]] = parents if parents is not None else [()]

    def __len__(self):
        return len(self.theta)

    def prefix(self, n: int) -> "_Ledger":
        return _Ledger(self.theta[:n], self.eps[:n], self.parents[:n])

    def append(self, d: ArrivalDecision):
        self.theta.append(d.theta)
        self.eps.append(d.eps)
        self.parents.append(d.parents)


@dataclass(frozen=True, eq=False)
class TangleState:
    """Immutable snapshot of the ledger at step ``now``.

    Frontier sets are stored; the solid and in-flight graphs are derived
    lazily from the shared ledger.
    """

    params: ModelParams
    now: int
    tips: frozenset[int]
    free_tips: frozenset[int]
    inflight: frozenset[int]
    tip_history: tuple[frozenset[int], ...]
    _ledger: _Ledger = field(repr=False)

    @property
    def pending_tips(self) -> frozenset[int]:
        return self.tips - self.free_tips

    @property
    def L(self) -> int:
        return len(self.tips)

    @property
    def F(self) -> int:
        return len(self.free_tips)

    @property
    def W(self) -> int:
        return len(self.tips) - len(self.free_tips)

    @property
    def inflight_vertices(self) -> frozenset[int]:
        return self.inflight

    @cached_property
    def solid_vertices(self) -> frozenset[int]:
        return frozenset(range(self.now + 1)) - self.inflight

    @cached_property
    def solid_edges(self) -> frozenset[tuple[int, int]]:
        par = self._ledger.parents
        return frozenset((v, p) for v in self.solid_vertices for p in par[v])

    @cached_property
    def inflight_edges(self) -> frozenset[tuple[int, int]]:
        par = self._ledger.parents
        return frozenset((v, p) for v in self.inflight for p in par[v])

    def record(self, v: int) -> VertexRecord:
        if not 0 <= v <= self.now:
            raise UnknownVertexError(f"vertex {v} has not arrived by step {self.now}")
        lg = self._ledger
        return VertexRecord(v, lg.theta[v], lg.eps[v], lg.parents[v])

    @property
    def records(self) -> dict[int, VertexRecord]:
        return {v: self.record(v) for v in range(self.now + 1)}

    def parents_of(self, v: int) -> frozenset[int]:
        return frozenset(self._ledger.parents[v])

    def _key(self):
        lg = self._ledger
        n = self.now + 1
        return (self.params, self.now, self.tips, self.free_tips, self.inflight,
                self.tip_history, tuple(lg.theta[:n]), tuple(lg.eps[:n]), tuple(lg.parents[:n]))

    def __eq__(self, other):
        if not isinstance(other, TangleState):
            return NotImplemented
        return self._key() == other._key()

    def __hash__(self):
        return hash((self.now, self.tips, self.free_tips))


def new_genesis(params: ModelParams) -> TangleState:
    if not isinstance(params, ModelParams):
        raise ConfigurationError("params must be a ModelParams instance")
    root = frozenset({0})
    return TangleState(
        params=params,
        now=0,
        tips=root,
        free_tips=root,
        inflight=frozenset(),
        tip_history=(root,) * (params.eps_max + 1),
        _ledger=_Ledger(),
    )


def tips_at_lookback(state: TangleState, depth: int) -> frozenset[int]:
    """Tip set stored ``depth`` steps before ``state.now``; {0} before genesis."""
    if not 0 <= depth <= state.params.eps_max:
        raise OutOfHistoryError(f"lookback depth {depth} outside [0, {state.params.eps_max}]")
    return state.tip_history[depth]


def check_decision_support(params: ModelParams, d: ArrivalDecision, *, strict: bool = True) -> str | None:
    """Return a reason string when ``d`` lies outside the per-step law's support."""
    if d.theta not in params.h:
        return f"theta={d.theta} not in h={params.h}"
    if d.eps not in params.eps_support:
        return f"eps={d.eps} not in eps_support={params.eps_support}"
    if not d.parents:
        return "no parents"
    if strict and len(d.parents) not in params.k_support:
        return f"{len(d.parents)} parents, allowed counts {params.k_support}"
    if len(d.parents) > params.k_max:
        return f"{len(d.parents)} parents exceeds k_max={params.k_max}"
    return None


def apply_step(state: TangleState, decision: ArrivalDecision, *, strict: bool = True) -> TangleState:
    """Append arrival ``state.now + 1`` and attach every POW finishing then.

    ``strict=False`` skips the lookback-membership check; it exists for
    hand-drawn graphs that are not trajectories of the model.
    """
    params = state.params
    n = state.now + 1
    reason = check_decision_support(params, decision, strict=strict)
    if reason:
        raise ProtocolViolation(f"arrival {n}: {reason}")
    if strict:
        look = state.tip_history[decision.eps]
        for p in decision.parents:
            if p not in look:
                raise ProtocolViolation(
                    f"arrival {n}: parent {p} not in lookback tips at depth {decision.eps}"
                )
    else:
        for p in decision.parents:
            if not 0 <= p < n:
                raise ProtocolViolation(f"arrival {n}: parent {p} out of range")

    lg = state._ledger
    if len(lg) != n:
        lg = lg.prefix(n)
    lg.append(decision)

    tips = set(state.tips)
    free = set(state.free_tips)
    free.difference_update(decision.parents)

    finished = [k for hk in params.h if (k := n - hk) >= 1 and lg.theta[k] == hk]
    inflight = set(state.inflight)
    inflight.difference_update(finished)
    inflight.add(n)
    for k in finished:
        tips.add(k)
        free.add(k)
    for k in finished:
        for p in lg.parents[k]:
            tips.discard(p)
            free.discard(p)
    # a completed vertex that was itself selected while in flight is pending
    free.difference_update(v for v in finished if _was_selected(lg, v, n))

    tips_f = frozenset(tips)
    return TangleState(
        params=params,
        now=n,
        tips=tips_f,
        free_tips=frozenset(free),
        inflight=frozenset(inflight),
        tip_history=(tips_f,) + state.tip_history[:-1],
        _ledger=lg,
    )


def _was_selected(lg: _Ledger, v: int, upto: int) -> bool:
    # only reachable off-model (strict=False); arrivals in the model select solid tips
    return any(v in lg.parents[c] for c in range(v + 1, upto + 1))


def degrees(state: TangleState, v: int) -> tuple[int, int]:
    """(in, out) degree of solid vertex ``v`` in the solid graph."""
    if v not in state.solid_vertices:
        raise UnknownVertexError(f"vertex {v} is not solid at step {state.now}")
    lg = state._ledger
    out_deg = len(set(lg.parents[v]))
    in_deg = 0
    for c in range(v + 1, state.now + 1):
        if c + lg.theta[c] <= state.now and v in lg.parents[c]:
            in_deg += 1
    return in_deg, out_deg


def in_degree_bound(params: ModelParams) -> int:
    """Largest in-degree the dynamics allow: h_M + eps_max + 1."""
    return params.h_M + params.eps_max + 1


def state_from_decisions(params: ModelParams, decisions: Iterable[ArrivalDecision], *,
                         strict: bool = True) -> TangleState:
    state = new_genesis(params)
    for d in decisions:
        state = apply_step(state, d, strict=strict)
    return state


# ---------------------------------------------------------------------------
# Closed-form lifecycle of every vertex, used for bulk queries over traces.

@dataclass(frozen=True)
class Lifecycle:
    """Per-vertex event times from which every frontier set follows.

    ``v`` is a tip at state ``s`` iff ``solid[v] <= s < cover[v]``, pending
    iff additionally ``first_sel[v] <= s``, and in flight iff
    ``v <= s < solid[v]``.
    """

    solid: np.ndarray
    first_sel: np.ndarray
    cover: np.ndarray

    def tips_at(self, s: int) -> np.ndarray:
        if s < 0:
            return np.zeros(1, dtype=np.int64)
        m = (self.solid[: s + 1] <= s) & (self.cover[: s + 1] > s)
        return np.flatnonzero(m)

    def free_at(self, s: int) -> np.ndarray:
        if s < 0:
            return np.zeros(1, dtype=np.int64)
        m = (self.solid[: s + 1] <= s) & (self.first_sel[: s + 1] > s)
        return np.flatnonzero(m)

    def inflight_at(self, s: int) -> np.ndarray:
        ids = np.arange(max(s + 1, 0))
        return ids[self.solid[: s + 1] > s]

    def solid_at(self, s: int) -> np.ndarray:
        return np.flatnonzero(self.solid[: s + 1] <= s)


def lifecycle(theta: np.ndarray, parents: np.ndarray) -> Lifecycle:
    """Compute event times from per-vertex arrays (row ``v`` = vertex ``v``).

    ``parents`` is padded with -1.
    """
    n = len(theta)
    ids = np.arange(n, dtype=np.int64)
    solid = ids + np.asarray(theta, dtype=np.int64)
    solid[0] = 0
    child = np.broadcast_to(ids[:, None], parents.shape)
    mask = parents >= 0
    par = parents[mask]
    ch = child[mask]
    first_sel = np.full(n, NEVER, dtype=np.int64)
    cover = np.full(n, NEVER, dtype=np.int64)
    np.minimum.at(first_sel, par, ch)
    np.minimum.at(cover, par, solid[ch])
    return Lifecycle(solid, first_sel, cover)


def frontier_state(params: ModelParams, theta: Sequence[int], eps: Sequence[int],
                   parents: Sequence[tuple[int, ...]], s: int,
                   life: Lifecycle | None = None) -> TangleState:
    """Rebuild the snapshot at step ``s`` from per-vertex data for ids 0..s."""
    if life is None:
        width = max((len(p) for p in parents[: s + 1]), default=1) or 1
        padded = np.full((s + 1, width), -1, dtype=np.int64)
        for v in range(1, s + 1):
            padded[v, : len(parents[v])] = parents[v]
        life = lifecycle(np.asarray(theta[: s + 1]), padded)
    hist = tuple(
        frozenset(life.tips_at(s - d).tolist()) if s - d >= 0 else frozenset({0})
        for d in range(params.eps_max + 1)
    )
    return TangleState(
        params=params,
        now=s,
        tips=hist[0],
        free_tips=frozenset(life.free_at(s).tolist()),
        inflight=frozenset(life.inflight_at(s).tolist()),
        tip_history=hist,
        _ledger=_Ledger(list(theta[: s + 1]), list(eps[: s + 1]), list(parents[: s + 1])),
    )
