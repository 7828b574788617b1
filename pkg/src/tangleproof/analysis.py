"""Read-only analytics over traces and graphs.

Edges point from a vertex to its parents, so a directed path always runs
towards smaller ids and every vertex has a directed path to the root 0.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Mapping

import numpy as np

from . import kernels
from .bottleneck import BottleneckPlan, kappa_values
from .engine import Trace
from .errors import StabilizationError, UnknownVertexError
from .model import TangleState


class Dag:
    """Rooted DAG given by parent lists; vertex 0 is always present."""

    def __init__(self, parents: Mapping[int, Iterable[int]]):
        self.parents: dict[int, tuple[int, ...]] = {int(v): tuple(sorted(set(int(p) for p in ps)))
                                                    for v, ps in parents.items()}
        self.parents.setdefault(0, ())

    @classmethod
    def from_state(cls, state: TangleState) -> "Dag":
        """Solid graph of a state."""
        return cls({v: state.parents_of(v) for v in state.solid_vertices})

    @classmethod
    def from_trace(cls, trace: Trace, s: int | None = None, *, solid: bool = True) -> "Dag":
        """Graph at state ``s``: solid vertices only, or every arrival up to ``s``."""
        s = trace.T if s is None else s
        ids = trace.life.solid_at(s) if solid else np.arange(s + 1)
        return cls({int(v): trace.parents[v, : trace.npar[v]].tolist() for v in ids})

    def __contains__(self, v) -> bool:
        return v in self.parents

    def __len__(self):
        return len(self.parents)

    @property
    def vertices(self) -> frozenset[int]:
        return frozenset(self.parents)

    @property
    def edges(self) -> frozenset[tuple[int, int]]:
        return frozenset((v, p) for v, ps in self.parents.items() for p in ps)

    @cached_property
    def dist(self) -> dict[int, int]:
        """Directed distance from each vertex to the root."""
        d = {0: 0}
        for v in sorted(self.parents):
            ps = [d[p] for p in self.parents[v] if p in d]
            if v and ps:
                d[v] = 1 + min(ps)
        return d


def as_dag(graph) -> Dag:
    if isinstance(graph, Dag):
        return graph
    if isinstance(graph, TangleState):
        return Dag.from_state(graph)
    if isinstance(graph, Trace):
        return Dag.from_trace(graph, solid=False)
    raise TypeError(f"cannot read a graph from {type(graph).__name__}")


def reachable(graph, src: int, dst: int) -> bool:
    """True iff a directed path leads from ``src`` down to ``dst``."""
    g = as_dag(graph)
    for v in (src, dst):
        if v not in g:
            raise UnknownVertexError(f"vertex {v} not in graph")
    if src == dst:
        return True
    seen = {src}
    stack = [src]
    while stack:
        v = stack.pop()
        for p in g.parents[v]:
            if p == dst:
                return True
            if p > dst and p not in seen:
                seen.add(p)
                stack.append(p)
    return False


def ancestors(graph, sources: Iterable[int]) -> set[int]:
    """Every vertex reachable from some source, sources included."""
    g = as_dag(graph)
    seen = set(sources)
    queue = deque(seen)
    while queue:
        v = queue.popleft()
        for p in g.parents[v]:
            if p not in seen:
                seen.add(p)
                queue.append(p)
    return seen


# ---------------------------------------------------------------------------
# Confirmation


def confirmation_cut(trace: Trace, T: int) -> np.ndarray:
    """Tips of the last eps_max+1 states plus everything still in flight at ``T``."""
    life = trace.life
    parts = [life.tips_at(s) for s in range(T - trace.params.eps_max, T + 1)]
    parts.append(life.inflight_at(T))
    return np.unique(np.concatenate(parts))


def confirmed_set(trace: Trace, T: int) -> frozenset[int]:
    """Solid vertices at ``T`` reached by every member of the cut.

    Any arrival after ``T`` picks parents among tips of some state at or
    after ``T - eps_max``, and each such tip descends into the cut, so this
    is a sound certificate of confirmation.
    """
    if not 0 <= T <= trace.T:
        raise IndexError(f"horizon {T} outside 0..{trace.T}")
    cut = confirmation_cut(trace, T)
    masks = kernels.reached_by(trace.parents, trace.npar, T, cut.astype(np.int64))
    full = kernels.full_mask(len(cut))
    solid = trace.life.solid_at(T)
    ok = np.all(masks[solid] == full, axis=1)
    return frozenset(solid[ok].tolist())


def confirmed_fraction(trace: Trace, T: int) -> float:
    """Share of non-root solid vertices that are confirmed; the root always is."""
    conf = confirmed_set(trace, T)
    n = len(trace.life.solid_at(T)) - 1
    return (len(conf - {0}) / n) if n > 0 else 0.0


# ---------------------------------------------------------------------------
# Coupled walk and tip recurrence


@dataclass
class MartingaleMonitor:
    """Free-tip count against its coupled walk from arrival ``alpha`` on.

    ``F[m]`` and ``Y[m]`` hold the values before arrival ``alpha + m``.
    """

    alpha: int
    F: np.ndarray
    Y: np.ndarray
    max_gap: int
    bound: int
    a: int
    b: int
    first_F_hit: int | None
    first_L_hit: int | None

    @property
    def within_bound(self) -> bool:
        return self.max_gap <= self.bound


def _default_a(params) -> int:
    delta = 2 * (params.h_M - params.h_1)
    return params.w_max + 3 * params.M * params.eps_max + 2 + 3 * delta


def martingale_check(trace: Trace, alpha: int, *, a: int | None = None, b: int | None = None) -> MartingaleMonitor:
    """Couple F with Y(n) = F(alpha) + (n - alpha) - sum of deltas."""
    if not 1 <= alpha <= trace.T:
        raise IndexError(f"anchor {alpha} outside 1..{trace.T}")
    params = trace.params
    a = _default_a(params) if a is None else a
    b = params.b if b is None else b
    F = trace.F[alpha - 1:]
    steps = 1 - trace.delta[alpha:]
    Y = np.empty_like(F)
    Y[0] = F[0]
    Y[1:] = F[0] + np.cumsum(steps)
    gap = int(np.abs(F - Y)[1:].max()) if len(F) > 1 else 0
    f_hits = np.flatnonzero(F <= a)
    l_hits = np.flatnonzero(trace.L[alpha - 1:] <= b)
    return MartingaleMonitor(
        alpha=alpha, F=F, Y=Y, max_gap=gap, bound=2 * (params.h_M - params.h_1), a=a, b=b,
        first_F_hit=int(f_hits[0]) + alpha if len(f_hits) else None,
        first_L_hit=int(l_hits[0]) + alpha if len(l_hits) else None,
    )


def completion_window(trace: Trace, alpha: int, n: int) -> tuple[int, int, int]:
    """Completions at times ``alpha..n-1`` with the band ``(n-alpha) +- (h_M-h_1)``."""
    if not 1 <= alpha < n <= trace.T + 1:
        raise IndexError(f"window [{alpha}, {n}) outside 1..{trace.T + 1}")
    slack = trace.params.h_M - trace.params.h_1
    count = int(trace.completions[alpha:n].sum())
    return count, n - alpha - slack, n - alpha + slack


@dataclass
class TipRecurrence:
    b: int
    hits: np.ndarray
    spaced_hits: list[int]
    spacing: int
    excursions: np.ndarray
    open_excursion: int | None
    below_admissible: bool

    @property
    def completed(self) -> int:
        return len(self.excursions)

    @property
    def max_excursion(self) -> int:
        lengths = list(self.excursions[:, 1] - self.excursions[:, 0]) if len(self.excursions) else []
        return int(max(lengths, default=0))

    def to_dict(self) -> dict:
        return {
            "b": self.b, "hit_count": int(len(self.hits)), "spaced_hits": len(self.spaced_hits),
            "spacing": self.spacing, "completed_excursions": self.completed,
            "max_excursion": self.max_excursion, "open_excursion": self.open_excursion,
            "below_admissible": self.below_admissible,
        }


def tip_recurrence(trace: Trace, b: int | None = None, kappa_C: int | None = None) -> TipRecurrence:
    """Visits of the tip count to ``[0, b]`` and the excursions above ``b``.

    Steps are arrival indices: ``n`` refers to the frontier before arrival
    ``n``, for ``n = 1 .. T+1``.
    """
    params = trace.params
    b = params.b if b is None else b
    if kappa_C is None:
        kappa_C = kappa_values(params, b)[2]
    L = trace.L  # L[n-1] is the value before arrival n
    low = L <= b
    hits = np.flatnonzero(low) + 1
    spaced = []
    for n in hits.tolist():
        if not spaced or n - spaced[-1] > 2 * kappa_C:
            spaced.append(n)
    # runs above b: boundaries where `low` flips
    flips = np.flatnonzero(np.diff(low.astype(np.int8))) + 1
    starts = [int(x) + 1 for x in flips if not low[x]]
    ends = [int(x) + 1 for x in flips if low[x]]
    exc = []
    open_exc = None
    ei = 0
    for s in starts:
        while ei < len(ends) and ends[ei] <= s:
            ei += 1
        if ei < len(ends):
            exc.append((s, ends[ei]))
        else:
            open_exc = s
    return TipRecurrence(
        b=b, hits=hits, spaced_hits=spaced, spacing=2 * kappa_C,
        excursions=np.array(exc, dtype=np.int64).reshape(-1, 2),
        open_excursion=open_exc, below_admissible=b <= params.b_min,
    )


# ---------------------------------------------------------------------------
# Local metric


@dataclass(frozen=True)
class RBallCode:
    r: int
    code: bytes


def rball_code(graph, r: int) -> RBallCode:
    """Canonical bytes of the r-ball around the root.

    Vertices are listed by (distance, id), each with its parents inside the
    ball, so equal balls give equal bytes.
    """
    g = as_dag(graph)
    d = g.dist
    ball = sorted((dv, v) for v, dv in d.items() if dv <= r)
    out = []
    for dv, v in ball:
        ps = [p for p in g.parents[v] if d.get(p, r + 1) <= r]
        out.extend((v, dv, len(ps), *ps))
    return RBallCode(r, np.asarray(out, dtype=np.int64).tobytes())


def first_difference_radius(a, b) -> int | None:
    """Smallest radius at which the root balls of two graphs differ."""
    ga, gb = as_dag(a), as_dag(b)
    da, db = ga.dist, gb.dist
    inf = float("inf")
    best = inf
    for v in set(da) | set(db):
        x, y = da.get(v, inf), db.get(v, inf)
        if x != y:
            best = min(best, x, y)
    for e in ga.edges ^ gb.edges:
        v, p = e
        la = max(da.get(v, inf), da.get(p, inf)) if e in ga.edges else inf
        lb = max(db.get(v, inf), db.get(p, inf)) if e in gb.edges else inf
        best = min(best, la, lb)
    return None if best == inf else int(best)


def d_star(a, b) -> Fraction:
    """(r+1)^-1 for the largest radius r of identical root balls; 0 if equal."""
    r_fail = first_difference_radius(a, b)
    return Fraction(0) if r_fail is None else Fraction(1, r_fail)


def snapshot_d_star(trace: Trace, s: int, s2: int) -> Fraction:
    """d_* between the solid graphs of two states of one trace."""
    lo, hi = sorted((s, s2))
    dist = trace_root_distance(trace)
    life = trace.life
    new = np.flatnonzero((life.solid > lo) & (life.solid <= hi))
    if not len(new):
        return Fraction(0)
    return Fraction(1, int(dist[new].min()))


def trace_root_distance(trace: Trace) -> np.ndarray:
    return kernels.root_distance(trace.parents, trace.npar, trace.T)


def trace_ball_code(trace: Trace, s: int, r: int, dist: np.ndarray | None = None) -> RBallCode:
    dist = trace_root_distance(trace) if dist is None else dist
    life = trace.life
    ids = np.flatnonzero((life.solid[: s + 1] <= s) & (dist[: s + 1] <= r))
    order = np.lexsort((ids, dist[ids]))
    out = []
    for v in ids[order].tolist():
        ps = sorted({int(p) for p in trace.parents[v, : trace.npar[v]] if dist[p] <= r})
        out.extend((v, int(dist[v]), len(ps), *ps))
    return RBallCode(r, np.asarray(out, dtype=np.int64).tobytes())


@dataclass
class Stabilization:
    r0: int
    snapshots: list[int] = field(default_factory=list)
    code: bytes = b""


def stabilization_check(trace: Trace, plan: BottleneckPlan, grid: int = 8) -> Stabilization:
    dist = trace_root_distance(trace)
    tips = trace.life.tips_at(plan.i - 1)
    r0 = int(dist[tips].min())
    first = plan.end
    if first > trace.T:
        raise StabilizationError(f"trace ends before state {first}")
    life = trace.life
    late = np.flatnonzero((life.solid > first) & (life.solid <= trace.T) & (dist <= r0))
    if len(late):
        v = int(late[0])
        raise StabilizationError(f"vertex {v} at distance {int(dist[v])} entered the {r0}-ball", vertex=v)
    snaps = sorted(set(np.linspace(first, trace.T, grid + 2).astype(int).tolist()))
    codes = [trace_ball_code(trace, s, r0, dist).code for s in snaps]
    for s, c in zip(snaps, codes):
        if c != codes[0]:
            raise StabilizationError(f"{r0}-ball at state {s} differs from state {first}")
    return Stabilization(r0, snaps, codes[0])


def stabilization_radius(trace: Trace, plan: BottleneckPlan) -> int:
    """Minimum root distance over the tips before arrival ``plan.i``.

    Raises when the ball of that radius changes after the plan ends.
    """
    return stabilization_check(trace, plan).r0
