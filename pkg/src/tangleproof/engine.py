"""Step law sampling, the simulation loop and the trace container."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Mapping

import numpy as np

from . import kernels
from .errors import InfeasibleOverride, ProtocolViolation
from .model import (
    NEVER,
    ArrivalDecision,
    Lifecycle,
    ModelParams,
    TangleState,
    check_decision_support,
    frontier_state,
    lifecycle,
    tips_at_lookback,
)
from .rng import RngStream, draws_per_step

INITIAL_TIP_CAPACITY = 64


@dataclass(frozen=True)
class StepLaw:
    """Cumulative tables shared by the kernel and the scalar sampler."""

    cum_theta: np.ndarray
    h_vals: np.ndarray
    cum_eps: np.ndarray
    eps_vals: np.ndarray
    cum_k: np.ndarray
    k_vals: np.ndarray
    width: int

    @classmethod
    def of(cls, params: ModelParams) -> "StepLaw":
        return cls(
            cum_theta=np.cumsum(np.asarray(params.p_theta, dtype=np.float64)),
            h_vals=np.asarray(params.h, dtype=np.int64),
            cum_eps=np.cumsum(np.asarray(params.p_eps, dtype=np.float64)),
            eps_vals=np.asarray(params.eps_support, dtype=np.int64),
            cum_k=np.cumsum(np.asarray(params.p_k, dtype=np.float64)),
            k_vals=np.asarray(params.k_support, dtype=np.int64),
            width=draws_per_step(params.k_max),
        )

    def decide(self, u: np.ndarray, lookback_of) -> ArrivalDecision:
        """Map one row of uniforms to a decision; ``lookback_of(eps)`` gives tips."""
        theta = int(self.h_vals[kernels._category(self.cum_theta, u[0])])
        eps = int(self.eps_vals[kernels._category(self.cum_eps, u[1])])
        k = int(self.k_vals[kernels._category(self.cum_k, u[2])])
        tips = sorted(lookback_of(eps))
        if not tips:
            raise ProtocolViolation("empty lookback tip set")
        lb = len(tips)
        parents = tuple(tips[min(int(u[3 + j] * lb), lb - 1)] for j in range(k))
        return ArrivalDecision(theta, eps, parents)


def make_rng(params: ModelParams, seed: int, substream: int = 0) -> RngStream:
    return RngStream(seed, draws_per_step(params.k_max), substream)


def sample_decision(rng: RngStream, state: TangleState, params: ModelParams | None = None) -> ArrivalDecision:
    """Draw the decision of arrival ``state.now + 1`` from its stream slot."""
    params = params or state.params
    u = rng.step(state.now + 1)
    return StepLaw.of(params).decide(u, lambda e: tips_at_lookback(state, e))


def delta_of(decision: ArrivalDecision, state: TangleState) -> int:
    return len(decision.parent_set & state.free_tips)


def completions_at(state: TangleState) -> int:
    """POW completions at time ``state.now`` (vertices attached by the last step)."""
    lg = state._ledger
    n = state.now
    return sum(1 for hk in state.params.h if (k := n - hk) >= 1 and lg.theta[k] == hk)


@dataclass(frozen=True)
class StepRecord:
    """One CSV row: arrival ``n`` and the frontier it decided against."""

    n: int
    decision: ArrivalDecision
    L: int
    F: int
    W: int
    delta: int
    completions: int


@dataclass(frozen=True, eq=False)
class Trace:
    """Everything one run produced.

    Per-state arrays ``L``, ``F``, ``W`` are indexed by state ``s = 0..T``.
    Per-arrival arrays ``theta``, ``eps``, ``npar``, ``parents``, ``delta``
    and ``completions`` are indexed by vertex id (row 0 is the genesis).
    """

    params: ModelParams
    seed: int
    T: int
    theta: np.ndarray
    eps: np.ndarray
    npar: np.ndarray
    parents: np.ndarray
    delta: np.ndarray
    completions: np.ndarray
    L: np.ndarray
    F: np.ndarray
    W: np.ndarray
    strict: bool = True

    def __len__(self):
        return self.T

    def decision(self, n: int) -> ArrivalDecision:
        if not 1 <= n <= self.T:
            raise IndexError(f"arrival {n} outside 1..{self.T}")
        return ArrivalDecision(int(self.theta[n]), int(self.eps[n]),
                               tuple(int(p) for p in self.parents[n, : self.npar[n]]))

    def step(self, n: int) -> StepRecord:
        d = self.decision(n)
        return StepRecord(n, d, int(self.L[n - 1]), int(self.F[n - 1]), int(self.W[n - 1]),
                          int(self.delta[n]), int(self.completions[n]))

    @property
    def steps(self) -> list[StepRecord]:
        return [self.step(n) for n in range(1, self.T + 1)]

    def parent_tuples(self) -> list[tuple[int, ...]]:
        return [()] + [tuple(int(p) for p in self.parents[v, : self.npar[v]]) for v in range(1, self.T + 1)]

    @cached_property
    def life(self) -> Lifecycle:
        return lifecycle(self.theta, self.parents)

    def state(self, s: int) -> TangleState:
        if not 0 <= s <= self.T:
            raise IndexError(f"state {s} outside 0..{self.T}")
        return frontier_state(self.params, self.theta.tolist(), self.eps.tolist(),
                              self.parent_tuples(), s, self.life)

    @cached_property
    def final_state(self) -> TangleState:
        return self.state(self.T)

    def overrides(self, lo: int = 1, hi: int | None = None) -> dict[int, ArrivalDecision]:
        hi = self.T if hi is None else hi
        return {n: self.decision(n) for n in range(lo, hi + 1)}

    def same_as(self, other: "Trace") -> bool:
        return not diff_traces(self, other)


_ARRAYS = ("theta", "eps", "npar", "parents", "delta", "completions", "L", "F", "W")


def diff_traces(a: Trace, b: Trace, limit: int = 20) -> list[str]:
    """Human-readable differences; empty when the traces are identical."""
    out = []
    if a.params != b.params:
        out.append("params differ")
    if a.T != b.T:
        out.append(f"length {a.T} != {b.T}")
        return out
    if a.strict != b.strict:
        out.append("strict flag differs")
    for name in _ARRAYS:
        x, y = getattr(a, name), getattr(b, name)
        if x.shape != y.shape:
            out.append(f"{name}: shape {x.shape} != {y.shape}")
            continue
        bad = np.flatnonzero(np.any((x != y).reshape(len(x), -1), axis=1))
        for i in bad[:limit]:
            out.append(f"{name}[{int(i)}]: {x[i].tolist()} != {y[i].tolist()}")
    return out


def _override_arrays(T: int, k_max: int, overrides: Mapping[int, ArrivalDecision] | None,
                     params: ModelParams, strict: bool):
    mask = np.zeros(T + 1, dtype=np.bool_)
    th = np.zeros(T + 1, dtype=np.int64)
    ep = np.zeros(T + 1, dtype=np.int64)
    kk = np.zeros(T + 1, dtype=np.int64)
    par = np.full((T + 1, k_max), -1, dtype=np.int64)
    for n, d in (overrides or {}).items():
        n = int(n)
        if not 1 <= n <= T:
            raise InfeasibleOverride(n, f"override step outside 1..{T}")
        reason = check_decision_support(params, d, strict=strict)
        if reason:
            raise InfeasibleOverride(n, reason)
        mask[n] = True
        th[n] = d.theta
        ep[n] = d.eps
        kk[n] = len(d.parents)
        par[n, : len(d.parents)] = d.parents
    return mask, th, ep, kk, par


def run(params: ModelParams, seed: int, T: int,
        overrides: Mapping[int, ArrivalDecision] | None = None, *,
        strict: bool = True, chunk: int = 1 << 16) -> Trace:
    """Simulate arrivals ``1..T``.

    Decisions in ``overrides`` replace the sampled ones after validation;
    the random stream is consumed identically either way.
    """
    if int(T) < 1:
        raise ValueError("T must be >= 1")
    T = int(T)
    law = StepLaw.of(params)
    rng = make_rng(params, seed)
    ov = _override_arrays(T, params.k_max, overrides, params, strict)
    return _execute(params, seed, T, law, rng, ov, strict, chunk)


def _execute(params, seed, T, law, rng, ov, strict, chunk) -> Trace:
    k_max = params.k_max
    R = params.eps_max + 1
    cap = INITIAL_TIP_CAPACITY
    theta = np.zeros(T + 1, dtype=np.int64)
    eps = np.zeros(T + 1, dtype=np.int64)
    npar = np.zeros(T + 1, dtype=np.int64)
    par = np.full((T + 1, k_max), -1, dtype=np.int64)
    fsel = np.full(T + 1, NEVER, dtype=np.int64)
    tip_arr = np.zeros(cap, dtype=np.int64)
    tip_pos = np.full(T + 1, -1, dtype=np.int64)
    tip_pos[0] = 0
    hist = np.zeros((R, cap), dtype=np.int64)
    hist_len = np.ones(R, dtype=np.int64)
    counts = np.array([1, 1], dtype=np.int64)
    out = np.zeros((T + 1, 5), dtype=np.int64)

    start = 1
    while start <= T:
        count = min(chunk, T + 1 - start)
        U = rng.block(start, count)
        n0, n1 = start, start + count
        while True:
            status, step, parent = kernels.step_kernel(
                n0, n1, U[n0 - start:],
                law.cum_theta, law.h_vals, law.cum_eps, law.eps_vals, law.cum_k, law.k_vals,
                ov[0], ov[1], ov[2], ov[3], ov[4], strict,
                theta, eps, npar, par, fsel, tip_arr, tip_pos, hist, hist_len, counts, out)
            if status == kernels.OK:
                break
            if status == kernels.INFEASIBLE:
                raise InfeasibleOverride(int(step), f"parent {int(parent)} not in lookback tip set",
                                         parent=int(parent))
            cap *= 2
            grown = np.zeros(cap, dtype=np.int64)
            grown[: len(tip_arr)] = tip_arr
            tip_arr = grown
            grown_h = np.zeros((R, cap), dtype=np.int64)
            grown_h[:, : hist.shape[1]] = hist
            hist = grown_h
            n0 = int(step)
        start = n1

    L = np.empty(T + 1, dtype=np.int64)
    F = np.empty(T + 1, dtype=np.int64)
    L[:T] = out[1:, 0]
    F[:T] = out[1:, 1]
    L[T] = counts[0]
    F[T] = counts[1]
    return Trace(params=params, seed=int(seed), T=T, theta=theta, eps=eps, npar=npar,
                 parents=par, delta=out[:, 3].copy(), completions=out[:, 4].copy(),
                 L=L, F=F, W=L - F, strict=strict)


def replay(trace: Trace) -> Trace:
    """Re-execute the recorded decisions through the step kernel."""
    params, T = trace.params, trace.T
    mask = np.ones(T + 1, dtype=np.bool_)
    mask[0] = False
    ov = (mask, trace.theta.copy(), trace.eps.copy(), trace.npar.copy(), trace.parents.copy())
    law = StepLaw.of(params)
    return _execute(params, trace.seed, T, law, make_rng(params, trace.seed), ov, trace.strict, 1 << 16)


def thread_count() -> int:
    raw = os.environ.get("TANGLEPROOF_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        n = os.cpu_count() or 1
    return max(1, n)


def run_many(params: ModelParams, seeds: Iterable[int], T: int, threads: int | None = None) -> list[Trace]:
    """Independent replicas; the kernel releases the GIL so threads overlap."""
    seeds = list(seeds)
    threads = min(threads or thread_count(), max(1, len(seeds)))
    if threads == 1:
        return [run(params, s, T) for s in seeds]
    with ThreadPoolExecutor(threads) as pool:
        return list(pool.map(lambda s: run(params, s, T), seeds))


def recount_completions(theta: np.ndarray, h: Iterable[int], T: int) -> np.ndarray:
    """Completions per time from scratch: count ids ``j >= 1`` with ``j + theta_j = n``."""
    out = np.zeros(T + 1, dtype=np.int64)
    for hk in h:
        j = np.arange(1, T + 1 - hk)
        hit = j[theta[j] == hk]
        np.add.at(out, hit + hk, 1)
    return out
