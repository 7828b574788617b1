import dataclasses
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import breadth_first_order

from tangleproof import reference_params, run
from tangleproof.analysis import (
    Dag,
    ancestors,
    completion_window,
    confirmation_cut,
    confirmed_fraction,
    confirmed_set,
    d_star,
    first_difference_radius,
    martingale_check,
    rball_code,
    reachable,
    snapshot_d_star,
    stabilization_check,
    tip_recurrence,
    trace_ball_code,
    trace_root_distance,
)
from tangleproof.errors import StabilizationError, UnknownVertexError
from tangleproof.fixtures import load_fixture
from tangleproof.kernels import reached_by


def csgraph_of(trace, upto):
    rows, cols = [], []
    for v in range(1, upto + 1):
        for p in trace.parents[v, : trace.npar[v]]:
            rows.append(v)
            cols.append(int(p))
    n = upto + 1
    return csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))


def bfs_reach(g, src):
    return set(breadth_first_order(g, src, directed=True, return_predecessors=False).tolist())


@pytest.fixture(scope="module")
def small_trace():
    return run(reference_params(), 31, 1500)


# ---------------------------------------------------------------------------
# reachability


def test_reachable_examples():
    fig1 = load_fixture("fig1")
    g = Dag.from_trace(fig1, solid=False)
    assert reachable(g, 3, 3)
    assert reachable(g, 3, 0) and reachable(g, 5, 1)
    assert not reachable(g, 3, 2) and not reachable(g, 0, 1)
    right = load_fixture("fig2_right")
    assert not reachable(right, 3, 2)
    assert reachable(right, 7, 1) and reachable(right, 8, 2)


def test_reachable_unknown_vertex():
    with pytest.raises(UnknownVertexError):
        reachable(Dag({1: [0]}), 2, 0)


def test_reachable_on_states(short_trace):
    s = short_trace.state(200)
    g = Dag.from_state(s)
    assert g.vertices == s.solid_vertices and g.edges == s.solid_edges
    tip = max(s.tips)
    assert reachable(s, tip, 0)


def test_reachability_agrees_with_scipy_bfs(small_trace):
    tr = small_trace
    g = csgraph_of(tr, tr.T)
    dag = Dag.from_trace(tr, solid=False)
    rng = np.random.default_rng(0)
    for src in rng.integers(1, tr.T + 1, 25):
        reach = bfs_reach(g, int(src))
        assert ancestors(dag, [int(src)]) == reach
        for dst in rng.integers(0, int(src) + 1, 20):
            assert reachable(dag, int(src), int(dst)) == (int(dst) in reach)


def test_reached_by_kernel_agrees_with_scipy(small_trace):
    tr = small_trace
    g = csgraph_of(tr, tr.T)
    markers = np.array([tr.T, tr.T - 3, 900, 400, 17], dtype=np.int64)
    masks = reached_by(tr.parents, tr.npar, tr.T, markers)
    for bit, m in enumerate(markers.tolist()):
        reach = bfs_reach(g, m)
        got = {v for v in range(tr.T + 1) if (int(masks[v, 0]) >> bit) & 1}
        assert got == reach


# ---------------------------------------------------------------------------
# confirmation


def test_genesis_confirms_root(params):
    tr = run(params, 0, 1)
    assert confirmed_set(tr, 0) == {0}
    assert confirmed_fraction(tr, 0) == 0.0


def test_figure2_right_confirms_nothing_but_the_root():
    right = load_fixture("fig2_right")
    for T in range(0, right.T + 1, 11):
        assert confirmed_set(right, T) == {0}
        assert confirmed_fraction(right, T) == 0.0


def test_figure2_left_confirms_its_past():
    left = load_fixture("fig2_left")
    conf = confirmed_set(left, left.T)
    assert {1, 2, 3, 4, 5, 6} <= conf
    assert confirmed_fraction(left, left.T) > 0.5


def test_confirmed_set_agrees_with_brute_force(small_trace):
    tr = small_trace
    g = csgraph_of(tr, tr.T)
    for T in (40, 333, 1000, tr.T):
        st_ = tr.state(T)
        cut = set().union(*(tr.state(s).tips for s in range(T - tr.params.eps_max, T + 1)))
        cut |= st_.inflight
        assert set(confirmation_cut(tr, T).tolist()) == cut
        reach = None
        for u in cut:
            r = bfs_reach(g, u)
            reach = r if reach is None else reach & r
        assert confirmed_set(tr, T) == reach & st_.solid_vertices


def test_confirmed_set_is_monotone(short_trace):
    prev = frozenset()
    for T in range(0, 20_000, 1250):
        conf = confirmed_set(short_trace, T)
        assert prev <= conf
        prev = conf


def test_confirmed_set_horizon_range(short_trace):
    with pytest.raises(IndexError):
        confirmed_set(short_trace, short_trace.T + 1)


# ---------------------------------------------------------------------------
# coupled walk, windows and recurrence


def test_martingale_gap_within_bound(short_trace):
    # anchors need h_M arrivals behind them
    for alpha in (4, 100, 5000, 19_999):
        mon = martingale_check(short_trace, alpha)
        assert mon.within_bound and mon.bound == 2
        assert mon.Y[0] == mon.F[0]


def test_martingale_flat_synthetic(short_trace):
    T = short_trace.T
    flat = dataclasses.replace(short_trace, delta=np.ones(T + 1, dtype=np.int64),
                               F=np.full(T + 1, 7, dtype=np.int64))
    mon = martingale_check(flat, 10)
    assert mon.max_gap == 0 and np.all(mon.Y == 7)


def test_martingale_hitting_times(short_trace):
    mon = martingale_check(short_trace, 50, a=1000, b=1000)
    assert mon.first_F_hit == 50 and mon.first_L_hit == 50
    mon = martingale_check(short_trace, 50, a=-1, b=-1)
    assert mon.first_F_hit is None and mon.first_L_hit is None
    with pytest.raises(IndexError):
        martingale_check(short_trace, 0)


def test_completion_window_band(short_trace):
    count, lo, hi = completion_window(short_trace, 100, 1100)
    assert (lo, hi) == (999, 1001) and lo <= count <= hi
    with pytest.raises(IndexError):
        completion_window(short_trace, 0, 10)


def _with_L(trace, values):
    L = np.asarray(values, dtype=np.int64)
    return dataclasses.replace(trace, T=len(L) - 1, L=L)


def test_tip_recurrence_constant_at_b(short_trace):
    rec = tip_recurrence(_with_L(short_trace, [33] * 50), 33, kappa_C=5)
    assert rec.hits.tolist() == list(range(1, 51)) and rec.completed == 0
    assert rec.spaced_hits == [1, 12, 23, 34, 45]


def test_tip_recurrence_excursions(short_trace):
    rec = tip_recurrence(_with_L(short_trace, [1, 40, 40, 1, 40]), 33, kappa_C=1)
    assert rec.excursions.tolist() == [[2, 4]] and rec.open_excursion == 5
    assert rec.max_excursion == 2 and rec.hits.tolist() == [1, 4]
    assert tip_recurrence(short_trace, 20, kappa_C=1).below_admissible
    assert not tip_recurrence(short_trace).below_admissible


def test_tip_recurrence_hits_recomputed(short_trace):
    rec = tip_recurrence(short_trace, 9)
    L = short_trace.L
    assert rec.hits.tolist() == [s + 1 for s in range(len(L)) if L[s] <= 9]
    d = rec.to_dict()
    assert d["hit_count"] == len(rec.hits) and d["b"] == 9


# ---------------------------------------------------------------------------
# local metric


def test_d_star_examples():
    a = Dag({1: [0], 2: [1]})
    assert d_star(a, a) == 0 and first_difference_radius(a, a) is None
    b = Dag({1: [0], 2: [1], 3: [0]})
    assert d_star(a, b) == 1
    c = Dag({1: [0], 2: [1], 3: [2]})
    assert d_star(a, c) == Fraction(1, 3)
    assert rball_code(a, 2) == rball_code(c, 2) and rball_code(a, 3) != rball_code(c, 3)


def test_d_star_edge_inside_ball():
    a = Dag({1: [0], 2: [0], 3: [1]})
    b = Dag({1: [0], 2: [0], 3: [1, 2]})
    # same vertex distances, extra edge between radius-1 vertices and radius 2
    assert first_difference_radius(a, b) == 2 and d_star(a, b) == Fraction(1, 2)


graphs = st.builds(lambda seed, T: Dag.from_trace(run(reference_params(), seed, T)),
                   st.integers(0, 50), st.integers(1, 60))


@given(graphs, graphs, graphs)
def test_d_star_symmetric_and_ultrametric(a, b, c):
    assert d_star(a, b) == d_star(b, a)
    assert d_star(a, c) <= max(d_star(a, b), d_star(b, c))
    assert 0 <= d_star(a, b) <= 1


def test_snapshot_d_star_matches_generic(small_trace):
    tr = small_trace
    for s, s2 in [(10, 11), (100, 140), (700, 1490), (5, 5)]:
        want = d_star(Dag.from_trace(tr, s), Dag.from_trace(tr, s2))
        assert snapshot_d_star(tr, s, s2) == want


def test_trace_ball_code_matches_dag(small_trace):
    tr = small_trace
    dist = trace_root_distance(tr)
    for s, r in [(300, 3), (1000, 10), (1500, 50)]:
        assert trace_ball_code(tr, s, r, dist) == rball_code(Dag.from_trace(tr, s), r)


def test_stabilization_after_forced_bottleneck(forced):
    trace, plan = forced
    stab = stabilization_check(trace, plan)
    assert stab.r0 >= 0 and stab.snapshots[0] == plan.end and stab.snapshots[-1] == trace.T


def test_stabilization_names_intruder(forced):
    trace, plan = forced
    # a later start gives a ball of positive radius to intrude on
    plan = dataclasses.replace(plan, i=2000, kappa_C=10_000)
    assert stabilization_check(trace, plan).r0 > 1
    victim = trace.T - 5
    parents = trace.parents.copy()
    parents[victim, : trace.npar[victim]] = 0
    with pytest.raises(StabilizationError) as info:
        stabilization_check(dataclasses.replace(trace, parents=parents), plan)
    assert info.value.vertex == victim
