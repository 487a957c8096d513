import random

from hypothesis import given, settings
from hypothesis import strategies as st

from mdpcores.generators import build_fig2
from mdpcores.graph import QuotientView, collapse_mecs, mec_decompose, scc_decompose

from oracles import brute_force_mecs, random_small_mdp


def test_scc_reverse_topological():
    edges = {0: [1], 1: [2, 0], 2: [3], 3: [2], 4: [0]}
    sccs = scc_decompose(edges, lambda u: edges[u])
    sets = [frozenset(c) for c in sccs]
    assert set(sets) == {frozenset({0, 1}), frozenset({2, 3}), frozenset({4})}
    assert sets.index(frozenset({2, 3})) < sets.index(frozenset({0, 1})) < sets.index(frozenset({4}))


def test_scc_ignores_outside_edges():
    edges = {0: [1, 9], 1: [0]}
    assert [sorted(c) for c in scc_decompose([0, 1], lambda u: edges[u])] == [[0, 1]]


def test_scc_deep_chain_no_recursion_limit():
    n = 50_000
    sccs = scc_decompose(range(n), lambda u: [u + 1] if u + 1 < n else [0])
    assert len(sccs) == 1 and len(sccs[0]) == n


def test_mecs_fig2():
    dec = mec_decompose(build_fig2())
    got = {m.states: dict(m.actions) for m in dec.mecs}
    assert all(len(s) >= 1 for s in got)
    # every MEC is closed under its retained actions
    mdp = build_fig2()
    for m in dec.mecs:
        for s, acts in m.actions.items():
            assert acts
            for i in acts:
                assert set(mdp.actions(s)[i].dist.targets) <= m.states


def test_mecs_match_brute_force_oracle():
    rng = random.Random(2024)
    for case in range(250):
        n = rng.randint(1, 10)
        mdp = random_small_mdp(rng, n, 3)
        dec = mec_decompose(mdp)
        got = sorted(((m.states, dict(m.actions)) for m in dec.mecs), key=lambda x: min(x[0]))
        want = brute_force_mecs(mdp)
        assert [g[0] for g in got] == [w[0] for w in want], case
        for (_, ga), (_, wa) in zip(got, want):
            assert ga == wa, case
        for k, m in enumerate(dec.mecs):
            assert all(dec.state_to_mec[s] == k for s in m.states)


def test_mecs_on_view_drop_frontier_actions():
    table = {0: [[1], [0]], 1: [[0], [2]]}  # state 2 lies outside the view
    dec = mec_decompose(table)
    assert len(dec.mecs) == 1
    m = dec.mecs[0]
    assert m.states == frozenset({0, 1})
    assert m.actions == {0: (0, 1), 1: (0,)}


class _Expl:
    def __init__(self, actions, bound):
        self.actions = actions
        self.bound = bound
        self.quotient = QuotientView()


def test_collapse_mecs_takes_min_and_leaving_actions():
    acts = {
        0: [((1,), (1.0,)), ((2,), (1.0,))],
        1: [((0,), (1.0,))],
    }
    expl = _Expl(acts, {0: 0.7, 1: 0.4})
    q, n = collapse_mecs(expl)
    assert n == 1
    assert q.find(0) == q.find(1) == 0
    assert q.outgoing[0] == [(0, 1)]
    assert expl.bound == {0: 0.4}
    # collapsing again is a no-op
    assert collapse_mecs(expl)[1] == 0


def test_collapse_closed_component_gets_zero():
    acts = {0: [((1,), (1.0,))], 1: [((0,), (1.0,))]}
    expl = _Expl(acts, {0: 1.0, 1: 1.0})
    collapse_mecs(expl)
    assert expl.bound == {0: 0.0}


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 8))
def test_mecs_partition_and_closed(seed, n):
    mdp = random_small_mdp(random.Random(seed), n, 3)
    dec = mec_decompose(mdp)
    seen = set()
    for m in dec.mecs:
        assert not seen & m.states
        seen |= m.states
        for s, acts in m.actions.items():
            for i in acts:
                assert set(mdp.actions(s)[i].dist.targets) <= m.states
