import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mdpcores.generators import build_fig2, build_fig3, build_random
from mdpcores.model import Action, Distribution, ExplicitMdp, ModelError
from mdpcores.numerics import (
    EXIT,
    FrontierPolicy,
    NonConvergenceError,
    bounded_max_reach,
    bounded_mean_payoff_bounds,
    bounded_reach_curve,
    exit_probability,
    max_reach_interval,
)

from oracles import brute_force_bounded_reach, brute_force_max_reach, random_small_mdp


def test_unbounded_matches_strategy_enumeration():
    rng = random.Random(7)
    for case in range(120):
        n = rng.randint(1, 8)
        mdp = random_small_mdp(rng, n, 2)
        targets = set(rng.sample(range(n), rng.randint(0, max(1, n // 3))))
        want = brute_force_max_reach(mdp, targets)
        iv = max_reach_interval(mdp, targets, 1e-12)
        assert np.all(iv.lower <= want + 1e-9), case
        assert np.all(want <= iv.upper + 1e-9), case
        assert np.all(iv.upper - iv.lower <= 1e-9), case


def test_bounded_matches_recursion():
    rng = random.Random(3)
    for case in range(60):
        n = rng.randint(1, 8)
        mdp = random_small_mdp(rng, n, 3)
        targets = set(rng.sample(range(n), 1))
        for k in (0, 1, 2, 5):
            iv = bounded_max_reach(mdp, targets, k)
            assert np.allclose(iv.lower, brute_force_bounded_reach(mdp, targets, k), atol=1e-12)
            assert np.array_equal(iv.lower, iv.upper)


def test_bounded_monotone_in_k():
    mdp = build_random(60, 3, 3, 0.2, seed=5)
    prev = None
    for k in range(0, 30):
        v = bounded_max_reach(mdp, [1, 2], k).lower
        if prev is not None:
            assert np.all(v >= prev - 1e-15)
        prev = v


def test_frontier_bounds_sandwich_truth():
    mdp = build_random(40, 3, 3, 0.2, seed=11)
    targets = [5]
    truth = max_reach_interval(mdp, targets, 1e-12)
    view = sorted(mdp.reachable())[:20]
    if 0 not in view:
        view.append(0)
    part = max_reach_interval(mdp, targets, 1e-12, FrontierPolicy(0.0, 1.0), view)
    for s in view:
        lo, hi = part.at(s)
        tlo, thi = truth.at(s)
        assert lo <= thi + 1e-12 and tlo <= hi + 1e-12
    with pytest.raises(KeyError):
        part.at(max(set(range(40)) - set(view)))


def test_fig3_exit_and_fig2_values():
    f3 = build_fig3(0.3)
    assert exit_probability(f3, [0, 1]).upper == pytest.approx(0.85)
    full = exit_probability(f3, range(f3.num_states))
    assert full.upper <= 1e-12
    assert exit_probability(f3, [0, 1, 2], horizon=1).upper == pytest.approx(0.15)
    assert exit_probability(f3, [0, 1, 2], horizon=0).upper == 0.0
    with pytest.raises(ModelError):
        exit_probability(f3, [1, 2])


def test_exit_self_loop_leaks_fully():
    # state 0 leaves with prob 1e-6 each step; it eventually leaves for sure
    acts = [[Action(Distribution.from_pairs([(0, 1 - 1e-6), (1, 1e-6)]))],
            [Action(Distribution.point(1))]]
    mdp = ExplicitMdp(2, 0, acts)
    iv = exit_probability(mdp, [0])
    # expected sojourn 1e6 steps: the certified width is limited by the
    # precision floor (a few ulps times the sojourn time), not by delta
    assert iv.lower <= 1.0 <= iv.upper + 1e-15
    assert iv.upper - iv.lower <= 1e-8


def test_nonconvergence_reported():
    acts = [[Action(Distribution.from_pairs([(0, 0.999), (1, 0.001)]))],
            [Action(Distribution.point(1))]]
    mdp = ExplicitMdp(2, 0, acts)
    with pytest.raises(NonConvergenceError):
        max_reach_interval(mdp, [1], 1e-12, max_sweeps=3)


def test_parameter_validation():
    mdp = build_fig2()
    with pytest.raises(ValueError):
        max_reach_interval(mdp, [1], 0.0)
    with pytest.raises(ValueError):
        bounded_max_reach(mdp, [1], -1)
    with pytest.raises(ValueError):
        FrontierPolicy(1.0, 0.0)


def test_curve_consistent_with_bounded():
    mdp = build_random(30, 2, 3, 0.2, seed=2)
    lo, hi = bounded_reach_curve(mdp, [3], 10, FrontierPolicy(0, 1))
    for k in range(1, 11):
        assert lo[k - 1] == pytest.approx(bounded_max_reach(mdp, [3], k).at(0)[0])
    assert np.array_equal(lo, hi)  # full model: no frontier


def test_mean_payoff_constant_reward():
    mdp = build_random(20, 2, 2, 0.1, seed=1, reward_range=(2.0, 2.0))
    iv = bounded_mean_payoff_bounds(mdp, 15, FrontierPolicy(-5.0, 5.0))
    assert np.allclose(iv.lower, 2.0) and np.allclose(iv.upper, 2.0)
    part = bounded_mean_payoff_bounds(mdp, 15, FrontierPolicy(-5.0, 5.0), [0])
    assert part.lower[0] == pytest.approx(2.0)  # first step is the core's own reward
    assert np.all(part.lower <= 2.0 + 1e-12) and np.all(part.upper >= 2.0 - 1e-12)
    with pytest.raises(ModelError):
        bounded_mean_payoff_bounds(build_fig2(), 3, FrontierPolicy())


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 7))
def test_interval_contains_oracle_property(seed, n):
    rng = random.Random(seed)
    mdp = random_small_mdp(rng, n, 2)
    targets = {rng.randrange(n)}
    want = brute_force_max_reach(mdp, targets)
    iv = max_reach_interval(mdp, targets, 1e-10)
    assert np.all(iv.lower - 1e-9 <= want) and np.all(want <= iv.upper + 1e-9)
