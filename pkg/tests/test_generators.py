from fractions import Fraction

import pytest

from mdpcores.generators import (
    BIT_FLIP,
    CRASH,
    DESTINATION,
    LANDING,
    ORIGIN,
    STARTING,
    AirplaneConfig,
    AirplaneLayout,
    KnapsackInstance,
    build_airplane,
    build_fig2,
    build_fig3,
    build_knapsack_mdp,
    build_random,
    knapsack_chains,
    knapsack_factor,
    normalize_knapsack,
)
from mdpcores.model import ModelError, serialize_model


def test_airplane_top_level():
    mdp = build_airplane(AirplaneConfig(10, tau=1e-10))
    assert mdp.num_states == 6 + 100
    fly = mdp.actions(STARTING)[0].dist
    assert fly.targets == (LANDING, BIT_FLIP)
    assert fly.prob(BIT_FLIP) == 1e-10
    assert [a.label for a in mdp.actions(STARTING)] == ["fly", "crash plane"]
    assert mdp.actions(ORIGIN)[0].dist.targets == (STARTING,)
    assert mdp.actions(DESTINATION)[0].dist.targets == (DESTINATION,)
    assert mdp.actions(CRASH)[0].dist.targets == (CRASH,)


def test_airplane_recovery_grid_and_return():
    cfg = AirplaneConfig(5, return_trip=True)
    lay = AirplaneLayout(cfg)
    mdp = build_airplane(cfg)
    assert mdp.num_states == 6 + 25 + 5
    assert mdp.actions(BIT_FLIP)[0].dist.targets == (lay.cell(0, 0),)
    acts = mdp.actions(lay.cell(0, 0))
    assert [a.label for a in acts] == ["advance-row", "advance-col"]
    assert acts[0].dist.targets == (lay.cell(1, 0), lay.cell(1, 1))
    last = mdp.actions(lay.cell(4, 4))[0].dist
    assert last.targets == (LANDING, CRASH) and last.probs == (0.5, 0.5)
    # return chain leads back to the origin
    s = mdp.actions(DESTINATION)[0].dist.targets[0]
    for _ in range(5):
        assert lay.is_return(s)
        s = mdp.actions(s)[0].dist.targets[0]
    assert s == ORIGIN
    assert mdp.reachable() == set(range(mdp.num_states))
    mdp.materialize()  # every state validates


def test_airplane_config_validation():
    with pytest.raises(ModelError):
        AirplaneConfig(0)
    with pytest.raises(ModelError):
        AirplaneConfig(3, tau=0.0)


def test_knapsack_arithmetic():
    inst = KnapsackInstance((2, 3), (1, 2), 2, 2)
    mdp, k = build_knapsack_mdp(inst, 0.3)
    assert k == 3
    m = knapsack_factor(inst, 0.3)
    assert m == Fraction(0.3) / 3
    dist = mdp.actions(0)[0].dist
    chains = knapsack_chains(inst)
    assert chains == [[2], [3, 4]]
    assert dist.prob(chains[0][0]) == pytest.approx(float(m) * 2, abs=1e-12)
    assert dist.prob(1) == pytest.approx(1 - float(m) * 5, abs=1e-12)
    # chain ends absorb
    assert mdp.actions(4)[0].dist.targets == (4,)


def test_knapsack_normalization_and_errors():
    inst = KnapsackInstance((1, 1), (1, 1), 2, 1)
    norm = normalize_knapsack(inst)
    assert norm.values == (1, 1, 4) and norm.weights == (1, 1, 1)
    assert normalize_knapsack(KnapsackInstance((4, 4), (1, 1), 1, 1)).values == (4, 4)
    with pytest.raises(ModelError):
        build_knapsack_mdp(KnapsackInstance((1,), (1,), 0, 1), 0.5)
    with pytest.raises(ModelError):
        KnapsackInstance((), (), 0, 0)
    assert KnapsackInstance((2, 3), (1, 2), 1, 2).satisfiable()
    assert not KnapsackInstance((2, 3), (1, 2), 5, 4).satisfiable()


def test_fig3_and_fig2():
    f3 = build_fig3(0.3)
    assert f3.actions(0)[0].dist.probs == (0.15, 0.7, 0.15)
    f2 = build_fig2()
    assert f2.num_states == 7 and len(f2.actions(0)) == 2


def test_random_deterministic_and_reachable():
    a = build_random(40, 3, 3, 0.2, seed=9)
    b = build_random(40, 3, 3, 0.2, seed=9)
    assert serialize_model(a) == serialize_model(b)
    assert serialize_model(a) != serialize_model(build_random(40, 3, 3, 0.2, seed=10))
    for seed in range(30):
        m = build_random(25, 3, 2, 0.3, seed=seed, rare_mass=0.1)
        assert m.reachable() == set(range(25))
        sinks = [s for s in range(25) if m.actions(s)[0].dist.targets == (s,)
                 and len(m.actions(s)) == 1]
        assert len(sinks) >= round(0.3 * 25)


def test_random_rare_mass_shapes_distribution():
    m = build_random(30, 2, 3, 0.0, seed=1, rare_mass=0.01)
    for s in range(30):
        for a in m.actions(s):
            if len(a.dist) > 1:
                assert max(a.dist.probs) >= 0.99 - 1e-12
