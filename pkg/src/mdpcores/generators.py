"""Deterministic model generators: the flight example, the Knapsack
reduction, the small non-uniqueness examples, and random instances."""

from __future__ import annotations

import random
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from .model import Action, Distribution, ExplicitMdp, LazyMdp, ModelError

# Fixed indices of the flight model's top-level states.
ORIGIN, STARTING, LANDING, DESTINATION, BIT_FLIP, CRASH = range(6)
AIRPLANE_TOP = ("origin", "starting", "landing", "destination", "bit-flip", "crash")


@dataclass(frozen=True)
class AirplaneConfig:
    size: int
    return_trip: bool = False
    tau: float = 1e-10

    def __post_init__(self):
        if self.size < 1:
            raise ModelError("airplane size must be >= 1")
        if not 0.0 < self.tau < 1.0:
            raise ModelError("tau must lie in (0, 1)")


@dataclass(frozen=True)
class KnapsackInstance:
    values: tuple[int, ...]
    weights: tuple[int, ...]
    v: int
    w: int

    def __post_init__(self):
        if not self.values or len(self.values) != len(self.weights):
            raise ModelError("values and weights must be non-empty and of equal length")
        if any(x < 1 for x in self.values) or any(x < 1 for x in self.weights):
            raise ModelError("item values and weights must be >= 1")
        if self.v < 0 or self.w < 0:
            raise ModelError("threshold value and weight limit must be >= 0")

    @property
    def total_value(self) -> int:
        return sum(self.values)

    def satisfiable(self) -> bool:
        """Brute force: some item set with value > v and weight < w."""
        n = len(self.values)
        for mask in range(1 << n):
            val = sum(self.values[i] for i in range(n) if mask >> i & 1)
            wt = sum(self.weights[i] for i in range(n) if mask >> i & 1)
            if val > self.v and wt < self.w:
                return True
        return False


class AirplaneLayout:
    """State numbering of the flight model.

    0-5 are the top-level states (see ``AIRPLANE_TOP``), then the
    ``size x size`` recovery grid row by row, then the return chain.
    """

    def __init__(self, cfg: AirplaneConfig):
        self.cfg = cfg
        self.size = cfg.size
        self.recovery_start = 6
        self.return_start = 6 + cfg.size * cfg.size
        self.num_states = self.return_start + (cfg.size if cfg.return_trip else 0)

    def cell(self, i: int, j: int) -> int:
        return self.recovery_start + i * self.size + j

    def is_recovery(self, s: int) -> bool:
        return self.recovery_start <= s < self.return_start

    def is_return(self, s: int) -> bool:
        return s >= self.return_start

    def recovery_states(self) -> range:
        return range(self.recovery_start, self.return_start)


def build_airplane(cfg: AirplaneConfig) -> LazyMdp:
    """The flight model, generated lazily (size=10000 has 10^8 states).

    Each recovery cell (i, j) offers up to two actions: ``advance-row``
    (uniform over (i+1, j) and (i+1, j+1)) and ``advance-col`` (uniform over
    (i, j+1) and (i+1, j+1)), clipped to the grid.  The last cell exits
    uniformly to landing or crash.
    """
    lay = AirplaneLayout(cfg)
    size, tau = cfg.size, cfg.tau
    last = size - 1
    to_crash = Action(Distribution.point(CRASH), "crash plane")
    fixed = {
        ORIGIN: (Action(Distribution.point(STARTING), "start"),),
        STARTING: (
            Action(Distribution.from_pairs([(LANDING, 1.0 - tau), (BIT_FLIP, tau)]), "fly"),
            to_crash,
        ),
        LANDING: (Action(Distribution.point(DESTINATION), "land"), to_crash),
        BIT_FLIP: (Action(Distribution.point(lay.cell(0, 0)), "recover"),),
        CRASH: (Action(Distribution.point(CRASH), "crash"),),
    }
    if cfg.return_trip:
        fixed[DESTINATION] = (Action(Distribution.point(lay.return_start), "return"),)
    else:
        fixed[DESTINATION] = (Action(Distribution.point(DESTINATION), "arrived"),)
    final_cell = (
        Action(Distribution.from_pairs([(LANDING, 0.5), (CRASH, 0.5)]), "exit"),
    )

    def successor(s: int):
        if s < 6:
            return fixed[s]
        if lay.is_recovery(s):
            i, j = divmod(s - lay.recovery_start, size)
            if i == last and j == last:
                return final_cell
            acts = []
            if i < last:
                acts.append(Action(Distribution.merged(
                    [(lay.cell(i + 1, j), 0.5), (lay.cell(i + 1, min(j + 1, last)), 0.5)]
                ), "advance-row"))
            if j < last:
                acts.append(Action(Distribution.merged(
                    [(lay.cell(i, j + 1), 0.5), (lay.cell(min(i + 1, last), j + 1), 0.5)]
                ), "advance-col"))
            return tuple(acts)
        k = s - lay.return_start
        nxt = ORIGIN if k == size - 1 else s + 1
        return (Action(Distribution.point(nxt), "return"),)

    name = f"airplane(size={size},return={'tt' if cfg.return_trip else 'ff'},tau={tau!r})"
    return LazyMdp(lay.num_states, ORIGIN, successor, name=name)


def normalize_knapsack(inst: KnapsackInstance) -> KnapsackInstance:
    """Add the useless object (value 2v, weight w) when v > V/2."""
    if 2 * inst.v <= inst.total_value:
        return inst
    return KnapsackInstance(
        inst.values + (2 * inst.v,), inst.weights + (max(inst.w, 1),), inst.v, inst.w
    )


def knapsack_chains(inst: KnapsackInstance) -> list[list[int]]:
    """Per-item chain states of :func:`build_knapsack_mdp` (normalized instance)."""
    inst = normalize_knapsack(inst)
    chains, nxt = [], 2
    for wt in inst.weights:
        chains.append(list(range(nxt, nxt + wt)))
        nxt += wt
    return chains


def knapsack_factor(inst: KnapsackInstance, epsilon: float) -> Fraction:
    """The exact scaling constant eps / (V - v) of the normalized instance."""
    inst = normalize_knapsack(inst)
    return Fraction(epsilon) / (inst.total_value - inst.v)


def build_knapsack_mdp(inst: KnapsackInstance, epsilon: float) -> tuple[ExplicitMdp, int]:
    """MDP of the Knapsack reduction and its core-size budget k = w + 1.

    States: 0 is the initial state, 1 the sink, followed by one chain per
    item (see :func:`knapsack_chains`).
    """
    if not 0.0 < epsilon <= 1.0 / 3.0:
        raise ModelError("epsilon must lie in (0, 1/3]")
    inst = normalize_knapsack(inst)
    m = epsilon / (inst.total_value - inst.v)
    branch = [m * v for v in inst.values]
    if m * inst.total_value >= 1.0:
        raise ModelError(f"infeasible probabilities: m*V = {m * inst.total_value!r} >= 1")
    chains = knapsack_chains(inst)
    pairs = [(1, 1.0 - m * inst.total_value)]
    pairs += [(chain[0], p) for chain, p in zip(chains, branch)]
    table = [
        [Action(Distribution.from_pairs(pairs))],
        [Action(Distribution.point(1))],
    ]
    for chain in chains:
        for a, b in zip(chain, chain[1:]):
            table.append([Action(Distribution.point(b))])
        table.append([Action(Distribution.point(chain[-1]))])
    return ExplicitMdp(len(table), 0, table), inst.w + 1


def build_fig3(epsilon: float) -> ExplicitMdp:
    """s0 branches to s1 / s2 / s3 with eps/2, 1-eps, eps/2; all three are sinks."""
    if not 0.0 < epsilon < 0.5:
        raise ModelError("epsilon must lie in (0, 1/2)")
    half = epsilon / 2
    table = [[Action(Distribution.from_pairs([(1, half), (2, 1.0 - epsilon), (3, half)]))]]
    table += [[Action(Distribution.point(s))] for s in (1, 2, 3)]
    return ExplicitMdp(4, 0, table)


def build_fig2() -> ExplicitMdp:
    """Two-action example; the unknown region after action b is the chain 4 -> 5 -> 6 -> s1."""
    table = [
        [
            Action(Distribution.from_pairs([(1, 0.8), (2, 0.2)]), "a"),
            Action(Distribution.from_pairs([(3, 0.3), (4, 0.7)]), "b"),
        ],
        [Action(Distribution.point(1))],
        [Action(Distribution.point(2))],
        [Action(Distribution.point(3))],
        [Action(Distribution.point(5))],
        [Action(Distribution.point(6))],
        [Action(Distribution.point(1))],
    ]
    return ExplicitMdp(7, 0, table)


def build_random(
    num_states: int,
    max_actions: int = 2,
    max_branching: int = 3,
    sink_fraction: float = 0.1,
    seed: int = 0,
    reward_range: Optional[tuple[float, float]] = None,
    rare_mass: float = 0.0,
) -> ExplicitMdp:
    """Random MDP, reachable from state 0, deterministic in ``seed``.

    ``round(sink_fraction * num_states)`` states (never the initial one)
    are self-loop sinks.  With ``rare_mass > 0`` every action has one
    dominant successor and the others share at most ``rare_mass`` of the
    probability, which produces rarely visited regions.
    """
    if not 0.0 <= rare_mass < 1.0:
        raise ModelError("rare_mass must lie in [0, 1)")
    if num_states < 1:
        raise ModelError("num_states must be >= 1")
    if max_actions < 1 or max_branching < 1:
        raise ModelError("max_actions and max_branching must be >= 1")
    rng = random.Random(seed)
    n = num_states
    n_sinks = min(n - 1, max(0, round(sink_fraction * n)))
    sinks = set(rng.sample(range(1, n), n_sinks))
    # random spanning tree rooted at 0 over non-sink parents
    order = list(range(1, n))
    rng.shuffle(order)
    attached = [0]
    children: dict[int, list[int]] = {s: [] for s in range(n)}
    for s in order:
        parent = rng.choice(attached)
        children[parent].append(s)
        if s not in sinks:
            attached.append(s)

    table = []
    for s in range(n):
        if s in sinks:
            table.append([Action(Distribution.point(s))])
            continue
        k = rng.randint(1, max_actions)
        supports = []
        for _ in range(k):
            b = rng.randint(1, min(max_branching, n))
            supports.append(rng.sample(range(n), b))
        kids = set(children[s])
        for c in children[s]:
            sup = supports[rng.randrange(k)]
            if c in sup:
                continue
            free = [i for i, t in enumerate(sup) if t not in kids]
            if len(sup) < max_branching or not free:
                sup.append(c)
            else:
                sup[rng.choice(free)] = c
        acts = []
        for sup in supports:
            weights = [rng.uniform(0.05, 1.0) for _ in sup]
            if rare_mass > 0.0 and len(sup) > 1:
                main = rng.randrange(len(sup))
                side = rare_mass * rng.uniform(0.1, 1.0)
                rest = sum(w for i, w in enumerate(weights) if i != main)
                weights = [1.0 - side if i == main else side * w / rest
                           for i, w in enumerate(weights)]
            tot = sum(weights)
            acts.append(Action(Distribution.merged((t, w / tot) for t, w in zip(sup, weights))))
        table.append(acts)
    rewards = None
    if reward_range is not None:
        lo, hi = reward_range
        rewards = [round(rng.uniform(lo, hi), 6) for _ in range(n)]
    return ExplicitMdp(n, 0, table, rewards)
