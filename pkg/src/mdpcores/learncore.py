"""Sampling-guided learning of epsilon-cores (unbounded horizon).

The learner keeps, for every explored state, an upper bound on the maximal
probability of reaching an unexplored state.  Paths are sampled from the
initial state under a heuristic, their states are added to the explored
set, and the bounds are back-propagated along the path with Bellman
updates until the bound of the initial state drops below epsilon.
"""

from __future__ import annotations

import enum
import json
import logging
import random
import time
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional

import numpy as np

from .graph import QuotientView, collapse_mecs
from .model import Mdp
from .numerics import EXIT, NonConvergenceError, exit_probability, max_reach_interval

log = logging.getLogger(__name__)


class Heuristic(enum.Enum):
    PROB = "prob"
    WEIGHTED = "weighted"
    DIFFERENCE = "difference"
    GRAPH_WEIGHTED = "graph-weighted"
    GRAPH_DIFFERENCE = "graph-difference"

    @property
    def action_based(self) -> bool:
        return self in (Heuristic.PROB, Heuristic.WEIGHTED, Heuristic.DIFFERENCE)

    @classmethod
    def parse(cls, name) -> "Heuristic":
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace("_", "-")
        for h in cls:
            if h.value == key:
                return h
        raise ValueError(f"unknown heuristic {name!r}")


class VerificationError(RuntimeError):
    pass


class CoreRejected(VerificationError):
    """The oracle shows the exit probability is at least epsilon."""


class InconclusiveVerification(VerificationError):
    """The oracle interval straddles epsilon."""


@dataclass
class LearnConfig:
    """Knobs of the learners.  ``None`` caps mean unlimited."""

    time_limit: Optional[float] = None
    max_episodes: Optional[int] = None
    ec_growth: float = 0.5
    ec_revisit_limit: int = 8
    # end an episode once a state recurs this often (None: only the length cap)
    loop_limit: Optional[int] = 8
    episode_cap_min: int = 100
    episode_cap_factor: int = 3
    stall_episodes: int = 10_000
    stall_tolerance: float = 1e-12
    # shorter stall window once an exact solve already covers the explored set
    stall_episodes_exact: int = 500
    verify_delta: Optional[float] = None
    # episodes between exact solves on the explored view (0 disables)
    exact_every: int = 64


@dataclass
class RunStats:
    paths: int = 0
    explored: int = 0
    bellman_updates: int = 0
    ec_runs: int = 0
    ec_collapses: int = 0
    exact_solves: int = 0
    fallback: bool = False
    wall_time: float = 0.0

    def to_dict(self, include_timing: bool = False) -> dict:
        d = {
            "paths": self.paths,
            "explored": self.explored,
            "bellman_updates": self.bellman_updates,
            "ec_runs": self.ec_runs,
            "ec_collapses": self.ec_collapses,
            "exact_solves": self.exact_solves,
            "fallback": self.fallback,
        }
        if include_timing:
            d["wall_time"] = self.wall_time
        return d


@dataclass
class CoreResult:
    states: tuple[int, ...]
    epsilon: float
    horizon: Optional[int]  # None = unbounded
    heuristic: Heuristic
    seed: int
    verified_exit_upper: Optional[float]
    verified: bool
    status: str = "verified"
    stats: RunStats = field(default_factory=RunStats)
    bound_store: Optional[dict] = None
    model_hash: Optional[str] = None

    def __contains__(self, s: int) -> bool:
        return s in self._set

    @property
    def _set(self) -> frozenset:
        return frozenset(self.states)

    @property
    def size(self) -> int:
        return len(self.states)

    def to_dict(self, include_timing: bool = False) -> dict:
        d = {
            "model_hash": self.model_hash,
            "epsilon": self.epsilon,
            "horizon": "unbounded" if self.horizon is None else self.horizon,
            "heuristic": self.heuristic.value,
            "seed": self.seed,
            "states": list(self.states),
            "verified_exit_upper": self.verified_exit_upper,
            "verified": self.verified,
            "status": self.status,
            "stats": self.stats.to_dict(include_timing),
        }
        if self.bound_store is not None:
            d["bound_store"] = self.bound_store
        return d

    def to_json(self, include_timing: bool = False) -> str:
        return json.dumps(self.to_dict(include_timing), separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: Mapping) -> "CoreResult":
        horizon = d.get("horizon", "unbounded")
        st = d.get("stats") or {}
        stats = RunStats(**{k: v for k, v in st.items() if k in RunStats.__dataclass_fields__})
        return cls(
            states=tuple(sorted(int(s) for s in d["states"])),
            epsilon=float(d["epsilon"]),
            horizon=None if horizon == "unbounded" else int(horizon),
            heuristic=Heuristic.parse(d.get("heuristic", "weighted")),
            seed=int(d.get("seed", 0)),
            verified_exit_upper=d.get("verified_exit_upper"),
            verified=bool(d.get("verified", False)),
            status=d.get("status", "unknown"),
            stats=stats,
            bound_store=d.get("bound_store"),
            model_hash=d.get("model_hash"),
        )

    @classmethod
    def from_json(cls, text: str) -> "CoreResult":
        return cls.from_dict(json.loads(text))


# ------------------------------------------------------------ exploration

class PartialExploration:
    """Explored states, their bounds, the frontier and the EC quotient.

    ``bound`` is keyed by representative; unexplored states implicitly
    have bound 1.  ``actions`` caches ``(targets, probs)`` per explored
    state in exploration order.
    """

    def __init__(self, mdp: Mdp, seed: int = 0, warm_start=None):
        self.mdp = mdp
        self.initial = mdp.initial
        self.actions: dict[int, list[tuple[tuple[int, ...], tuple[float, ...]]]] = {}
        self.frontier: set[int] = set()
        self.bound: dict[int, float] = {}
        self.quotient = QuotientView()
        self.out_actions: dict[int, list] = {}
        self.rng = random.Random(seed)
        self.stats = RunStats()
        if warm_start is not None:
            states, bounds = warm_start
            bounds = bounds or {}
            order = [self.initial] + sorted(set(states) - {self.initial})
            for s in order:
                self.explore(s, bounds.get(s, 1.0))
        else:
            self.explore(self.initial)

    def explore(self, s: int, value: float = 1.0) -> None:
        acts = [(a.dist.targets, a.dist.probs) for a in self.mdp.actions(s)]
        self.actions[s] = acts
        self.frontier.discard(s)
        sink = True
        for targets, _ in acts:
            for t in targets:
                if t != s:
                    sink = False
                    if t not in self.actions:
                        self.frontier.add(t)
        self.bound[s] = 0.0 if sink else min(1.0, value)
        self.stats.explored = len(self.actions)

    def is_explored(self, s: int) -> bool:
        return s in self.actions

    def upper(self, s: int) -> float:
        return self.bound.get(self.quotient.rep.get(s, s), 1.0)

    def available(self, s: int):
        """Actions of ``s`` in the quotient (leaving actions for collapsed MECs)."""
        r = self.quotient.rep.get(s, s)
        out = self.out_actions.get(r)
        return self.actions[s] if out is None else out

    def bellman_value(self, s: int) -> float:
        bound, rep = self.bound, self.quotient.rep
        best = 0.0
        for targets, probs in self.available(s):
            v = 0.0
            for t, p in zip(targets, probs):
                v += p * bound.get(rep.get(t, t), 1.0)
            if v > best:
                best = v
        return best

    def backup(self, s: int) -> None:
        r = self.quotient.rep.get(s, s)
        v = self.bellman_value(s)
        if v < self.bound[r]:
            self.bound[r] = v
        self.stats.bellman_updates += 1

    def update_ecs(self) -> int:
        _, n = collapse_mecs(self)
        self.stats.ec_runs += 1
        self.stats.ec_collapses += n
        if n:
            q = self.quotient
            self.out_actions = {
                r: [self.actions[s][i] for s, i in out] for r, out in q.outgoing.items()
            }
        return n

    def close(self) -> None:
        """No frontier left: unexplored states are unreachable, every bound is 0."""
        for r in self.bound:
            self.bound[r] = 0.0


def _pick(rng: random.Random, items, weights):
    total = 0.0
    for w in weights:
        total += w
    if total <= 0.0:
        return items[rng.randrange(len(items))]
    x = rng.random() * total
    acc = 0.0
    for it, w in zip(items, weights):
        acc += w
        if x < acc:
            return it
    return items[-1]


def choose_successor(expl, s, heuristic: Heuristic, value_of, acts=None) -> int:
    """One sampling step from ``s``; ``value_of(t)`` gives the successor's bound."""
    rng = expl.rng
    if acts is None:
        acts = expl.available(s)
    if heuristic.action_based:
        if len(acts) == 1:
            targets, probs = acts[0]
        else:
            vals = []
            for targets, probs in acts:
                v = 0.0
                for t, p in zip(targets, probs):
                    v += p * value_of(t)
                vals.append(v)
            m = max(vals)
            cands = [i for i, v in enumerate(vals) if v == m]
            targets, probs = acts[cands[0] if len(cands) == 1 else rng.choice(cands)]
        if len(targets) == 1:
            return targets[0]
        if heuristic is Heuristic.PROB:
            weights = probs
        elif heuristic is Heuristic.WEIGHTED:
            weights = [p * value_of(t) for t, p in zip(targets, probs)]
        else:
            weights = [value_of(t) for t in targets]
        return _pick(rng, targets, weights)
    best: dict[int, float] = {}
    for targets, probs in acts:
        for t, p in zip(targets, probs):
            if p > best.get(t, 0.0):
                best[t] = p
    succ = list(best)
    if len(succ) == 1:
        return succ[0]
    if heuristic is Heuristic.GRAPH_WEIGHTED:
        weights = [value_of(t) * best[t] for t in succ]
    else:
        weights = [value_of(t) for t in succ]
    return _pick(rng, succ, weights)


def sample_path(
    expl: PartialExploration, heuristic: Heuristic, cap: int, loop_limit: Optional[int] = None
) -> list[int]:
    """Sample one episode from the initial state.

    Ends on a state with bound 0, on the first unexplored state (which is
    explored on the spot), after ``cap`` steps, or once some state has been
    entered more than ``loop_limit`` times.
    """
    heuristic = Heuristic.parse(heuristic)
    s = expl.initial
    path = [s]
    upper = expl.upper
    visits: dict[int, int] = {}
    while len(path) <= cap:
        if upper(s) == 0.0:
            break
        acts = expl.available(s)
        if not acts:
            break
        t = choose_successor(expl, s, heuristic, upper, acts)
        path.append(t)
        if not expl.is_explored(t):
            expl.explore(t)
            break
        if loop_limit is not None:
            k = visits.get(t, 0) + 1
            visits[t] = k
            if k > loop_limit:
                break
        s = t
    expl.stats.paths += 1
    return path


# ---------------------------------------------------------- verification

@dataclass(frozen=True)
class CoreCheck:
    lower: float
    upper: float
    verdict: str  # "verified" | "rejected" | "inconclusive"


def check_core(
    mdp: Mdp,
    states: Iterable[int],
    epsilon: float,
    horizon: Optional[int] = None,
    delta: Optional[float] = None,
) -> CoreCheck:
    """Oracle check of the core property without raising on failure."""
    res = exit_probability(mdp, states, horizon, epsilon=epsilon, delta=delta)
    lo, hi = float(res.lower), float(res.upper)
    if hi < epsilon:
        verdict = "verified"
    elif lo >= epsilon:
        verdict = "rejected"
    else:
        verdict = "inconclusive"
    return CoreCheck(lo, hi, verdict)


def verify_and_finalize(
    mdp: Mdp,
    states: Iterable[int],
    epsilon: float,
    horizon: Optional[int] = None,
    heuristic: Heuristic = Heuristic.WEIGHTED,
    seed: int = 0,
    stats: Optional[RunStats] = None,
    delta: Optional[float] = None,
) -> CoreResult:
    states = tuple(sorted(set(states)))
    chk = check_core(mdp, states, epsilon, horizon, delta)
    if chk.verdict == "rejected":
        raise CoreRejected(f"exit probability {chk.lower!r} is not below {epsilon!r}")
    if chk.verdict == "inconclusive":
        raise InconclusiveVerification(
            f"exit probability in [{chk.lower!r}, {chk.upper!r}] straddles {epsilon!r}"
        )
    return CoreResult(
        states, epsilon, horizon, Heuristic.parse(heuristic), seed, chk.upper, True,
        "verified", stats or RunStats(),
    )


def _finalize(mdp, states, epsilon, horizon, heuristic, seed, stats, delta) -> CoreResult:
    """Verify a learner's output, tightening the precision when inconclusive."""
    if delta is None:
        delta = min(1e-12, epsilon * 1e-3)
    while True:
        try:
            return verify_and_finalize(mdp, states, epsilon, horizon, heuristic, seed, stats, delta)
        except InconclusiveVerification:
            if horizon is not None or delta < 1e-15:
                break
            delta /= 1000.0
        except CoreRejected:
            break
    chk = check_core(mdp, states, epsilon, horizon, delta)
    log.warning("learned set failed verification: %s", chk)
    return CoreResult(
        tuple(sorted(states)), epsilon, horizon, heuristic, seed, chk.upper, False, chk.verdict, stats
    )


# -------------------------------------------------------------- learning

class CoreLearner:
    """Stateful driver; :meth:`step` runs one episode, :meth:`run` to completion."""

    def __init__(
        self,
        mdp: Mdp,
        epsilon: float,
        heuristic=Heuristic.WEIGHTED,
        seed: int = 0,
        config: Optional[LearnConfig] = None,
        warm_start=None,
    ):
        if not 0.0 < epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")
        self.mdp = mdp
        self.epsilon = epsilon
        self.heuristic = Heuristic.parse(heuristic)
        self.seed = seed
        self.config = config or LearnConfig()
        self.expl = PartialExploration(mdp, seed, warm_start)
        self._ec_size = 0
        self._exact_size = 0
        self._exact_delta = 0.0
        self._since_exact = 0
        self._best = self.expl.upper(mdp.initial)
        self._stall = 0
        self.fallback = False
        self.episodes = 0
        if not self.expl.frontier:
            self.expl.close()

    @property
    def initial_bound(self) -> float:
        return self.expl.upper(self.mdp.initial)

    def done(self) -> bool:
        return self.initial_bound < self.epsilon

    def _maybe_update_ecs(self, force: bool = False) -> None:
        n = len(self.expl.actions)
        if n == self._ec_size:
            return  # end components only change when the explored set grows
        if force or n >= (1.0 + self.config.ec_growth) * self._ec_size:
            self.expl.update_ecs()
            self._ec_size = n

    def step(self) -> None:
        expl, cfg = self.expl, self.config
        if self.fallback:
            self._bfs_layer()
        else:
            cap = max(cfg.episode_cap_min, cfg.episode_cap_factor * len(expl.actions))
            path = sample_path(expl, self.heuristic, cap, cfg.loop_limit)
            revisits = 0
            if len(path) > cfg.ec_revisit_limit:
                counts: dict[int, int] = {}
                for s in path:
                    counts[s] = counts.get(s, 0) + 1
                revisits = max(counts.values())
            self._maybe_update_ecs(force=revisits > cfg.ec_revisit_limit)
            for s in reversed(path):
                if s in expl.actions:
                    expl.backup(s)
        self.episodes += 1
        if not expl.frontier:
            expl.close()
            return
        self._since_exact += 1
        if (
            cfg.exact_every
            and self._since_exact >= cfg.exact_every
            and len(expl.actions) != self._exact_size
        ):
            self.exact_solve()
        u = self.initial_bound
        exact_current = self._exact_size == len(expl.actions)
        tol = max(cfg.stall_tolerance, self._exact_delta) if exact_current else cfg.stall_tolerance
        if u < self._best - tol:
            self._best = u
            self._stall = 0
        elif not self.fallback:
            self._stall += 1
            limit = cfg.stall_episodes
            if exact_current:
                limit = min(limit, cfg.stall_episodes_exact)
            if self._stall >= limit:
                log.info("no progress for %d episodes; expanding breadth-first", self._stall)
                self.fallback = True
                expl.stats.fallback = True

    def exact_solve(self) -> None:
        """Tighten every bound to the interval-iteration upper bound of the view."""
        expl = self.expl
        self._since_exact = 0
        self._exact_size = len(expl.actions)
        self._exact_delta = min(1e-8, self.epsilon * 1e-3)
        try:
            iv = max_reach_interval(self.mdp, (), self._exact_delta, EXIT, expl.actions)
        except NonConvergenceError:
            return
        rep = expl.quotient.rep
        bound = expl.bound
        for s, hi in zip(iv.states.tolist(), np.asarray(iv.upper).tolist()):
            r = rep.get(s, s)
            if hi < bound[r]:
                bound[r] = max(0.0, hi)
        expl.stats.exact_solves += 1

    def _bfs_layer(self) -> None:
        expl = self.expl
        for t in sorted(expl.frontier):
            expl.explore(t)
        self._maybe_update_ecs()
        for s in reversed(list(expl.actions)):
            expl.backup(s)
        expl.stats.paths += 1

    def run(self) -> CoreResult:
        cfg = self.config
        start = time.perf_counter()
        status = None
        while not self.done():
            if cfg.max_episodes is not None and self.episodes >= cfg.max_episodes:
                status = "episode-cap"
                break
            if cfg.time_limit is not None and time.perf_counter() - start > cfg.time_limit:
                status = "timeout"
                break
            self.step()
        stats = self.expl.stats
        states = tuple(sorted(self.expl.actions))
        if status is not None:
            stats.wall_time = time.perf_counter() - start
            return CoreResult(states, self.epsilon, None, self.heuristic, self.seed,
                              None, False, status, stats)
        result = _finalize(self.mdp, states, self.epsilon, None, self.heuristic, self.seed,
                           stats, cfg.verify_delta)
        stats.wall_time = time.perf_counter() - start
        return result


def learn_core(
    mdp: Mdp,
    epsilon: float,
    heuristic=Heuristic.WEIGHTED,
    seed: int = 0,
    config: Optional[LearnConfig] = None,
    warm_start=None,
) -> CoreResult:
    """Learn an epsilon-core: a state set left with probability below epsilon.

    ``warm_start`` is an optional ``(states, bounds)`` pair from an earlier
    run; the bounds must be valid upper bounds for that state set.
    """
    return CoreLearner(mdp, epsilon, heuristic, seed, config, warm_start).run()
