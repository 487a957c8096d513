"""Learning n-step epsilon-cores with a step-indexed bound store.

For every explored state the store keeps upper bounds on the maximal
probability of reaching an unexplored state within ``r`` steps.  Dense
stores keep every ``r = 0..n``; sparse stores keep every K-th index (plus
``n``) and answer the others from the next stored index above, which is a
sound over-approximation because the bounds are non-decreasing in ``r``.
"""

from __future__ import annotations

import bisect
import logging
import time
from typing import Optional, Protocol

import numpy as np

from .learncore import (
    CoreResult,
    Heuristic,
    LearnConfig,
    PartialExploration,
    _finalize,
    choose_successor,
)
from .model import Mdp
from .numerics import SubModel, reach_steps

log = logging.getLogger(__name__)


class BoundFunction(Protocol):
    """Step-indexed upper-bound store; new kinds only need these members."""

    kind: str
    K: int
    horizon: int

    def get(self, s: int, r: int) -> float: ...

    def update(self, s: int, r: int, p: float) -> None: ...


class StaircaseStore:
    """Bounds kept at the stored indices ``0, K, 2K, ..., n``.

    ``get(s, r)`` reads the smallest stored index ``>= r``.  ``update(s, r, p)``
    lowers (by min) the largest stored index ``<= r`` -- a bound for ``r``
    steps is also one for fewer steps -- and clamps the stored indices below
    it so reads stay non-decreasing in ``r``.  States never written read 1
    for every ``r >= 1``; index 0 is always 0.
    """

    def __init__(self, horizon: int, K: int = 1):
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        if K < 1:
            raise ValueError("K must be >= 1")
        self.horizon = horizon
        self.K = K
        self.kind = "dense" if K == 1 else "sparse"
        idx = list(range(0, horizon + 1, K))
        if idx[-1] != horizon:
            idx.append(horizon)
        self.indices = idx
        self._slots: dict[int, list[float]] = {}

    def __contains__(self, s: int) -> bool:
        return s in self._slots

    def slot_above(self, r: int) -> int:
        """Position of the smallest stored index >= r."""
        return bisect.bisect_left(self.indices, r)

    def cover(self, r: int) -> int:
        """The smallest stored index >= r (the index ``get`` reads)."""
        return self.indices[min(self.slot_above(r), len(self.indices) - 1)]

    def _row(self, s: int) -> list[float]:
        row = self._slots.get(s)
        if row is None:
            row = [1.0] * len(self.indices)
            row[0] = 0.0
            self._slots[s] = row
        return row

    def get(self, s: int, r: int) -> float:
        if r <= 0:
            return 0.0
        row = self._slots.get(s)
        if row is None:
            return 1.0
        i = self.slot_above(r)
        return row[i] if i < len(row) else row[-1]

    def update(self, s: int, r: int, p: float) -> None:
        if r < 1:
            return
        i = bisect.bisect_right(self.indices, r) - 1
        if i == 0 or p >= 1.0 and s not in self._slots:
            return
        row = self._row(s)
        if p < row[i]:
            row[i] = p
            for j in range(i - 1, 0, -1):
                if row[j] <= p:
                    break
                row[j] = p

    def set_zero(self, s: int) -> None:
        """The state cannot reach anything unexplored at any horizon."""
        self._slots[s] = [0.0] * len(self.indices)

    def describe(self) -> dict:
        return {"kind": self.kind, "K": self.K}


def make_store(kind: str, horizon: int, K: int = 5) -> StaircaseStore:
    if kind == "dense":
        return StaircaseStore(horizon, 1)
    if kind == "sparse":
        return StaircaseStore(horizon, K)
    raise ValueError(f"unknown bound store kind {kind!r}")


def get_bound(store: BoundFunction, s: int, r: int) -> float:
    return store.get(s, r)


def update_bound(store: BoundFunction, s: int, r: int, p: float) -> None:
    store.update(s, r, p)


class FiniteCoreLearner:
    """Driver of the n-step learner; mirrors :class:`CoreLearner`."""

    def __init__(
        self,
        mdp: Mdp,
        epsilon: float,
        n: int,
        heuristic=Heuristic.WEIGHTED,
        store: str = "sparse",
        K: int = 5,
        seed: int = 0,
        config: Optional[LearnConfig] = None,
        warm_start=None,
    ):
        if not 0.0 < epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")
        if n < 1:
            raise ValueError("n must be >= 1")
        self.mdp = mdp
        self.epsilon = epsilon
        self.n = n
        self.heuristic = Heuristic.parse(heuristic)
        self.seed = seed
        self.config = config or LearnConfig()
        self.store = make_store(store, n, K)
        states = None
        if warm_start is not None:
            states = warm_start[0]
        self.expl = PartialExploration(mdp, seed, (states, None) if states is not None else None)
        for s, v in self.expl.bound.items():
            if v == 0.0:
                self.store.set_zero(s)
        if warm_start is not None and warm_start[1]:
            for s, rows in warm_start[1].items():
                for r, p in rows.items():
                    self.store.update(s, r, p)
        self.episodes = 0
        self._best = self.initial_bound
        self._stall = 0
        self.fallback = False

    @property
    def initial_bound(self) -> float:
        return self.store.get(self.mdp.initial, self.n)

    def done(self) -> bool:
        return self.initial_bound < self.epsilon

    def _explore(self, s: int) -> None:
        self.expl.explore(s)
        if self.expl.bound[s] == 0.0:
            self.store.set_zero(s)

    def value(self, t: int, r: int) -> float:
        """Bound for successor ``t`` with ``r`` steps left; unexplored means reached."""
        if t not in self.expl.actions:
            return 1.0
        return self.store.get(t, r)

    def _bellman(self, s: int, r: int) -> float:
        get = self.value
        best = 0.0
        for targets, probs in self.expl.actions[s]:
            v = 0.0
            for t, p in zip(targets, probs):
                v += p * get(t, r - 1)
            if v > best:
                best = v
        return best

    def sample_path(self) -> list[int]:
        expl, store, n = self.expl, self.store, self.n
        s = expl.initial
        path = [s]
        for i in range(n):
            r = n - i
            if store.get(s, r) == 0.0:
                break
            acts = expl.actions[s]
            t = choose_successor(expl, s, self.heuristic, lambda x: self.value(x, r - 1), acts)
            path.append(t)
            if not expl.is_explored(t):
                self._explore(t)
                break
            s = t
        expl.stats.paths += 1
        return path

    def exact_sweep(self) -> None:
        """Exact bounded DP on the explored view (frontier = 1) into the store."""
        sub = SubModel(self.mdp, self.expl.actions)
        idx = self.store.indices
        want = set(idx)
        it = reach_steps(sub, np.zeros(sub.n, dtype=bool), 1.0)
        next(it)
        states = [int(x) for x in sub.states]
        for r in range(1, self.n + 1):
            v = next(it)
            if r in want:
                for s, p in zip(states, v[:-1].tolist()):
                    self.store.update(s, r, p)
        self.expl.stats.bellman_updates += sub.n * self.n

    def step(self) -> None:
        cfg, expl = self.config, self.expl
        if self.fallback:
            for t in sorted(expl.frontier):
                self._explore(t)
            self.exact_sweep()
            expl.stats.paths += 1
        else:
            path = self.sample_path()
            for i in range(len(path) - 1, -1, -1):
                s = path[i]
                if s not in expl.actions:
                    continue
                # back up at the stored index this position's reads resolve to
                r = self.store.cover(self.n - i)
                self.store.update(s, r, self._bellman(s, r))
                expl.stats.bellman_updates += 1
        self.episodes += 1
        if not expl.frontier:
            for s in expl.actions:
                self.store.set_zero(s)
            return
        if not self.fallback and self.episodes % max(1, cfg.exact_every) == 0:
            self.exact_sweep()
        u = self.initial_bound
        if u < self._best - cfg.stall_tolerance:
            self._best = u
            self._stall = 0
        elif not self.fallback:
            self._stall += 1
            if self._stall >= cfg.stall_episodes:
                log.info("no progress for %d episodes; expanding breadth-first", self._stall)
                self.fallback = True
                expl.stats.fallback = True

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
            result = CoreResult(states, self.epsilon, self.n, self.heuristic, self.seed,
                                None, False, status, stats)
        else:
            result = _finalize(self.mdp, states, self.epsilon, self.n, self.heuristic,
                               self.seed, stats, None)
        result.bound_store = self.store.describe()
        stats.wall_time = time.perf_counter() - start
        return result


def learn_finite_core(
    mdp: Mdp,
    epsilon: float,
    n: int,
    heuristic=Heuristic.WEIGHTED,
    store: str = "sparse",
    K: int = 5,
    seed: int = 0,
    config: Optional[LearnConfig] = None,
    warm_start=None,
) -> CoreResult:
    """Learn a set left within ``n`` steps with probability below ``epsilon``.

    ``warm_start`` is an optional ``(states, bounds)`` pair where ``bounds``
    maps a state to ``{r: upper bound}``; bounds may be ``None``.
    """
    return FiniteCoreLearner(mdp, epsilon, n, heuristic, store, K, seed, config, warm_start).run()
