"""Explicit-state MDP types and the JSON model format.

A Markov chain is an MDP with exactly one action per state.  Models are
immutable once built.  Besides fully materialized :class:`ExplicitMdp`
instances there is :class:`LazyMdp`, which answers ``actions(s)`` from a
successor function; the learners only ever touch the states they explore,
so very large generated models never have to be built in full.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from typing import Callable, Iterator, Optional, Sequence

# Accepted deviation of a distribution's sum from 1.
SUM_TOLERANCE = 1e-9
# Below this the sum is treated as already normalized (a few ulps).
_RENORM_SLACK = 8 * 2.0**-53


class ModelError(ValueError):
    """Raised for malformed or inconsistent model data."""


@dataclass(frozen=True)
class Distribution:
    """Successor distribution with distinct targets sorted ascending."""

    targets: tuple[int, ...]
    probs: tuple[float, ...]

    @classmethod
    def from_pairs(cls, pairs, where: str = "") -> "Distribution":
        """Validate ``(target, prob)`` pairs and build a normalized distribution."""
        pairs = list(pairs)
        prefix = f"{where}: " if where else ""
        if not pairs:
            raise ModelError(f"{prefix}empty distribution")
        seen = set()
        for t, p in pairs:
            if isinstance(t, bool) or not isinstance(t, int) or t < 0:
                raise ModelError(f"{prefix}invalid target {t!r}")
            if t in seen:
                raise ModelError(f"{prefix}duplicate target {t}")
            seen.add(t)
            if not isinstance(p, (int, float)) or isinstance(p, bool) or not math.isfinite(p):
                raise ModelError(f"{prefix}invalid probability {p!r}")
            if p <= 0.0 or p > 1.0 + SUM_TOLERANCE:
                raise ModelError(f"{prefix}probability {p!r} outside (0, 1]")
        total = math.fsum(float(p) for _, p in pairs)
        if abs(total - 1.0) > SUM_TOLERANCE:
            raise ModelError(f"{prefix}distribution sums to {total:.12g}")
        pairs.sort(key=lambda tp: tp[0])
        probs = [float(p) for _, p in pairs]
        if abs(total - 1.0) > _RENORM_SLACK:
            probs = [p / total for p in probs]
        return cls(tuple(t for t, _ in pairs), tuple(probs))

    @classmethod
    def merged(cls, pairs, where: str = "") -> "Distribution":
        """Like :meth:`from_pairs` but sums the mass of repeated targets."""
        acc: dict[int, float] = {}
        for t, p in pairs:
            acc[t] = acc.get(t, 0.0) + p
        return cls.from_pairs(acc.items(), where)

    @classmethod
    def point(cls, target: int) -> "Distribution":
        return cls((target,), (1.0,))

    def __len__(self) -> int:
        return len(self.targets)

    def items(self) -> Iterator[tuple[int, float]]:
        return zip(self.targets, self.probs)

    def prob(self, target: int) -> float:
        for t, p in zip(self.targets, self.probs):
            if t == target:
                return p
        return 0.0


@dataclass(frozen=True)
class Action:
    dist: Distribution
    label: Optional[str] = None


class Mdp:
    """Common interface of explicit and lazily generated models."""

    num_states: int
    initial: int
    rewards: Optional[tuple[float, ...]]

    def actions(self, s: int) -> Sequence[Action]:
        raise NotImplementedError

    def successors(self, s: int) -> set[int]:
        return {t for a in self.actions(s) for t in a.dist.targets}

    def reward(self, s: int) -> float:
        if self.rewards is None:
            raise ModelError("model carries no rewards")
        return self.rewards[s]

    @property
    def is_chain(self) -> bool:
        return all(len(self.actions(s)) == 1 for s in range(self.num_states))

    def reachable(self) -> set[int]:
        seen = {self.initial}
        stack = [self.initial]
        while stack:
            s = stack.pop()
            for t in self.successors(s):
                if t not in seen:
                    seen.add(t)
                    stack.append(t)
        return seen

    def fingerprint(self) -> str:
        """SHA-256 hex digest of the canonical serialization."""
        h = hashlib.sha256()
        for chunk in _canonical_chunks(self):
            h.update(chunk.encode("utf-8"))
        return h.hexdigest()

    def materialize(self) -> "ExplicitMdp":
        return ExplicitMdp(
            self.num_states,
            self.initial,
            [tuple(self.actions(s)) for s in range(self.num_states)],
            self.rewards,
        )


class ExplicitMdp(Mdp):
    """Fully materialized MDP; validated at construction."""

    def __init__(self, num_states: int, initial: int, actions, rewards=None):
        if num_states < 1:
            raise ModelError("model needs at least one state")
        if not 0 <= initial < num_states:
            raise ModelError(f"initial state {initial} out of range")
        if len(actions) != num_states:
            raise ModelError(f"expected {num_states} action lists, got {len(actions)}")
        table = []
        for s, acts in enumerate(actions):
            acts = tuple(acts)
            if not acts:
                raise ModelError(f"state {s}: empty action set")
            for i, a in enumerate(acts):
                if a.dist.targets[-1] >= num_states:
                    raise ModelError(
                        f"state {s}, action {i}: target {a.dist.targets[-1]} out of range"
                    )
            table.append(acts)
        if rewards is not None:
            rewards = tuple(float(r) for r in rewards)
            if len(rewards) != num_states:
                raise ModelError(f"expected {num_states} rewards, got {len(rewards)}")
        self.num_states = num_states
        self.initial = initial
        self._actions = tuple(table)
        self.rewards = rewards

    def actions(self, s: int) -> Sequence[Action]:
        return self._actions[s]

    def materialize(self) -> "ExplicitMdp":
        return self

    def __repr__(self) -> str:
        return f"ExplicitMdp(num_states={self.num_states}, initial={self.initial})"


class LazyMdp(Mdp):
    """MDP whose actions come from a successor function, computed on demand.

    The successor function must be pure; results are not validated up front
    (call :meth:`materialize` for a checked explicit copy).
    """

    def __init__(
        self,
        num_states: int,
        initial: int,
        successor: Callable[[int], Sequence[Action]],
        rewards=None,
        name: str = "lazy",
    ):
        self.num_states = num_states
        self.initial = initial
        self._successor = successor
        self.rewards = rewards
        self.name = name

    def actions(self, s: int) -> Sequence[Action]:
        if not 0 <= s < self.num_states:
            raise ModelError(f"state {s} out of range")
        return self._successor(s)

    def __repr__(self) -> str:
        return f"LazyMdp({self.name}, num_states={self.num_states})"


def _fmt(x: float) -> str:
    return json.dumps(float(x))


def _canonical_chunks(mdp: Mdp) -> Iterator[str]:
    yield f'{{"type":"mdp","states":{mdp.num_states},"initial":{mdp.initial},"actions":['
    for s in range(mdp.num_states):
        parts = []
        for a in mdp.actions(s):
            dist = ",".join(f"[{t},{_fmt(p)}]" for t, p in a.dist.items())
            if a.label is None:
                parts.append(f'{{"dist":[{dist}]}}')
            else:
                parts.append(f'{{"label":{json.dumps(a.label)},"dist":[{dist}]}}')
        yield ("," if s else "") + "[" + ",".join(parts) + "]"
    yield "]"
    if mdp.rewards is not None:
        yield ',"rewards":[' + ",".join(_fmt(r) for r in mdp.rewards) + "]"
    yield "}"


def serialize_model(mdp: Mdp) -> str:
    """Canonical JSON: no whitespace, dist entries sorted by target."""
    return "".join(_canonical_chunks(mdp))


def parse_model(text: str) -> ExplicitMdp:
    """Parse the JSON model format, reporting errors with their location."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(f"malformed JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ModelError("model must be a JSON object")
    if data.get("type") != "mdp":
        raise ModelError(f'unsupported model type {data.get("type")!r}')
    n = data.get("states")
    if isinstance(n, bool) or not isinstance(n, int) or n < 1:
        raise ModelError(f"invalid state count {n!r}")
    initial = data.get("initial")
    if isinstance(initial, bool) or not isinstance(initial, int):
        raise ModelError(f"invalid initial state {initial!r}")
    raw = data.get("actions")
    if not isinstance(raw, list) or len(raw) != n:
        raise ModelError(f"'actions' must be a list of length {n}")
    table = []
    for s, acts in enumerate(raw):
        if not isinstance(acts, list) or not acts:
            raise ModelError(f"state {s}: empty action set")
        row = []
        for i, obj in enumerate(acts):
            where = f"state {s}, action {i}"
            if not isinstance(obj, dict) or not isinstance(obj.get("dist"), list):
                raise ModelError(f"{where}: expected object with 'dist'")
            label = obj.get("label")
            if label is not None and not isinstance(label, str):
                raise ModelError(f"{where}: label must be a string")
            pairs = []
            for entry in obj["dist"]:
                if not isinstance(entry, list) or len(entry) != 2:
                    raise ModelError(f"{where}: dist entries must be [target, prob]")
                pairs.append((entry[0], entry[1]))
            dist = Distribution.from_pairs(pairs, where)
            if dist.targets[-1] >= n:
                raise ModelError(f"{where}: target {dist.targets[-1]} out of range")
            row.append(Action(dist, label))
        table.append(row)
    rewards = data.get("rewards")
    if rewards is not None:
        if not isinstance(rewards, list) or not all(
            isinstance(r, (int, float)) and not isinstance(r, bool) for r in rewards
        ):
            raise ModelError("'rewards' must be a list of numbers")
    return ExplicitMdp(n, initial, table, rewards)


def load_model(path) -> ExplicitMdp:
    with open(path, encoding="utf-8") as fh:
        return parse_model(fh.read())


def save_model(mdp: Mdp, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for chunk in _canonical_chunks(mdp):
            fh.write(chunk)
