"""Analyses on a learned core: stability profile and extrapolation.

The stability profile gives, for every step bound N, the maximal
probability of leaving the core within N steps.  Extrapolation computes
lower and upper bounds on N-step reachability (or average reward) of the
full model from the core alone, pinning unexplored states to the extreme
values.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Optional, Union

import numpy as np

from .learncore import CoreResult
from .model import Mdp, ModelError
from .numerics import (
    EXIT,
    FrontierPolicy,
    SubModel,
    bounded_mean_payoff_bounds,
    max_reach_interval,
    reach_steps,
)


def _core_states(core: Union[CoreResult, Iterable[int]]) -> tuple[int, ...]:
    states = core.states if isinstance(core, CoreResult) else core
    return tuple(sorted(set(states)))


def _check_core(mdp: Mdp, states) -> None:
    if mdp.initial not in states:
        raise ModelError("initial state outside core")
    if states and (states[0] < 0 or states[-1] >= mdp.num_states):
        raise ModelError("core state out of range")


@dataclass
class StabilityProfile:
    states: tuple[int, ...]
    epsilon: Optional[float]
    horizon: Optional[int]
    exits: np.ndarray  # exits[N-1] for N = 1..N_max

    def exit_within(self, N: int) -> float:
        return float(self.exits[N - 1])


@dataclass
class ExtrapolationCurve:
    objective: str  # "reach" | "mean-payoff"
    lower: np.ndarray  # per step N = 1..N_max
    upper: np.ndarray
    unbounded: Optional[tuple[float, float]] = None

    @property
    def steps(self) -> np.ndarray:
        return np.arange(1, len(self.lower) + 1)

    @property
    def gap(self) -> np.ndarray:
        return self.upper - self.lower


def stability(mdp: Mdp, core: Union[CoreResult, Iterable[int]], n_max: int) -> StabilityProfile:
    """Maximal probability of leaving the core within N steps, N = 1..n_max."""
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    states = _core_states(core)
    _check_core(mdp, states)
    sub = SubModel(mdp, states)
    i = sub.local(mdp.initial)
    it = reach_steps(sub, np.zeros(sub.n, dtype=bool), EXIT.upper_value)
    next(it)
    exits = np.empty(n_max)
    for j in range(n_max):
        exits[j] = next(it)[i]
    eps = core.epsilon if isinstance(core, CoreResult) else None
    hor = core.horizon if isinstance(core, CoreResult) else None
    return StabilityProfile(states, eps, hor, exits)


def extrapolate_reach(
    mdp: Mdp,
    core: Union[CoreResult, Iterable[int]],
    targets: Iterable[int],
    n_max: int,
    unbounded: bool = False,
    delta: float = 1e-10,
) -> ExtrapolationCurve:
    """Bounds on N-step maximal reachability of ``targets`` using only the core.

    Unexplored states count 0 for the lower and 1 for the upper bound;
    target states in the core are pinned to 1.
    """
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    states = _core_states(core)
    _check_core(mdp, states)
    sub = SubModel(mdp, states)
    i = sub.local(mdp.initial)
    mask = sub.mask(targets)
    curves = []
    for val in (0.0, 1.0):
        curve = np.empty(n_max)
        it = reach_steps(sub, mask, val)
        next(it)
        for j in range(n_max):
            curve[j] = next(it)[i]
        curves.append(curve)
    end = None
    if unbounded:
        iv = max_reach_interval(mdp, targets, delta, FrontierPolicy(0.0, 1.0), states)
        lo, hi = iv.at(mdp.initial)
        end = (lo, hi)
    return ExtrapolationCurve("reach", curves[0], curves[1], end)


def extrapolate_mean_payoff(
    mdp: Mdp,
    core: Union[CoreResult, Iterable[int]],
    r_min: float,
    r_max: float,
    n_max: int,
) -> ExtrapolationCurve:
    """Bounds on the maximal N-step average reward using only the core.

    Unexplored states are assumed to earn ``r_min`` (lower) or ``r_max``
    (upper) at every step.
    """
    if mdp.rewards is None:
        raise ModelError("model carries no rewards")
    if r_min > r_max:
        raise ValueError("r_min exceeds r_max")
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    states = _core_states(core)
    _check_core(mdp, states)
    for s in states:
        if not r_min <= mdp.rewards[s] <= r_max:
            raise ValueError(f"reward of state {s} outside [r_min, r_max]")
    iv = bounded_mean_payoff_bounds(mdp, n_max, FrontierPolicy(r_min, r_max), states)
    return ExtrapolationCurve("mean-payoff", np.asarray(iv.lower), np.asarray(iv.upper))


def write_stability_csv(profile: StabilityProfile, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["step", "exit"])
    for n, x in enumerate(profile.exits.tolist(), start=1):
        w.writerow([n, repr(x)])


def write_curve_csv(curve: ExtrapolationCurve, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["step", "lower", "upper"])
    for n, (lo, hi) in enumerate(zip(curve.lower.tolist(), curve.upper.tolist()), start=1):
        w.writerow([n, repr(lo), repr(hi)])
