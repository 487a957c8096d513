"""Ground-truth engines: step-bounded value iteration, interval iteration
for unbounded maximal reachability, and step-bounded total/average reward.

Every routine works on a *view*: a set of states of the model.  Successors
outside the view are merged into a single outside node whose value is
pinned by a :class:`FrontierPolicy` (e.g. 0 / 1 for lower / upper bounds
on reachability, or 1 / 1 when the outside is the exit of a core).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, Union

import numpy as np

from .graph import mec_decompose, scc_decompose
from .model import Mdp, ModelError

DEFAULT_DELTA = 1e-10
MAX_SWEEPS = 10**7


class NonConvergenceError(RuntimeError):
    """Interval iteration hit its sweep cap before reaching the precision."""


@dataclass(frozen=True)
class FrontierPolicy:
    lower_value: float = 0.0
    upper_value: float = 1.0

    def __post_init__(self):
        if self.lower_value > self.upper_value:
            raise ValueError("frontier lower value exceeds upper value")


EXIT = FrontierPolicy(1.0, 1.0)


@dataclass(frozen=True)
class ValueInterval:
    """Lower/upper bounds, either scalars or vectors aligned with ``states``."""

    lower: Union[float, np.ndarray]
    upper: Union[float, np.ndarray]
    states: Optional[np.ndarray] = None

    def at(self, s: int) -> tuple[float, float]:
        if self.states is None:
            raise ValueError("scalar interval has no per-state values")
        i = int(np.searchsorted(self.states, s))
        if i >= len(self.states) or self.states[i] != s:
            raise KeyError(s)
        return float(self.lower[i]), float(self.upper[i])

    @property
    def width(self) -> float:
        return float(np.max(np.asarray(self.upper) - np.asarray(self.lower), initial=0.0))


class SubModel:
    """Compiled sparse form of the sub-model induced by a state view.

    Local indices ``0..n-1`` are the view states in ascending order; index
    ``n`` is the outside node standing for every successor not in the view.
    """

    def __init__(self, mdp: Mdp, states: Optional[Iterable[int]] = None):
        if states is None:
            states = range(mdp.num_states)
        self.states = np.array(sorted(set(states)), dtype=np.int64)
        self.n = n = len(self.states)
        self.index = {int(s): i for i, s in enumerate(self.states)}
        self.choices: list[list[list[tuple[int, float]]]] = []
        choice_start = [0]
        trans_choice, trans_target, trans_prob = [], [], []
        c = 0
        for s in self.states:
            per_state = []
            for a in mdp.actions(int(s)):
                agg: dict[int, float] = {}
                for t, p in a.dist.items():
                    j = self.index.get(t, n)
                    agg[j] = agg.get(j, 0.0) + p
                ch = sorted(agg.items())
                per_state.append(ch)
                for j, p in ch:
                    trans_choice.append(c)
                    trans_target.append(j)
                    trans_prob.append(p)
                c += 1
            self.choices.append(per_state)
            choice_start.append(c)
        self.num_choices = c
        self.choice_start = np.array(choice_start[:-1], dtype=np.int64)
        self.trans_choice = np.array(trans_choice, dtype=np.int64)
        self.trans_target = np.array(trans_target, dtype=np.int64)
        self.trans_prob = np.array(trans_prob, dtype=np.float64)
        self.has_outside = bool(np.any(self.trans_target == n))

    def local(self, s: int) -> int:
        try:
            return self.index[s]
        except KeyError:
            raise ModelError(f"state {s} not in view") from None

    def mask(self, states: Iterable[int]) -> np.ndarray:
        m = np.zeros(self.n, dtype=bool)
        for s in states:
            i = self.index.get(s)
            if i is not None:
                m[i] = True
        return m

    def bellman(self, v: np.ndarray) -> np.ndarray:
        """``max_a sum_t P(s,a,t) v[t]`` for every view state; ``v`` has n+1 entries."""
        q = np.bincount(
            self.trans_choice,
            weights=self.trans_prob * v[self.trans_target],
            minlength=self.num_choices,
        )
        return np.maximum.reduceat(q, self.choice_start)


# ---------------------------------------------------------------- bounded

def reach_steps(sub: SubModel, target_mask: np.ndarray, outside_value: float) -> Iterator[np.ndarray]:
    """Yield the k-step reachability vector (length n+1) for k = 0, 1, 2, ..."""
    v = np.zeros(sub.n + 1)
    v[:-1][target_mask] = 1.0
    v[-1] = outside_value
    yield v
    while True:
        w = np.empty_like(v)
        w[:-1] = sub.bellman(v)
        w[:-1][target_mask] = 1.0
        w[-1] = outside_value
        v = w
        yield v


def bounded_max_reach(
    mdp: Mdp,
    targets: Iterable[int],
    k: int,
    frontier: FrontierPolicy = FrontierPolicy(),
    states: Optional[Iterable[int]] = None,
) -> ValueInterval:
    """Exact k-step maximal reachability on a view, per view state.

    Lower and upper differ only through the values pinned at the outside
    node; with an empty frontier they coincide.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    sub = SubModel(mdp, states)
    return _bounded_on(sub, sub.mask(targets), k, frontier)


def _bounded_on(sub: SubModel, mask: np.ndarray, k: int, frontier: FrontierPolicy) -> ValueInterval:
    def run(val):
        it = reach_steps(sub, mask, val)
        for _ in range(k + 1):
            v = next(it)
        return v[:-1]

    lo = run(frontier.lower_value)
    hi = run(frontier.upper_value) if sub.has_outside else lo.copy()
    return ValueInterval(lo, hi, sub.states)


def bounded_reach_curve(
    mdp: Mdp,
    targets: Iterable[int],
    n_max: int,
    frontier: FrontierPolicy,
    states: Optional[Iterable[int]] = None,
    start: Optional[int] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Lower/upper k-step values at ``start`` (default: initial) for k = 1..n_max."""
    sub = SubModel(mdp, states)
    i = sub.local(mdp.initial if start is None else start)
    mask = sub.mask(targets)
    out = []
    for val in (frontier.lower_value, frontier.upper_value):
        curve = np.empty(n_max)
        it = reach_steps(sub, mask, val)
        next(it)
        for j in range(n_max):
            curve[j] = next(it)[i]
        out.append(curve)
    return out[0], out[1]


def mean_payoff_steps(sub: SubModel, rewards: np.ndarray, outside_reward: float) -> Iterator[np.ndarray]:
    """Yield total-reward vectors t_j (length n+1) for j = 0, 1, 2, ...

    ``t_{j+1}(s) = r(s) + max_a sum P t_j``; the outside node accrues
    ``j * outside_reward``.
    """
    t = np.zeros(sub.n + 1)
    j = 0
    yield t
    while True:
        j += 1
        w = np.empty_like(t)
        w[:-1] = rewards + sub.bellman(t)
        w[-1] = j * outside_reward
        t = w
        yield t


def bounded_mean_payoff_bounds(
    mdp: Mdp,
    k: int,
    frontier: FrontierPolicy,
    states: Optional[Iterable[int]] = None,
    rewards=None,
) -> ValueInterval:
    """Bounds on the j-step average reward at the initial state, j = 1..k.

    Unexplored states are assumed to yield ``frontier.lower_value`` resp.
    ``frontier.upper_value`` (r_min / r_max) at every remaining step.
    """
    if rewards is None:
        rewards = mdp.rewards
    if rewards is None:
        raise ModelError("model carries no rewards")
    sub = SubModel(mdp, states)
    r = np.array([rewards[int(s)] for s in sub.states], dtype=np.float64)
    i = sub.local(mdp.initial)
    steps = np.arange(1, k + 1, dtype=np.float64)
    curves = []
    for val in (frontier.lower_value, frontier.upper_value):
        tot = np.empty(k)
        it = mean_payoff_steps(sub, r, val)
        next(it)
        for j in range(k):
            tot[j] = next(it)[i]
        curves.append(tot / steps)
    return ValueInterval(curves[0], curves[1], None)


# -------------------------------------------------------------- unbounded

# Sweeps on one SCC before switching to policy iteration.
_ACCEL_AFTER = 500
# Slack factors tried when certifying solved values.
_CERT_ETAS = (1e-15, 1e-14, 1e-13, 1e-12, 1e-11, 1e-10)


class _SccSystem:
    """Choices of one EC-free SCC: ``x = max_a (c_a + P_a x)``.

    Since the SCC holds no end component, every policy leaves it almost
    surely, so each policy's linear system is non-singular and the
    Bellman operator has a unique fixed point.  Any ``a <= B(a)`` is then
    a lower and any ``b >= B(b)`` an upper bound of that fixed point.
    """

    def __init__(self, m, starts, ic, it, ip, nc):
        self.m, self.starts, self.ic, self.it, self.ip, self.nc = m, starts, ic, it, ip, nc
        counts = np.diff(np.append(starts, nc))
        self.owner = np.repeat(np.arange(m), counts)

    def q(self, c, x):
        return c + np.bincount(self.ic, self.ip * x[self.it], minlength=self.nc)

    def bellman(self, c, x):
        return np.maximum.reduceat(self.q(c, x), self.starts)

    def _argmax(self, q, tol):
        best = np.maximum.reduceat(q, self.starts)
        ok = q >= best[self.owner] - tol
        idx = np.where(ok, np.arange(self.nc), self.nc)
        return np.minimum.reduceat(idx, self.starts)

    def _solve(self, policy, rhs):
        from scipy.sparse import csr_matrix, identity
        from scipy.sparse.linalg import spsolve

        row_of = np.full(self.nc, -1)
        row_of[policy] = np.arange(self.m)
        rows = row_of[self.ic]
        keep = rows >= 0
        P = csr_matrix((self.ip[keep], (rows[keep], self.it[keep])), shape=(self.m, self.m))
        A = (identity(self.m, format="csr") - P).tocsc()
        return np.atleast_1d(spsolve(A, rhs))

    def policy_iteration(self, c, x0, max_iter=100):
        policy = self._argmax(self.q(c, x0), 0.0)
        v = x0
        for _ in range(max_iter):
            v = self._solve(policy, c[policy])
            q = self.q(c, v)
            better = self._argmax(q, 1e-14)
            stay = q[policy] >= q[better] - 1e-14
            if np.all(stay):
                break
            policy = np.where(stay, policy, better)
        return v, policy

    def max_time(self, allowed, policy, max_iter=100):
        """Maximal expected number of steps in the SCC using ``allowed`` choices."""
        h = self._solve(policy, np.ones(self.m))
        for _ in range(max_iter):
            q = 1.0 + np.bincount(self.ic, self.ip * h[self.it], minlength=self.nc)
            q = np.where(allowed, q, -np.inf)
            better = self._argmax(q, 0.0)
            stay = q[policy] >= q[better] - 1e-9 * np.maximum(1.0, np.abs(q[better]))
            if np.all(stay):
                break
            policy = np.where(stay, policy, better)
            h = self._solve(policy, np.ones(self.m))
        return h

    def certified(self, c_lo, c_hi, x_lo, x_hi):
        """Tighten ``(x_lo, x_hi)`` with policy iteration, keeping both sound.

        Returns the new pair and the precision floor implied by the slack
        needed to certify against rounding.
        """
        floor = 0.0
        try:
            v, pol = self.policy_iteration(c_lo, x_lo)
            h = self._solve(pol, np.ones(self.m))
            for eta in _CERT_ETAS:
                a = np.maximum(x_lo, v - eta * h)
                if np.all(self.bellman(c_lo, a) >= a):
                    x_lo = a
                    floor = max(floor, 4 * eta * float(np.max(h)))
                    break
            v, pol = self.policy_iteration(c_hi, x_hi)
            # every near-optimal choice must lose slack, so use the longest
            # expected stay among them
            q = self.q(c_hi, v)
            best = np.maximum.reduceat(q, self.starts)
            h = self.max_time(q >= best[self.owner] - 1e-10, pol)
            for eta in _CERT_ETAS:
                b = np.minimum(x_hi, v + eta * h)
                if np.all(self.bellman(c_hi, b) <= b):
                    x_hi = b
                    floor = max(floor, 4 * eta * float(np.max(h)))
                    break
        except (ArithmeticError, ValueError, RuntimeError):
            pass
        return x_lo, np.maximum(x_hi, x_lo), floor


def _solve_sccs(num_nodes, free, choices, lo, hi, delta, max_sweeps):
    """Interval iteration over the free nodes of an EC-free quotient graph.

    ``choices[u]`` lists the choices of free node ``u`` as ``[(node, p)]``.
    ``lo``/``hi`` hold the pinned values of fixed nodes and receive the
    results.  SCCs are solved bottom-up; each non-trivial one is iterated
    until its gap is within ``delta / #nontrivial`` of the gap it inherits
    from below, so the final gap is at most ``delta`` everywhere.
    """
    free_set = set(free)

    def succ(u):
        for ch in choices[u]:
            for t, _ in ch:
                if t in free_set:
                    yield t

    sccs = scc_decompose(free, succ)

    def nontrivial(c):
        return len(c) > 1 or any(t == c[0] for ch in choices[c[0]] for t, _ in ch)

    flags = [nontrivial(c) for c in sccs]
    budget = delta / max(1, sum(flags))
    fixed = [u for u in range(num_nodes) if u not in free_set]
    top = max((hi[u] for u in fixed), default=0.0)
    bottom = min((lo[u] for u in fixed), default=0.0)
    sweeps = 0
    for comp, loops in zip(sccs, flags):
        pos = {u: i for i, u in enumerate(comp)}
        c_lo, c_hi, starts = [], [], []
        int_choice, int_target, int_prob = [], [], []
        ext_gap = 0.0
        for u in comp:
            starts.append(len(c_lo))
            for ch in choices[u]:
                a_lo = a_hi = 0.0
                cid = len(c_lo)
                for t, p in ch:
                    j = pos.get(t)
                    if j is None:
                        a_lo += p * lo[t]
                        a_hi += p * hi[t]
                        g = hi[t] - lo[t]
                        if g > ext_gap:
                            ext_gap = g
                    else:
                        int_choice.append(cid)
                        int_target.append(j)
                        int_prob.append(p)
                c_lo.append(a_lo)
                c_hi.append(a_hi)
        if not loops:
            u = comp[0]
            lo[u] = max(c_lo)
            hi[u] = max(c_hi)
            continue
        c_lo = np.array(c_lo)
        c_hi = np.array(c_hi)
        starts = np.array(starts, dtype=np.int64)
        ic = np.array(int_choice, dtype=np.int64)
        it = np.array(int_target, dtype=np.int64)
        ip = np.array(int_prob)
        nc = len(c_lo)
        sys_ = _SccSystem(len(comp), starts, ic, it, ip, nc)
        x_lo = np.full(len(comp), bottom)
        x_hi = np.full(len(comp), top)
        goal = ext_gap + budget
        accelerated = False
        burst = 0
        while True:
            x_lo = sys_.bellman(c_lo, x_lo)
            x_hi = sys_.bellman(c_hi, x_hi)
            sweeps += 1
            burst += 1
            if float(np.max(x_hi - x_lo)) <= goal:
                break
            if not accelerated and burst >= _ACCEL_AFTER:
                accelerated = True
                x_lo, x_hi, floor = sys_.certified(c_lo, c_hi, x_lo, x_hi)
                goal = max(goal, floor)
                if float(np.max(x_hi - x_lo)) <= goal:
                    break
            if sweeps >= max_sweeps:
                raise NonConvergenceError(
                    f"interval iteration did not reach precision {delta} within {max_sweeps} sweeps"
                )
        for u, a, b in zip(comp, x_lo, x_hi):
            lo[u] = float(a)
            hi[u] = float(max(a, b))
    return sweeps


def max_reach_interval(
    mdp: Mdp,
    targets: Iterable[int],
    delta: float = DEFAULT_DELTA,
    frontier: FrontierPolicy = FrontierPolicy(),
    states: Optional[Iterable[int]] = None,
    max_sweeps: int = MAX_SWEEPS,
) -> ValueInterval:
    """Certified bounds on unbounded maximal reachability, per view state.

    MECs of the non-target part are collapsed and bottom components that
    cannot reach a target or the frontier are pinned to 0, which removes
    the spurious fixed points of iteration from above.  The true value lies
    in ``[lower, upper]`` and ``upper - lower <= delta`` everywhere.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    sub = SubModel(mdp, states)
    n = sub.n
    is_target = sub.mask(targets)
    free_states = [i for i in range(n) if not is_target[i]]
    dec = mec_decompose({i: [[t for t, _ in ch] for ch in sub.choices[i]] for i in free_states})

    # quotient nodes: 0 = target, 1 = outside, 2 = zero, then free nodes
    TARGET, OUTSIDE, ZERO = 0, 1, 2
    node_of = np.full(n + 1, -1, dtype=np.int64)
    node_of[n] = OUTSIDE
    node_of[:n][is_target] = TARGET
    next_node = 3
    for mec in dec.mecs:
        for s in mec.states:
            node_of[s] = next_node
        next_node += 1
    for s in free_states:
        if node_of[s] < 0:
            node_of[s] = next_node
            next_node += 1
    num_nodes = next_node
    choices: list[list[list[tuple[int, float]]]] = [[] for _ in range(num_nodes)]
    for s in free_states:
        u = int(node_of[s])
        mec = dec.mec_of(s)
        retained = mec.actions[s] if mec is not None else ()
        for i, ch in enumerate(sub.choices[s]):
            if i in retained:
                continue
            agg: dict[int, float] = {}
            for t, p in ch:
                v = int(node_of[t])
                agg[v] = agg.get(v, 0.0) + p
            choices[u].append(sorted(agg.items()))

    lo = [0.0] * num_nodes
    hi = [0.0] * num_nodes
    lo[TARGET] = hi[TARGET] = 1.0
    lo[OUTSIDE], hi[OUTSIDE] = frontier.lower_value, frontier.upper_value

    # nodes that can reach a fixed node with positive upper value
    pred: list[list[int]] = [[] for _ in range(num_nodes)]
    for u in range(3, num_nodes):
        for ch in choices[u]:
            for t, _ in ch:
                pred[t].append(u)
    alive = set()
    stack = [u for u in (TARGET, OUTSIDE) if hi[u] > 0.0]
    alive.update(stack)
    while stack:
        t = stack.pop()
        for u in pred[t]:
            if u not in alive:
                alive.add(u)
                stack.append(u)
    free = [u for u in range(3, num_nodes) if u in alive and choices[u]]
    _solve_sccs(num_nodes, free, choices, lo, hi, delta, max_sweeps)
    lo_arr = np.array(lo)
    hi_arr = np.array(hi)
    nodes = node_of[:n]
    return ValueInterval(lo_arr[nodes], hi_arr[nodes], sub.states)


def exit_probability(
    mdp: Mdp,
    core: Iterable[int],
    horizon: Optional[int] = None,
    epsilon: Optional[float] = None,
    delta: Optional[float] = None,
) -> ValueInterval:
    """Bounds on the maximal probability of leaving ``core`` from the initial state.

    ``horizon=None`` means ever leaving (interval iteration); an integer
    means leaving within that many steps (exact DP, lower == upper).
    """
    core = set(core)
    if mdp.initial not in core:
        raise ModelError("initial state outside core")
    if horizon is None:
        if delta is None:
            delta = 1e-12 if epsilon is None else min(1e-12, epsilon * 1e-3)
        res = max_reach_interval(mdp, (), delta, EXIT, core)
    else:
        if horizon < 0:
            raise ValueError("horizon must be >= 0")
        res = bounded_max_reach(mdp, (), horizon, EXIT, core)
    lo, hi = res.at(mdp.initial)
    return ValueInterval(lo, hi)
