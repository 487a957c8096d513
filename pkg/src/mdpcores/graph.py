"""SCC and MEC decomposition, and the EC-collapsing quotient of the learners."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, Mapping, Optional, Sequence

from .model import Mdp


def scc_decompose(nodes: Iterable[Hashable], successors: Callable[[Hashable], Iterable[Hashable]]):
    """Strongly connected components in reverse topological order.

    Iterative Tarjan.  Edges to nodes outside ``nodes`` are ignored, so a
    view over part of a model can be decomposed without materializing it.
    Components that can reach others come after them in the result.
    """
    nodes = list(nodes)
    inside = set(nodes)
    index: dict = {}
    low: dict = {}
    on_stack: set = set()
    stack: list = []
    result: list[list] = []
    counter = 0
    for root in nodes:
        if root in index:
            continue
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack.add(root)
        work = [(root, iter(successors(root)))]
        while work:
            v, it = work[-1]
            descended = False
            for w in it:
                if w not in inside:
                    continue
                if w not in index:
                    index[w] = low[w] = counter
                    counter += 1
                    stack.append(w)
                    on_stack.add(w)
                    work.append((w, iter(successors(w))))
                    descended = True
                    break
                if w in on_stack and index[w] < low[v]:
                    low[v] = index[w]
            if descended:
                continue
            work.pop()
            if work:
                u = work[-1][0]
                if low[v] < low[u]:
                    low[u] = low[v]
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.append(w)
                    if w == v:
                        break
                result.append(comp)
    return result


@dataclass(frozen=True)
class Mec:
    states: frozenset
    actions: Mapping[int, tuple[int, ...]]  # retained action indices per state


@dataclass
class MecDecomposition:
    mecs: list[Mec]
    state_to_mec: dict[int, int]

    def mec_of(self, s: int) -> Optional[Mec]:
        k = self.state_to_mec.get(s)
        return None if k is None else self.mecs[k]


def _support_table(source, states) -> dict[int, Sequence[Sequence[int]]]:
    if isinstance(source, Mdp):
        if states is None:
            states = range(source.num_states)
        return {s: [a.dist.targets for a in source.actions(s)] for s in states}
    if states is None:
        return dict(source)
    return {s: source[s] for s in states}


def mec_decompose(source, states: Optional[Iterable[int]] = None) -> MecDecomposition:
    """Maximal end components of the sub-model induced by ``states``.

    ``source`` is an :class:`Mdp` or a mapping ``state -> [support of each
    action]``.  Actions with a successor outside the view (frontier edges)
    can never be part of an end component.  Uses the basic iterative
    algorithm: SCCs, prune actions leaving their SCC, repeat until stable.
    """
    table = _support_table(source, states)
    view = set(table)
    allowed: dict[int, list[int]] = {}
    for s, supports in table.items():
        keep = [i for i, sup in enumerate(supports) if all(t in view for t in sup)]
        if keep:
            allowed[s] = keep

    def succ(s):
        for i in allowed[s]:
            yield from table[s][i]

    while True:
        sccs = scc_decompose(sorted(allowed), succ)
        comp = {s: k for k, c in enumerate(sccs) for s in c}
        changed = False
        for s in list(allowed):
            cs = comp[s]
            keep = [i for i in allowed[s] if all(comp.get(t) == cs for t in table[s][i])]
            if len(keep) != len(allowed[s]):
                changed = True
                if keep:
                    allowed[s] = keep
                else:
                    del allowed[s]
        if not changed:
            break

    mecs = []
    for c in sorted(sccs, key=min):
        mecs.append(Mec(frozenset(c), {s: tuple(allowed[s]) for s in sorted(c)}))
    state_to_mec = {s: k for k, m in enumerate(mecs) for s in m.states}
    return MecDecomposition(mecs, state_to_mec)


@dataclass
class QuotientView:
    """Union of collapsed MECs layered over the original state numbering.

    Only collapsed states appear in ``rep``; every other state is its own
    representative.  ``outgoing[r]`` lists the ``(state, action index)``
    pairs leaving the component represented by ``r``.
    """

    rep: dict[int, int] = field(default_factory=dict)
    members: dict[int, list[int]] = field(default_factory=dict)
    outgoing: dict[int, list[tuple[int, int]]] = field(default_factory=dict)

    def find(self, s: int) -> int:
        return self.rep.get(s, s)

    def is_collapsed(self, r: int) -> bool:
        return r in self.outgoing


def collapse_mecs(exploration) -> tuple[QuotientView, int]:
    """Collapse the MECs of the explored sub-model of ``exploration``.

    Expects ``exploration.actions`` (explored state -> list of
    ``(targets, probs)``), ``exploration.bound`` (representative -> upper
    bound) and ``exploration.quotient``.  A component's bound becomes the
    minimum over its members; components without leaving actions get 0.
    Returns the quotient and the number of components (re)collapsed.
    """
    q: QuotientView = exploration.quotient
    bound = exploration.bound
    acts = exploration.actions
    table = {s: [a[0] for a in alist] for s, alist in acts.items()}
    dec = mec_decompose(table)
    collapsed = 0
    for mec in dec.mecs:
        members = sorted(mec.states)
        new_rep = members[0]
        if q.members.get(new_rep) == members:
            continue
        old_reps = {q.find(s) for s in members}
        value = min(bound[r] for r in old_reps)
        for r in old_reps:
            if r != new_rep:
                del bound[r]
                q.members.pop(r, None)
                q.outgoing.pop(r, None)
        for s in members:
            q.rep[s] = new_rep
        q.members[new_rep] = members
        out = [
            (s, i)
            for s in members
            for i in range(len(acts[s]))
            if i not in mec.actions[s]
        ]
        q.outgoing[new_rep] = out
        bound[new_rep] = value if out else 0.0
        collapsed += 1
    return q, collapsed
