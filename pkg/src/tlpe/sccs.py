"""Iterative Tarjan strongly-connected components.

Used for the subgoal dependency graph during evaluation and for the
predicate call graph when auto-tabling.  Iterative so that chain-shaped
graphs thousands of vertices long do not hit the recursion limit.
"""

from __future__ import annotations

from typing import Callable, Dict, Hashable, Iterable, List


def tarjan_sccs(vertices: Iterable[Hashable],
                successors: Callable[[Hashable], Iterable[Hashable]]
                ) -> List[List[Hashable]]:
    """SCCs in reverse topological order (callees before callers).

    Only vertices in `vertices` are considered; successors outside the set
    are ignored.  Deterministic for deterministic input order.
    """
    verts = list(vertices)
    vset = set(verts)
    index: Dict[Hashable, int] = {}
    low: Dict[Hashable, int] = {}
    on_stack: set = set()
    stack: List[Hashable] = []
    out: List[List[Hashable]] = []
    counter = 0

    for root in verts:
        if root in index:
            continue
        work = [(root, iter([s for s in successors(root) if s in vset]))]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack.add(root)
        while work:
            v, it = work[-1]
            advanced = False
            for w in it:
                if w not in index:
                    index[w] = low[w] = counter
                    counter += 1
                    stack.append(w)
                    on_stack.add(w)
                    work.append((w, iter([s for s in successors(w) if s in vset])))
                    advanced = True
                    break
                elif w in on_stack:
                    if index[w] < low[v]:
                        low[v] = index[w]
            if advanced:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                if low[v] < low[parent]:
                    low[parent] = low[v]
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.append(w)
                    if w is v or w == v:
                        break
                out.append(comp)
    return out


def cyclic_vertices(vertices: Iterable[Hashable],
                    successors: Callable[[Hashable], Iterable[Hashable]]
                    ) -> set:
    """Vertices lying on some cycle (multi-vertex SCC or a self-loop)."""
    cyc = set()
    vset = set(vertices)
    for comp in tarjan_sccs(vset, successors):
        if len(comp) > 1:
            cyc.update(comp)
        elif any(s == comp[0] for s in successors(comp[0])):
            cyc.add(comp[0])
    return cyc
