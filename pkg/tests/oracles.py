"""Independent reference implementations the test suite checks against.

Everything here is deliberately naive: breadth-first closures, a
textbook alternating-fixpoint computation, heap Dijkstra.  None of it
shares code with the engine.
"""

import heapq
import random
from typing import Dict, FrozenSet, Iterable, List, Sequence, Set, Tuple

Atom = str
Rule = Tuple[Atom, Tuple[Atom, ...], Tuple[Atom, ...]]   # head, pos, neg


# ----------------------------------------------------------------------
# graphs

def bfs_reachable(edges: Iterable[Tuple[int, int]], source: int) -> Set[int]:
    """Vertices reachable from source by a path of >= 1 edge."""
    succ: Dict[int, List[int]] = {}
    for a, b in edges:
        succ.setdefault(a, []).append(b)
    seen: Set[int] = set()
    frontier = list(succ.get(source, []))
    while frontier:
        v = frontier.pop()
        if v in seen:
            continue
        seen.add(v)
        frontier.extend(succ.get(v, []))
    return seen


def dijkstra(edges: Iterable[Tuple[int, int, int]],
             source: int) -> Dict[int, int]:
    """Least path cost from source to every reachable vertex (>= 1 edge)."""
    succ: Dict[int, List[Tuple[int, int]]] = {}
    for a, b, w in edges:
        succ.setdefault(a, []).append((b, w))
    dist: Dict[int, int] = {}
    heap = [(w, b) for b, w in succ.get(source, [])]
    heapq.heapify(heap)
    while heap:
        d, v = heapq.heappop(heap)
        if v in dist:
            continue
        dist[v] = d
        for b, w in succ.get(v, []):
            if b not in dist:
                heapq.heappush(heap, (d + w, b))
    return dist


def random_digraph(rng: random.Random, vertices: int,
                   edges: int) -> List[Tuple[int, int]]:
    """A connected-ish cyclic digraph: a Hamiltonian cycle plus chords."""
    out = [(i, i % vertices + 1) for i in range(1, vertices + 1)]
    have = set(out)
    while len(out) < edges:
        e = (rng.randint(1, vertices), rng.randint(1, vertices))
        if e[0] != e[1] and e not in have:
            have.add(e)
            out.append(e)
    return out


# ----------------------------------------------------------------------
# elementary-net reachability

def net_successors(conf: FrozenSet[str],
                   trans: Sequence[Tuple[FrozenSet[str], FrozenSet[str]]]
                   ) -> List[FrozenSet[str]]:
    out = []
    for tin, tout in trans:
        rest = conf - tin
        if tin <= conf and not (tout & rest):
            out.append(rest | tout)
    return out


def net_reachable(initial: Iterable[str],
                  trans: Sequence[Tuple[FrozenSet[str], FrozenSet[str]]]
                  ) -> Set[FrozenSet[str]]:
    """Configurations reachable by firing >= 1 transition."""
    seen: Set[FrozenSet[str]] = set()
    frontier = net_successors(frozenset(initial), trans)
    while frontier:
        c = frontier.pop()
        if c in seen:
            continue
        seen.add(c)
        frontier.extend(net_successors(c, trans))
    return seen


# ----------------------------------------------------------------------
# well-founded models of ground normal programs

def _least_model(rules: Sequence[Rule], assume_false: Set[Atom]) -> Set[Atom]:
    """Least model of the reduct w.r.t. the atoms assumed false."""
    true: Set[Atom] = set()
    changed = True
    while changed:
        changed = False
        for head, pos, neg in rules:
            if head in true:
                continue
            if all(p in true for p in pos) and \
               all(n in assume_false for n in neg):
                true.add(head)
                changed = True
    return true


def wfs_model(rules: Sequence[Rule],
              atoms: Iterable[Atom] = ()) -> Dict[Atom, str]:
    """Three-valued well-founded model by alternating fixpoint.

    Returns {atom: "true"|"undefined"|"false"} over every atom that
    appears in the rules plus any extras passed in."""
    universe: Set[Atom] = set(atoms)
    for head, pos, neg in rules:
        universe.add(head)
        universe.update(pos)
        universe.update(neg)
    true: Set[Atom] = set()
    possible: Set[Atom] = set(universe)
    while True:
        new_true = _least_model(rules, universe - possible)
        new_possible = _least_model(rules, universe - new_true)
        if new_true == true and new_possible == possible:
            break
        true, possible = new_true, new_possible
    out = {}
    for a in universe:
        if a in true:
            out[a] = "true"
        elif a in possible:
            out[a] = "undefined"
        else:
            out[a] = "false"
    return out


def random_ground_program(rng: random.Random, n_atoms: int,
                          n_rules: int) -> List[Rule]:
    """Random ground normal program over p(i)/q(i)/r(i) style atoms."""
    preds = ("p", "q", "r")
    per = max(1, n_atoms // len(preds))
    atoms = [f"{p}({i})" for p in preds for i in range(per)][:n_atoms]
    rules: List[Rule] = []
    for _ in range(n_rules):
        head = rng.choice(atoms)
        pos = tuple(rng.choice(atoms)
                    for _ in range(rng.randint(0, 2)))
        neg = tuple(rng.choice(atoms)
                    for _ in range(rng.randint(0, 2)))
        rules.append((head, pos, neg))
    return rules


def program_text(rules: Sequence[Rule]) -> str:
    """Render ground rules as engine source, tabling every predicate."""
    preds = set()
    for head, pos, neg in rules:
        for a in (head,) + pos + neg:
            preds.add(a.split("(", 1)[0])
    lines = [f":- table {p}/1." for p in sorted(preds)]
    for head, pos, neg in rules:
        body = list(pos) + [f"tnot({a})" for a in neg]
        lines.append(f"{head} :- {', '.join(body)}." if body
                     else f"{head}.")
    return "\n".join(lines) + "\n"
