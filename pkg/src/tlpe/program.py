"""Clause store: predicate metadata, dynamic code, clause indexing.

Clauses are kept in canonical form (dense clause-local variable ids).
Each predicate carries its tabling mode, dynamicity, answer-subsumption
spec and index declarations.  Index structures only prune: retrieval
always ends with a head-unifiability filter, so declaring an index can
never change the answers of a program, only the amount of scanning.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Set, Tuple

from .errors import DirectiveError, StoreError
from .sccs import cyclic_vertices
from .terms import (
    Atom, Int, Struct, Term, Var, canonical_key, canonicalize, functor_of,
    is_callable, is_ground, list_parts, rename, symbols, term_to_str,
    term_vars, unify,
)
from .tries import Trie, term_path

PredKey = Tuple[str, int]

BUILTINS: Set[PredKey] = {
    ("true", 0), ("fail", 0), ("!", 0),
    ("=", 2), ("\\=", 2), ("==", 2), ("\\==", 2),
    ("is", 2), ("<", 2), (">", 2), ("=<", 2), (">=", 2),
    ("=:=", 2), ("=\\=", 2),
    ("findall", 3), ("sort", 2), ("flatten", 2),
    ("ord_subset", 2), ("ord_disjoint", 2), ("ord_subtract", 3),
}

_RESERVED_HEADS = BUILTINS | {("tnot", 1), (",", 2), (":-", 2)}

STAR_CAP = 5
_VSTOP = "\x00V"  # boundary: stored component truncated at a variable
_END = "\x00E"    # boundary: stored component complete (or star-capped)


@dataclass
class Literal:
    """One body goal; neg means it sits under tnot."""
    neg: bool
    goal: Term

    def __repr__(self):
        s = term_to_str(self.goal)
        return f"tnot {s}" if self.neg else s


@dataclass
class Clause:
    head: Term
    body: Tuple[Literal, ...]
    nvars: int
    seq: int
    term: Term  # canonical whole-clause term, for printing and retract
    buckets: List[list] = field(default_factory=list, repr=False)

    @property
    def is_fact(self) -> bool:
        return not self.body


@dataclass
class SubsumptionSpec:
    """Answer-subsumption declaration for one argument position."""
    kind: str                 # lattice | po | min | max | sum | count
    position: int             # 0-based index of the aggregated argument
    join_pred: Optional[PredKey] = None
    identity: Optional[Term] = None
    leq_pred: Optional[PredKey] = None


@dataclass
class IndexSpec:
    """Joint index: up to three (kind, argno) components, kind arg|star."""
    components: Tuple[Tuple[str, int], ...]

    def __str__(self):
        def one(c):
            return f"*({c[1]})" if c[0] == "star" else str(c[1])
        return "+".join(one(c) for c in self.components)


def _component_path(arg: Term, kind: str):
    """(symbol path, truncated-at-var, capped) for one index component.

    ``arg`` components use just the principal symbol; ``star`` components
    use up to the first STAR_CAP preorder symbols, stopping early at the
    first variable.
    """
    syms = symbols(arg)
    if kind == "arg":
        s = syms[0]
        if s[0] == "v":
            return (), True, False
        return (s,), False, False
    out = []
    for s in syms[:STAR_CAP]:
        if s[0] == "v":
            return tuple(out), True, False
        out.append(s)
    return tuple(out), False, len(syms) > STAR_CAP


class ClauseIndex:
    """Nested symbol-path discrimination tree over the component args.

    Stored boundaries live under two sentinel keys: _VSTOP marks a
    component whose stored path stopped at a variable (it matches any
    goal that reaches the node), _END marks a naturally complete (or
    depth-capped) stored path.  Because preorder symbol strings of
    complete terms are prefix-free, an _END boundary can only be
    compatible with a goal at the goal's own final node.
    """

    def __init__(self, spec: IndexSpec):
        self.spec = spec
        self.root: dict = {}

    def applicable(self, goal: Struct) -> bool:
        return all(type(goal.args[argno - 1]) is not Var
                   for _, argno in self.spec.components)

    def add(self, clause: Clause) -> None:
        nodes = [self.root]
        last = len(self.spec.components) - 1
        for ci, (kind, argno) in enumerate(self.spec.components):
            path, vstop, _ = _component_path(clause.head.args[argno - 1], kind)
            key = _VSTOP if vstop else _END
            nxt: List = []
            for node in nodes:
                for s in path:
                    node = node.setdefault(s, {})
                if ci == last:
                    bucket = node.setdefault(key, [])
                    bucket.append(clause)
                    clause.buckets.append(bucket)
                else:
                    nxt.append(node.setdefault(key, {}))
            nodes = nxt

    def lookup(self, goal: Struct) -> List[Clause]:
        nodes = [self.root]
        for kind, argno in self.spec.components:
            path, vtrunc, capped = _component_path(goal.args[argno - 1], kind)
            ends: List = []
            for node in nodes:
                self._walk(node, path, vtrunc or capped, ends)
            nodes = ends
        seen = set()
        out: List[Clause] = []
        for bucket in nodes:
            for cl in bucket:
                if id(cl) not in seen:
                    seen.add(id(cl))
                    out.append(cl)
        out.sort(key=lambda c: c.seq)
        return out

    def _walk(self, node: dict, path, open_end: bool, ends: List) -> None:
        for s in path:
            v = node.get(_VSTOP)
            if v is not None:
                ends.append(v)
            node = node.get(s)
            if node is None:
                return
        if open_end:
            self._deep(node, ends)
        else:
            for key in (_VSTOP, _END):
                v = node.get(key)
                if v is not None:
                    ends.append(v)

    def _deep(self, node: dict, ends: List) -> None:
        stack = [node]
        while stack:
            n = stack.pop()
            for key, child in n.items():
                if key in (_VSTOP, _END):
                    ends.append(child)
                else:
                    stack.append(child)


@dataclass
class PredicateInfo:
    name: str
    arity: int
    dynamic: bool = False
    incremental_source: bool = False    # use_incremental_dynamic
    tabling: str = "none"               # none | variant | subsumptive
    incremental_table: bool = False
    auto_tabled: bool = False
    subsumption: Optional[SubsumptionSpec] = None
    trie_indexed: bool = False
    index_specs: Optional[List[IndexSpec]] = None  # None -> default arg 1
    indexes: List[ClauseIndex] = field(default_factory=list)
    clauses: List[Clause] = field(default_factory=list)
    fact_trie: Optional[Trie] = None
    recomputations: int = 0
    any_cut: bool = False               # some clause body contains !

    @property
    def key(self) -> PredKey:
        return (self.name, self.arity)

    @property
    def tabled(self) -> bool:
        return self.tabling != "none"

    def __str__(self):
        return f"{self.name}/{self.arity}"


def split_clause(term: Term) -> Tuple[Term, Tuple[Literal, ...]]:
    """Split a (canonical) clause term into head and body literals."""
    if type(term) is Struct and term.name == ":-" and len(term.args) == 2:
        head, body = term.args
    else:
        head, body = term, None
    if not is_callable(head):
        raise StoreError(f"clause head is not callable: {term_to_str(head)}")
    lits: List[Literal] = []
    if body is not None:
        for goal in conj_items(body):
            neg = False
            if type(goal) is Struct and goal.name == "tnot" and len(goal.args) == 1:
                neg = True
                goal = goal.args[0]
            if type(goal) is Var:
                raise StoreError("clause body contains an unbound goal variable")
            if not is_callable(goal):
                raise StoreError(f"body goal is not callable: {term_to_str(goal)}")
            lits.append(Literal(neg, goal))
    return head, tuple(lits)


def conj_items(term: Term) -> List[Term]:
    """Flatten a ','/2 tree into a list of goals, left to right."""
    out: List[Term] = []
    stack = [term]
    while stack:
        t = stack.pop()
        if type(t) is Struct and t.name == "," and len(t.args) == 2:
            stack.append(t.args[1])
            stack.append(t.args[0])
        else:
            out.append(t)
    return out


def _indicator(t: Term) -> PredKey:
    """Parse a name/arity term."""
    if (type(t) is Struct and t.name == "/" and len(t.args) == 2
            and type(t.args[0]) is Atom and type(t.args[1]) is Int
            and t.args[1].value >= 0):
        return (t.args[0].name, t.args[1].value)
    raise DirectiveError(f"expected name/arity, got {term_to_str(t)}")


_AS_BUILTINS = {"min", "max", "sum", "count"}


class Program:
    """A loaded program: predicates, their clauses and their directives."""

    def __init__(self, default_tabling: str = "variant"):
        if default_tabling not in ("variant", "subsumptive"):
            raise ValueError(default_tabling)
        self.default_tabling = default_tabling
        self.preds: Dict[PredKey, PredicateInfo] = {}
        self.auto_table_requested = False
        self._seq = 0
        self.last_route: str = ""   # how the most recent lookup was served

    # ------------------------------------------------------------------
    # predicate records

    def info(self, name: str, arity: int, create: bool = False) -> Optional[PredicateInfo]:
        key = (name, arity)
        pi = self.preds.get(key)
        if pi is None and create:
            if key in _RESERVED_HEADS:
                raise StoreError(f"cannot define built-in predicate {name}/{arity}")
            pi = PredicateInfo(name, arity)
            self.preds[key] = pi
        return pi

    def user_predicates(self) -> List[PredicateInfo]:
        return [self.preds[k] for k in sorted(self.preds)
                if not k[0].startswith("$")]

    # ------------------------------------------------------------------
    # directives

    def apply_directive(self, term: Term) -> None:
        if type(term) is Atom:
            if term.name == "auto_table":
                self.auto_table_requested = True
                return
            raise DirectiveError(f"unknown directive: {term.name}")
        if type(term) is not Struct:
            raise DirectiveError(f"bad directive: {term_to_str(term)}")
        name = term.name
        if name == "table" and len(term.args) == 1:
            for spec in conj_items(term.args[0]):
                self._table_spec(spec)
        elif name == "dynamic" and len(term.args) == 1:
            for spec in conj_items(term.args[0]):
                self._declare_dynamic(_indicator(spec), incremental=False)
        elif name == "use_incremental_dynamic" and len(term.args) == 1:
            for spec in conj_items(term.args[0]):
                self._declare_dynamic(_indicator(spec), incremental=True)
        elif name == "index" and len(term.args) == 2:
            self._index_directive(term.args[0], term.args[1])
        else:
            raise DirectiveError(f"unknown directive: {term_to_str(term)}")

    def _table_spec(self, spec: Term) -> None:
        mode = self.default_tabling
        explicit_mode = False
        incremental = False
        while (type(spec) is Struct and spec.name == "as"
               and len(spec.args) == 2):
            how = spec.args[1]
            if type(how) is not Atom:
                raise DirectiveError(f"bad tabling mode: {term_to_str(how)}")
            if how.name in ("variant", "subsumptive"):
                mode = how.name
                explicit_mode = True
            elif how.name == "incremental":
                incremental = True
            else:
                raise DirectiveError(f"unknown tabling mode: {how.name}")
            spec = spec.args[0]

        sub: Optional[SubsumptionSpec] = None
        if (type(spec) is Struct and spec.name == "/" and len(spec.args) == 2
                and type(spec.args[0]) is Atom and type(spec.args[1]) is Int):
            key = _indicator(spec)
        elif type(spec) is Struct:
            key = (spec.name, len(spec.args))
            sub = self._answer_subsumption_spec(spec)
        else:
            raise DirectiveError(f"bad table spec: {term_to_str(spec)}")

        pi = self.info(key[0], key[1], create=True)
        if pi.dynamic:
            raise DirectiveError(
                f"{pi} is dynamic and cannot also be tabled")
        if sub is not None:
            if mode == "subsumptive" and explicit_mode:
                raise DirectiveError(
                    f"{pi}: answer subsumption requires variant tabling")
            if incremental:
                raise DirectiveError(
                    f"{pi}: answer subsumption cannot be incremental")
            mode = "variant"
            pi.subsumption = sub
        if incremental and mode == "subsumptive":
            raise DirectiveError(
                f"{pi}: incremental tabling requires variant tabling")
        pi.tabling = mode
        pi.incremental_table = pi.incremental_table or incremental
        self._check_no_cut(pi)

    def _answer_subsumption_spec(self, spec: Struct) -> SubsumptionSpec:
        pos = -1
        found: Optional[Term] = None
        for i, a in enumerate(spec.args):
            if type(a) is Var:
                continue
            if found is not None:
                raise DirectiveError(
                    f"table spec {term_to_str(spec)}: more than one "
                    "aggregated argument")
            pos, found = i, a
        if found is None:
            raise DirectiveError(
                f"table spec {term_to_str(spec)}: no aggregated argument")
        if type(found) is Atom and found.name in _AS_BUILTINS:
            return SubsumptionSpec(kind=found.name, position=pos)
        if (type(found) is Struct and found.name == "-" and len(found.args) == 2):
            jkey = _indicator(found.args[0])
            if jkey[1] != 3:
                raise DirectiveError(
                    f"lattice join {jkey[0]}/{jkey[1]} must have arity 3")
            ident, _ = canonicalize(found.args[1])
            if not is_ground(ident):
                raise DirectiveError("lattice identity must be ground")
            return SubsumptionSpec(kind="lattice", position=pos,
                                   join_pred=jkey, identity=ident)
        if type(found) is Struct and found.name == "/":
            lkey = _indicator(found)
            if lkey[1] != 2:
                raise DirectiveError(
                    f"partial order {lkey[0]}/{lkey[1]} must have arity 2")
            return SubsumptionSpec(kind="po", position=pos, leq_pred=lkey)
        raise DirectiveError(
            f"bad answer subsumption spec: {term_to_str(found)}")

    def _declare_dynamic(self, key: PredKey, incremental: bool) -> None:
        pi = self.info(key[0], key[1], create=True)
        if pi.tabled:
            raise DirectiveError(f"{pi} is tabled and cannot also be dynamic")
        pi.dynamic = True
        pi.incremental_source = pi.incremental_source or incremental

    def _index_directive(self, ind: Term, spec: Term) -> None:
        key = _indicator(ind)
        pi = self.info(key[0], key[1], create=True)
        items, tail = list_parts(spec)
        if items or (type(tail) is Atom and tail.name == "[]"):
            specs = items
        else:
            specs = [spec]
        if any(type(s) is Atom and s.name == "trie" for s in specs):
            if len(specs) != 1:
                raise DirectiveError(
                    f"{pi}: a trie index cannot be combined with others")
            if pi.clauses or (pi.fact_trie and pi.fact_trie.leaf_count):
                raise StoreError(
                    f"{pi}: trie index must be declared before any clauses")
            pi.trie_indexed = True
            pi.fact_trie = Trie()
            pi.index_specs = []
            pi.indexes = []
            return
        if pi.trie_indexed:
            raise DirectiveError(
                f"{pi}: predicate already has a trie index")
        parsed = [self._index_spec(pi, s) for s in specs]
        pi.index_specs = parsed
        pi.indexes = [ClauseIndex(s) for s in parsed]
        for cl in pi.clauses:
            cl.buckets.clear()
            for ix in pi.indexes:
                ix.add(cl)

    def _index_spec(self, pi: PredicateInfo, spec: Term) -> IndexSpec:
        comps: List[Tuple[str, int]] = []
        for part in _plus_items(spec):
            if type(part) is Int:
                comps.append(("arg", part.value))
            elif (type(part) is Struct and part.name == "*"
                    and len(part.args) == 1 and type(part.args[0]) is Int):
                comps.append(("star", part.args[0].value))
            else:
                raise DirectiveError(
                    f"bad index component: {term_to_str(part)}")
        if not comps or len(comps) > 3:
            raise DirectiveError(
                f"{pi}: an index takes one to three components")
        for _, argno in comps:
            if not 1 <= argno <= pi.arity:
                raise DirectiveError(
                    f"{pi}: index argument {argno} out of range")
        return IndexSpec(tuple(comps))

    def _check_no_cut(self, pi: PredicateInfo) -> None:
        if not pi.tabled:
            return
        for cl in pi.clauses:
            for lit in cl.body:
                if type(lit.goal) is Atom and lit.goal.name == "!":
                    raise StoreError(f"{pi}: cut inside a tabled predicate")

    # ------------------------------------------------------------------
    # clause addition / removal

    def add_clause(self, term: Term, at_load: bool = True) -> Optional[Clause]:
        """Store one clause.  Returns the Clause, or None for a duplicate
        fact in a trie-indexed predicate."""
        cterm, nvars = canonicalize(term)
        head, body = split_clause(cterm)
        name, arity = functor_of(head)
        if (name, arity) in _RESERVED_HEADS:
            raise StoreError(f"cannot define built-in predicate {name}/{arity}")
        pi = self.info(name, arity, create=True)

        if not at_load:
            if pi.tabled:
                raise StoreError(f"{pi} is tabled; assert is not allowed")
            if not pi.dynamic:
                if pi.clauses or (pi.fact_trie and pi.fact_trie.leaf_count):
                    raise StoreError(
                        f"{pi} is static; declare it dynamic to assert")
                pi.dynamic = True

        if pi.tabled and body:
            for lit in body:
                if type(lit.goal) is Atom and lit.goal.name == "!":
                    raise StoreError(f"{pi}: cut inside a tabled predicate")

        if pi.trie_indexed:
            if body:
                raise StoreError(
                    f"{pi}: trie-indexed predicates hold facts only")
            assert pi.fact_trie is not None
            node, created = pi.fact_trie.check_insert(term_path(head))
            if not created and node.leaf is not None:
                return None
            cl = Clause(head, (), nvars, self._next_seq(), cterm)
            pi.fact_trie.set_leaf(node, cl)
            return cl

        cl = Clause(head, body, nvars, self._next_seq(), cterm)
        pi.clauses.append(cl)
        if any(type(lit.goal) is Atom and lit.goal.name == "!" for lit in body):
            pi.any_cut = True
        for ix in self._live_indexes(pi):
            ix.add(cl)
        return cl

    def retract_clause(self, term: Term) -> bool:
        """Remove the first clause whose canonical form is a variant of
        ``term``.  Returns False when nothing matches."""
        cterm, _ = canonicalize(term)
        head, _body = split_clause(cterm)
        name, arity = functor_of(head)
        pi = self.preds.get((name, arity))
        if pi is None:
            return False
        if not pi.dynamic:
            raise StoreError(f"{pi} is static; declare it dynamic to retract")
        if pi.trie_indexed:
            assert pi.fact_trie is not None
            node = pi.fact_trie.lookup(term_path(cterm))
            if node is None or node.leaf is None:
                return False
            pi.fact_trie.remove_leaf(node)
            return True
        key = canonical_key(cterm)
        for i, cl in enumerate(pi.clauses):
            if canonical_key(cl.term) == key:
                del pi.clauses[i]
                for bucket in cl.buckets:
                    bucket.remove(cl)
                return True
        return False

    def _next_seq(self) -> int:
        self._seq += 1
        return self._seq

    def _live_indexes(self, pi: PredicateInfo) -> List[ClauseIndex]:
        if pi.index_specs is None:
            if pi.arity >= 1 and not pi.indexes:
                pi.indexes = [ClauseIndex(IndexSpec((("arg", 1),)))]
                for cl in pi.clauses:
                    pi.indexes[0].add(cl)
            return pi.indexes
        return pi.indexes

    # ------------------------------------------------------------------
    # retrieval

    def lookup_clauses(self, goal: Term) -> List[Clause]:
        """Clauses whose head can unify with ``goal``, in program order."""
        name, arity = functor_of(goal)
        pi = self.preds.get((name, arity))
        if pi is None:
            self.last_route = "undefined"
            return []
        if pi.trie_indexed:
            self.last_route = "trie"
            assert pi.fact_trie is not None
            hits = [cl for cl in pi.fact_trie.matching_leaves(goal, mode="unify")
                    if self._head_unifiable(cl, goal)]
            hits.sort(key=lambda c: c.seq)
            return hits
        candidates: Optional[List[Clause]] = None
        self.last_route = "scan"
        if type(goal) is Struct:
            for ix in self._live_indexes(pi):
                if ix.applicable(goal):
                    candidates = ix.lookup(goal)
                    self.last_route = str(ix.spec)
                    break
        if candidates is None:
            candidates = pi.clauses
        return [cl for cl in candidates if self._head_unifiable(cl, goal)]

    @staticmethod
    def _head_unifiable(cl: Clause, goal: Term) -> bool:
        if not term_vars(cl.head) and not term_vars(goal):
            return canonical_key(cl.head) == canonical_key(goal)
        off = 0
        gv = term_vars(goal)
        if gv:
            off = max(gv) + 1
        return unify(rename(cl.head, off), goal) is not None

    # ------------------------------------------------------------------
    # program-wide analysis

    def call_graph(self):
        """Static predicate call graph: key -> set of called keys.

        Covers plain calls, calls under tnot, and the goal argument of
        findall/3.  Built-ins other than findall contribute no edges.
        """
        graph: Dict[PredKey, Set[PredKey]] = {
            k: set() for k in self.preds if not k[0].startswith("$")}
        for key, pi in self.preds.items():
            if key[0].startswith("$"):
                continue
            edges = graph[key]
            for cl in pi.clauses:
                for lit in cl.body:
                    self._goal_edges(lit.goal, edges)
        return graph

    def _goal_edges(self, goal: Term, edges: Set[PredKey]) -> None:
        name, arity = functor_of(goal)
        if (name, arity) == ("findall", 3):
            sub = goal.args[1]
            if type(sub) is Struct and sub.name == "tnot" and len(sub.args) == 1:
                sub = sub.args[0]
            if is_callable(sub):
                self._goal_edges(sub, edges)
            return
        if (name, arity) in BUILTINS:
            return
        edges.add((name, arity))

    def negative_edges(self):
        """Edges (caller, callee) that pass through tnot."""
        out: Set[Tuple[PredKey, PredKey]] = set()
        for key, pi in self.preds.items():
            for cl in pi.clauses:
                for lit in cl.body:
                    if lit.neg:
                        out.add((key, functor_of(lit.goal)))
        return out

    def run_auto_table(self) -> List[PredKey]:
        """Greedy feedback-vertex-set choice over the call graph.

        Predicates already tabled count first; then repeatedly table the
        predicate with the largest in-degree * out-degree product inside
        the remaining cyclic subgraph (ties broken by name then arity).
        Returns the newly tabled predicate keys in choice order.
        """
        graph = self.call_graph()
        verts = set(graph)
        removed = {k for k in verts if self.preds[k].tabled}
        chosen: List[PredKey] = []
        while True:
            live = verts - removed
            succs = lambda v: (s for s in graph[v] if s in live)
            cyc = cyclic_vertices(live, succs)
            if not cyc:
                break
            indeg = {v: 0 for v in cyc}
            outdeg = {v: 0 for v in cyc}
            for v in cyc:
                for s in graph[v]:
                    if s in cyc:
                        outdeg[v] += 1
                        indeg[s] += 1
            best = min(cyc, key=lambda v: (-(indeg[v] * outdeg[v]), v))
            pi = self.preds[best]
            pi.tabling = self.default_tabling
            pi.auto_tabled = True
            self._check_no_cut(pi)
            chosen.append(best)
            removed.add(best)
        return chosen

    def finalize(self) -> List[PredKey]:
        """End-of-load processing: auto tabling and consistency checks."""
        auto: List[PredKey] = []
        if self.auto_table_requested:
            auto = self.run_auto_table()
        self._check_subsumption_stratified()
        return auto

    def _check_subsumption_stratified(self) -> None:
        """An answer-subsumption predicate may not depend on itself
        through tnot: its aggregate is only safe once fully computed."""
        as_preds = [k for k, pi in self.preds.items() if pi.subsumption]
        if not as_preds:
            return
        graph = self.call_graph()
        neg = self.negative_edges()
        from .sccs import tarjan_sccs
        comps = tarjan_sccs(list(graph), lambda v: graph.get(v, ()))
        comp_of = {}
        for i, comp in enumerate(comps):
            for v in comp:
                comp_of[v] = i
        bad_comps = {comp_of[a] for a, b in neg
                     if a in comp_of and b in comp_of
                     and comp_of[a] == comp_of[b]}
        for k in as_preds:
            if comp_of.get(k) in bad_comps:
                pi = self.preds[k]
                raise StoreError(
                    f"{pi}: answer subsumption in a cycle through tnot")

    # ------------------------------------------------------------------
    # statistics

    def clause_count(self, key: PredKey) -> int:
        pi = self.preds.get(key)
        if pi is None:
            return 0
        if pi.trie_indexed:
            return pi.fact_trie.leaf_count if pi.fact_trie else 0
        return len(pi.clauses)


def _plus_items(term: Term) -> List[Term]:
    """Flatten a left-associated '+' chain."""
    out: List[Term] = []
    while (type(term) is Struct and term.name == "+"
            and len(term.args) == 2):
        out.append(term.args[1])
        term = term.args[0]
    out.append(term)
    out.reverse()
    return out
