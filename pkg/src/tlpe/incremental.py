"""Incremental table maintenance.

Dynamic predicates declared with use_incremental_dynamic feed an
invalidation graph: every table records which dynamic predicates it
consulted and which tables it called.  A change to a fact then walks
callers backwards to find the affected tables, which are either
recomputed immediately (eager update), recomputed once for a whole
batch of buffered changes, or merely marked invalid so the next call
recomputes them lazily.
"""

from typing import Iterable, List, Set, Tuple

from .engine import Engine
from .errors import EvalError
from .parser import parse_goal
from .sccs import tarjan_sccs
from .tables import SubgoalTable
from .terms import Struct, Term, functor_of, term_to_str


def _as_term(fact) -> Term:
    return parse_goal(fact).term if isinstance(fact, str) else fact


def _source_info(engine: Engine, fact: Term):
    name, arity = functor_of(fact)
    pi = engine.program.info(name, arity)
    if pi is None or not pi.incremental_source:
        raise EvalError(
            "not_incremental",
            f"{name}/{arity} is not an incremental dynamic predicate")
    return pi


def incr_assert(engine: Engine, fact) -> List[SubgoalTable]:
    """Add a fact and immediately recompute what it touches (any
    buffered changes are flushed first).  Returns the recomputed
    tables in dependency order."""
    return _update(engine, engine._drain_incr_buffer()
                   + [("assert", _as_term(fact))])


def incr_retract(engine: Engine, fact) -> List[SubgoalTable]:
    return _update(engine, engine._drain_incr_buffer()
                   + [("retract", _as_term(fact))])


def buffer_change(engine: Engine, op: str, fact) -> None:
    """Queue a change without triggering recomputation."""
    if op not in ("assert", "retract"):
        raise ValueError(f"unknown change op: {op}")
    fact = _as_term(fact)
    _source_info(engine, fact)
    engine.incr_buffer.append((op, fact))


def incr_table_update(engine: Engine) -> List[SubgoalTable]:
    """Apply all buffered changes with one recomputation pass over the
    union of affected tables."""
    return _update(engine, engine._drain_incr_buffer())


def _as_change(change) -> Tuple[str, Term]:
    term = _as_term(change)
    if (type(term) is Struct and len(term.args) == 1
            and term.name in ("assert", "retract")):
        return term.name, term.args[0]
    return "assert", term


def incr_invalidate(engine: Engine, change) -> List[SubgoalTable]:
    """Apply a change but only mark the affected tables invalid; each
    is recomputed at its next call, not now.

    ``change`` is ``assert(Fact)`` or ``retract(Fact)``; a bare fact
    means assert."""
    if engine.query_active:
        raise EvalError("query_active",
                        "incremental update during query evaluation")
    op, fact = _as_change(change)
    pi = _source_info(engine, fact)
    if op == "assert":
        engine.program.add_clause(fact, at_load=False)
    else:
        engine.program.retract_clause(fact)
    affected = _affected(engine, [pi.key])
    _validate(affected)
    marked = []
    for table in affected:
        if table.status == SubgoalTable.COMPLETE:
            table.status = SubgoalTable.INVALID
            marked.append(table)
    return marked


def _update(engine: Engine,
            changes: List[Tuple[str, Term]]) -> List[SubgoalTable]:
    if engine.query_active:
        raise EvalError("query_active",
                        "incremental update during query evaluation")
    if not changes:
        return []
    keys = []
    for op, fact in changes:
        pi = _source_info(engine, fact)
        keys.append(pi.key)
    for op, fact in changes:
        if op == "assert":
            engine.program.add_clause(fact, at_load=False)
        else:
            engine.program.retract_clause(fact)
    affected = _affected(engine, keys)
    if not affected:
        return []
    _validate(affected)
    order = _topo_order(affected)
    for table in order:
        engine.reset_for_recompute(table)
    for table in order:
        engine.recompute_table(table)
    return order


def _affected(engine: Engine, keys: Iterable[Tuple[str, int]]
              ) -> Set[SubgoalTable]:
    """Reverse reachability from the direct readers of changed facts."""
    frontier: List[SubgoalTable] = []
    seen: Set[int] = set()
    out: Set[SubgoalTable] = set()
    for key in keys:
        for t in engine.space.dyn_readers.get(key, ()):
            if not t.abolished and id(t) not in seen:
                seen.add(id(t))
                frontier.append(t)
    while frontier:
        t = frontier.pop()
        out.add(t)
        for caller in t.dep_in:
            if not caller.abolished and id(caller) not in seen:
                seen.add(id(caller))
                frontier.append(caller)
    return out


def _validate(affected: Set[SubgoalTable]) -> None:
    for t in affected:
        if t.pred.tabling == "subsumptive":
            raise EvalError(
                "incremental_unsupported",
                f"affected table {term_to_str(t.subgoal)} is subsumptive")
        if not t.pred.incremental_table:
            raise EvalError(
                "incremental_unsupported",
                f"affected table {term_to_str(t.subgoal)} is not "
                "declared incremental")
    in_set = set(id(t) for t in affected)
    sccs = tarjan_sccs(list(affected),
                       lambda t: [d for d in t.dep_out if id(d) in in_set])
    for scc in sccs:
        members = set(id(t) for t in scc)
        for t in scc:
            for d in t.neg_dep_out:
                if id(d) in members:
                    raise EvalError(
                        "incremental_nonstratified",
                        f"update would recompute through a negative loop "
                        f"at {term_to_str(t.subgoal)}")


def _topo_order(affected: Set[SubgoalTable]) -> List[SubgoalTable]:
    """Callees before callers, so recomputation reads fresh tables."""
    in_set = set(id(t) for t in affected)
    sccs = tarjan_sccs(sorted(affected, key=lambda t: t.dfn),
                       lambda t: [d for d in t.dep_out if id(d) in in_set])
    order: List[SubgoalTable] = []
    for scc in sccs:
        order.extend(sorted(scc, key=lambda t: t.dfn))
    return order
