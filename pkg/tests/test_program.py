"""Clause store: directives, indexing, assert/retract, auto tabling."""

import random

import pytest

from tlpe.errors import DirectiveError, StoreError
from tlpe.parser import parse_program, parse_term_text
from tlpe.program import Program
from tlpe.terms import Atom, Int, Struct, Var, term_to_str


def load(src, **kw):
    prog = Program(**kw)
    for item in parse_program(src):
        if item.is_directive:
            prog.apply_directive(item.term)
        else:
            prog.add_clause(item.term)
    prog.finalize()
    return prog


def goal(src):
    return parse_term_text(src)


# ---------------------------------------------------------------------------
# directives


class TestTableDirectives:
    def test_plain_table_uses_default_mode(self):
        prog = load(":- table p/2.")
        pi = prog.info("p", 2)
        assert pi.tabling == "variant"
        assert not pi.incremental_table

    def test_default_mode_is_configurable(self):
        prog = load(":- table p/2.", default_tabling="subsumptive")
        assert prog.info("p", 2).tabling == "subsumptive"

    def test_as_subsumptive(self):
        prog = load(":- table path/2 as subsumptive.")
        assert prog.info("path", 2).tabling == "subsumptive"

    def test_as_incremental(self):
        prog = load(":- table p/1 as incremental.")
        pi = prog.info("p", 1)
        assert pi.tabling == "variant" and pi.incremental_table

    def test_conjunction_of_specs(self):
        prog = load(":- table (p/1, q/2 as subsumptive).")
        assert prog.info("p", 1).tabling == "variant"
        assert prog.info("q", 2).tabling == "subsumptive"

    def test_min_spec(self):
        prog = load(":- table sp(_, min).")
        sub = prog.info("sp", 2).subsumption
        assert sub.kind == "min" and sub.position == 1

    def test_lattice_spec(self):
        prog = load(":- table pred(_, _, qdb/3 - [0, 0]).")
        sub = prog.info("pred", 3).subsumption
        assert sub.kind == "lattice"
        assert sub.position == 2
        assert sub.join_pred == ("qdb", 3)
        assert term_to_str(sub.identity) == "[0,0]"

    def test_partial_order_spec(self):
        prog = load(":- table desc(_, extends/2).")
        sub = prog.info("desc", 2).subsumption
        assert sub.kind == "po" and sub.leq_pred == ("extends", 2)

    def test_subsumption_forces_variant(self):
        prog = load(":- table sp(_, max).", default_tabling="subsumptive")
        assert prog.info("sp", 2).tabling == "variant"

    def test_subsumption_rejects_subsumptive_mode(self):
        with pytest.raises(DirectiveError):
            load(":- table sp(_, min) as subsumptive.")

    def test_no_aggregated_argument(self):
        with pytest.raises(DirectiveError):
            load(":- table sp(_, _).")

    def test_two_aggregated_arguments(self):
        with pytest.raises(DirectiveError):
            load(":- table sp(min, max).")

    def test_lattice_join_arity_checked(self):
        with pytest.raises(DirectiveError):
            load(":- table sp(_, j/2 - 0).")

    def test_tabled_and_dynamic_conflict(self):
        with pytest.raises(DirectiveError):
            load(":- table p/1.\n:- dynamic p/1.")
        with pytest.raises(DirectiveError):
            load(":- dynamic p/1.\n:- table p/1.")

    def test_unknown_directive(self):
        with pytest.raises(DirectiveError):
            load(":- frobnicate(p/1).")


class TestDynamicDirectives:
    def test_dynamic(self):
        prog = load(":- dynamic e/2.")
        pi = prog.info("e", 2)
        assert pi.dynamic and not pi.incremental_source

    def test_use_incremental_dynamic(self):
        prog = load(":- use_incremental_dynamic(e/2).")
        pi = prog.info("e", 2)
        assert pi.dynamic and pi.incremental_source

    def test_dynamic_conjunction(self):
        prog = load(":- dynamic (e/2, f/1).")
        assert prog.info("e", 2).dynamic
        assert prog.info("f", 1).dynamic


# ---------------------------------------------------------------------------
# clause addition and retraction


class TestAssertRetract:
    def test_load_then_assert_static_fails(self):
        prog = load("p(a).")
        with pytest.raises(StoreError):
            prog.add_clause(goal("p(b)"), at_load=False)

    def test_assert_to_fresh_predicate_makes_it_dynamic(self):
        prog = load("")
        prog.add_clause(goal("p(a)"), at_load=False)
        assert prog.info("p", 1).dynamic

    def test_assert_to_tabled_fails(self):
        prog = load(":- table p/1.")
        with pytest.raises(StoreError):
            prog.add_clause(goal("p(a)"), at_load=False)

    def test_retract_static_fails(self):
        prog = load("p(a).")
        with pytest.raises(StoreError):
            prog.retract_clause(goal("p(a)"))

    def test_retract_variant_matching(self):
        prog = load(":- dynamic q/2.\nq(a, b).\nq(X, X).\nq(Y, Z).")
        # q(A, A) is a variant of q(X, X) but not of q(a, b) or q(Y, Z)
        assert prog.retract_clause(goal("q(A, A)"))
        left = [term_to_str(c.term) for c in prog.info("q", 2).clauses]
        assert left == ["q(a,b)", "q(_G0,_G1)"]
        assert not prog.retract_clause(goal("q(A, A)"))

    def test_retract_rule(self):
        prog = load(":- dynamic p/1.\np(X) :- q(X), r(X).\np(a).")
        assert prog.retract_clause(goal("p(V) :- q(V), r(V)"))
        assert [c.is_fact for c in prog.info("p", 1).clauses] == [True]

    def test_cut_in_tabled_clause_rejected(self):
        with pytest.raises(StoreError):
            load(":- table p/1.\np(X) :- q(X), !.")
        with pytest.raises(StoreError):
            load("p(X) :- q(X), !.\n:- table p/1.")

    def test_cannot_define_builtins(self):
        with pytest.raises(StoreError):
            load("sort(_, _) :- fail.")

    def test_body_variable_goal_rejected(self):
        with pytest.raises(StoreError):
            load("p(X) :- X.")


class TestTrieIndexedFacts:
    SRC = ":- dynamic e/2.\n:- index(e/2, trie).\n"

    def test_duplicates_ignored(self):
        prog = load(self.SRC + "e(a, b).\ne(a, b).\ne(a, c).")
        assert prog.clause_count(("e", 2)) == 2

    def test_variant_duplicates_ignored(self):
        prog = load(self.SRC + "e(X, Y).\ne(P, Q).")
        assert prog.clause_count(("e", 2)) == 1

    def test_rules_rejected(self):
        with pytest.raises(StoreError):
            load(self.SRC + "e(X, Y) :- f(X, Y).")

    def test_trie_after_clauses_rejected(self):
        with pytest.raises(StoreError):
            load(":- dynamic e/2.\ne(a, b).\n:- index(e/2, trie).")

    def test_trie_not_combinable(self):
        with pytest.raises(DirectiveError):
            load(":- index(e/2, [trie, 1]).")

    def test_retract_prunes_nodes(self):
        prog = load(self.SRC + "e(a, b).\ne(a, c).")
        trie = prog.info("e", 2).fact_trie
        n = trie.node_count
        assert prog.retract_clause(goal("e(a, c)"))
        assert trie.node_count == n - 1   # shared e/2,a prefix kept
        assert prog.retract_clause(goal("e(a, b)"))
        assert trie.node_count == 0

    def test_lookup_route(self):
        prog = load(self.SRC + "e(a, b).")
        hits = prog.lookup_clauses(goal("e(a, X)"))
        assert prog.last_route == "trie"
        assert [term_to_str(c.term) for c in hits] == ["e(a,b)"]


# ---------------------------------------------------------------------------
# index selection and the pruning invariant


class TestIndexSelection:
    SRC = (":- index(p/5, [*(1) + 2, *(1)]).\n"
           "p(f(a), b, c, d, e).\n"
           "p(f(b), b, x, y, z).\n"
           "p(g(a), c, x, y, z).\n")

    def test_joint_index_preferred(self):
        prog = load(self.SRC)
        hits = prog.lookup_clauses(goal("p(f(a), b, _, _, _)"))
        assert prog.last_route == "*(1)+2"
        assert len(hits) == 1

    def test_fallback_when_component_unbound(self):
        prog = load(self.SRC)
        hits = prog.lookup_clauses(goal("p(f(a), Y, _, _, _)"))
        assert prog.last_route == "*(1)"
        assert len(hits) == 1

    def test_scan_when_no_index_applies(self):
        prog = load(self.SRC)
        hits = prog.lookup_clauses(goal("p(X, b, _, _, _)"))
        assert prog.last_route == "scan"
        assert len(hits) == 2

    def test_default_first_argument_index(self):
        prog = load("p(a, 1).\np(b, 2).\np(a, 3).")
        hits = prog.lookup_clauses(goal("p(a, N)"))
        assert prog.last_route == "1"
        assert [term_to_str(c.term) for c in hits] == ["p(a,1)", "p(a,3)"]

    def test_index_component_out_of_range(self):
        with pytest.raises(DirectiveError):
            load(":- index(p/2, 3).")

    def test_joint_limited_to_three(self):
        with pytest.raises(DirectiveError):
            load(":- index(p/4, 1 + 2 + 3 + 4).")

    def test_redeclaration_rebuilds_over_existing_clauses(self):
        prog = load("p(a, 1).\np(b, 2).\n:- index(p/2, 2).")
        hits = prog.lookup_clauses(goal("p(X, 2)"))
        assert prog.last_route == "2"
        assert [term_to_str(c.term) for c in hits] == ["p(b,2)"]

    def test_undefined_predicate(self):
        prog = load("")
        assert prog.lookup_clauses(goal("nothing(here)")) == []
        assert prog.last_route == "undefined"


_CONSTS = ["a", "b", "c", "1", "2"]
_SHAPES = ["f({0})", "f({0}, {1})", "g({0})", "h({0}, {1})"]


def _rand_arg(rng, depth=0):
    r = rng.random()
    if depth >= 2 or r < 0.45:
        return rng.choice(_CONSTS)
    if r < 0.6:
        return "V%d" % rng.randrange(3)
    shape = rng.choice(_SHAPES)
    n = shape.count("{")
    return shape.format(*[_rand_arg(rng, depth + 1) for _ in range(n)])


def _rand_fact(rng, functor="p", arity=3):
    args = ", ".join(_rand_arg(rng) for _ in range(arity))
    return f"{functor}({args})"


_INDEX_DECLS = [
    "",                                  # implicit first-argument index
    ":- index(p/3, 2).\n",
    ":- index(p/3, *(1)).\n",
    ":- index(p/3, [*(2) + 3, *(2)]).\n",
    ":- index(p/3, 1 + 2 + 3).\n",
    ":- index(p/3, [*(1) + *(2), 3]).\n",
]


class TestIndexPruningInvariant:
    """Whatever the declared indexes, retrieval must return exactly the
    head-unifiable clauses in program order (an index only prunes)."""

    @pytest.mark.parametrize("seed", range(30))
    def test_matches_full_scan(self, seed):
        rng = random.Random(seed)
        facts = [_rand_fact(rng) for _ in range(14)]
        decl = _INDEX_DECLS[seed % len(_INDEX_DECLS)]
        indexed = load(decl + "".join(f + ".\n" for f in facts))
        plain = Program()
        for f in facts:
            plain.add_clause(goal(f))
        for _ in range(20):
            g = goal(_rand_fact(rng))
            got = [term_to_str(c.term) for c in indexed.lookup_clauses(g)]
            want = [term_to_str(c.term) for c in plain.lookup_clauses(g)]
            assert got == want, (decl, term_to_str(g))

    @pytest.mark.parametrize("seed", range(10))
    def test_trie_matches_full_scan(self, seed):
        rng = random.Random(1000 + seed)
        seen, facts = set(), []
        while len(facts) < 12:
            f = _rand_fact(rng)
            k = term_to_str(goal(f))
            if k not in seen:
                seen.add(k)
                facts.append(f)
        body = "".join(f + ".\n" for f in facts)
        indexed = load(":- dynamic p/3.\n:- index(p/3, trie).\n" + body)
        plain = load(body)
        for _ in range(20):
            g = goal(_rand_fact(rng))
            got = sorted(term_to_str(c.term) for c in indexed.lookup_clauses(g))
            want = sorted(term_to_str(c.term) for c in plain.lookup_clauses(g))
            assert got == want, term_to_str(g)


# ---------------------------------------------------------------------------
# auto tabling


class TestAutoTable:
    def test_self_loop(self):
        prog = load(":- auto_table.\np(X) :- e(X, Y), p(Y).\ne(1, 2).")
        assert prog.info("p", 1).tabling == "variant"
        assert prog.info("p", 1).auto_tabled
        assert prog.info("e", 2).tabling == "none"

    def test_two_cycles_tie_broken_by_name(self):
        prog = load("a :- b.\nb :- a.\nc :- d.\nd :- c.\n:- auto_table.")
        tabled = sorted(str(pi) for pi in prog.user_predicates() if pi.tabled)
        assert tabled == ["a/0", "c/0"]

    def test_hub_with_highest_degree_product_wins(self):
        src = ("hub :- s1.\nhub :- s2.\ns1 :- hub.\ns2 :- hub.\n"
               ":- auto_table.")
        prog = load(src)
        tabled = [str(pi) for pi in prog.user_predicates() if pi.tabled]
        assert tabled == ["hub/0"]

    def test_already_tabled_counts_first(self):
        src = (":- table s1/0.\n"
               "hub :- s1.\nhub :- s2.\ns1 :- hub.\ns2 :- hub.\n"
               ":- auto_table.")
        prog = load(src)
        assert prog.info("hub", 0).tabled
        assert not prog.info("s2", 0).tabled
        assert not prog.info("hub", 0).tabling == "none"

    def test_acyclic_program_tables_nothing(self):
        prog = load(":- auto_table.\np(X) :- q(X).\nq(a).")
        assert not any(pi.tabled for pi in prog.user_predicates())

    def test_negative_and_findall_edges_counted(self):
        src = (":- auto_table.\n"
               "p(X) :- tnot q(X).\n"
               "q(X) :- findall(Y, p(Y), _).\n")
        prog = load(src)
        assert any(pi.tabled for pi in prog.user_predicates())

    def test_breaks_all_cycles(self):
        rng = random.Random(7)
        lines = []
        preds = ["n%d" % i for i in range(9)]
        for _ in range(18):
            a, b = rng.choice(preds), rng.choice(preds)
            lines.append(f"{a} :- {b}.")
        src = "\n".join(lines) + "\n:- auto_table."
        prog = load(src)
        from tlpe.sccs import cyclic_vertices
        graph = prog.call_graph()
        live = {k for k in graph if not prog.preds[k].tabled}
        rest = cyclic_vertices(live, lambda v: (s for s in graph[v] if s in live))
        assert not rest


class TestSubsumptionStratification:
    def test_direct_negative_self_loop_rejected(self):
        with pytest.raises(StoreError):
            load(":- table p(min).\np(1) :- tnot p(2).")

    def test_negative_loop_through_helper_rejected(self):
        with pytest.raises(StoreError):
            load(":- table p(min).\np(C) :- tnot q(C).\nq(C) :- p(C).")

    def test_negation_outside_cycle_allowed(self):
        prog = load(":- table p(min).\np(C) :- tnot q(C).\nq(1).")
        assert prog.info("p", 1).subsumption is not None
