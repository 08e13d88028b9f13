"""Engine behavior: resolution, tabling, scheduling, traces, statistics."""

import random
import sys

import pytest

from tlpe.engine import Engine
from tlpe.errors import EvalError
from tlpe.terms import term_to_str

sys.path.insert(0, __file__.rsplit("/", 1)[0])
from oracles import bfs_reachable, random_digraph


def make(src, **kw):
    eng = Engine(**kw)
    eng.consult(src)
    return eng


def solutions(eng, goal):
    """Rendered instantiated goals, in delivery order."""
    return [term_to_str(a.goal) for a in eng.query(goal)]


def truth_set(eng, goal):
    return {(term_to_str(a.goal), a.truth) for a in eng.query(goal)}


REACH_L = """
:- table reach/2.
reach(X,Y) :- reach(X,Z), edge(Z,Y).
reach(X,Y) :- edge(X,Y).
edge(1,2).  edge(2,3).
"""

REACH_R = """
:- table reach/2.
reach(X,Y) :- edge(X,Z), reach(Z,Y).
reach(X,Y) :- edge(X,Y).
edge(1,2).  edge(2,3).
"""


class TestPlainResolution:
    def test_facts_and_conjunction(self):
        eng = make("p(1). p(2). q(2). r(X) :- p(X), q(X).")
        assert solutions(eng, "r(X).") == ["r(2)"]

    def test_arithmetic(self):
        eng = make("double(X,Y) :- Y is X * 2.")
        assert solutions(eng, "double(21,Z).") == ["double(21,42)"]

    def test_comparison_guards(self):
        eng = make("big(X) :- p(X), X > 10. p(3). p(30).")
        assert solutions(eng, "big(X).") == ["big(30)"]

    def test_nontabled_recursion_is_plain_sld(self):
        eng = make("len([],0). len([_|T],N) :- len(T,M), N is M + 1.")
        assert solutions(eng, "len([a,b,c],N).") == ["len([a,b,c],3)"]

    def test_cut_commits_to_first_clause(self):
        eng = make("first(X) :- p(X), !. p(1). p(2).")
        assert solutions(eng, "first(X).") == ["first(1)"]

    def test_findall_collects_all(self):
        eng = make("p(1). p(2). p(3). all(L) :- findall(X, p(X), L).")
        assert solutions(eng, "all(L).") == ["all([1,2,3])"]

    def test_undefined_predicate_fails_quietly(self):
        eng = make("p(1).")
        assert solutions(eng, "missing(X).") == []

    def test_unbound_arithmetic_raises(self):
        eng = make("bad(Y) :- Y is X + 1.")
        with pytest.raises(EvalError):
            eng.query("bad(Y).")


class TestTabledReach:
    def test_left_recursion_terminates(self):
        eng = make(REACH_L)
        assert sorted(solutions(eng, "reach(1,Y).")) == \
            ["reach(1,2)", "reach(1,3)"]

    def test_right_recursion_terminates(self):
        eng = make(REACH_R)
        assert sorted(solutions(eng, "reach(1,Y).")) == \
            ["reach(1,2)", "reach(1,3)"]

    def test_cycle_terminates(self):
        eng = make(REACH_L + "edge(3,1).")
        assert len(solutions(eng, "reach(1,Y).")) == 3

    @pytest.mark.parametrize("src", [REACH_L, REACH_R],
                             ids=["left", "right"])
    def test_random_graph_matches_bfs(self, src):
        rng = random.Random(42)
        edges = random_digraph(rng, 30, 90)
        facts = "\n".join(f"edge({a},{b})." for a, b in edges)
        eng = make(src.replace("edge(1,2).  edge(2,3).", facts))
        got = {int(term_to_str(a.goal)[len("reach(7,"):-1])
               for a in eng.query("reach(7,Y).")}
        assert got == bfs_reachable(edges, 7)

    def test_variant_calls_share_one_table(self):
        eng = make(REACH_L)
        eng.query("reach(1,Y).")
        eng.query("reach(1,X).")
        stats = eng.statistics()["tables"]["reach/2"]
        assert stats["tables"] == 1


class TestAnswerOrder:
    def test_clause_order_then_insertion_order(self):
        eng = make(REACH_R)
        assert solutions(eng, "reach(1,Y).") == ["reach(1,2)", "reach(1,3)"]

    def test_repeat_query_is_deterministic(self):
        eng = make(REACH_L + "edge(3,1). edge(2,1).")
        first = solutions(eng, "reach(1,Y).")
        assert solutions(eng, "reach(1,Y).") == first

    def test_fresh_engine_reproduces_order(self):
        a = solutions(make(REACH_L + "edge(1,3)."), "reach(1,Y).")
        b = solutions(make(REACH_L + "edge(1,3)."), "reach(1,Y).")
        assert a == b


class TestStrategies:
    PROGRAMS = [
        REACH_L + "edge(3,1).",
        REACH_R,
        """
        :- table p/1, q/1.
        p(X) :- q(X).
        q(1). q(2).
        p(3) :- p(3).
        """,
    ]

    @pytest.mark.parametrize("src", PROGRAMS)
    def test_local_and_batched_agree(self, src):
        g = "reach(1,Y)." if "reach" in src else "p(X)."
        local = truth_set(make(src, strategy="local"), g)
        batched = truth_set(make(src, strategy="batched"), g)
        assert local == batched


class TestCallSubsumption:
    SRC = """
    :- table p/2 as subsumptive.
    p(a,1). p(a,2). p(b,3).
    """

    def test_specific_call_reuses_general_producer(self):
        eng = make(self.SRC)
        eng.query("p(X,Y).")
        eng.query("p(a,Z).")
        stats = eng.statistics()["tables"]["p/2"]
        assert stats["producers"] == 1
        assert stats["tables"] == 2

    def test_variant_mode_creates_two_producers(self):
        eng = make(self.SRC.replace(" as subsumptive", ""))
        eng.query("p(X,Y).")
        eng.query("p(a,Z).")
        assert eng.statistics()["tables"]["p/2"]["producers"] == 2

    def test_answers_equal_between_modes(self):
        sub = make(self.SRC)
        var = make(self.SRC.replace(" as subsumptive", ""))
        for g in ("p(X,Y).", "p(a,Z).", "p(b,Z)."):
            assert sorted(solutions(sub, g)) == sorted(solutions(var, g))

    def test_specific_first_then_general(self):
        eng = make(self.SRC)
        eng.query("p(a,Z).")
        eng.query("p(X,Y).")
        # the specific call could not reuse anything, so two producers
        assert eng.statistics()["tables"]["p/2"]["producers"] == 2


class TestTableCountShape:
    @pytest.mark.parametrize("n", [3, 10])
    def test_append_creates_n_plus_one_tables(self, n):
        src = """
        :- table app/3.
        app([],L,L).
        app([H|T],L,[H|R]) :- app(T,L,R).
        """
        eng = make(src)
        lst = "[" + ",".join(str(i) for i in range(1, n + 1)) + "]"
        assert len(eng.query(f"app({lst},[x],Z).")) == 1
        assert eng.statistics()["tables"]["app/3"]["tables"] == n + 1


class TestTraces:
    def run_traced(self, src, goal):
        eng = make(src)
        eng.trace_enabled = True
        eng.query(goal)
        return eng.trace_lines

    def test_line_format(self):
        lines = self.run_traced(REACH_R, "reach(1,Y).")
        assert lines
        for line in lines:
            assert line.startswith("OP ")
            assert line.rstrip("]").rsplit("[K=", 1)[1].isdigit()

    def test_operations_present(self):
        ops = {l.split()[1] for l in self.run_traced(REACH_R, "reach(1,Y).")}
        assert {"NEW_SUBGOAL", "PROGRAM_CLAUSE_RESOLUTION",
                "POSITIVE_RETURN", "COMPLETION"} <= ops

    def test_node_counter_is_monotone(self):
        ks = [int(l.rsplit("[K=", 1)[1].rstrip("]"))
              for l in self.run_traced(REACH_L, "reach(1,Y).")]
        assert all(a <= b for a, b in zip(ks, ks[1:]))

    def test_trace_is_reproducible(self):
        a = self.run_traced(REACH_L + "edge(3,1).", "reach(1,Y).")
        b = self.run_traced(REACH_L + "edge(3,1).", "reach(1,Y).")
        assert a == b


class TestQueryLevelTabling:
    def test_tables_discarded_after_query(self):
        eng = make(REACH_L, query_level_tabling=True)
        eng.query("reach(1,Y).")
        assert eng.statistics()["tables"] == {}

    def test_tables_kept_by_default(self):
        eng = make(REACH_L)
        eng.query("reach(1,Y).")
        assert eng.statistics()["tables"]["reach/2"]["tables"] == 1


class TestEngineGuards:
    def test_nested_query_rejected(self):
        eng = make("p(1).")
        stream = eng.answers("p(X).")
        next(stream)
        # answers() finished eagerly, so a second query is fine
        assert solutions(eng, "p(X).") == ["p(1)"]

    def test_statistics_shape(self):
        eng = make(REACH_L)
        eng.query("reach(1,Y).")
        st = eng.statistics()
        assert {"tables", "counters", "nodes", "simplifications",
                "recomputations"} <= set(st)
        assert st["counters"]["new_subgoal"] >= 1
