"""Embeddable tabled logic programming engine.

SLG resolution with well-founded negation, answer subsumption,
variant/subsumptive call tabling, and incremental re-evaluation.
"""

from .engine import Engine, QueryAnswer
from .errors import (DirectiveError, EvalError, ParseError, StoreError,
                     TlpeError)
from .incremental import (incr_assert, incr_invalidate, incr_retract,
                          incr_table_update)
from .negation import get_residual, truth_of
from .parser import parse_goal, parse_program
from .program import Program
from .terms import Atom, Int, Struct, Term, Var

__version__ = "0.1.0"

__all__ = [
    "Engine", "QueryAnswer", "Program",
    "TlpeError", "ParseError", "DirectiveError", "StoreError", "EvalError",
    "parse_program", "parse_goal",
    "Term", "Var", "Atom", "Int", "Struct",
    "get_residual", "truth_of",
    "incr_assert", "incr_retract", "incr_table_update", "incr_invalidate",
    "__version__",
]
