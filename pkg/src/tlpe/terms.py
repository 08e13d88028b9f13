"""First-order terms and the operations the rest of the engine is built on.

Terms are immutable: atoms, integers, variables and compounds.  Variable
ids are plain integers local to whatever structure owns the term (a clause,
a subgoal, a resolution state); cross-term identity is always mediated by
an explicit substitution or by renaming.  All traversals are iterative so
that long lists and deep conjunctions never hit the interpreter's
recursion limit.
"""

from __future__ import annotations

from typing import Dict, Iterator, List, Optional, Tuple, Union


class CyclicTermError(Exception):
    """Raised when a substitution application would build an infinite term."""


class Atom:
    __slots__ = ("name", "_hash")

    def __init__(self, name: str):
        self.name = name
        self._hash = hash(("a", name))

    def __repr__(self):
        return f"Atom({self.name!r})"

    def __hash__(self):
        return self._hash

    def __eq__(self, other):
        return self is other or (
            type(other) is Atom and other.name == self.name
        )


class Int:
    __slots__ = ("value", "_hash")

    def __init__(self, value: int):
        self.value = value
        self._hash = hash(("i", value))

    def __repr__(self):
        return f"Int({self.value})"

    def __hash__(self):
        return self._hash

    def __eq__(self, other):
        return type(other) is Int and other.value == self.value


class Var:
    __slots__ = ("id", "_hash")

    def __init__(self, id: int):
        self.id = id
        self._hash = hash(("v", id))

    def __repr__(self):
        return f"Var({self.id})"

    def __hash__(self):
        return self._hash

    def __eq__(self, other):
        return type(other) is Var and other.id == self.id


class Struct:
    __slots__ = ("name", "args", "_hash")

    def __init__(self, name: str, args: Tuple["Term", ...]):
        self.name = name
        self.args = args
        self._hash = hash(("f", name, tuple(a._hash for a in args)))

    @property
    def arity(self) -> int:
        return len(self.args)

    def __repr__(self):
        return f"Struct({self.name!r}, {self.args!r})"

    def __hash__(self):
        return self._hash

    def __eq__(self, other):
        if self is other:
            return True
        if type(other) is not Struct or other._hash != self._hash:
            return False
        return term_eq(self, other)


Term = Union[Atom, Int, Var, Struct]
Subst = Dict[int, Term]

NIL = Atom("[]")
TRUE = Atom("true")


def term_eq(a: Term, b: Term) -> bool:
    """Structural equality, iterative to survive deep lists."""
    stack = [(a, b)]
    while stack:
        x, y = stack.pop()
        if x is y:
            continue
        tx = type(x)
        if tx is not type(y):
            return False
        if tx is Struct:
            if x.name != y.name or len(x.args) != len(y.args):
                return False
            stack.extend(zip(x.args, y.args))
        elif tx is Atom:
            if x.name != y.name:
                return False
        elif tx is Int:
            if x.value != y.value:
                return False
        else:  # Var
            if x.id != y.id:
                return False
    return True


# ---------------------------------------------------------------------------
# preorder symbol strings (the currency of tries and canonical keys)
# ---------------------------------------------------------------------------

def symbols(t: Term) -> Tuple[tuple, ...]:
    """Preorder symbol sequence: ('f',name,arity) | ('a',name) | ('i',v) | ('v',id)."""
    out: List[tuple] = []
    stack = [t]
    while stack:
        x = stack.pop()
        tx = type(x)
        if tx is Struct:
            out.append(("f", x.name, len(x.args)))
            stack.extend(reversed(x.args))
        elif tx is Atom:
            out.append(("a", x.name))
        elif tx is Int:
            out.append(("i", x.value))
        else:
            out.append(("v", x.id))
    return tuple(out)


def is_ground(t: Term) -> bool:
    stack = [t]
    while stack:
        x = stack.pop()
        tx = type(x)
        if tx is Var:
            return False
        if tx is Struct:
            stack.extend(x.args)
    return True


def term_vars(t: Term) -> List[int]:
    """Variable ids in first-occurrence preorder, deduplicated."""
    seen = set()
    out: List[int] = []
    stack = [t]
    while stack:
        x = stack.pop()
        tx = type(x)
        if tx is Var:
            if x.id not in seen:
                seen.add(x.id)
                out.append(x.id)
        elif tx is Struct:
            stack.extend(reversed(x.args))
    return out


# ---------------------------------------------------------------------------
# rebuilding traversals: rename, canonicalize, substitution application
# ---------------------------------------------------------------------------

def _map_vars(t: Term, fn) -> Term:
    """Rebuild t with every Var leaf replaced by fn(var) (a Term)."""
    ostack: List[Term] = []
    stack: List[tuple] = [("o", t)]
    while stack:
        op, x = stack.pop()
        if op == "c":
            n = len(x.args)
            args = tuple(ostack[-n:]) if n else ()
            del ostack[len(ostack) - n:]
            ostack.append(Struct(x.name, args))
            continue
        tx = type(x)
        if tx is Struct:
            stack.append(("c", x))
            for a in reversed(x.args):
                stack.append(("o", a))
        elif tx is Var:
            ostack.append(fn(x))
        else:
            ostack.append(x)
    return ostack[0]


def rename(t: Term, offset: int) -> Term:
    """Shift every variable id by offset (renaming apart)."""
    if offset == 0:
        return t
    return _map_vars(t, lambda v: Var(v.id + offset))


def canonicalize(t: Term) -> Tuple[Term, int]:
    """Renumber variables densely 0..n-1 in first-occurrence preorder order.

    Returns the renumbered term and the variable count.  Idempotent: a
    canonical term canonicalizes to itself.
    """
    mapping: Dict[int, Var] = {}

    def fresh(v: Var) -> Var:
        w = mapping.get(v.id)
        if w is None:
            w = Var(len(mapping))
            mapping[v.id] = w
        return w

    out = _map_vars(t, fresh)
    return out, len(mapping)


def canonical_key(t: Term) -> Tuple[tuple, ...]:
    """Symbol sequence of the canonicalized term; variant terms share keys."""
    return symbols(canonicalize(t)[0])


def walk(t: Term, bindings: Subst) -> Term:
    """Dereference a variable chain (no structural descent)."""
    while type(t) is Var:
        u = bindings.get(t.id)
        if u is None:
            return t
        t = u
    return t


def resolve(t: Term, bindings: Subst) -> Term:
    """Apply bindings exhaustively, rebuilding the term.

    Raises CyclicTermError if the bindings are cyclic (possible when the
    occurs check is off); the engine surfaces that when a term has to be
    materialized for table storage.
    """
    if not bindings:
        return t
    ostack: List[Term] = []
    stack: List[tuple] = [("o", t)]
    onpath: set = set()
    while stack:
        op, x = stack.pop()
        if op == "c":
            n = len(x.args)
            args = tuple(ostack[-n:]) if n else ()
            del ostack[len(ostack) - n:]
            ostack.append(Struct(x.name, args))
            continue
        if op == "u":
            onpath.discard(x)
            continue
        tx = type(x)
        if tx is Struct:
            stack.append(("c", x))
            for a in reversed(x.args):
                stack.append(("o", a))
        elif tx is Var:
            w = walk(x, bindings)
            if type(w) is Var:
                ostack.append(w)
            else:
                if x.id in onpath:
                    raise CyclicTermError(f"cyclic binding through _{x.id}")
                last = walk_last_var(x, bindings)
                if last in onpath:
                    raise CyclicTermError(f"cyclic binding through _{last}")
                onpath.add(last)
                stack.append(("u", last))
                stack.append(("o", w))
        else:
            ostack.append(x)
    return ostack[0]


def walk_last_var(t: Var, bindings: Subst) -> int:
    """Id of the last variable in a deref chain starting at t."""
    vid = t.id
    while True:
        u = bindings.get(vid)
        if u is None or type(u) is not Var:
            return vid
        vid = u.id


# ---------------------------------------------------------------------------
# unification / matching / variance
# ---------------------------------------------------------------------------

def _occurs(vid: int, t: Term, bindings: Subst) -> bool:
    stack = [t]
    while stack:
        x = walk(stack.pop(), bindings)
        tx = type(x)
        if tx is Var:
            if x.id == vid:
                return True
        elif tx is Struct:
            stack.extend(x.args)
    return False


def unify(a: Term, b: Term, bindings: Optional[Subst] = None,
          occurs_check: bool = False) -> Optional[Subst]:
    """Most general unifier of a and b over a shared variable namespace.

    Extends (a copy of) bindings and returns it, or None on failure.
    Callers are responsible for renaming apart first.
    """
    env: Subst = dict(bindings) if bindings else {}
    stack = [(a, b)]
    while stack:
        x, y = stack.pop()
        x = walk(x, env)
        y = walk(y, env)
        if x is y:
            continue
        tx, ty = type(x), type(y)
        if tx is Var:
            if ty is Var and y.id == x.id:
                continue
            if occurs_check and _occurs(x.id, y, env):
                return None
            env[x.id] = y
        elif ty is Var:
            if occurs_check and _occurs(y.id, x, env):
                return None
            env[y.id] = x
        elif tx is Atom:
            if ty is not Atom or x.name != y.name:
                return None
        elif tx is Int:
            if ty is not Int or x.value != y.value:
                return None
        else:  # Struct
            if ty is not Struct or x.name != y.name or len(x.args) != len(y.args):
                return None
            stack.extend(zip(x.args, y.args))
    return env


def match(general: Term, specific: Term,
          bindings: Optional[Subst] = None) -> Optional[Subst]:
    """One-sided unification: bind only variables of `general`.

    Succeeds iff general subsumes specific, i.e. there is a substitution
    over general's variables alone mapping it onto specific.
    """
    env: Subst = dict(bindings) if bindings else {}
    stack = [(general, specific)]
    while stack:
        x, y = stack.pop()
        tx = type(x)
        if tx is Var:
            bound = env.get(x.id)
            if bound is None:
                env[x.id] = y
            elif not term_eq(bound, y):
                return None
            continue
        ty = type(y)
        if tx is Atom:
            if ty is not Atom or x.name != y.name:
                return None
        elif tx is Int:
            if ty is not Int or x.value != y.value:
                return None
        else:  # Struct
            if ty is not Struct or x.name != y.name or len(x.args) != len(y.args):
                return None
            stack.extend(zip(x.args, y.args))
    return env


def subsumes(general: Term, specific: Term) -> bool:
    """True iff specific is an instance of general.

    The witness substitution binds only variables of `general`; when it is
    a variable renaming the two terms are variants.
    """
    return match(general, specific) is not None


def variant(a: Term, b: Term) -> bool:
    """True iff a and b are equal up to consistent variable renaming."""
    return canonical_key(a) == canonical_key(b)


# ---------------------------------------------------------------------------
# standard order of terms
# ---------------------------------------------------------------------------

_KIND_RANK = {Var: 0, Int: 1, Atom: 2, Struct: 3}


def compare(a: Term, b: Term) -> int:
    """Standard order: Var < Int < Atom < Compound; ints by value, atoms by
    name, compounds by arity, then functor name, then arguments left to
    right.  Total on ground terms; variables order by id."""
    stack = [(a, b)]
    while stack:
        x, y = stack.pop()
        rx, ry = _KIND_RANK[type(x)], _KIND_RANK[type(y)]
        if rx != ry:
            return -1 if rx < ry else 1
        if rx == 0:
            if x.id != y.id:
                return -1 if x.id < y.id else 1
        elif rx == 1:
            if x.value != y.value:
                return -1 if x.value < y.value else 1
        elif rx == 2:
            if x.name != y.name:
                return -1 if x.name < y.name else 1
        else:
            if len(x.args) != len(y.args):
                return -1 if len(x.args) < len(y.args) else 1
            if x.name != y.name:
                return -1 if x.name < y.name else 1
            stack.extend(reversed(list(zip(x.args, y.args))))
    return 0


class OrderKey:
    """Adapter so terms can be fed to sorted()."""
    __slots__ = ("t",)

    def __init__(self, t: Term):
        self.t = t

    def __lt__(self, other):
        return compare(self.t, other.t) < 0

    def __eq__(self, other):
        return compare(self.t, other.t) == 0


# ---------------------------------------------------------------------------
# lists
# ---------------------------------------------------------------------------

def make_list(items, tail: Term = NIL) -> Term:
    out = tail
    for x in reversed(list(items)):
        out = Struct(".", (x, out))
    return out


def list_parts(t: Term) -> Tuple[List[Term], Term]:
    """Split a ./2 chain into (elements, tail); tail is NIL for proper lists."""
    elems: List[Term] = []
    while type(t) is Struct and t.name == "." and len(t.args) == 2:
        elems.append(t.args[0])
        t = t.args[1]
    return elems, t


# ---------------------------------------------------------------------------
# printing
# ---------------------------------------------------------------------------

_SYMBOLIC = set("+-*/\\^<>=~:.?@#&$")


def atom_needs_quotes(name: str) -> bool:
    if name in ("[]", "!", ";", "{}"):
        return False
    if not name:
        return True
    if name[0].islower() and all(c.isalnum() or c == "_" for c in name):
        return False
    if all(c in _SYMBOLIC for c in name):
        return False
    return True


def _atom_str(name: str) -> str:
    if atom_needs_quotes(name):
        return "'" + name.replace("\\", "\\\\").replace("'", "\\'") + "'"
    return name


def term_to_str(t: Term, var_names: Optional[Dict[int, str]] = None) -> str:
    """Canonical printing: functional notation, list sugar, minimal quoting."""
    parts: List[str] = []
    _fmt(t, var_names or {}, parts)
    return "".join(parts)


def _fmt(t: Term, names: Dict[int, str], out: List[str]) -> None:
    # Recursive on structure but lists are flattened first, so depth tracks
    # nesting rather than list length.
    tt = type(t)
    if tt is Atom:
        out.append(_atom_str(t.name))
    elif tt is Int:
        out.append(str(t.value))
    elif tt is Var:
        out.append(names.get(t.id, f"_G{t.id}"))
    else:
        if t.name == "." and len(t.args) == 2:
            elems, tail = list_parts(t)
            out.append("[")
            for i, e in enumerate(elems):
                if i:
                    out.append(",")
                _fmt(e, names, out)
            if not (type(tail) is Atom and tail.name == "[]"):
                out.append("|")
                _fmt(tail, names, out)
            out.append("]")
            return
        out.append(_atom_str(t.name))
        out.append("(")
        for i, a in enumerate(t.args):
            if i:
                out.append(",")
            _fmt(a, names, out)
        out.append(")")


def functor_of(t: Term) -> Tuple[str, int]:
    """(name, arity) of a callable term: an atom is a 0-ary call."""
    if type(t) is Atom:
        return (t.name, 0)
    if type(t) is Struct:
        return (t.name, len(t.args))
    raise TypeError(f"not a callable term: {t!r}")


def is_callable(t: Term) -> bool:
    return type(t) is Atom or type(t) is Struct
