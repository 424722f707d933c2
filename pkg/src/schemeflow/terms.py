"""Interned domain terms shared by both evaluation paths.

Every label, context, address, abstract value, and continuation frame is a
hash-consed ("interned") immutable term: constructing the same shape twice
returns the same object, so equality is identity and terms can be used as
dictionary keys at pointer speed.  Each term carries a ``tag`` (its canonical
constructor name) and an ``args`` tuple, which generic code — the rule engine,
the serializer — uses to destructure and rebuild terms without knowing the
concrete classes.

The canonical textual form of a term is an s-expression such as
``(Closure e4 (Context e7))``; see :func:`render`.
"""

from __future__ import annotations

from typing import Callable, ClassVar

# Registry of constructor tag -> class, used to rebuild terms generically.
TERM_TYPES: dict[str, type["Term"]] = {}


class Term:
    """Base class for interned terms.

    Subclasses set ``tag`` (the canonical constructor name) and ``_fields``
    (names for the positions of ``args``, exposed as attributes).  Instances
    are interned per-class: ``cls(*args)`` returns the existing object when
    one with equal args was built before.  Equality and hashing are therefore
    the inherited identity semantics.
    """

    __slots__ = ("args",)
    tag: ClassVar[str] = "?"
    _fields: ClassVar[tuple[str, ...]] = ()
    _pool: ClassVar[dict]

    def __init_subclass__(cls, **kw):
        super().__init_subclass__(**kw)
        cls._pool = {}
        if cls.tag in TERM_TYPES:
            raise ValueError(f"duplicate term tag {cls.tag!r}")
        TERM_TYPES[cls.tag] = cls

    def __new__(cls, *args):
        pool = cls._pool
        term = pool.get(args)
        if term is None:
            term = object.__new__(cls)
            term.args = args
            pool[args] = term
        return term

    def __getattr__(self, name: str):
        try:
            idx = type(self)._fields.index(name)
        except ValueError:
            raise AttributeError(name) from None
        return self.args[idx]

    def __repr__(self) -> str:
        return render(self)

    # Interned terms must never be copied into fresh objects.
    def __copy__(self):
        return self

    def __deepcopy__(self, memo):
        return self


class Label(Term):
    """One source-expression occurrence, e.g. ``e7``.  Atomic in renderings."""

    tag = "id"
    _fields = ("text",)


class Context(Term):
    """A sequence of at most m labels; ``args`` are the labels themselves."""

    tag = "Context"
    _fields = ()

    @property
    def frames(self) -> tuple[Label, ...]:
        return self.args


EMPTY_CONTEXT = Context()


class VAddr(Term):
    tag = "VAddress"
    _fields = ("var", "ctx")


class KAddr(Term):
    tag = "KAddress"
    _fields = ("expr", "ctx")


# ---------------------------------------------------------------------------
# Abstract values
# ---------------------------------------------------------------------------


class Number(Term):
    tag = "Number"
    _fields = ("n",)


class Bool(Term):
    tag = "Bool"
    _fields = ("b",)


class Closure(Term):
    tag = "Closure"
    _fields = ("lam", "ctx")


class KontRef(Term):
    """A captured continuation: a first-class reference to a KAddr."""

    tag = "Kont"
    _fields = ("ka",)


class PrimVal(Term):
    tag = "PrimVal"
    _fields = ("op", "v1", "v2")


class NumTop(Term):
    """Widening token standing for any value cut off below the depth limit."""

    tag = "NumTop"
    _fields = ()


NUM_TOP = NumTop()

VALUE_TAGS = frozenset({"Number", "Bool", "Closure", "Kont", "PrimVal", "NumTop"})


# ---------------------------------------------------------------------------
# Continuation frames
# ---------------------------------------------------------------------------


class MT(Term):
    tag = "MT"
    _fields = ()


MT_FRAME = MT()


class IfK(Term):
    tag = "If"
    _fields = ("et", "ef", "ctx", "next")


class SetK(Term):
    tag = "Set"
    _fields = ("loc", "next")


class CallccK(Term):
    tag = "Callcc"
    _fields = ("ectx", "next")


class LetK(Term):
    tag = "Let"
    _fields = ("av", "body", "ctx", "next")


class ArgK(Term):
    tag = "Arg"
    _fields = ("args_label", "ctx", "ectx", "next")


class FnK(Term):
    tag = "Fn"
    _fields = ("fn", "pos", "ctx", "next")


class Prim1K(Term):
    tag = "Prim1"
    _fields = ("op", "e2", "ctx", "next")


class Prim2K(Term):
    tag = "Prim2"
    _fields = ("op", "v1", "next")


KONT_TAGS = frozenset({"MT", "If", "Set", "Callcc", "Let", "Arg", "Fn", "Prim1", "Prim2"})


# ---------------------------------------------------------------------------
# Allocators
# ---------------------------------------------------------------------------


def make_context(call_label: Label, ctx: Context, m: int) -> Context:
    """Prepend ``call_label`` to ``ctx`` and keep the first ``m`` labels."""
    if m < 0:
        raise ValueError("m must be >= 0")
    if m == 0:
        return EMPTY_CONTEXT
    return Context(*((call_label,) + ctx.args)[:m])


def alloc_v(var: str, ctx: Context) -> VAddr:
    return VAddr(var, ctx)


def alloc_k(expr: Label, ctx: Context) -> KAddr:
    return KAddr(expr, ctx)


# ---------------------------------------------------------------------------
# Widening
# ---------------------------------------------------------------------------


def primval_depth(v: Term) -> int:
    """PrimVal nesting depth: non-PrimVal terms are 0, each PrimVal adds 1."""
    if not isinstance(v, PrimVal):
        return 0
    return 1 + max(primval_depth(v.args[1]), primval_depth(v.args[2]))


def _cut(v: Term, remaining: int) -> Term:
    if remaining == 0:
        return NUM_TOP
    if isinstance(v, PrimVal):
        op, v1, v2 = v.args
        return PrimVal(op, _cut(v1, remaining - 1), _cut(v2, remaining - 1))
    return v


def widen_value(v: Term, depth_limit: int | None) -> Term:
    """Bound PrimVal nesting at ``depth_limit``.

    Values whose nesting depth is within the limit are returned unchanged.
    A too-deep value is rebuilt with every sub-term sitting at the limit
    depth replaced by NumTop, which makes the set of constructible values
    finite for a fixed program.  ``None`` disables widening.  Idempotent.
    """
    if depth_limit is None:
        return v
    if depth_limit < 1:
        raise ValueError("depth_limit must be >= 1 (or None to disable)")
    if primval_depth(v) <= depth_limit:
        return v
    return _cut(v, depth_limit)


# ---------------------------------------------------------------------------
# Canonical rendering
# ---------------------------------------------------------------------------


def render(x: object) -> str:
    """Canonical textual form of a term or scalar column value.

    Labels render bare (``e7``); every other term renders as a parenthesized
    s-expression of its tag and rendered args, e.g. ``(Context e7 e3)`` or
    ``(Closure e4 (Context e7))``.  Strings render as themselves and ints in
    decimal, so the form is flat, readable, and totally ordered as text.
    """
    if isinstance(x, Label):
        return x.args[0]
    if isinstance(x, Term):
        if not x.args:
            return f"({x.tag})"
        return f"({x.tag} {' '.join(render(a) for a in x.args)})"
    if isinstance(x, bool):  # guard: bools are ints in Python
        raise TypeError("raw Python bool is not a term column")
    if isinstance(x, int):
        return str(x)
    if isinstance(x, str):
        return x
    raise TypeError(f"cannot render {x!r}")
