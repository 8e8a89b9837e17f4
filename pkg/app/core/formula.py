# app/core/formula.py
"""
Continuous-logic formula DSL: AST, s-expression parser/printer, vectorized evaluator,
and syntactic modulus (Lipschitz + range) inference.

Grammar:

  FORMULA := (const R) | (d SORT T T) | (pred NAME T...) | (neg F) | (scale R F)
           | (add F F) | (max F F) | (min F F) | (absdiff F F) | (clamp F R R)
           | (cliplog F R R) | (sup VAR[:SORT] F) | (inf VAR[:SORT] F)
           | (bmphi R T T T) | (bmpsi R SPRED T T)
  T       := VAR | @CONST
  VAR     := x0 | x1 | ...

`(clamp (log F) a b)` is accepted as `(cliplog F a b)`.
"""
from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence, Union

import numpy as np

from app.core.config import TOL
from app.core.errors import CorrelaError, EvaluationError, FormulaError, FormulaSyntaxError
from app.core.mstruct import MetricStructure, Signature

logger = logging.getLogger(__name__)

# Emboundment vocabulary (shared with app.core.embound)
INF_CONST = "inf"
ZERO_CONST = "zero"
EMB_P = "P"


def emb_scalar_name(s: complex | float) -> str:
    """Predicate name of the scalar-action predicate S_s."""
    c = complex(s)
    if c.imag == 0:
        return f"S[{float(c.real)!r}]"
    return f"S[{float(c.real)!r},{float(c.imag)!r}]"


def emb_scalar_value(name: str) -> complex | None:
    """Inverse of emb_scalar_name; None for names that are not S[...] predicates."""
    if not (name.startswith("S[") and name.endswith("]")):
        return None
    parts = name[2:-1].split(",")
    try:
        if len(parts) == 1:
            return complex(float(parts[0]), 0.0)
        if len(parts) == 2:
            return complex(float(parts[0]), float(parts[1]))
    except ValueError:
        return None
    return None


# ──────────────────────────────────────────────────────────────────────────────
# AST
# ──────────────────────────────────────────────────────────────────────────────

@dataclass(frozen=True, slots=True)
class Var:
    index: int
    sort: str

    @property
    def text(self) -> str:
        return f"x{self.index}"


@dataclass(frozen=True, slots=True)
class PointConst:
    name: str
    sort: str

    @property
    def text(self) -> str:
        return f"@{self.name}"


Term = Union[Var, PointConst]


@dataclass(frozen=True, slots=True)
class Const:
    value: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "value", float(self.value))


@dataclass(frozen=True, slots=True)
class Dist:
    sort: str
    a: Term
    b: Term
    bound: float = math.inf


@dataclass(frozen=True, slots=True)
class Pred:
    name: str
    args: tuple[Term, ...]
    arg_sorts: tuple[str, ...]
    lo: float
    hi: float
    lipschitz: tuple[float, ...]


@dataclass(frozen=True, slots=True)
class Conn:
    op: str
    args: tuple["Formula", ...]
    params: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "args", tuple(self.args))
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        spec = CATALOG.get(self.op)
        if spec is None:
            raise FormulaError(f"connective not in catalog: {self.op}")
        if len(self.args) != spec.arity or len(self.params) != spec.nparams:
            raise FormulaError(
                f"{self.op}: expected {spec.arity} argument(s) and {spec.nparams} parameter(s)"
            )
        if self.op in ("clamp", "cliplog") and self.params[0] > self.params[1]:
            raise FormulaError(f"{self.op}: lower bound {self.params[0]} > upper bound {self.params[1]}")


@dataclass(frozen=True, slots=True)
class Sup:
    var: Var
    body: "Formula"


@dataclass(frozen=True, slots=True)
class Inf:
    var: Var
    body: "Formula"


@dataclass(frozen=True, slots=True)
class EmbPhi:
    """φ_r(x,y,z) on an embounded space, read from the metric and the predicate P."""

    r: float
    x: Term
    y: Term
    z: Term


@dataclass(frozen=True, slots=True)
class EmbPsi:
    """ψ_{r,s}(x,y) on an embounded space, read from the metric and S_s."""

    r: float
    spred: str
    x: Term
    y: Term


Formula = Union[Const, Dist, Pred, Conn, Sup, Inf, EmbPhi, EmbPsi]


def neg(f: Formula) -> Conn:
    return Conn("neg", (f,))


def scale(c: float, f: Formula) -> Conn:
    return Conn("scale", (f,), (c,))


def add(f: Formula, g: Formula) -> Conn:
    return Conn("add", (f, g))


def max_of(f: Formula, g: Formula) -> Conn:
    return Conn("max", (f, g))


def min_of(f: Formula, g: Formula) -> Conn:
    return Conn("min", (f, g))


def absdiff(f: Formula, g: Formula) -> Conn:
    return Conn("absdiff", (f, g))


def clamp(f: Formula, lo: float, hi: float) -> Conn:
    return Conn("clamp", (f,), (lo, hi))


def cliplog(f: Formula, lo: float, hi: float) -> Conn:
    return Conn("cliplog", (f,), (lo, hi))


# ──────────────────────────────────────────────────────────────────────────────
# Connective catalog
# ──────────────────────────────────────────────────────────────────────────────

def _log_clip(x: np.ndarray, lo: float, hi: float) -> np.ndarray:
    # log of a non-positive argument is the clamp's lower bound
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(x > 0, np.log(np.where(x > 0, x, 1.0)), -np.inf)
    return np.clip(out, lo, hi)


def _iv_absdiff(a: tuple[float, float], b: tuple[float, float]) -> tuple[float, float]:
    lo = max(0.0, a[0] - b[1], b[0] - a[1])
    hi = max(a[1] - b[0], b[1] - a[0])
    return (lo, hi)


def _iv_log(lo: float, hi: float, a: float, b: float) -> tuple[float, float]:
    def one(x: float) -> float:
        return a if x <= 0 else min(max(math.log(x), a), b)

    return (one(lo), one(hi))


@dataclass(frozen=True, slots=True)
class Connective:
    """
    Catalog entry. `kind` fixes how argument moduli combine: "max" multiplies the
    largest argument bound by `factor`, "sum" adds the argument bounds times `factor`.
    """

    name: str
    arity: int
    nparams: int
    kind: str
    fn: Callable[[Sequence[np.ndarray], tuple[float, ...]], np.ndarray]
    factor: Callable[[tuple[float, ...]], float]
    interval: Callable[[Sequence[tuple[float, float]], tuple[float, ...]], tuple[float, float]]


CATALOG: dict[str, Connective] = {
    c.name: c
    for c in (
        Connective(
            "neg", 1, 0, "max",
            lambda a, p: -a[0],
            lambda p: 1.0,
            lambda iv, p: (-iv[0][1], -iv[0][0]),
        ),
        Connective(
            "scale", 1, 1, "max",
            lambda a, p: p[0] * a[0],
            lambda p: abs(p[0]),
            lambda iv, p: tuple(sorted((p[0] * iv[0][0], p[0] * iv[0][1]))) if p[0] else (0.0, 0.0),
        ),
        Connective(
            "add", 2, 0, "sum",
            lambda a, p: a[0] + a[1],
            lambda p: 1.0,
            lambda iv, p: (iv[0][0] + iv[1][0], iv[0][1] + iv[1][1]),
        ),
        Connective(
            "max", 2, 0, "max",
            lambda a, p: np.maximum(a[0], a[1]),
            lambda p: 1.0,
            lambda iv, p: (max(iv[0][0], iv[1][0]), max(iv[0][1], iv[1][1])),
        ),
        Connective(
            "min", 2, 0, "max",
            lambda a, p: np.minimum(a[0], a[1]),
            lambda p: 1.0,
            lambda iv, p: (min(iv[0][0], iv[1][0]), min(iv[0][1], iv[1][1])),
        ),
        Connective(
            "absdiff", 2, 0, "sum",
            lambda a, p: np.abs(a[0] - a[1]),
            lambda p: 1.0,
            lambda iv, p: _iv_absdiff(iv[0], iv[1]),
        ),
        Connective(
            "clamp", 1, 2, "max",
            lambda a, p: np.clip(a[0], p[0], p[1]),
            lambda p: 1.0,
            lambda iv, p: (min(max(iv[0][0], p[0]), p[1]), min(max(iv[0][1], p[0]), p[1])),
        ),
        Connective(
            "cliplog", 1, 2, "max",
            lambda a, p: _log_clip(a[0], p[0], p[1]),
            lambda p: math.exp(-p[0]),
            lambda iv, p: _iv_log(iv[0][0], iv[0][1], p[0], p[1]),
        ),
    )
}

ONE_LIPSCHITZ = frozenset({"neg", "max", "min", "clamp"})


def _verify_catalog() -> None:
    rng = np.random.default_rng(0)
    samples = {
        "neg": (),
        "scale": (-1.75,),
        "add": (),
        "max": (),
        "min": (),
        "absdiff": (),
        "clamp": (-0.5, 0.75),
        "cliplog": (-1.0, 1.5),
    }
    for name, spec in CATALOG.items():
        p = samples[name]
        x = [rng.uniform(-3, 3, 4000) for _ in range(spec.arity)]
        y = [rng.uniform(-3, 3, 4000) for _ in range(spec.arity)]
        if name == "cliplog":
            x = [np.abs(v) for v in x]
            y = [np.abs(v) for v in y]
        gap = np.abs(spec.fn(x, p) - spec.fn(y, p))
        moves = np.stack([np.abs(a - b) for a, b in zip(x, y)])
        allowed = spec.factor(p) * (moves.max(axis=0) if spec.kind == "max" else moves.sum(axis=0))
        if np.any(gap > allowed + 1e-12):
            raise RuntimeError(f"connective {name} exceeds its declared modulus {spec.factor(p)}")


_verify_catalog()


# ──────────────────────────────────────────────────────────────────────────────
# Traversal
# ──────────────────────────────────────────────────────────────────────────────

def _terms(f: Formula) -> tuple[Term, ...]:
    if isinstance(f, Dist):
        return (f.a, f.b)
    if isinstance(f, Pred):
        return f.args
    if isinstance(f, EmbPhi):
        return (f.x, f.y, f.z)
    if isinstance(f, EmbPsi):
        return (f.x, f.y)
    return ()


def free_vars(f: Formula) -> dict[int, str]:
    """Free variable index → sort, ordered by index. Conflicting sorts raise FormulaError."""
    out: dict[int, str] = {}

    def put(i: int, sort: str) -> None:
        if out.setdefault(i, sort) != sort:
            raise FormulaError(f"sort mismatch: x{i} used as {out[i]} and {sort}")

    if isinstance(f, (Sup, Inf)):
        inner = free_vars(f.body)
        if f.var.index in inner and inner[f.var.index] != f.var.sort:
            raise FormulaError(
                f"sort mismatch: x{f.var.index} bound as {f.var.sort} but used as {inner[f.var.index]}"
            )
        for i, s in inner.items():
            if i != f.var.index:
                put(i, s)
    elif isinstance(f, Conn):
        for a in f.args:
            for i, s in free_vars(a).items():
                put(i, s)
    else:
        for t in _terms(f):
            if isinstance(t, Var):
                put(t.index, t.sort)
    return dict(sorted(out.items()))


def constants_used(f: Formula) -> set[str]:
    if isinstance(f, (Sup, Inf)):
        return constants_used(f.body)
    if isinstance(f, Conn):
        return set().union(*(constants_used(a) for a in f.args)) if f.args else set()
    return {t.name for t in _terms(f) if isinstance(t, PointConst)}


def _map_terms(f: Formula, fn: Callable[[Term, frozenset[int]], Term], bound: frozenset[int] = frozenset()) -> Formula:
    if isinstance(f, Dist):
        return Dist(f.sort, fn(f.a, bound), fn(f.b, bound), f.bound)
    if isinstance(f, Pred):
        return Pred(f.name, tuple(fn(t, bound) for t in f.args), f.arg_sorts, f.lo, f.hi, f.lipschitz)
    if isinstance(f, EmbPhi):
        return EmbPhi(f.r, fn(f.x, bound), fn(f.y, bound), fn(f.z, bound))
    if isinstance(f, EmbPsi):
        return EmbPsi(f.r, f.spred, fn(f.x, bound), fn(f.y, bound))
    if isinstance(f, Conn):
        return Conn(f.op, tuple(_map_terms(a, fn, bound) for a in f.args), f.params)
    if isinstance(f, (Sup, Inf)):
        return type(f)(f.var, _map_terms(f.body, fn, bound | {f.var.index}))
    return f


def rename_vars(f: Formula, mapping: Mapping[int, int]) -> Formula:
    """Rename free variables (bound ones are left alone); may identify variables."""

    def fn(t: Term, bound: frozenset[int]) -> Term:
        if isinstance(t, Var) and t.index not in bound and t.index in mapping:
            return Var(int(mapping[t.index]), t.sort)
        return t

    out = _map_terms(f, fn)
    free_vars(out)
    return out


def substitute_const(f: Formula, index: int, const: PointConst) -> Formula:
    """Replace free occurrences of x{index} by a named point constant."""

    def fn(t: Term, bound: frozenset[int]) -> Term:
        if isinstance(t, Var) and t.index == index and index not in bound:
            if t.sort != const.sort:
                raise FormulaError(f"sort mismatch: @{const.name} is {const.sort}, x{index} is {t.sort}")
            return const
        return t

    return _map_terms(f, fn)


# ──────────────────────────────────────────────────────────────────────────────
# Parser / printer
# ──────────────────────────────────────────────────────────────────────────────

_TOKEN = re.compile(r"\s*(?:(\()|(\))|([^\s()]+))")
_VAR = re.compile(r"^x(\d+)$")
_QVAR = re.compile(r"^x(\d+)(?::([^\s()]+))?$")


@dataclass(slots=True)
class _Atom:
    text: str
    pos: int


@dataclass(slots=True)
class _List:
    items: list[Any] = field(default_factory=list)
    pos: int = 0


def _read(text: str) -> Any:
    stack: list[_List] = []
    top: Any = None
    i = 0
    n = len(text)
    while i < n:
        m = _TOKEN.match(text, i)
        if m is None or m.end() == i:
            if text[i:].strip() == "":
                break
            raise FormulaSyntaxError("unreadable input", i)
        start = m.start(m.lastindex) if m.lastindex else m.start()
        i = m.end()
        if m.group(1):
            stack.append(_List([], start))
        elif m.group(2):
            if not stack:
                raise FormulaSyntaxError("unbalanced ')'", start)
            done = stack.pop()
            if stack:
                stack[-1].items.append(done)
            elif top is None:
                top = done
            else:
                raise FormulaSyntaxError("trailing input after formula", done.pos)
        else:
            atom = _Atom(m.group(3), start)
            if stack:
                stack[-1].items.append(atom)
            elif top is None:
                top = atom
            else:
                raise FormulaSyntaxError("trailing input after formula", start)
    if stack:
        raise FormulaSyntaxError("unbalanced '('", stack[-1].pos)
    if top is None:
        raise FormulaSyntaxError("empty formula", 0)
    return top


class _Builder:
    def __init__(self, signature: Signature | None) -> None:
        self.sig = signature

    def number(self, node: Any) -> float:
        if not isinstance(node, _Atom):
            raise FormulaSyntaxError("expected a number", node.pos)
        try:
            v = float(node.text)
        except ValueError:
            raise FormulaSyntaxError(f"expected a number, got {node.text!r}", node.pos) from None
        if not math.isfinite(v):
            raise FormulaError(f"non-finite number {node.text!r}", node.pos)
        return v

    def sort_name(self, node: Any) -> str:
        if not isinstance(node, _Atom):
            raise FormulaSyntaxError("expected a sort name", node.pos)
        if self.sig is not None and node.text not in self.sig.sorts:
            raise FormulaError(f"unknown sort {node.text!r}", node.pos)
        return node.text

    def term(self, node: Any, sort: str) -> Term:
        if not isinstance(node, _Atom):
            raise FormulaSyntaxError("expected a variable or @constant", node.pos)
        if node.text.startswith("@"):
            name = node.text[1:]
            if self.sig is not None:
                if name not in self.sig.constants:
                    raise FormulaError(f"unknown constant {name!r}", node.pos)
                if self.sig.constants[name] != sort:
                    raise FormulaError(
                        f"sort mismatch: @{name} is {self.sig.constants[name]}, expected {sort}", node.pos
                    )
            return PointConst(name, sort)
        m = _VAR.match(node.text)
        if not m:
            raise FormulaSyntaxError(f"expected a variable like x0, got {node.text!r}", node.pos)
        return Var(int(m.group(1)), sort)

    def emb_sort(self, pos: int) -> str:
        if self.sig is None or INF_CONST not in self.sig.constants:
            raise FormulaError("emboundment atoms need a signature with the constant 'inf'", pos)
        return self.sig.constants[INF_CONST]

    def emb_pred(self, name: str, arity: int, pos: int) -> None:
        assert self.sig is not None
        p = self.sig.predicates.get(name)
        if p is None:
            raise FormulaError(f"unknown predicate {name!r}", pos)
        if len(p.arg_sorts) != arity:
            raise FormulaError(f"predicate {name} has arity {len(p.arg_sorts)}, expected {arity}", pos)

    def build(self, node: Any) -> Formula:
        if isinstance(node, _Atom):
            raise FormulaSyntaxError(f"expected '(' but found {node.text!r}", node.pos)
        if not node.items or not isinstance(node.items[0], _Atom):
            raise FormulaSyntaxError("expected an operator", node.pos)
        head = node.items[0].text
        args = node.items[1:]
        pos = node.pos

        def need(k: int) -> None:
            if len(args) != k:
                raise FormulaSyntaxError(f"{head}: expected {k} operand(s), got {len(args)}", pos)

        if head == "const":
            need(1)
            return Const(self.number(args[0]))
        if head == "d":
            need(3)
            sort = self.sort_name(args[0])
            bound = self.sig.sorts[sort] if self.sig is not None else math.inf
            return Dist(sort, self.term(args[1], sort), self.term(args[2], sort), float(bound))
        if head == "pred":
            if not args or not isinstance(args[0], _Atom):
                raise FormulaSyntaxError("pred: expected a predicate name", pos)
            name = args[0].text
            if self.sig is None or name not in self.sig.predicates:
                raise FormulaError(f"unknown predicate {name!r}", args[0].pos)
            ps = self.sig.predicates[name]
            if len(args) - 1 != len(ps.arg_sorts):
                raise FormulaError(
                    f"predicate {name} takes {len(ps.arg_sorts)} argument(s), got {len(args) - 1}", pos
                )
            terms = tuple(self.term(a, s) for a, s in zip(args[1:], ps.arg_sorts))
            return Pred(name, terms, tuple(ps.arg_sorts), ps.range[0], ps.range[1], tuple(ps.lipschitz))
        if head in ("sup", "inf"):
            need(2)
            if not isinstance(args[0], _Atom):
                raise FormulaSyntaxError(f"{head}: expected a variable", pos)
            m = _QVAR.match(args[0].text)
            if not m:
                raise FormulaSyntaxError(f"{head}: bad variable {args[0].text!r}", args[0].pos)
            index = int(m.group(1))
            body = self.build(args[1])
            used = free_vars(body).get(index)
            sort = m.group(2)
            if sort is not None:
                if self.sig is not None and sort not in self.sig.sorts:
                    raise FormulaError(f"unknown sort {sort!r}", args[0].pos)
                if used is not None and used != sort:
                    raise FormulaError(f"sort mismatch: x{index} bound as {sort} but used as {used}", pos)
            elif used is not None:
                sort = used
            elif self.sig is not None and len(self.sig.sorts) == 1:
                sort = next(iter(self.sig.sorts))
            else:
                raise FormulaError(f"{head}: cannot infer the sort of x{index}; write x{index}:SORT", pos)
            cls = Sup if head == "sup" else Inf
            return cls(Var(index, sort), body)
        if head == "bmphi":
            need(4)
            sort = self.emb_sort(pos)
            self.emb_pred(EMB_P, 3, pos)
            r = self.number(args[0])
            if r <= 0:
                raise FormulaError(f"bmphi: r must be positive, got {r}", pos)
            x, y, z = (self.term(a, sort) for a in args[1:])
            return EmbPhi(r, x, y, z)
        if head == "bmpsi":
            need(4)
            sort = self.emb_sort(pos)
            r = self.number(args[0])
            if r <= 0:
                raise FormulaError(f"bmpsi: r must be positive, got {r}", pos)
            if not isinstance(args[1], _Atom):
                raise FormulaSyntaxError("bmpsi: expected a predicate name", pos)
            self.emb_pred(args[1].text, 2, args[1].pos)
            return EmbPsi(r, args[1].text, self.term(args[2], sort), self.term(args[3], sort))
        if head == "clamp" and len(args) == 3 and isinstance(args[0], _List):
            inner = args[0].items
            if inner and isinstance(inner[0], _Atom) and inner[0].text == "log":
                if len(inner) != 2:
                    raise FormulaSyntaxError("log: expected 1 operand", args[0].pos)
                lo, hi = self.number(args[1]), self.number(args[2])
                return self._conn("cliplog", (self.build(inner[1]),), (lo, hi), pos)
        if head == "log":
            raise FormulaError("connective not in catalog: log (write (clamp (log F) a b))", pos)
        if head in CATALOG:
            spec = CATALOG[head]
            need(spec.arity + spec.nparams)
            if head == "scale":
                return self._conn(head, (self.build(args[1]),), (self.number(args[0]),), pos)
            if head in ("clamp", "cliplog"):
                lo, hi = self.number(args[1]), self.number(args[2])
                return self._conn(head, (self.build(args[0]),), (lo, hi), pos)
            return self._conn(head, tuple(self.build(a) for a in args), (), pos)
        raise FormulaError(f"connective not in catalog: {head}", pos)

    def _conn(self, op: str, args: tuple[Formula, ...], params: tuple[float, ...], pos: int) -> Conn:
        try:
            out = Conn(op, args, params)
        except FormulaError as e:
            raise FormulaError(str(e), pos) from None
        try:
            free_vars(out)
        except FormulaError as e:
            raise FormulaError(str(e), pos) from None
        return out


def parse(text: str, signature: Signature | None = None) -> Formula:
    """Parse DSL text; predicates, sorts and constants resolve against `signature`."""
    out = _Builder(signature).build(_read(text))
    free_vars(out)
    return out


def _num(v: float) -> str:
    return repr(float(v))


def to_text(f: Formula) -> str:
    if isinstance(f, Const):
        return f"(const {_num(f.value)})"
    if isinstance(f, Dist):
        return f"(d {f.sort} {f.a.text} {f.b.text})"
    if isinstance(f, Pred):
        return f"(pred {f.name} {' '.join(t.text for t in f.args)})"
    if isinstance(f, Sup):
        return f"(sup {f.var.text}:{f.var.sort} {to_text(f.body)})"
    if isinstance(f, Inf):
        return f"(inf {f.var.text}:{f.var.sort} {to_text(f.body)})"
    if isinstance(f, EmbPhi):
        return f"(bmphi {_num(f.r)} {f.x.text} {f.y.text} {f.z.text})"
    if isinstance(f, EmbPsi):
        return f"(bmpsi {_num(f.r)} {f.spred} {f.x.text} {f.y.text})"
    if isinstance(f, Conn):
        if f.op == "scale":
            return f"(scale {_num(f.params[0])} {to_text(f.args[0])})"
        if f.op in ("clamp", "cliplog"):
            return f"({f.op} {to_text(f.args[0])} {_num(f.params[0])} {_num(f.params[1])})"
        return f"({f.op} {' '.join(to_text(a) for a in f.args)})"
    raise FormulaError(f"not a formula node: {type(f).__name__}")


# ──────────────────────────────────────────────────────────────────────────────
# Evaluation (vectorized: each free variable may own an array axis)
# ──────────────────────────────────────────────────────────────────────────────

_Env = dict[int, tuple[str, int]]  # index → ("axis", k) | ("point", idx)


def _term_index(t: Term, s: MetricStructure, env: _Env, ndim: int) -> np.ndarray:
    if isinstance(t, PointConst):
        try:
            sort, idx = s.constant(t.name)
        except CorrelaError as e:
            raise EvaluationError(str(e)) from None
        if sort != t.sort:
            raise EvaluationError(f"constant @{t.name} is in sort {sort}, expected {t.sort}")
        return np.asarray(idx)
    if t.index not in env:
        raise EvaluationError(f"unassigned free variable x{t.index}")
    kind, v = env[t.index]
    if kind == "point":
        return np.asarray(v)
    n = s.sort(t.sort).size
    shape = [1] * ndim
    shape[v] = n
    return np.arange(n).reshape(shape)


def _emb_norms(s: MetricStructure, sort: str) -> tuple[np.ndarray, int]:
    try:
        csort, inf_idx = s.constant(INF_CONST)
    except CorrelaError:
        raise EvaluationError("structure has no constant 'inf'") from None
    if csort != sort:
        raise EvaluationError(f"constant 'inf' is in sort {csort}, expected {sort}")
    dinf = s.sort(sort).metric[:, inf_idx]
    with np.errstate(divide="ignore"):
        nrm = 1.0 / dinf - 1.0
    nrm = np.array(nrm, dtype=float)
    nrm[inf_idx] = np.inf
    return nrm, inf_idx


def _bm_value(r: float, maxnorm: np.ndarray, theta: np.ndarray) -> np.ndarray:
    theta = np.clip(theta, 0.0, np.nextafter(1.0, 0.0))
    t = theta / (1.0 - theta)
    with np.errstate(divide="ignore", invalid="ignore"):
        cutoff = np.clip(r - np.log(maxnorm) / (r * r), 0.0, 1.0)
        body = np.clip((2.0 - 1.0 / r) * np.log(t), -r, r)
    return cutoff * body


def _ev(f: Formula, s: MetricStructure, env: _Env, ndim: int) -> np.ndarray:
    if isinstance(f, Const):
        return np.asarray(f.value)
    if isinstance(f, Dist):
        if not s.has_sort(f.sort):
            raise EvaluationError(f"structure has no sort {f.sort!r}")
        m = s.sort(f.sort).metric
        return m[_term_index(f.a, s, env, ndim), _term_index(f.b, s, env, ndim)]
    if isinstance(f, Pred):
        if not s.has_predicate(f.name):
            raise EvaluationError(f"structure has no predicate {f.name!r}")
        p = s.predicate(f.name)
        if p.arg_sorts != f.arg_sorts:
            raise EvaluationError(f"predicate {f.name}: arg sorts {p.arg_sorts} != {f.arg_sorts}")
        return p.values[tuple(_term_index(t, s, env, ndim) for t in f.args)]
    if isinstance(f, Conn):
        spec = CATALOG[f.op]
        return np.asarray(spec.fn([_ev(a, s, env, ndim) for a in f.args], f.params), dtype=float)
    if isinstance(f, (Sup, Inf)):
        if not s.has_sort(f.var.sort):
            raise EvaluationError(f"structure has no sort {f.var.sort!r}")
        if s.sort(f.var.sort).size == 0:
            raise EvaluationError(f"quantifier over empty sort {f.var.sort}")
        inner = dict(env)
        inner[f.var.index] = ("axis", ndim)
        val = np.asarray(_ev(f.body, s, inner, ndim + 1), dtype=float)
        if val.ndim == 0:
            return val
        return val.max(axis=ndim) if isinstance(f, Sup) else val.min(axis=ndim)
    if isinstance(f, EmbPhi):
        sort = f.x.sort
        nrm, inf_idx = _emb_norms(s, sort)
        ix, iy, iz = (_term_index(t, s, env, ndim) for t in (f.x, f.y, f.z))
        mx = np.maximum(np.maximum(nrm[ix], nrm[iy]), nrm[iz])
        pv = s.predicate(EMB_P).values[ix, iy, iz]
        with np.errstate(invalid="ignore"):
            val = _bm_value(f.r, mx, pv * (1.0 + mx))
        any_inf = (ix == inf_idx) | (iy == inf_idx) | (iz == inf_idx)
        return np.where(any_inf, 0.0, val)
    if isinstance(f, EmbPsi):
        sort = f.x.sort
        nrm, inf_idx = _emb_norms(s, sort)
        if not s.has_predicate(f.spred):
            raise EvaluationError(f"structure has no predicate {f.spred!r}")
        ix, iy = (_term_index(t, s, env, ndim) for t in (f.x, f.y))
        mx = np.maximum(nrm[ix], nrm[iy])
        sv = s.predicate(f.spred).values[ix, iy]
        with np.errstate(invalid="ignore"):
            val = _bm_value(f.r, mx, sv * (1.0 + mx))
        any_inf = (ix == inf_idx) | (iy == inf_idx)
        return np.where(any_inf, 0.0, val)
    raise EvaluationError(f"not a formula node: {type(f).__name__}")


def tabulate(f: Formula, s: MetricStructure, var_order: Sequence[int] | None = None) -> np.ndarray:
    """
    Values of `f` for every assignment of the listed variables (default: the free
    variables by index), one array axis per variable in `var_order`.
    """
    fv = free_vars(f)
    order = list(fv) if var_order is None else [int(i) for i in var_order]
    missing = [i for i in fv if i not in order]
    if missing:
        raise EvaluationError(f"unassigned free variable x{missing[0]}")
    sorts = [fv.get(i) for i in order]
    if any(so is None for so in sorts):
        raise EvaluationError("var_order lists a variable that is not free in the formula")
    env: _Env = {i: ("axis", k) for k, i in enumerate(order)}
    shape = tuple(s.sort(so).size for so in sorts)  # type: ignore[arg-type]
    val = np.asarray(_ev(f, s, env, len(order)), dtype=float)
    return np.array(np.broadcast_to(val, shape), dtype=float)


def evaluate(f: Formula, s: MetricStructure, assignment: Mapping[Any, Any]) -> float:
    """
    Exact value under an assignment. Keys are variable indices or names ("x0");
    values are point labels, point indices, or (sort, index) pairs.
    """
    fv = free_vars(f)
    env: _Env = {}
    for key, val in assignment.items():
        i = _var_key(key)
        if i not in fv:
            continue
        sort = fv[i]
        if not s.has_sort(sort):
            raise EvaluationError(f"structure has no sort {sort!r}")
        env[i] = ("point", _point_index(s, sort, i, val))
    for i in fv:
        if i not in env:
            raise EvaluationError(f"unassigned free variable x{i}")
    return float(_ev(f, s, env, 0))


def _var_key(key: Any) -> int:
    if isinstance(key, (int, np.integer)) and not isinstance(key, bool):
        return int(key)
    m = _VAR.match(str(key))
    if not m:
        raise EvaluationError(f"bad variable name {key!r}")
    return int(m.group(1))


def _point_index(s: MetricStructure, sort: str, var: int, val: Any) -> int:
    so = s.sort(sort)
    if isinstance(val, tuple) and len(val) == 2:
        vsort, val = val
        if vsort != sort:
            raise EvaluationError(f"x{var} is in sort {sort}, assigned a point of {vsort}")
    if isinstance(val, (int, np.integer)) and not isinstance(val, bool):
        if not 0 <= int(val) < so.size:
            raise EvaluationError(f"x{var}: point index {val} out of range for sort {sort}")
        return int(val)
    if str(val) not in so.points:
        raise EvaluationError(f"x{var}: no point {val!r} in sort {sort}")
    return so.points.index(str(val))


# ──────────────────────────────────────────────────────────────────────────────
# Modulus inference
# ──────────────────────────────────────────────────────────────────────────────

@dataclass(frozen=True, slots=True)
class ModulusBound:
    lipschitz: dict[int, float]
    range: tuple[float, float]

    def constant(self, index: int) -> float:
        return self.lipschitz.get(index, 0.0)


def infer_modulus(f: Formula) -> ModulusBound:
    """Sound per-variable Lipschitz bounds and a value interval, by structural recursion."""
    if isinstance(f, Const):
        return ModulusBound({}, (f.value, f.value))
    if isinstance(f, Dist):
        if isinstance(f.a, Var) and isinstance(f.b, Var) and f.a.index == f.b.index:
            return ModulusBound({f.a.index: 0.0}, (0.0, 0.0))  # d(x,x) = 0
        lips: dict[int, float] = {}
        for t in (f.a, f.b):
            if isinstance(t, Var):
                lips[t.index] = lips.get(t.index, 0.0) + 1.0
        return ModulusBound(lips, (0.0, f.bound))
    if isinstance(f, Pred):
        lips = {}
        for t, lip in zip(f.args, f.lipschitz):
            if isinstance(t, Var):
                lips[t.index] = lips.get(t.index, 0.0) + lip
        return ModulusBound(lips, (f.lo, f.hi))
    if isinstance(f, (EmbPhi, EmbPsi)):
        terms = (f.x, f.y, f.z) if isinstance(f, EmbPhi) else (f.x, f.y)
        return ModulusBound(
            {t.index: math.inf for t in terms if isinstance(t, Var)}, (-f.r, f.r)
        )
    if isinstance(f, (Sup, Inf)):
        inner = infer_modulus(f.body)
        lips = {i: v for i, v in inner.lipschitz.items() if i != f.var.index}
        return ModulusBound(lips, inner.range)
    if isinstance(f, Conn):
        spec = CATALOG[f.op]
        parts = [infer_modulus(a) for a in f.args]
        k = spec.factor(f.params)
        idx = sorted(set().union(*(p.lipschitz.keys() for p in parts)))
        lips = {}
        for i in idx:
            vals = [p.lipschitz.get(i, 0.0) for p in parts]
            combined = max(vals) if spec.kind == "max" else sum(vals)
            lips[i] = 0.0 if combined == 0 else k * combined
        rng = spec.interval([p.range for p in parts], f.params)
        return ModulusBound(lips, (float(rng[0]), float(rng[1])))
    raise FormulaError(f"not a formula node: {type(f).__name__}")


@dataclass(frozen=True, slots=True)
class WeakModulus:
    """
    Per-variable-index weight caps; indices past the end reuse the last weight.
    `shift_increasing` requires the weights to be nondecreasing in the index.
    """

    weights: tuple[float, ...]
    shift_increasing: bool = False

    def __post_init__(self) -> None:
        w = tuple(float(x) for x in self.weights)
        if not w:
            raise CorrelaError("weak modulus needs at least one weight")
        if any(x < 0 or x != x for x in w):
            raise CorrelaError(f"weak modulus weights must be nonnegative: {w}")
        if self.shift_increasing and any(a > b for a, b in zip(w, w[1:])):
            raise CorrelaError(f"shift-increasing weights must be nondecreasing: {w}")
        object.__setattr__(self, "weights", w)

    def weight(self, index: int) -> float:
        return self.weights[min(index, len(self.weights) - 1)]

    @classmethod
    def ones(cls) -> "WeakModulus":
        return cls((1.0,), True)

    def as_dict(self) -> dict[str, Any]:
        return {"weights": list(self.weights), "shift_increasing": self.shift_increasing}


def respects_modulus(f: Formula, omega: WeakModulus) -> bool:
    mod = infer_modulus(f)
    return all(lip <= omega.weight(i) + TOL for i, lip in mod.lipschitz.items())
