# app/core/distsys.py
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from app.core import config
from app.core.config import TOL
from app.core.errors import CorrelaError, FormulaError, SignatureError
from app.core.formula import (
    Conn,
    Dist,
    EmbPhi,
    EmbPsi,
    Formula,
    Inf,
    Pred,
    Sup,
    Var,
    absdiff,
    add,
    cliplog,
    constants_used,
    free_vars,
    max_of,
    parse,
    rename_vars,
    scale,
    tabulate,
    to_text,
)
from app.core.mstruct import Correlation, MetricStructure, Signature
from app.models.files import SystemFile

logger = logging.getLogger(__name__)

BUILTINS = ("gh", "lip", "kadets", "fghk", "eghk", "iu", "bm")

DEFAULT_TRUNCATION: dict[str, dict[str, Any]] = {
    "gh": {},
    "lip": {"r_max": 4},
    "kadets": {"k_max": 3},
    "fghk": {"index_max": None},
    "eghk": {},
    "iu": {"n_max": 16, "predicate": "U"},
    "bm": {"r_max": 4},
}

_ALIASES = {"lipschitz": "lip", "banach-mazur": "bm", "banach_mazur": "bm"}


# ──────────────────────────────────────────────────────────────────────────────
# DistortionSystem
# ──────────────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class DistortionSystem:
    """Named finite generator list plus the truncation that produced it."""

    name: str
    generators: tuple[Formula, ...]
    truncation: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        seen: set[Formula] = set()
        gens: list[Formula] = []
        for g in self.generators:
            if g not in seen:
                seen.add(g)
                gens.append(g)
        object.__setattr__(self, "generators", tuple(gens))
        object.__setattr__(self, "truncation", dict(self.truncation))

    def extended(self, extra: Iterable[Formula], *, name: str | None = None) -> "DistortionSystem":
        return DistortionSystem(name or self.name, self.generators + tuple(extra), self.truncation)

    def truncation_note(self) -> dict[str, Any]:
        return {"system": self.name, **self.truncation}

    def texts(self) -> list[str]:
        return [to_text(g) for g in self.generators]


def check_generators(sys: DistortionSystem, sig: Signature) -> None:
    """Every generator must mention only sorts, predicates and constants of `sig`."""
    for k, g in enumerate(sys.generators):
        try:
            _check_formula(g, sig)
        except FormulaError as e:
            raise SignatureError(f"generator {k} {to_text(g)}: {e}") from None


def _check_formula(f: Formula, sig: Signature) -> None:
    for i, sort in free_vars(f).items():
        if sort not in sig.sorts:
            raise FormulaError(f"x{i} has unknown sort {sort!r}")
    for c in constants_used(f):
        if c not in sig.constants:
            raise FormulaError(f"unknown constant {c!r}")
    stack: list[Any] = [f]
    while stack:
        node = stack.pop()
        if isinstance(node, Dist) and node.sort not in sig.sorts:
            raise FormulaError(f"unknown sort {node.sort!r}")
        elif isinstance(node, Pred):
            ps = sig.predicates.get(node.name)
            if ps is None:
                raise FormulaError(f"unknown predicate {node.name!r}")
            if tuple(ps.arg_sorts) != node.arg_sorts:
                raise FormulaError(f"predicate {node.name}: arg sorts {tuple(ps.arg_sorts)} != {node.arg_sorts}")
        elif isinstance(node, EmbPsi) and node.spred not in sig.predicates:
            raise FormulaError(f"unknown predicate {node.spred!r}")
        elif isinstance(node, EmbPhi) and "P" not in sig.predicates:
            raise FormulaError("unknown predicate 'P'")
        if isinstance(node, Conn):
            stack.extend(node.args)
        elif isinstance(node, (Sup, Inf)):
            stack.append(node.body)


def joint_signature(m: MetricStructure, n: MetricStructure) -> Signature:
    return m.signature.merge(n.signature)


# ──────────────────────────────────────────────────────────────────────────────
# Distortion
# ──────────────────────────────────────────────────────────────────────────────

@dataclass(frozen=True, slots=True)
class GeneratorTable:
    """A generator tabulated on both sides; one axis per free variable (by index)."""

    index: int
    formula: Formula
    var_sorts: tuple[str, ...]
    left: np.ndarray
    right: np.ndarray


def generator_tables(sys: DistortionSystem, m: MetricStructure, n: MetricStructure) -> list[GeneratorTable]:
    sig = joint_signature(m, n)
    check_generators(sys, sig)
    out: list[GeneratorTable] = []
    for k, g in enumerate(sys.generators):
        fv = free_vars(g)
        out.append(GeneratorTable(k, g, tuple(fv.values()), tabulate(g, m), tabulate(g, n)))
    return out


@dataclass(frozen=True, slots=True)
class Distortion:
    """Distortion value with its lexicographically least witness."""

    value: float
    generator: int | None = None
    var_sorts: tuple[str, ...] = ()
    pairs: tuple[tuple[int, int], ...] = ()

    def as_dict(self, c: Correlation | None = None) -> dict[str, Any]:
        if self.generator is None:
            return {"value": self.value, "witness": None}
        if c is None:
            assignment: list[Any] = [[s, i, j] for s, (i, j) in zip(self.var_sorts, self.pairs)]
        else:
            assignment = [
                [s, c.left.sort(s).points[i], c.right.sort(s).points[j]]
                for s, (i, j) in zip(self.var_sorts, self.pairs)
            ]
        return {"value": self.value, "witness": {"generator": self.generator, "assignment": assignment}}


def table_distortion(t: GeneratorTable, relation: Mapping[str, np.ndarray]) -> Distortion:
    """
    sup |φ^M(m̄) − φ^N(n̄)| over tuples whose components are related pairwise.
    An empty relation in a needed sort gives the empty sup 0.
    """
    if not t.var_sorts:
        return Distortion(float(abs(t.left - t.right)), t.index, (), ())
    pairs = [np.argwhere(relation[s]) for s in t.var_sorts]
    if any(p.shape[0] == 0 for p in pairs):
        return Distortion(0.0)
    rows = [p[:, 0] for p in pairs]
    cols = [p[:, 1] for p in pairs]
    gap = np.abs(t.left[np.ix_(*rows)] - t.right[np.ix_(*cols)])
    flat = int(np.argmax(gap))
    where = np.unravel_index(flat, gap.shape)
    witness = tuple((int(rows[v][where[v]]), int(cols[v][where[v]])) for v in range(len(pairs)))
    return Distortion(float(gap.flat[flat]), t.index, t.var_sorts, witness)


def distortion_from_tables(tables: Sequence[GeneratorTable], relation: Mapping[str, np.ndarray]) -> Distortion:
    best = Distortion(0.0)
    for t in tables:
        d = table_distortion(t, relation)
        if d.generator is not None and (best.generator is None or d.value > best.value):
            best = d
    return best


def distortion(sys: DistortionSystem, c: Correlation) -> Distortion:
    """dis_Δ(c) computed on the generators; ties go to the first generator and least tuple."""
    tables = generator_tables(sys, c.left, c.right)
    return distortion_from_tables(tables, c.relation)


# ──────────────────────────────────────────────────────────────────────────────
# Builtin families
# ──────────────────────────────────────────────────────────────────────────────

def _x(i: int, sort: str) -> Var:
    return Var(i, sort)


def _atom(name: str, sig: Signature, offset: int = 0) -> Pred:
    ps = sig.predicates[name]
    args = tuple(_x(offset + i, s) for i, s in enumerate(ps.arg_sorts))
    return Pred(name, args, tuple(ps.arg_sorts), ps.range[0], ps.range[1], tuple(ps.lipschitz))


def _dist(sort: str, sig: Signature, a: int = 0, b: int = 1) -> Dist:
    return Dist(sort, _x(a, sort), _x(b, sort), float(sig.sorts[sort]))


def _gh(sig: Signature) -> list[Formula]:
    return [scale(0.5, _dist(s, sig)) for s in sig.sorts]


def _lip(sig: Signature, r_max: int) -> list[Formula]:
    if r_max < 1:
        raise CorrelaError(f"lip: r_max must be >= 1, got {r_max}")
    return [cliplog(_dist(s, sig), -float(r), float(r)) for r in range(1, r_max + 1) for s in sig.sorts]


def _kadets(sig: Signature) -> list[Formula]:
    names = [p for p in sig.predicates if p.startswith("K[")]
    if not names:
        raise SignatureError("kadets needs K[...] norm predicates (build the structure with kadets_structure)")
    return [_atom(p, sig) for p in names]


def _weight(lo: float, hi: float, i: int) -> float:
    return 1.0 / (2.0**i * (1.0 + max(abs(lo), abs(hi))))


def fghk_weights(sig: Signature) -> list[tuple[str, float]]:
    """(atomic name, weight 1/(2^i r_i)); predicates in declaration order, then one metric per sort."""
    atoms: list[tuple[str, float, float]] = [(p, *sig.predicates[p].range) for p in sig.predicates]
    atoms += [(f"d:{s}", 0.0, float(sig.sorts[s])) for s in sig.sorts]
    return [(name, _weight(lo, hi, i)) for i, (name, lo, hi) in enumerate(atoms)]


def _fghk(sig: Signature, index_max: int | None) -> list[Formula]:
    out: list[Formula] = []
    for i, (name, w) in enumerate(fghk_weights(sig)):
        if index_max is not None and i >= index_max:
            break
        atom: Formula = _dist(name[2:], sig) if name.startswith("d:") else _atom(name, sig)
        out.append(scale(w, atom))
    return out


def chi(atom: Formula, sig: Signature | None = None) -> Formula:
    """
    χ_φ(x̄) = inf_ȳ φ(ȳ) + max_i d(x_i, y_i). The variables of φ move to x_n..x_{2n-1}
    and are bound; x_0..x_{n-1} stay free.
    """
    fv = free_vars(atom)
    n = len(fv)
    idx = list(fv)
    shifted = rename_vars(atom, {i: n + k for k, i in enumerate(idx)})
    sorts = list(fv.values())
    near: Formula | None = None
    for k, sort in enumerate(sorts):
        bound = float(sig.sorts[sort]) if sig is not None else math.inf
        term = Dist(sort, Var(k, sort), Var(n + k, sort), bound)
        near = term if near is None else max_of(near, term)
    body: Formula = shifted if near is None else add(shifted, near)
    for k in reversed(range(n)):
        body = Inf(Var(n + k, sorts[k]), body)
    return body


def _eghk(sig: Signature) -> list[Formula]:
    atoms: list[Formula] = [_atom(p, sig) for p in sig.predicates]
    atoms += [_dist(s, sig) for s in sig.sorts]
    return [chi(a, sig) for a in atoms]


def _iu(sig: Signature, n_max: int, pred: str) -> list[Formula]:
    ps = sig.predicates.get(pred)
    if ps is None or len(ps.arg_sorts) != 1:
        raise SignatureError(f"iu needs a unary predicate {pred!r}")
    if ps.range[0] < -TOL or ps.range[1] > 1 + TOL:
        raise SignatureError(f"iu: {pred} must be [0,1]-valued, declared range {ps.range}")
    if ps.lipschitz[0] > 1 + TOL:
        raise SignatureError(f"iu: {pred} must be 1-Lipschitz, declared {ps.lipschitz[0]}")
    if n_max < 1:
        raise CorrelaError(f"iu: n_max must be >= 1, got {n_max}")
    u = _atom(pred, sig)
    return [*_gh(sig), *(scale(float(n), u) for n in range(1, n_max + 1))]


def builtin(name: str, signature: Signature, truncation: Mapping[str, Any] | None = None) -> DistortionSystem:
    """The named family's generator list under the requested truncation."""
    key = _ALIASES.get(name.strip().lower(), name.strip().lower())
    if key not in BUILTINS:
        raise CorrelaError(f"unknown system {name!r}; expected one of {', '.join(BUILTINS)}")
    trunc = {**DEFAULT_TRUNCATION[key], **{k: v for k, v in (truncation or {}).items() if v is not None}}
    if key == "gh":
        gens = _gh(signature)
    elif key == "lip":
        gens = _lip(signature, int(trunc["r_max"]))
    elif key == "kadets":
        gens = _kadets(signature)
    elif key == "fghk":
        im = trunc.get("index_max")
        gens = _fghk(signature, None if im is None else int(im))
    elif key == "eghk":
        gens = _eghk(signature)
    elif key == "iu":
        gens = _iu(signature, int(trunc["n_max"]), str(trunc["predicate"]))
    else:
        from app.core.embound import bm_system_for

        return bm_system_for(signature, trunc)
    sys = DistortionSystem(key, tuple(gens), trunc)
    logger.debug("builtin %s: %d generator(s), truncation %s", key, len(sys.generators), trunc)
    return sys


def system_from_file(spec: SystemFile, signature: Signature) -> DistortionSystem:
    gens: list[Formula] = []
    trunc: dict[str, Any] = dict(spec.truncation)
    name = spec.name
    if spec.builtin:
        base = builtin(spec.builtin, signature, spec.truncation)
        gens.extend(base.generators)
        trunc = dict(base.truncation)
        if name == "custom":
            name = base.name
    for text in spec.generators:
        gens.append(parse(text, signature))
    if not gens:
        raise CorrelaError("system file names no builtin and no generators")
    sys = DistortionSystem(name, tuple(gens), trunc)
    check_generators(sys, signature)
    return sys


# ──────────────────────────────────────────────────────────────────────────────
# Atomic completeness (finite-structure proxy)
# ──────────────────────────────────────────────────────────────────────────────

@dataclass(frozen=True, slots=True)
class AtomicReport:
    ok: bool
    counterexample: tuple[tuple[str, ...], tuple[str, ...]] | None = None
    atomic: str | None = None
    tuples_checked: int = 0
    max_length: int = 0
    truncated: bool = False

    def as_dict(self) -> dict[str, Any]:
        return {
            "ok": self.ok,
            "counterexample": None if self.counterexample is None else [list(t) for t in self.counterexample],
            "atomic": self.atomic,
            "tuples_checked": self.tuples_checked,
            "max_length": self.max_length,
            "truncated": self.truncated,
        }


def _instances(var_sorts: Sequence[str], pattern: Sequence[str]) -> list[tuple[int, ...]]:
    choices = [[p for p, ps in enumerate(pattern) if ps == s] for s in var_sorts]
    return [tuple(c) for c in itertools.product(*choices)]


def _columns(
    tables: Sequence[tuple[str, tuple[str, ...], np.ndarray]],
    pattern: Sequence[str],
    grid: Sequence[np.ndarray],
    count: int,
) -> tuple[np.ndarray, list[str]]:
    cols: list[np.ndarray] = []
    names: list[str] = []
    for label, var_sorts, tab in tables:
        if not var_sorts:
            cols.append(np.full(count, float(tab)))
            names.append(label)
            continue
        for inst in _instances(var_sorts, pattern):
            cols.append(tab[tuple(grid[p] for p in inst)])
            names.append(f"{label}@{inst}")
    if not cols:
        return np.zeros((count, 0)), names
    return np.stack(cols, axis=1), names


def check_atomic_completeness(sys: DistortionSystem, s: MetricStructure) -> AtomicReport:
    """
    No two tuples (length ≤ 2·max arity) may agree on every generator instance while
    disagreeing on an atomic instance. Generator variables map onto tuple positions by
    any sort-respecting map. A scan stopped by CORRELA_ATOMIC_MAX_TUPLES is reported
    truncated and not ok, since the longer tuples were never compared.
    """
    check_generators(sys, s.signature)
    arity = max([2] + [p.arity for p in s.predicates])
    max_len = 2 * arity
    gen_tabs = [
        (f"g{k}", tuple(free_vars(g).values()), tabulate(g, s)) for k, g in enumerate(sys.generators)
    ]
    atom_tabs: list[tuple[str, tuple[str, ...], np.ndarray]] = [
        (p.name, p.arg_sorts, p.values) for p in s.predicates
    ]
    atom_tabs += [(f"d:{so.name}", (so.name, so.name), so.metric) for so in s.sorts]

    cap = config.atomic_max_tuples()
    checked = 0
    truncated = False
    sort_names = [so.name for so in s.sorts]
    for length in range(1, max_len + 1):
        for pattern in itertools.product(sort_names, repeat=length):
            sizes = [s.sort(p).size for p in pattern]
            count = int(np.prod(sizes))
            if checked + count > cap:
                truncated = True
                logger.info("atomic completeness: tuple cap %d reached at length %d", cap, length)
                return AtomicReport(False, None, None, checked, length - 1, truncated)
            grid = [g.ravel() for g in np.indices(sizes)]
            gen, _ = _columns(gen_tabs, pattern, grid, count)
            atom, atom_names = _columns(atom_tabs, pattern, grid, count)
            checked += count
            hit = _first_collision(gen, atom)
            if hit is not None:
                a, b, col = hit
                labels = [s.sort(p).points for p in pattern]
                ta = tuple(labels[k][grid[k][a]] for k in range(length))
                tb = tuple(labels[k][grid[k][b]] for k in range(length))
                return AtomicReport(False, (ta, tb), atom_names[col], checked, length, truncated)
    return AtomicReport(True, None, None, checked, max_len, truncated)


def _first_collision(gen: np.ndarray, atom: np.ndarray) -> tuple[int, int, int] | None:
    if atom.shape[1] == 0 or gen.shape[0] < 2:
        return None
    keys = np.round(gen / TOL).astype(np.int64) if gen.shape[1] else np.zeros((gen.shape[0], 0), np.int64)
    _, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    groups = int(inverse.max()) + 1
    lo = np.full((groups, atom.shape[1]), np.inf)
    hi = np.full((groups, atom.shape[1]), -np.inf)
    np.minimum.at(lo, inverse, atom)
    np.maximum.at(hi, inverse, atom)
    bad = np.argwhere(hi - lo > TOL)
    if bad.size == 0:
        return None
    # earliest tuple involved in any disagreement
    best: tuple[int, int, int] | None = None
    for grp, col in bad:
        members = np.flatnonzero(inverse == grp)
        vals = atom[members, col]
        first = int(members[0])
        other = int(members[np.flatnonzero(np.abs(vals - vals[0]) > TOL)[0]])
        cand = (first, other, int(col))
        if best is None or cand[:2] < best[:2]:
            best = cand
    return best


# ──────────────────────────────────────────────────────────────────────────────
# Functionality witnesses
# ──────────────────────────────────────────────────────────────────────────────

def witness_formula(phi: Formula) -> Formula:
    """χ_φ(x,y) = ½|φ(x,y) − φ(x,x)|; vanishes on the diagonal."""
    fv = list(free_vars(phi))
    if len(fv) != 2:
        raise FormulaError(f"functionality witness needs a binary formula, got {len(fv)} free variable(s)")
    a, b = fv
    return scale(0.5, absdiff(phi, rename_vars(phi, {b: a})))


@dataclass(frozen=True, slots=True)
class WitnessReport:
    ok: bool
    used_chi: bool
    structure: int | None = None
    pair: tuple[str, str] | None = None
    value: float | None = None
    distance: float | None = None
    reason: str | None = None

    def as_dict(self) -> dict[str, Any]:
        return {
            "ok": self.ok,
            "used_chi": self.used_chi,
            "structure": self.structure,
            "pair": None if self.pair is None else list(self.pair),
            "value": self.value,
            "distance": self.distance,
            "reason": self.reason,
        }


def functionality_witness_check(
    sys: DistortionSystem,
    phi: Formula,
    eps: float,
    delta: float,
    structures: Sequence[MetricStructure],
) -> WitnessReport:
    """
    On each structure: the witness vanishes on the diagonal and witness(a,b) < eps
    implies d(a,b) < delta. φ must be one of the system's generators; one that does
    not vanish on the diagonal is replaced by χ_φ.
    """
    fv = free_vars(phi)
    if len(fv) != 2 or len(set(fv.values())) != 1:
        raise FormulaError("functionality witness needs a binary formula over one sort")
    if phi not in sys.generators:
        raise FormulaError(f"functionality witness: formula is not a generator of {sys.name}")
    sort = next(iter(fv.values()))
    used_chi = False
    for k, s in enumerate(structures):
        tab = tabulate(phi, s)
        if np.any(np.abs(np.diag(tab)) > TOL):
            used_chi = True
    w = witness_formula(phi) if used_chi else phi
    for k, s in enumerate(structures):
        tab = tabulate(w, s)
        so = s.sort(sort)
        diag = np.abs(np.diag(tab)) > TOL
        if diag.any():
            i = int(np.flatnonzero(diag)[0])
            return WitnessReport(False, used_chi, k, (so.points[i], so.points[i]), float(tab[i, i]), 0.0, "diagonal")
        bad = (tab < eps) & (so.metric >= delta)
        if bad.any():
            i, j = map(int, np.argwhere(bad)[0])
            return WitnessReport(
                False, used_chi, k, (so.points[i], so.points[j]), float(tab[i, j]), float(so.metric[i, j]), "implication"
            )
    return WitnessReport(True, used_chi)
