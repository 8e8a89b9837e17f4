# app/core/mstruct.py
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from app.core.config import TOL
from app.core.errors import CorrelationError, SignatureError, StructureError
from app.core.jsonio import seal_of
from app.models.files import CorrelationFile, PredicateSpec, SortSpec, StructureFile

logger = logging.getLogger(__name__)

# A point is addressed as (sort name, index into that sort's point list).
PointRef = tuple[str, int]


def _frozen_array(a: Any, *, dtype: Any = float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.flags.writeable = False
    return arr


# ──────────────────────────────────────────────────────────────────────────────
# Domain types
# ──────────────────────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class Sort:
    """One sort: ordered point labels, dense metric, diameter bound."""

    name: str
    points: tuple[str, ...]
    metric: np.ndarray
    diameter_bound: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "points", tuple(str(p) for p in self.points))
        object.__setattr__(self, "metric", _frozen_array(self.metric))
        object.__setattr__(self, "diameter_bound", float(self.diameter_bound))

    @property
    def size(self) -> int:
        return len(self.points)

    def index(self, label: str) -> int:
        try:
            return self.points.index(str(label))
        except ValueError:
            raise StructureError(f"sort {self.name}: unknown point {label!r}") from None


@dataclass(frozen=True, eq=False)
class Predicate:
    """Real-valued predicate with a dense table indexed by point tuples."""

    name: str
    arg_sorts: tuple[str, ...]
    values: np.ndarray
    range: tuple[float, float]
    lipschitz: tuple[float, ...]
    arity: int = -1

    def __post_init__(self) -> None:
        object.__setattr__(self, "arg_sorts", tuple(self.arg_sorts))
        object.__setattr__(self, "values", _frozen_array(self.values))
        lo, hi = self.range
        object.__setattr__(self, "range", (float(lo), float(hi)))
        object.__setattr__(self, "lipschitz", tuple(float(x) for x in self.lipschitz))
        if self.arity < 0:
            object.__setattr__(self, "arity", len(self.arg_sorts))


@dataclass(frozen=True)
class PredSig:
    name: str
    arg_sorts: tuple[str, ...]
    range: tuple[float, float]
    lipschitz: tuple[float, ...]


@dataclass(frozen=True)
class Signature:
    """
    What formulas may mention: sorts (with diameter bounds), predicates (arity, arg
    sorts, syntactic range, Lipschitz bounds) and named constants (with sorts).
    """

    sorts: Mapping[str, float]
    predicates: Mapping[str, PredSig]
    constants: Mapping[str, str] = field(default_factory=dict)

    def merge(self, other: "Signature") -> "Signature":
        """
        Joint signature of two structures. Sorts, predicate shapes and constants must
        agree; diameter bounds, ranges and Lipschitz bounds are widened to cover both.
        """
        if set(self.sorts) != set(other.sorts):
            raise SignatureError(f"sorts differ: {sorted(self.sorts)} vs {sorted(other.sorts)}")
        if set(self.predicates) != set(other.predicates):
            raise SignatureError(
                f"predicates differ: {sorted(self.predicates)} vs {sorted(other.predicates)}"
            )
        if dict(self.constants) != dict(other.constants):
            raise SignatureError("constants differ")
        preds: dict[str, PredSig] = {}
        for name, a in self.predicates.items():
            b = other.predicates[name]
            if a.arg_sorts != b.arg_sorts:
                raise SignatureError(f"predicate {name}: arg sorts {a.arg_sorts} vs {b.arg_sorts}")
            preds[name] = PredSig(
                name=name,
                arg_sorts=a.arg_sorts,
                range=(min(a.range[0], b.range[0]), max(a.range[1], b.range[1])),
                lipschitz=tuple(max(x, y) for x, y in zip(a.lipschitz, b.lipschitz)),
            )
        sorts = {s: max(self.sorts[s], other.sorts[s]) for s in self.sorts}
        return Signature(sorts=sorts, predicates=preds, constants=dict(self.constants))


@dataclass(frozen=True, eq=False)
class MetricStructure:
    """
    Finite multi-sorted metric structure. Immutable; safe to share across workers.

    `issues` records shape problems found while loading; they are reported by
    `validate_structure` rather than raised.
    """

    sorts: tuple[Sort, ...]
    predicates: tuple[Predicate, ...] = ()
    constants: Mapping[str, tuple[str, str]] = field(default_factory=dict)
    name: str = ""
    issues: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "sorts", tuple(self.sorts))
        object.__setattr__(self, "predicates", tuple(self.predicates))
        object.__setattr__(self, "constants", dict(self.constants))
        names = [s.name for s in self.sorts]
        if len(set(names)) != len(names):
            raise StructureError(f"duplicate sort names in {names}")

    def sort(self, name: str) -> Sort:
        for s in self.sorts:
            if s.name == name:
                return s
        raise StructureError(f"unknown sort {name!r}")

    def has_sort(self, name: str) -> bool:
        return any(s.name == name for s in self.sorts)

    def predicate(self, name: str) -> Predicate:
        for p in self.predicates:
            if p.name == name:
                return p
        raise StructureError(f"unknown predicate {name!r}")

    def has_predicate(self, name: str) -> bool:
        return any(p.name == name for p in self.predicates)

    def constant(self, name: str) -> PointRef:
        if name not in self.constants:
            raise StructureError(f"unknown constant {name!r}")
        sort, label = self.constants[name]
        return (sort, self.sort(sort).index(label))

    def point(self, sort: str, label: str | int) -> PointRef:
        s = self.sort(sort)
        if isinstance(label, (int, np.integer)) and not isinstance(label, bool):
            if not 0 <= int(label) < s.size:
                raise StructureError(f"sort {sort}: point index {label} out of range")
            return (sort, int(label))
        return (sort, s.index(str(label)))

    def label(self, ref: PointRef) -> str:
        return self.sort(ref[0]).points[ref[1]]

    def dist(self, a: PointRef, b: PointRef) -> float:
        if a[0] != b[0]:
            raise StructureError(f"distance across sorts {a[0]} and {b[0]}")
        return float(self.sort(a[0]).metric[a[1], b[1]])

    @cached_property
    def signature(self) -> Signature:
        return Signature(
            sorts={s.name: s.diameter_bound for s in self.sorts},
            predicates={
                p.name: PredSig(p.name, p.arg_sorts, p.range, p.lipschitz) for p in self.predicates
            },
            constants={c: sort for c, (sort, _label) in self.constants.items()},
        )

    @cached_property
    def fingerprint(self) -> str:
        return seal_of(structure_to_file(self).model_dump(mode="json"))

    def describe(self) -> str:
        sizes = ", ".join(f"{s.name}:{s.size}" for s in self.sorts)
        return self.name or f"structure[{sizes}]"


def same_structure(a: MetricStructure, b: MetricStructure) -> bool:
    return a is b or a.fingerprint == b.fingerprint


# ──────────────────────────────────────────────────────────────────────────────
# Builders
# ──────────────────────────────────────────────────────────────────────────────

def metric_space(
    points: Sequence[str],
    metric: Any,
    *,
    sort: str = "S",
    diameter_bound: float | None = None,
    predicates: Iterable[Predicate] = (),
    constants: Mapping[str, tuple[str, str]] | None = None,
    name: str = "",
) -> MetricStructure:
    """Single-sorted structure; the diameter bound defaults to the actual diameter."""
    m = np.asarray(metric, dtype=float)
    bound = float(np.max(m)) if diameter_bound is None and m.size else float(diameter_bound or 0.0)
    return MetricStructure(
        sorts=(Sort(sort, tuple(points), m, bound),),
        predicates=tuple(predicates),
        constants=dict(constants or {}),
        name=name,
    )


def measure_lipschitz(values: np.ndarray, metrics: Sequence[np.ndarray]) -> tuple[float, ...]:
    """
    Tightest per-argument Lipschitz constants of a table on a finite structure,
    inflated by a relative 1e-9 so the declared bound survives rounding.
    """
    out: list[float] = []
    for i, d in enumerate(metrics):
        v = np.moveaxis(np.asarray(values, dtype=float), i, 0)
        n = v.shape[0]
        flat = v.reshape(n, -1)
        diffs = np.abs(flat[:, None, :] - flat[None, :, :]).max(axis=2) if flat.size else np.zeros((n, n))
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(d > 0, diffs / np.where(d > 0, d, 1.0), 0.0)
        best = float(ratio.max()) if ratio.size else 0.0
        out.append(best * (1 + 1e-9) + 1e-12 if best > 0 else 0.0)
    return tuple(out)


# ──────────────────────────────────────────────────────────────────────────────
# File conversion
# ──────────────────────────────────────────────────────────────────────────────

def structure_from_file(spec: StructureFile, *, name: str = "") -> MetricStructure:
    """Build a structure; shape problems become `issues` (validation reports them)."""
    issues: list[str] = []
    sorts: list[Sort] = []
    for ss in spec.sorts:
        try:
            metric = np.array(ss.metric, dtype=float)
        except (ValueError, TypeError):
            issues.append(f"sort {ss.name}: metric is not a rectangular numeric array")
            metric = np.zeros((0, 0))
        sorts.append(Sort(ss.name, tuple(ss.points), metric, ss.diameter_bound))
    preds: list[Predicate] = []
    for ps in spec.predicates:
        try:
            values = np.array(ps.values, dtype=float)
        except (ValueError, TypeError):
            issues.append(f"predicate {ps.name}: values are not a rectangular numeric array")
            values = np.zeros((0,) * max(ps.arity, 1))
        preds.append(
            Predicate(
                name=ps.name,
                arg_sorts=tuple(ps.arg_sorts),
                values=values,
                range=(float(ps.range[0]), float(ps.range[1])),
                lipschitz=tuple(ps.lipschitz),
                arity=ps.arity,
            )
        )
    return MetricStructure(
        sorts=tuple(sorts),
        predicates=tuple(preds),
        constants={k: (v[0], v[1]) for k, v in spec.constants.items()},
        name=name,
        issues=tuple(issues),
    )


def structure_to_file(s: MetricStructure) -> StructureFile:
    return StructureFile(
        sorts=[
            SortSpec(
                name=so.name,
                points=list(so.points),
                metric=so.metric.tolist(),
                diameter_bound=so.diameter_bound,
            )
            for so in s.sorts
        ],
        predicates=[
            PredicateSpec(
                name=p.name,
                arity=p.arity,
                arg_sorts=list(p.arg_sorts),
                values=p.values.tolist(),
                range=p.range,
                lipschitz=list(p.lipschitz),
            )
            for p in s.predicates
        ],
        constants={k: (v[0], v[1]) for k, v in s.constants.items()},
    )


# ──────────────────────────────────────────────────────────────────────────────
# validate_structure
# ──────────────────────────────────────────────────────────────────────────────

@dataclass(frozen=True, slots=True)
class Violation:
    """One failed invariant: where it failed, the witnessing tuple, the inequality."""

    kind: str
    where: str
    witness: tuple[str, ...]
    detail: str

    def as_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "where": self.where, "witness": list(self.witness), "detail": self.detail}


def _check_sort(so: Sort) -> list[Violation]:
    out: list[Violation] = []
    n = so.size
    m = so.metric
    name = f"sort {so.name}"
    if len(set(so.points)) != n:
        out.append(Violation("duplicate-label", name, (), "point labels are not distinct"))
    if m.ndim != 2 or m.shape != (n, n):
        out.append(
            Violation("dimension", name, (), f"metric shape {tuple(m.shape)} != ({n}, {n})")
        )
        return out
    if n == 0:
        out.append(Violation("empty-sort", name, (), "sort has no points"))
        return out
    if not np.all(np.isfinite(m)):
        i, j = map(int, np.argwhere(~np.isfinite(m))[0])
        out.append(Violation("non-finite", name, (so.points[i], so.points[j]), "metric entry is not finite"))
        return out

    labels = so.points
    asym = np.abs(m - m.T) > TOL
    if asym.any():
        i, j = map(int, np.argwhere(asym)[0])
        out.append(
            Violation("asymmetry", name, (labels[i], labels[j]), f"d({i},{j})={m[i, j]!r} != d({j},{i})={m[j, i]!r}")
        )
    diag = np.abs(np.diag(m)) > TOL
    if diag.any():
        i = int(np.argwhere(diag)[0][0])
        out.append(Violation("diagonal", name, (labels[i],), f"d({i},{i})={m[i, i]!r} != 0"))
    off = ~np.eye(n, dtype=bool)
    nonpos = off & (m <= 0)
    if nonpos.any():
        i, j = map(int, np.argwhere(nonpos)[0])
        out.append(
            Violation("separation", name, (labels[i], labels[j]), f"d({i},{j})={m[i, j]!r} is not positive")
        )
    neg = m < -TOL
    if neg.any():
        i, j = map(int, np.argwhere(neg)[0])
        out.append(Violation("negative", name, (labels[i], labels[j]), f"d({i},{j})={m[i, j]!r} < 0"))

    # d(a,c) <= d(a,b) + d(b,c)
    tri = m[:, None, :] > m[:, :, None] + m[None, :, :] + TOL
    if tri.any():
        a, b, c = map(int, np.argwhere(tri)[0])
        out.append(
            Violation(
                "triangle",
                name,
                (labels[a], labels[b], labels[c]),
                f"d({a},{c})={m[a, c]!r} > d({a},{b})+d({b},{c})={m[a, b] + m[b, c]!r}",
            )
        )
    over = m > so.diameter_bound + TOL
    if over.any():
        i, j = map(int, np.argwhere(over)[0])
        out.append(
            Violation(
                "diameter",
                name,
                (labels[i], labels[j]),
                f"d({i},{j})={m[i, j]!r} > diameter_bound={so.diameter_bound!r}",
            )
        )
    return out


def _check_predicate(s: MetricStructure, p: Predicate) -> list[Violation]:
    out: list[Violation] = []
    name = f"predicate {p.name}"
    if p.arity != len(p.arg_sorts):
        out.append(Violation("dimension", name, (), f"arity {p.arity} != len(arg_sorts) {len(p.arg_sorts)}"))
        return out
    if len(p.lipschitz) != p.arity:
        out.append(Violation("dimension", name, (), f"{len(p.lipschitz)} lipschitz bounds for arity {p.arity}"))
        return out
    sorts: list[Sort] = []
    for sn in p.arg_sorts:
        if not s.has_sort(sn):
            out.append(Violation("unknown-sort", name, (sn,), f"argument sort {sn!r} does not exist"))
            return out
        sorts.append(s.sort(sn))
    shape = tuple(so.size for so in sorts)
    if p.values.shape != shape:
        out.append(Violation("dimension", name, (), f"table shape {tuple(p.values.shape)} != {shape}"))
        return out
    if any(so.metric.shape != (so.size, so.size) for so in sorts):
        return out  # reported on the sort
    v = p.values
    lo, hi = p.range
    if lo > hi:
        out.append(Violation("range", name, (), f"range [{lo}, {hi}] is empty"))
    if not np.all(np.isfinite(v)):
        idx = tuple(int(i) for i in np.argwhere(~np.isfinite(v))[0])
        out.append(Violation("non-finite", name, _labels(sorts, idx), "table entry is not finite"))
        return out
    bad = (v < lo - TOL) | (v > hi + TOL)
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        out.append(
            Violation("range", name, _labels(sorts, idx), f"value {v[idx]!r} outside [{lo}, {hi}]")
        )
    for i, (so, lip) in enumerate(zip(sorts, p.lipschitz)):
        if lip < 0:
            out.append(Violation("lipschitz", name, (), f"argument {i}: negative bound {lip}"))
            continue
        moved = np.moveaxis(v, i, 0)
        n = moved.shape[0]
        flat = moved.reshape(n, -1)
        if flat.shape[1] == 0:
            continue
        gap = np.abs(flat[:, None, :] - flat[None, :, :])  # (n, n, rest)
        allowed = lip * so.metric[:, :, None] + TOL
        viol = gap > allowed
        if viol.any():
            x, y, r = map(int, np.argwhere(viol)[0])
            rest_shape = moved.shape[1:]
            rest = np.unravel_index(r, rest_shape) if rest_shape else ()
            full_x = list(rest)
            full_x.insert(i, x)
            full_y = list(rest)
            full_y.insert(i, y)
            out.append(
                Violation(
                    "lipschitz",
                    name,
                    _labels(sorts, tuple(full_x)) + _labels(sorts, tuple(full_y)),
                    f"argument {i}: |P(..{so.points[x]}..)-P(..{so.points[y]}..)|={gap[x, y, r]!r}"
                    f" > {lip}*d={lip * so.metric[x, y]!r}",
                )
            )
    return out


def _labels(sorts: Sequence[Sort], idx: Sequence[int]) -> tuple[str, ...]:
    return tuple(so.points[i] for so, i in zip(sorts, idx))


def validate_structure(s: MetricStructure) -> list[Violation]:
    """Every violated invariant, located; empty iff the structure is valid. Never raises."""
    out: list[Violation] = [Violation("malformed", s.describe(), (), msg) for msg in s.issues]
    for so in s.sorts:
        out.extend(_check_sort(so))
    seen: set[str] = set()
    for p in s.predicates:
        if p.name in seen:
            out.append(Violation("duplicate-predicate", f"predicate {p.name}", (), "declared twice"))
        seen.add(p.name)
        out.extend(_check_predicate(s, p))
    for cname, (sort, label) in s.constants.items():
        if not s.has_sort(sort):
            out.append(Violation("constant", f"constant {cname}", (sort,), f"sort {sort!r} does not exist"))
        elif str(label) not in s.sort(sort).points:
            out.append(Violation("constant", f"constant {cname}", (sort, str(label)), "point does not exist"))
    if out:
        logger.debug("validate %s: %d violation(s)", s.describe(), len(out))
    return out


# ──────────────────────────────────────────────────────────────────────────────
# Correlations
# ──────────────────────────────────────────────────────────────────────────────

Anchor = tuple[str, int, int]


@dataclass(frozen=True, eq=False)
class Correlation:
    """
    Relation between `left` and `right`, one boolean matrix per sort
    (left points × right points), plus pairs that must be present.
    """

    left: MetricStructure
    right: MetricStructure
    relation: Mapping[str, np.ndarray]
    anchors: tuple[Anchor, ...] = ()

    def __post_init__(self) -> None:
        left_sorts = [s.name for s in self.left.sorts]
        right_sorts = [s.name for s in self.right.sorts]
        if left_sorts != right_sorts:
            raise CorrelationError(f"sorts differ: {left_sorts} vs {right_sorts}")
        rel: dict[str, np.ndarray] = {}
        for so in self.left.sorts:
            if so.name not in self.relation:
                raise CorrelationError(f"relation missing sort {so.name!r}")
            m = np.asarray(self.relation[so.name]).astype(bool)
            want = (so.size, self.right.sort(so.name).size)
            if m.shape != want:
                raise CorrelationError(f"sort {so.name}: relation shape {m.shape} != {want}")
            m = m.copy()
            m.flags.writeable = False
            rel[so.name] = m
        extra = set(self.relation) - set(left_sorts)
        if extra:
            raise CorrelationError(f"relation names unknown sorts {sorted(extra)}")
        anchors: list[Anchor] = []
        for a in self.anchors:
            sort, i, j = a[0], int(a[1]), int(a[2])
            if sort not in rel:
                raise CorrelationError(f"anchor names unknown sort {sort!r}")
            ni, nj = rel[sort].shape
            if not (0 <= i < ni and 0 <= j < nj):
                raise CorrelationError(f"anchor ({sort}, {i}, {j}) out of range")
            anchors.append((sort, i, j))
        object.__setattr__(self, "relation", rel)
        object.__setattr__(self, "anchors", tuple(anchors))

    def pairs(self, sort: str) -> tuple[np.ndarray, np.ndarray]:
        """Related index pairs of one sort, row-major."""
        ij = np.argwhere(self.relation[sort])
        return ij[:, 0], ij[:, 1]

    def key(self) -> tuple[tuple[int, int, int], ...]:
        """Related (sort position, i, j) triples in row-major order; witnesses tie-break on it."""
        return tuple(
            (k, int(i), int(j))
            for k, so in enumerate(self.left.sorts)
            for i, j in np.argwhere(self.relation[so.name])
        )

    def cells(self) -> int:
        return int(sum(int(m.sum()) for m in self.relation.values()))

    def as_dict(self) -> dict[str, Any]:
        return {
            "relation": {k: v.astype(int).tolist() for k, v in self.relation.items()},
            "anchors": [
                [s, self.left.sort(s).points[i], self.right.sort(s).points[j]] for (s, i, j) in self.anchors
            ],
        }


@dataclass(frozen=True, slots=True)
class CorrelationCheck:
    ok: bool
    sort: str | None = None
    kind: str | None = None  # "row" | "column" | "anchor"
    index: int | None = None

    def __bool__(self) -> bool:
        return self.ok


def is_correlation(c: Correlation) -> CorrelationCheck:
    """Total, surjective per sort, and every anchor set; otherwise the first failure."""
    for so in c.left.sorts:
        m = c.relation[so.name]
        rows = np.flatnonzero(~m.any(axis=1))
        if rows.size:
            return CorrelationCheck(False, so.name, "row", int(rows[0]))
        cols = np.flatnonzero(~m.any(axis=0))
        if cols.size:
            return CorrelationCheck(False, so.name, "column", int(cols[0]))
    for k, (sort, i, j) in enumerate(c.anchors):
        if not c.relation[sort][i, j]:
            return CorrelationCheck(False, sort, "anchor", k)
    return CorrelationCheck(True)


def identity_correlation(s: MetricStructure) -> Correlation:
    return Correlation(s, s, {so.name: np.eye(so.size, dtype=bool) for so in s.sorts})


def full_correlation(m: MetricStructure, n: MetricStructure) -> Correlation:
    return Correlation(m, n, {so.name: np.ones((so.size, n.sort(so.name).size), dtype=bool) for so in m.sorts})


def inverse(c: Correlation) -> Correlation:
    return Correlation(
        c.right,
        c.left,
        {k: v.T for k, v in c.relation.items()},
        tuple((s, j, i) for (s, i, j) in c.anchors),
    )


def compose(c1: Correlation, c2: Correlation) -> Correlation:
    """Relational product M→N→O; anchors chain through a common middle point."""
    if not same_structure(c1.right, c2.left):
        raise CorrelationError("compose: c1.right and c2.left are different structures")
    rel = {
        k: (c1.relation[k].astype(np.int64) @ c2.relation[k].astype(np.int64)) > 0 for k in c1.relation
    }
    anchors: list[Anchor] = []
    for (s1, a, b) in c1.anchors:
        for (s2, b2, o) in c2.anchors:
            if s1 == s2 and b == b2 and (s1, a, o) not in anchors:
                anchors.append((s1, a, o))
    return Correlation(c1.left, c2.right, rel, tuple(anchors))


def thicken(c: Correlation, delta: float) -> Correlation:
    """(a,b) related iff some related (c,d) has d(a,c) <= delta and d(b,d) <= delta."""
    if delta < 0:
        raise CorrelationError(f"thicken: negative delta {delta}")
    rel: dict[str, np.ndarray] = {}
    for so in c.left.sorts:
        near_m = (so.metric <= delta + TOL).astype(np.int64)
        near_n = (c.right.sort(so.name).metric <= delta + TOL).astype(np.int64)
        rel[so.name] = (near_m @ c.relation[so.name].astype(np.int64) @ near_n) > 0
    return Correlation(c.left, c.right, rel, c.anchors)


def correlation_from_file(
    spec: CorrelationFile, left: MetricStructure, right: MetricStructure
) -> Correlation:
    anchors = [
        (sort, left.sort(sort).index(a), right.sort(sort).index(b)) for (sort, a, b) in spec.anchors
    ]
    return Correlation(left, right, {k: np.asarray(v) for k, v in spec.relation.items()}, tuple(anchors))
