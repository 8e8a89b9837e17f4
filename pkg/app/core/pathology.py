# app/core/pathology.py
"""
Interval structures J(D, ε) and the irregular IU system.

J(D, ε) has universe D ⊂ [0,1], U(x) = x and d(x,y) = |x−y| ↑ ε for x ≠ y. IU adds
n·U to ½d for n ≤ n_max, so any related pair with a U mismatch makes the distortion
grow linearly in n_max; finite runs show that as a trend.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from app.core import config
from app.core.config import TOL
from app.core.corrsearch import rho_exact
from app.core.distsys import builtin, distortion
from app.core.errors import CorrelaError, StructureError
from app.core.mstruct import Correlation, MetricStructure, Predicate, Sort, identity_correlation

logger = logging.getLogger(__name__)

SORT = "I"
U = "U"
DEFAULT_GRID_EXP = 4


def _label(x: float) -> str:
    return repr(float(x))


def dyadic_grid(g: int = DEFAULT_GRID_EXP) -> list[float]:
    """j / 2^g for j = 0..2^g."""
    if g < 0:
        raise CorrelaError(f"grid exponent must be nonnegative, got {g}")
    n = 2**g
    return [j / n for j in range(n + 1)]


def make_J(points: Sequence[float], eps: float, *, name: str = "") -> MetricStructure:
    """J(D, ε) as a one-sorted structure over sort I with the unary predicate U."""
    d = sorted({float(x) for x in points})
    if not d:
        raise StructureError("J(D, eps) needs a nonempty D")
    if d[0] < 0 or d[-1] > 1:
        raise StructureError(f"J(D, eps): points must lie in [0,1], got {d[0]}..{d[-1]}")
    if not 0 <= eps <= 1:
        raise StructureError(f"J(D, eps): eps must lie in [0,1], got {eps}")
    x = np.asarray(d)
    metric = np.maximum(np.abs(x[:, None] - x[None, :]), eps)
    np.fill_diagonal(metric, 0.0)
    labels = tuple(_label(v) for v in d)
    return MetricStructure(
        sorts=(Sort(SORT, labels, metric, 1.0),),
        predicates=(Predicate(U, (SORT,), x, (0.0, 1.0), (1.0,)),),
        name=name or f"J(|D|={len(d)}, eps={eps:g})",
    )


def u_values(s: MetricStructure) -> np.ndarray:
    return np.asarray(s.predicate(U).values, dtype=float)


def disjoint_union(parts: Sequence[MetricStructure], *, name: str = "") -> MetricStructure:
    """Union of interval structures; points in different parts are at distance 1."""
    if not parts:
        raise StructureError("disjoint union of nothing")
    sizes = [p.sort(SORT).size for p in parts]
    total = sum(sizes)
    metric = np.ones((total, total), dtype=float)
    np.fill_diagonal(metric, 0.0)
    labels: list[str] = []
    values: list[float] = []
    at = 0
    for k, p in enumerate(parts):
        so = p.sort(SORT)
        metric[at : at + so.size, at : at + so.size] = so.metric
        labels.extend(f"{k}:{lab}" for lab in so.points)
        values.extend(u_values(p).tolist())
        at += so.size
    return MetricStructure(
        sorts=(Sort(SORT, tuple(labels), metric, 1.0),),
        predicates=(Predicate(U, (SORT,), np.asarray(values), (0.0, 1.0), (1.0,)),),
        name=name,
    )


# ──────────────────────────────────────────────────────────────────────────────
# Characterization of finite IU distortion
# ──────────────────────────────────────────────────────────────────────────────

@dataclass(frozen=True, slots=True)
class IrregReport:
    ok: bool
    eps: float
    n_max: int
    u_match: bool
    max_u_gap: float
    dis_gh: float
    dis_iu: float
    within: bool
    divergent: bool

    def __bool__(self) -> bool:
        return self.ok

    def as_dict(self) -> dict[str, Any]:
        return {
            "ok": self.ok,
            "eps": self.eps,
            "n_max": self.n_max,
            "u_match": self.u_match,
            "max_u_gap": self.max_u_gap,
            "dis_gh": self.dis_gh,
            "dis_iu": self.dis_iu,
            "within": self.within,
            "divergent": self.divergent,
        }


def u_gap(c: Correlation) -> float:
    ul, ur = u_values(c.left), u_values(c.right)
    rel = c.relation[SORT]
    if not rel.any():
        return 0.0
    return float(np.abs(ul[:, None] - ur[None, :])[rel].max())


def check_irreg_characterization(c: Correlation, eps: float, n_max: int | None = None) -> IrregReport:
    """
    dis_IU(R) ≤ ε < ∞ iff dis_GH(R) ≤ ε and R matches U exactly. With exact U matches the
    truncated IU distortion must equal the GH one; with a mismatch it must reach
    n_max times the largest U gap. At the given ε both sides of the equivalence must
    then agree, so a truncation too shallow to push dis_IU past ε is not ok.
    """
    sig = c.left.signature.merge(c.right.signature)
    iu = builtin("iu", sig, {"n_max": n_max})
    n = int(iu.truncation["n_max"])
    gh = builtin("gh", sig)
    dis_gh = distortion(gh, c).value
    dis_iu = distortion(iu, c).value
    gap = u_gap(c)
    u_match = gap <= TOL
    if u_match:
        ok = abs(dis_iu - dis_gh) <= TOL
        divergent = False
    else:
        divergent = dis_iu >= n * gap - TOL
        ok = divergent
    within = u_match and dis_gh <= eps + TOL
    ok = ok and (dis_iu <= eps + TOL) == within
    return IrregReport(ok, float(eps), n, u_match, gap, dis_gh, dis_iu, within, divergent)


# ──────────────────────────────────────────────────────────────────────────────
# Diagonal relation against the ε = 0 grid
# ──────────────────────────────────────────────────────────────────────────────

def diagonal_correlation(a: MetricStructure, b: MetricStructure) -> Correlation:
    """Pairs equal U-values; both structures must carry the same points."""
    if a.sort(SORT).points != b.sort(SORT).points:
        raise CorrelaError("diagonal relation needs the same point set on both sides")
    return Correlation(a, b, {SORT: np.eye(a.sort(SORT).size, dtype=bool)})


def least_gap(points: Sequence[float]) -> float:
    d = np.unique(np.asarray(points, dtype=float))
    return float(np.diff(d).min()) if d.size > 1 else 0.0


def diagonal_value(points: Sequence[float], eps: float) -> float:
    """Closed form ½·max(ε − h, 0) with h the least positive gap of the grid."""
    if len(set(points)) < 2:
        return 0.0
    return 0.5 * max(eps - least_gap(points), 0.0)


@dataclass(frozen=True, slots=True)
class DiagonalRow:
    g: int
    gap: float
    dis_iu: float
    expected: float

    def as_dict(self) -> dict[str, Any]:
        return {"g": self.g, "gap": self.gap, "dis_iu": self.dis_iu, "expected": self.expected}


def diagonal_report(eps: float, exponents: Sequence[int] = (4, 5, 6), n_max: int | None = None) -> list[DiagonalRow]:
    """dis_IU of the diagonal between J(D_g, ε) and J(D_g, 0) on successively finer dyadic grids."""
    rows: list[DiagonalRow] = []
    for g in exponents:
        pts = dyadic_grid(g)
        a, b = make_J(pts, eps), make_J(pts, 0.0)
        iu = builtin("iu", a.signature, {"n_max": n_max})
        val = distortion(iu, diagonal_correlation(a, b)).value
        rows.append(DiagonalRow(int(g), least_gap(pts), val, diagonal_value(pts, eps)))
    return rows


# ──────────────────────────────────────────────────────────────────────────────
# Divergence for disjoint supports
# ──────────────────────────────────────────────────────────────────────────────

@dataclass(frozen=True, slots=True)
class DivergenceRow:
    n_max: int
    rho: float
    floor: float

    def as_dict(self) -> dict[str, Any]:
        return {"n_max": self.n_max, "rho": self.rho, "floor": self.floor}


def min_support_gap(d0: Sequence[float], d1: Sequence[float]) -> float:
    a = np.asarray(sorted(set(d0)), dtype=float)
    b = np.asarray(sorted(set(d1)), dtype=float)
    return float(np.abs(a[:, None] - b[None, :]).min())


def divergence_trend(
    d0: Sequence[float], d1: Sequence[float], eps: float, n_values: Sequence[int] = (4, 8, 16)
) -> list[DivergenceRow]:
    """ρ_IU between J(D0, ε) and J(D1, ε) for growing n_max, with the n_max·(least U gap) floor."""
    a, b = make_J(d0, eps), make_J(d1, eps)
    gap = min_support_gap(d0, d1)
    sig = a.signature.merge(b.signature)
    rows: list[DivergenceRow] = []
    for n in n_values:
        res = rho_exact(builtin("iu", sig, {"n_max": n}), a, b)
        rows.append(DivergenceRow(int(n), res.value, n * gap))
    return rows


# ──────────────────────────────────────────────────────────────────────────────
# Shifting correlations between truncated disjoint unions
# ──────────────────────────────────────────────────────────────────────────────

@dataclass(frozen=True, slots=True)
class ShiftRow:
    k: int
    dis_iu: float
    bound: float
    slack: float

    @property
    def ok(self) -> bool:
        return self.dis_iu <= self.bound + self.slack

    def as_dict(self) -> dict[str, Any]:
        return {"k": self.k, "dis_iu": self.dis_iu, "bound": self.bound, "slack": self.slack, "ok": self.ok}


@dataclass
class UnionDemo:
    k_max: int
    grid: int
    left: MetricStructure
    right: MetricStructure
    rows: list[ShiftRow] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(r.ok for r in self.rows)

    def as_dict(self) -> dict[str, Any]:
        return {
            "k_max": self.k_max,
            "grid": self.grid,
            "left_points": self.left.sort(SORT).size,
            "right_points": self.right.sort(SORT).size,
            "rows": [r.as_dict() for r in self.rows],
            "ok": self.ok,
        }


def union_pair(k_max: int, g: int = DEFAULT_GRID_EXP) -> tuple[MetricStructure, MetricStructure]:
    """
    M = J(D, 2^-i) for i < k_max+2; N = J(D, 0) followed by J(D, 2^-i) for i < k_max+1.
    D is the dyadic grid of exponent g.
    """
    pts = dyadic_grid(g)
    m = disjoint_union([make_J(pts, 2.0**-i) for i in range(k_max + 2)], name=f"M[k_max={k_max}]")
    n = disjoint_union(
        [make_J(pts, 0.0)] + [make_J(pts, 2.0**-i) for i in range(k_max + 1)], name=f"N[k_max={k_max}]"
    )
    return m, n


def shifting_correlation(m: MetricStructure, n: MetricStructure, k: int, k_max: int, size: int) -> Correlation:
    """
    R_k: M-part i ↔ N-part i for i < k, M-part k ↔ the ε = 0 grid, M-part i ↔ N-part i−1
    for i > k; each matched pair of parts is related by the identity on D.
    N-part 0 is the grid and N-part j+1 is J(D, 2^-j).
    """
    if not 0 <= k <= k_max:
        raise CorrelaError(f"k must lie in 0..{k_max}, got {k}")
    rel = np.zeros((m.sort(SORT).size, n.sort(SORT).size), dtype=bool)
    eye = np.eye(size, dtype=bool)
    for i in range(k_max + 2):
        if i < k:
            j = i + 1
        elif i == k:
            j = 0
        else:
            j = i
        rel[i * size : (i + 1) * size, j * size : (j + 1) * size] = eye
    return Correlation(m, n, {SORT: rel})


def disjoint_union_demo(k_max: int = 3, g: int = DEFAULT_GRID_EXP, n_max: int | None = None) -> UnionDemo:
    if k_max < 0:
        raise CorrelaError(f"k_max must be nonnegative, got {k_max}")
    m, n = union_pair(k_max, g)
    size = len(dyadic_grid(g))
    iu = builtin("iu", m.signature.merge(n.signature), {"n_max": n_max})
    slack = config.grid_slack()
    demo = UnionDemo(k_max, g, m, n)
    for k in range(k_max + 1):
        c = shifting_correlation(m, n, k, k_max, size)
        demo.rows.append(ShiftRow(k, distortion(iu, c).value, 2.0 ** (-k - 1), slack))
    logger.info("disjoint union demo k_max=%d: %s", k_max, "ok" if demo.ok else "FAILED")
    return demo


def identity_check(points: Sequence[float], eps: float) -> IrregReport:
    """The identity on J(D, ε) has both sides of the characterization at 0."""
    s = make_J(points, eps)
    return check_irreg_characterization(identity_correlation(s), 0.0)
