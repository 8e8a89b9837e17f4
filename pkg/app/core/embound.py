# app/core/embound.py
"""
Sampled normed spaces, their emboundments (bounded metric encodings with an extra
point ∞) and the Banach-Mazur generator family evaluated on them.

Emboundment of a sample set X:

  θ(t) = t / (1 + t)
  d(x, y)    = θ(∥x−y∥) / (1 + ∥x∥ ↓ ∥y∥)      x, y ≠ ∞
  d(x, ∞)    = 1 / (1 + ∥x∥)
  P(x, y, z) = θ(∥x+y−z∥) / (1 + ∥x∥ ↑ ∥y∥ ↑ ∥z∥)   (0 if any input is ∞)
  S_s(x, y)  = θ(∥sx−y∥) / (1 + ∥x∥ ↑ ∥y∥)          (0 if any input is ∞)
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from app.core.config import TOL
from app.core.distsys import DistortionSystem, distortion
from app.core.errors import BanachError
from app.core.formula import (
    EMB_P,
    INF_CONST,
    ZERO_CONST,
    EmbPhi,
    EmbPsi,
    Formula,
    PointConst,
    Var,
    emb_scalar_name,
    emb_scalar_value,
    free_vars,
    rename_vars,
    substitute_const,
)
from app.core.mstruct import (
    Correlation,
    MetricStructure,
    Predicate,
    Signature,
    Sort,
    measure_lipschitz,
)
from app.models.files import BanachFile

logger = logging.getLogger(__name__)

EMB_SORT = "E"
KADETS_SORT = "B"
INF_LABEL = "inf"
NORMS = ("l1", "l2", "linf")
DEFAULT_SCALARS: tuple[complex | float, ...] = (-1.0, 0.5, 2.0)


def theta(t: np.ndarray | float) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    return t / (1.0 + t)


# ──────────────────────────────────────────────────────────────────────────────
# SampledBanach
# ──────────────────────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class SampledBanach:
    """Finite sample of a (weighted) ℓ1/ℓ2/ℓ∞ space over R or C; the zero vector is required."""

    dim: int
    field: str
    norm: str
    samples: np.ndarray
    radius_cap: float
    weights: tuple[float, ...] | None = None
    labels: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.field not in ("real", "complex"):
            raise BanachError(f"field must be 'real' or 'complex', got {self.field!r}")
        if self.norm not in NORMS:
            raise BanachError(f"norm must be one of {', '.join(NORMS)}, got {self.norm!r}")
        dtype = complex if self.field == "complex" else float
        try:
            x = np.array(self.samples, dtype=dtype)
        except (TypeError, ValueError):
            raise BanachError("samples must be numeric vectors") from None
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise BanachError(f"samples must have shape (n, {self.dim}), got {x.shape}")
        x.flags.writeable = False
        object.__setattr__(self, "samples", x)
        if self.weights is not None:
            w = tuple(float(v) for v in self.weights)
            if len(w) != self.dim or any(v <= 0 for v in w):
                raise BanachError(f"weights must be {self.dim} positive numbers")
            object.__setattr__(self, "weights", w)
        if not self.labels:
            object.__setattr__(self, "labels", tuple(f"v{i}" for i in range(x.shape[0])))
        elif len(self.labels) != x.shape[0]:
            raise BanachError("labels and samples differ in length")
        if INF_LABEL in self.labels:
            raise BanachError(f"label {INF_LABEL!r} is reserved")
        if not np.any(np.all(x == 0, axis=1)):
            raise BanachError("samples must include the zero vector")
        norms = self.norms()
        if np.any(norms > self.radius_cap + TOL):
            i = int(np.argmax(norms))
            raise BanachError(f"sample {self.labels[i]} has norm {norms[i]!r} > radius_cap {self.radius_cap!r}")
        bad = check_norm_axioms(self)
        if bad:
            raise BanachError(bad[0])

    @property
    def size(self) -> int:
        return int(self.samples.shape[0])

    @property
    def zero_index(self) -> int:
        return int(np.flatnonzero(np.all(self.samples == 0, axis=1))[0])

    def norm_of(self, v: np.ndarray) -> np.ndarray:
        """Norm along the last axis."""
        a = np.abs(np.asarray(v))
        w = np.ones(self.dim) if self.weights is None else np.asarray(self.weights)
        if self.norm == "l1":
            return (w * a).sum(axis=-1)
        if self.norm == "l2":
            return np.sqrt((w * a * a).sum(axis=-1))
        return (w * a).max(axis=-1)

    def norms(self) -> np.ndarray:
        return self.norm_of(self.samples)


def check_norm_axioms(b: SampledBanach) -> list[str]:
    """Spot-check homogeneity and the triangle inequality on sample combinations."""
    x = b.samples
    out: list[str] = []
    n = b.norm_of(x)
    scalars: list[complex] = [-2.0, 0.5, 3.0]
    if b.field == "complex":
        scalars.append(1j)
    for s in scalars:
        lhs = b.norm_of(s * x)
        if np.any(np.abs(lhs - abs(s) * n) > TOL * (1 + np.abs(lhs))):
            out.append(f"norm {b.norm}: homogeneity fails for scalar {s}")
    sums = b.norm_of(x[:, None, :] + x[None, :, :])
    if np.any(sums > n[:, None] + n[None, :] + TOL):
        i, j = map(int, np.argwhere(sums > n[:, None] + n[None, :] + TOL)[0])
        out.append(f"norm {b.norm}: triangle inequality fails on ({b.labels[i]}, {b.labels[j]})")
    return out


def banach_from_file(spec: BanachFile) -> SampledBanach:
    rows: list[list[Any]] = []
    for row in spec.samples:
        vals: list[Any] = []
        for v in row:
            if isinstance(v, (list, tuple)):
                if len(v) != 2:
                    raise BanachError(f"complex entry must be [re, im], got {v!r}")
                vals.append(complex(float(v[0]), float(v[1])))
            else:
                vals.append(v)
        rows.append(vals)
    return SampledBanach(
        dim=spec.dim,
        field=spec.field,
        norm=spec.norm,
        samples=np.array(rows, dtype=complex if spec.field == "complex" else float),
        radius_cap=spec.radius_cap,
        weights=None if spec.weights is None else tuple(spec.weights),
    )


def radial_grid(
    dim: int,
    norm: str,
    *,
    field: str = "real",
    directions: Sequence[Sequence[float]] | None = None,
    exponents: Iterable[int] = range(-2, 3),
    weights: Sequence[float] | None = None,
    radius_cap: float | None = None,
) -> SampledBanach:
    """
    Zero plus every direction (normalized to unit norm) scaled by e^{j/2}; norm
    ratios between samples land on multiples of ½ on the log scale.
    """
    if directions is None:
        directions = np.eye(dim)
    d = np.array(directions, dtype=complex if field == "complex" else float)
    proto = SampledBanach(dim, field, norm, np.zeros((1, dim)), 1.0, None if weights is None else tuple(weights))
    units = d / proto.norm_of(d)[:, None]
    rows = [np.zeros(dim)]
    for u in units:
        for j in exponents:
            rows.append(u * math.exp(j / 2.0))
    x = np.array(rows)
    cap = radius_cap if radius_cap is not None else float(proto.norm_of(x).max()) * (1 + 1e-12)
    return SampledBanach(dim, field, norm, x, cap, proto.weights)


def rotation(angle: float) -> np.ndarray:
    """The plane's standard basis turned by `angle` radians, one direction per row."""
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, s], [-s, c]])


def image(
    b: SampledBanach,
    a: np.ndarray,
    *,
    norm: str | None = None,
    weights: Sequence[float] | None = None,
) -> SampledBanach:
    """Samples A·x with the same labels, measured in `norm` (default: the source norm)."""
    a = _matrix(a, b)
    x = b.samples @ a.T
    proto = SampledBanach(
        b.dim, b.field, norm or b.norm, np.zeros((1, b.dim)), 1.0,
        tuple(weights) if weights is not None else (b.weights if norm is None else None),
    )
    cap = max(float(proto.norm_of(x).max()) * (1 + 1e-12), TOL)
    return SampledBanach(b.dim, b.field, proto.norm, x, cap, proto.weights, b.labels)


def _matrix(a: Any, b: SampledBanach) -> np.ndarray:
    m = np.array(a, dtype=complex if b.field == "complex" else float)
    if m.shape != (b.dim, b.dim):
        raise BanachError(f"matrix must be {b.dim}x{b.dim}, got {m.shape}")
    return m


# ──────────────────────────────────────────────────────────────────────────────
# Emboundment
# ──────────────────────────────────────────────────────────────────────────────

def _emb_metric(b: SampledBanach) -> np.ndarray:
    x = b.samples
    n = b.norms()
    k = b.size
    out = np.zeros((k + 1, k + 1))
    diff = b.norm_of(x[:, None, :] - x[None, :, :])
    out[:k, :k] = theta(diff) / (1.0 + np.minimum(n[:, None], n[None, :]))
    out[:k, k] = out[k, :k] = 1.0 / (1.0 + n)
    np.fill_diagonal(out, 0.0)
    return out


def embound(b: SampledBanach, scalars: Iterable[complex | float] = DEFAULT_SCALARS) -> MetricStructure:
    """
    Embounded structure on the samples plus ∞: sort E, ternary P, binary S_s per
    scalar, constants `zero` and `inf`. Over C the scalar i is always included.
    """
    scal: list[complex] = []
    for s in scalars:
        c = complex(s)
        if b.field == "real" and c.imag != 0:
            raise BanachError(f"scalar {s!r} is outside the real field")
        if c not in scal:
            scal.append(c)
    if b.field == "complex" and 1j not in scal:
        scal.append(1j)

    x = b.samples
    n = b.norms()
    k = b.size
    metric = _emb_metric(b)

    big = np.maximum(np.maximum(n[:, None, None], n[None, :, None]), n[None, None, :])
    comb = x[:, None, None, :] + x[None, :, None, :] - x[None, None, :, :]
    p = np.zeros((k + 1,) * 3)
    p[:k, :k, :k] = theta(b.norm_of(comb)) / (1.0 + big)

    preds = [_emb_pred(EMB_P, p, metric, 3)]
    big2 = np.maximum(n[:, None], n[None, :])
    for s in scal:
        sv = s if b.field == "complex" else s.real
        tab = np.zeros((k + 1, k + 1))
        tab[:k, :k] = theta(b.norm_of(sv * x[:, None, :] - x[None, :, :])) / (1.0 + big2)
        preds.append(_emb_pred(emb_scalar_name(s if b.field == "complex" else s.real), tab, metric, 2))

    labels = tuple(b.labels) + (INF_LABEL,)
    sort = Sort(EMB_SORT, labels, metric, 1.0)
    return MetricStructure(
        sorts=(sort,),
        predicates=tuple(preds),
        constants={ZERO_CONST: (EMB_SORT, b.labels[b.zero_index]), INF_CONST: (EMB_SORT, INF_LABEL)},
        name=f"embound({b.norm},{b.field},n={k})",
    )


def _emb_pred(name: str, values: np.ndarray, metric: np.ndarray, arity: int) -> Predicate:
    lip = measure_lipschitz(values, [metric] * arity)
    return Predicate(name, (EMB_SORT,) * arity, values, (0.0, 1.0), lip)


def norms_of_structure(s: MetricStructure) -> np.ndarray:
    """∥x∥ = 1/d(x,∞) − 1 on an embounded structure (∞ itself gets +inf)."""
    sort, inf_idx = s.constant(INF_CONST)
    d = s.sort(sort).metric[:, inf_idx]
    with np.errstate(divide="ignore"):
        out = 1.0 / d - 1.0
    out = np.array(out, dtype=float)
    out[inf_idx] = np.inf
    return out


# ──────────────────────────────────────────────────────────────────────────────
# Banach-Mazur generators
# ──────────────────────────────────────────────────────────────────────────────

def _zero_patterns(base: Formula, sort: str) -> list[Formula]:
    """`base` plus every substitution of @zero for a nonempty set of its variables."""
    fv = list(free_vars(base))
    out: list[Formula] = [base]
    zero = PointConst(ZERO_CONST, sort)
    for k in range(1, len(fv) + 1):
        for chosen in itertools.combinations(fv, k):
            f = base
            for i in chosen:
                f = substitute_const(f, i, zero)
            rest = [i for i in fv if i not in chosen]
            out.append(rename_vars(f, {i: j for j, i in enumerate(rest)}))
    return out


def bm_generators(
    r_values: Iterable[float],
    s_values: Iterable[complex | float],
    *,
    sort: str = EMB_SORT,
) -> DistortionSystem:
    """φ_r and ψ_{r,s} for every r, s, together with all their @zero substitutions."""

    rs = [float(r) for r in r_values]
    if not rs:
        raise BanachError("bm: at least one r value is required")
    if any(r <= 0 or not math.isfinite(r) for r in rs):
        raise BanachError(f"bm: r values must be positive, got {rs}")
    ss = [complex(s) for s in s_values]
    v = [Var(i, sort) for i in range(3)]
    gens: list[Formula] = []
    for r in rs:
        gens.extend(_zero_patterns(EmbPhi(r, v[0], v[1], v[2]), sort))
        for s in ss:
            name = emb_scalar_name(s if s.imag else s.real)
            gens.extend(_zero_patterns(EmbPsi(r, name, v[0], v[1]), sort))
    trunc = {
        "r_values": rs,
        "s_values": [_scalar_json(s) for s in ss],
        "r_max": max(rs),
    }
    return DistortionSystem("bm", tuple(gens), trunc)


def _scalar_json(s: complex) -> Any:
    return s.real if s.imag == 0 else [s.real, s.imag]


def bm_system_for(signature: Signature, truncation: Mapping[str, Any]) -> DistortionSystem:
    if INF_CONST not in signature.constants or ZERO_CONST not in signature.constants:
        raise BanachError("bm needs an embounded signature (constants 'zero' and 'inf')")
    sort = signature.constants[INF_CONST]
    scalars = [v for v in (emb_scalar_value(p) for p in signature.predicates) if v is not None]
    if "r_values" in truncation and truncation["r_values"]:
        rs = [float(r) for r in truncation["r_values"]]
    else:
        rs = [float(r) for r in range(1, int(truncation.get("r_max", 4)) + 1)]
    return bm_generators(rs, scalars, sort=sort)


# ──────────────────────────────────────────────────────────────────────────────
# Linear maps
# ──────────────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class MapCorrelation:
    """
    `shadow` holds the same pairs with each left sample x replaced by A·x, measured in
    the target norm. Generator values depend only on the tuple's own vectors, so the
    snapped distortion is at most the exact map's distortion plus the shadow's.
    """

    correlation: Correlation
    residual: float
    matrix: np.ndarray
    shadow: Correlation

    def slack(self, sys: DistortionSystem) -> float:
        """Distortion added by snapping A·x onto the target samples; an exact map needs none."""
        if self.residual == 0:
            return 0.0
        return distortion(sys, self.shadow).value

    def modulus(self, sys: DistortionSystem) -> float:
        """Finite L with slack = L·residual over the snapped pairs."""
        if self.residual == 0:
            return 0.0
        return self.slack(sys) / self.residual


def _emb_dist(b: SampledBanach, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    nu = b.norm_of(u)
    nv = b.norm_of(v)
    return theta(b.norm_of(u - v)) / (1.0 + np.minimum(nu, nv))


def linear_map_correlation(
    b1: SampledBanach,
    b2: SampledBanach,
    a: Any,
    *,
    scalars: Iterable[complex | float] = DEFAULT_SCALARS,
) -> MapCorrelation:
    """
    Pair each b1 sample x with the b2 sample nearest to A·x and each b2 sample y with
    the b1 sample nearest to A⁻¹·y (embounded metric), plus (0,0) and (∞,∞). The
    residual is the largest snapping distance.
    """
    if b1.dim != b2.dim:
        raise BanachError(f"dimensions differ: {b1.dim} vs {b2.dim}")
    scalars = tuple(scalars)
    m = _matrix(a, b1)
    if abs(np.linalg.det(m)) < 1e-12 or np.linalg.cond(m) > 1e12:
        raise BanachError("linear map is singular")
    inv = np.linalg.inv(m)
    left = embound(b1, scalars)
    right = embound(b2, scalars)
    k1, k2 = b1.size, b2.size
    rel = np.zeros((k1 + 1, k2 + 1), dtype=bool)
    residual = 0.0
    fwd = b1.samples @ m.T
    for i in range(k1):
        dist = _emb_dist(b2, fwd[i][None, :], b2.samples)
        j = int(np.argmin(dist))
        rel[i, j] = True
        residual = max(residual, float(dist[j]))
    back = b2.samples @ inv.T
    for j in range(k2):
        dist = _emb_dist(b1, back[j][None, :], b1.samples)
        i = int(np.argmin(dist))
        rel[i, j] = True
        residual = max(residual, float(dist[i]))
    rel[b1.zero_index, b2.zero_index] = True
    rel[k1, k2] = True
    logger.debug("linear map correlation: residual %r", residual)
    moved = embound(image(b1, m, norm=b2.norm, weights=b2.weights), scalars)
    return MapCorrelation(
        Correlation(left, right, {EMB_SORT: rel}), residual, m, Correlation(moved, right, {EMB_SORT: rel})
    )


def operator_norm(a: Any, src: SampledBanach, dst: SampledBanach) -> float:
    """∥A∥ from src's norm to dst's norm; exact for the common cases, sampled otherwise."""
    m = _matrix(a, src)
    wi = np.ones(src.dim) if src.weights is None else np.asarray(src.weights)
    wo = np.ones(dst.dim) if dst.weights is None else np.asarray(dst.weights)
    if src.norm == "l1":
        cols = (m / wi[None, :]).T
        return float(dst.norm_of(cols).max())
    if src.norm == "linf" and src.field == "real":
        verts = np.array(list(itertools.product((-1.0, 1.0), repeat=src.dim))) / wi[None, :]
        return float(dst.norm_of(verts @ m.T).max())
    if src.norm == "l2" and dst.norm == "l2":
        scaled = np.sqrt(wo)[:, None] * m / np.sqrt(wi)[None, :]
        return float(np.linalg.norm(scaled, 2))
    if src.norm == "l2" and dst.norm == "linf":
        scaled = m / np.sqrt(wi)[None, :]
        return float((wo * np.linalg.norm(scaled, axis=1)).max())
    rng = np.random.default_rng(0)
    dirs = rng.standard_normal((20000, src.dim))
    if src.field == "complex":
        dirs = dirs + 1j * rng.standard_normal((20000, src.dim))
    dirs = dirs / src.norm_of(dirs)[:, None]
    logger.info("operator norm %s->%s estimated from sampled directions", src.norm, dst.norm)
    return float(dst.norm_of(dirs @ m.T).max())


@dataclass(frozen=True)
class Rebalanced:
    r: float
    matrix: np.ndarray
    norm: float
    inverse_norm: float
    bm_value: float

    def as_dict(self) -> dict[str, Any]:
        return {
            "r": self.r,
            "norm": self.norm,
            "inverse_norm": self.inverse_norm,
            "bm_value": self.bm_value,
        }


def rebalance(a: Any, src: SampledBanach, dst: SampledBanach) -> Rebalanced:
    """
    Rescale A by r = √(∥A⁻¹∥/∥A∥) so that ∥rA∥ = ∥(rA)⁻¹∥ = √(∥A∥∥A⁻¹∥);
    log(∥A∥∥A⁻¹∥) is the Banach-Mazur value of A.
    """
    m = _matrix(a, src)
    if abs(np.linalg.det(m)) < 1e-12:
        raise BanachError("linear map is singular")
    na = operator_norm(m, src, dst)
    ninv = operator_norm(np.linalg.inv(m), dst, src)
    r = math.sqrt(ninv / na)
    ra = r * m
    return Rebalanced(
        r=r,
        matrix=ra,
        norm=operator_norm(ra, src, dst),
        inverse_norm=operator_norm(np.linalg.inv(ra), dst, src),
        bm_value=math.log(na * ninv),
    )


# ──────────────────────────────────────────────────────────────────────────────
# Forward direction at sample scale
# ──────────────────────────────────────────────────────────────────────────────

@dataclass(frozen=True, slots=True)
class ForwardReport:
    ok: bool
    reason: str | None = None
    pair: tuple[str, str] | None = None
    log_ratio: float | None = None
    slack: float = 0.0

    def as_dict(self) -> dict[str, Any]:
        return {
            "ok": self.ok,
            "reason": self.reason,
            "pair": None if self.pair is None else list(self.pair),
            "log_ratio": self.log_ratio,
            "slack": self.slack,
        }


def forward_slack(eps: float, r_max: float) -> float:
    """(2 − 1/r) |log(∥a∥/∥b∥)| ≤ ε at r = r_max gives 2|log ratio| ≤ ε + ε/(2r_max − 1)."""
    return eps / (2.0 * r_max - 1.0)


def forward_check(c: Correlation, eps: float, slack: float) -> ForwardReport:
    """
    A correlation of embounded samples with small BM distortion pairs (0,0) and (∞,∞),
    pairs ∞ and 0 with nothing else, and keeps 2|log(∥a∥/∥b∥)| ≤ ε + slack.
    """
    sort, inf_l = c.left.constant(INF_CONST)
    _, inf_r = c.right.constant(INF_CONST)
    _, zero_l = c.left.constant(ZERO_CONST)
    _, zero_r = c.right.constant(ZERO_CONST)
    rel = c.relation[sort]
    pl = c.left.sort(sort).points
    pr = c.right.sort(sort).points
    if not rel[inf_l, inf_r]:
        return ForwardReport(False, "missing (inf, inf)", slack=slack)
    if not rel[zero_l, zero_r]:
        return ForwardReport(False, "missing (zero, zero)", slack=slack)
    nl = norms_of_structure(c.left)
    nr = norms_of_structure(c.right)
    for i, j in np.argwhere(rel):
        i, j = int(i), int(j)
        if (i == inf_l) != (j == inf_r):
            return ForwardReport(False, "inf paired with a finite point", (pl[i], pr[j]), slack=slack)
        if i == inf_l:
            continue
        if (i == zero_l) != (j == zero_r):
            return ForwardReport(False, "zero paired with a nonzero point", (pl[i], pr[j]), slack=slack)
        if i == zero_l:
            continue
        ratio = 2.0 * abs(math.log(nl[i] / nr[j]))
        if ratio > eps + slack + TOL:
            return ForwardReport(False, "norm ratio", (pl[i], pr[j]), ratio, slack)
    return ForwardReport(True, slack=slack)


# ──────────────────────────────────────────────────────────────────────────────
# Kadets structures
# ──────────────────────────────────────────────────────────────────────────────

def kadets_coefficients(k_max: int = 3, max_arity: int = 2) -> list[tuple[float, ...]]:
    """
    Coefficient vectors with nonzero dyadic entries j/2^k_max and Σ|λ| = 1, one per
    global sign class (the first entry is positive).
    """
    den = 2**k_max
    out: list[tuple[float, ...]] = []
    for arity in range(1, max_arity + 1):
        for mags in itertools.product(range(1, den + 1), repeat=arity):
            if sum(mags) != den:
                continue
            for signs in itertools.product((1, -1), repeat=arity - 1):
                vec = (mags[0] / den,) + tuple(sg * m / den for sg, m in zip(signs, mags[1:]))
                if vec not in out:
                    out.append(vec)
    return out


def kadets_name(vec: Sequence[float]) -> str:
    return "K[" + ",".join(repr(float(v)) for v in vec) + "]"


def kadets_structure(b: SampledBanach, coefficient_vectors: Iterable[Sequence[float]]) -> MetricStructure:
    """Samples with metric ∥x−y∥ and predicates K[λ](x̄) = ∥Σ λ_i x_i∥."""
    x = b.samples
    k = b.size
    metric = b.norm_of(x[:, None, :] - x[None, :, :])
    preds: list[Predicate] = []
    for vec in coefficient_vectors:
        lam = np.asarray(vec, dtype=float)
        if lam.size == 0 or abs(np.abs(lam).sum() - 1.0) > 1e-12:
            raise BanachError(f"coefficients must have Σ|λ| = 1, got {list(vec)}")
        arity = lam.size
        grids = np.indices((k,) * arity)
        combo = sum(lam[i] * x[grids[i]] for i in range(arity))
        values = b.norm_of(combo)
        preds.append(
            Predicate(
                kadets_name(vec),
                (KADETS_SORT,) * arity,
                values,
                (0.0, b.radius_cap),
                tuple(abs(float(v)) for v in lam),
            )
        )
    sort = Sort(KADETS_SORT, b.labels, metric, 2.0 * b.radius_cap)
    return MetricStructure((sort,), tuple(preds), {}, name=f"kadets({b.norm},n={k})")
