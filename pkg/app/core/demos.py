# app/core/demos.py
"""
Named acceptance scenarios (bm, iu, fghk). Each returns a DemoReport with one
pass/fail entry per criterion; nothing here prints.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from app.core.config import TOL
from app.core.corrsearch import enumerate_correlations
from app.core.distsys import (
    builtin,
    check_atomic_completeness,
    distortion,
    fghk_weights,
    functionality_witness_check,
)
from app.core.embound import (
    embound,
    forward_check,
    forward_slack,
    image,
    linear_map_correlation,
    radial_grid,
    rebalance,
    rotation,
)
from app.core.errors import CorrelaError
from app.core.mstruct import MetricStructure, Predicate, measure_lipschitz, metric_space
from app.core.pathology import diagonal_report, disjoint_union_demo, divergence_trend

logger = logging.getLogger(__name__)

DEMOS = ("bm", "iu", "fghk")


@dataclass(frozen=True, slots=True)
class Criterion:
    name: str
    ok: bool
    detail: dict[str, Any] = field(default_factory=dict)

    def as_dict(self) -> dict[str, Any]:
        return {"name": self.name, "ok": self.ok, "detail": self.detail}


@dataclass
class DemoReport:
    name: str
    criteria: list[Criterion] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return bool(self.criteria) and all(c.ok for c in self.criteria)

    def add(self, name: str, ok: bool, **detail: Any) -> None:
        logger.info("demo %s: %s %s", self.name, name, "pass" if ok else "FAIL")
        self.criteria.append(Criterion(name, bool(ok), detail))

    def as_dict(self) -> dict[str, Any]:
        return {"demo": self.name, "ok": self.ok, "criteria": [c.as_dict() for c in self.criteria]}


# ──────────────────────────────────────────────────────────────────────────────
# Banach-Mazur
# ──────────────────────────────────────────────────────────────────────────────

def _bm(eps_values: tuple[float, ...] = (0.1, 0.2, 0.4)) -> DemoReport:
    rep = DemoReport("bm")

    # rebalancing a stretch of e^ε leaves both operator norms at √(e^ε)
    plane = radial_grid(2, "l2", exponents=range(-1, 2))
    for eps in eps_values:
        rb = rebalance(np.diag([math.exp(eps), 1.0]), plane, plane)
        cap = math.exp(eps / 2.0)
        rep.add(
            f"rebalance eps={eps}",
            rb.norm <= cap + TOL and rb.inverse_norm <= cap + TOL and abs(rb.bm_value - eps) <= TOL,
            **rb.as_dict(),
        )

    # (⇐): a map with ∥A∥, ∥A⁻¹∥ ≤ √(e^ε) induces a correlation of BM distortion ≤ ε.
    # The target grid is rotated off the image, so pairs are snapped.
    for norm in ("l1", "l2", "linf"):
        b1 = radial_grid(2, norm, exponents=range(-1, 2))
        b2 = radial_grid(2, norm, exponents=range(-1, 2), directions=rotation(0.1))
        for eps in eps_values:
            a = rebalance(np.diag([math.exp(eps), 1.0]), b1, b2).matrix
            mc = linear_map_correlation(b1, b2, a)
            c = mc.correlation
            sys = builtin("bm", c.left.signature.merge(c.right.signature))
            value = distortion(sys, c).value
            slack = mc.slack(sys)
            rep.add(
                f"map {norm} eps={eps}",
                value <= eps + slack + TOL,
                distortion=value,
                residual=mc.residual,
                modulus=mc.modulus(sys),
                slack=slack,
            )

    # (⇒) at sample scale: every correlation under the bound respects 0, ∞ and the norm ratios
    eps = 0.2
    line = radial_grid(1, "l1", exponents=range(1, 3))
    left = embound(line)
    right = embound(image(line, [[math.exp(eps / 2.0)]]))
    sys = builtin("bm", left.signature.merge(right.signature))
    slack = forward_slack(eps, float(sys.truncation["r_max"]))
    found = 0
    failed = None
    for c, _v in enumerate_correlations(sys, left, right, eps + TOL):
        found += 1
        fr = forward_check(c, eps, slack)
        if not fr.ok and failed is None:
            failed = fr.as_dict()
    rep.add("forward", found > 0 and failed is None, correlations=found, failure=failed, slack=slack)
    return rep


# ──────────────────────────────────────────────────────────────────────────────
# Irregular IU system
# ──────────────────────────────────────────────────────────────────────────────

def _iu(k_max: int = 3, eps: float = 0.5) -> DemoReport:
    rep = DemoReport("iu")
    union = disjoint_union_demo(k_max)
    for row in union.rows:
        rep.add(f"shift k={row.k}", **row.as_dict())

    rows = diagonal_report(eps)
    exact = all(abs(r.dis_iu - r.expected) <= TOL for r in rows)
    trend = all(a.dis_iu <= b.dis_iu + TOL for a, b in zip(rows, rows[1:]))
    below = all(r.dis_iu <= eps / 2.0 + TOL for r in rows)
    rep.add(
        "diagonal",
        exact and trend and below,
        limit=eps / 2.0,
        rows=[r.as_dict() for r in rows],
    )

    div = divergence_trend([0.25, 0.75], [0.5, 1.0], eps)
    floor = all(r.rho >= r.floor - TOL for r in div)
    grows = all(a.rho < b.rho for a, b in zip(div, div[1:]))
    rep.add("divergence", floor and grows, rows=[r.as_dict() for r in div])
    return rep


# ──────────────────────────────────────────────────────────────────────────────
# Finitary GHK
# ──────────────────────────────────────────────────────────────────────────────

def random_space(rng: np.random.Generator, size: int = 3, *, unary: bool = True, name: str = "") -> MetricStructure:
    """Euclidean distances of random plane points, optionally with a [0,1]-valued unary U."""
    pts = rng.random((size, 2))
    metric = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=-1))
    preds: list[Predicate] = []
    if unary:
        vals = rng.random(size)
        lip = measure_lipschitz(vals, [metric])
        preds.append(Predicate("U", ("S",), vals, (0.0, 1.0), lip))
    labels = [f"p{i}" for i in range(size)]
    return metric_space(labels, metric, diameter_bound=2.0, predicates=preds, name=name)


def _fghk(trials: int = 20, seed: int = 0) -> DemoReport:
    rep = DemoReport("fghk")
    rng = np.random.default_rng(seed)
    sample = random_space(rng)
    weights = dict(fghk_weights(sample.signature))
    rep.add("weight", abs(weights["U"] - 0.5) <= TOL, weights=weights)

    bad: list[int] = []
    for t in range(trials):
        s = random_space(rng, name=f"trial-{t}")
        report = check_atomic_completeness(builtin("fghk", s.signature), s)
        if not report.ok:
            bad.append(t)
    rep.add("atomic completeness", not bad, trials=trials, failures=bad)

    gh = builtin("gh", sample.signature)
    eps = 0.1
    witness = functionality_witness_check(gh, gh.generators[0], eps, 2.0 * eps + TOL, [sample, random_space(rng)])
    rep.add("functionality witness", **witness.as_dict())
    return rep


_RUNNERS: dict[str, Callable[[], DemoReport]] = {"bm": _bm, "iu": _iu, "fghk": _fghk}


def run_demo(name: str) -> DemoReport:
    key = name.strip().lower()
    if key not in _RUNNERS:
        raise CorrelaError(f"unknown demo {name!r}; expected one of {', '.join(DEMOS)}")
    return _RUNNERS[key]()
