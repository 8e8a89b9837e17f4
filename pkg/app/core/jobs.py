# app/core/jobs.py
"""
Record builders shared by the command line and the HTTP surface. Each returns a
JSON-shaped dict carrying a `seal`; the caller decides how to print or send it.
"""
from __future__ import annotations

import logging
from typing import Any, Mapping, Sequence

from app.core.backforth import r_finite, r_infty_capped, scott_rank_capped
from app.core.corrsearch import anchors_from_tuples, rho_exact, rho_heuristic, rho_stratified
from app.core.demos import run_demo
from app.core.distsys import DistortionSystem, builtin, distortion
from app.core.embound import DEFAULT_SCALARS, SampledBanach, embound, norms_of_structure
from app.core.errors import CorrelaError
from app.core.formula import WeakModulus, evaluate, infer_modulus, parse, to_text
from app.core.jsonio import sealed
from app.core.mstruct import Correlation, MetricStructure, Signature, structure_to_file, validate_structure

logger = logging.getLogger(__name__)


def make_system(
    name: str,
    signature: Signature,
    truncation: Mapping[str, Any] | None = None,
    generators: Sequence[str] = (),
) -> DistortionSystem:
    """A builtin family, optionally extended with DSL generators; name 'custom' means generators only."""
    extra = [parse(g, signature) for g in generators]
    if name == "custom":
        if not extra:
            raise CorrelaError("system 'custom' needs at least one generator")
        return DistortionSystem("custom", tuple(extra), dict(truncation or {}))
    sys = builtin(name, signature, truncation)
    return sys.extended(extra) if extra else sys


def validate_record(s: MetricStructure) -> dict[str, Any]:
    violations = validate_structure(s)
    return sealed(
        {
            "command": "validate",
            "structure": s.describe(),
            "fingerprint": s.fingerprint,
            "valid": not violations,
            "violations": [v.as_dict() for v in violations],
        }
    )


def eval_record(text: str, s: MetricStructure, assignment: Mapping[str, Any]) -> dict[str, Any]:
    f = parse(text, s.signature)
    mod = infer_modulus(f)
    return sealed(
        {
            "command": "eval",
            "formula": to_text(f),
            "structure": s.describe(),
            "assignment": dict(assignment),
            "value": evaluate(f, s, assignment),
            "modulus": {
                "lipschitz": {f"x{i}": v for i, v in sorted(mod.lipschitz.items())},
                "range": list(mod.range),
            },
        }
    )


def dis_record(sys: DistortionSystem, c: Correlation) -> dict[str, Any]:
    d = distortion(sys, c)
    return sealed(
        {
            "command": "dis",
            "system": sys.name,
            "generators": len(sys.generators),
            "truncation": sys.truncation_note(),
            **d.as_dict(c),
        }
    )


def rho_record(
    sys: DistortionSystem,
    m: MetricStructure,
    n: MetricStructure,
    *,
    mode: str = "exact",
    anchors: Sequence[tuple[str, str, str]] = (),
    force: bool = False,
    threads: int | None = None,
    budget: int | None = None,
    seed: int | None = None,
) -> dict[str, Any]:
    if mode == "heuristic":
        cells = anchors_from_tuples(m, [(s, a) for s, a, _ in anchors], n, [(s, b) for s, _, b in anchors])
        res = rho_heuristic(sys, m, n, budget, seed=seed, anchors=cells)
    elif anchors:
        cells = anchors_from_tuples(m, [(s, a) for s, a, _ in anchors], n, [(s, b) for s, _, b in anchors])
        res = rho_exact(sys, m, n, cells, force=force, threads=threads, budget=budget, seed=seed)
    else:
        res = rho_exact(sys, m, n, force=force, threads=threads, budget=budget, seed=seed)
    return sealed(
        {
            "command": "rho",
            "mode": mode,
            "system": sys.name,
            "left": m.describe(),
            "right": n.describe(),
            **res.as_dict(),
        }
    )


def stratified_record(levels: Sequence[Sequence[str]], m: MetricStructure, n: MetricStructure) -> dict[str, Any]:
    res = rho_stratified(levels, m, n)
    return sealed({"command": "rho", "mode": "stratified", "levels": [list(l) for l in levels], **res.as_dict()})


def baf_record(
    sys: DistortionSystem,
    omega: WeakModulus,
    m: MetricStructure,
    n: MetricStructure,
    *,
    k: int | None = None,
    rounds: int | None = None,
    rows: bool = False,
    threads: int | None = None,
) -> dict[str, Any]:
    """r_rounds when `rounds` is given, otherwise the capped fixed point with its rank."""
    base = {"command": "baf", "system": sys.name, "omega": omega.as_dict(), "truncation": sys.truncation_note()}
    if rounds is not None:
        value = r_finite(sys, omega, m, n, rounds, k=k)
        return sealed({**base, "rounds": rounds, "value": value})
    table = r_infty_capped(sys, omega, m, n, k, threads=threads)
    out = {**base, **table.as_dict(), "scott_rank": scott_rank_capped(table)}
    if rows:
        out["rows"] = [[a, lt, rt, v] for a, lt, rt, v in table.rows()]
    return sealed(out)


def embound_record(b: SampledBanach, scalars: Sequence[complex | float] = DEFAULT_SCALARS) -> dict[str, Any]:
    s = embound(b, scalars)
    norms = norms_of_structure(s)
    return sealed(
        {
            "command": "embound",
            "points": list(s.sort(s.sorts[0].name).points),
            "norms": [float(v) for v in norms],
            "structure": structure_to_file(s).model_dump(mode="json"),
        }
    )


def demo_record(name: str) -> dict[str, Any]:
    return sealed({"command": "demo", **run_demo(name).as_dict()})

