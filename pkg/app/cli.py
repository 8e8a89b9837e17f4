# app/cli.py
"""
Command line: python -m app <command> ...

Machine output (default) is one canonical JSON record per line, sealed; --format human
prints the same record as a key/value table. Exit codes: 0 success, 1 failed check or
domain violation, 2 I/O, parse or input error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

from pydantic import ValidationError

from app.core import config
from app.core.demos import DEMOS
from app.core.distsys import BUILTINS, joint_signature, system_from_file
from app.core.embound import DEFAULT_SCALARS, banach_from_file
from app.core.errors import CorrelaError
from app.core.formula import WeakModulus
from app.core.jobs import (
    baf_record,
    demo_record,
    dis_record,
    embound_record,
    eval_record,
    make_system,
    rho_record,
    stratified_record,
    validate_record,
)
from app.core.jsonio import dumps_canonical_json, dumps_pretty_json, load_json_file, loads_json_bytes, sealed
from app.core.mstruct import MetricStructure, correlation_from_file, validate_structure
from app.core.registry import get_registry, load_structure
from app.models.files import BanachFile, CorrelationFile, SystemFile

logger = logging.getLogger("app.cli")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_INPUT = 2


class _Refused(Exception):
    """A structure failed validation; carries the validation record."""

    def __init__(self, record: dict[str, Any]) -> None:
        super().__init__(record.get("structure", "structure"))
        self.record = record


# ──────────────────────────────────────────────────────────────────────────────
# Output
# ──────────────────────────────────────────────────────────────────────────────

def _human(record: dict[str, Any]) -> str:
    width = max((len(k) for k in record), default=0)
    lines = []
    for k in sorted(record):
        v = record[k]
        text = v if isinstance(v, str) else dumps_canonical_json(v)
        lines.append(f"{k.ljust(width)}  {text}")
    return "\n".join(lines)


def _emit(args: argparse.Namespace, record: dict[str, Any]) -> None:
    text = _human(record) if args.format == "human" else dumps_canonical_json(record)
    if args.output:
        with open(args.output, "a", encoding="utf-8") as f:
            f.write(text + "\n")
    else:
        print(text)


# ──────────────────────────────────────────────────────────────────────────────
# Input helpers
# ──────────────────────────────────────────────────────────────────────────────

def _model(cls: Any, path: str) -> Any:
    obj = load_json_file(path)
    try:
        return cls.model_validate(obj)
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(p) for p in first.get("loc", ()))
        raise CorrelaError(f"{path}: {where or 'file'}: {first.get('msg', 'invalid')}") from None


def _structure(ref: str, *, base: Path | None = None) -> MetricStructure:
    reg = get_registry()
    if reg.has(ref):
        s = reg.get(ref)
    else:
        p = Path(ref)
        if base is not None and not p.is_absolute() and not p.exists():
            p = base / p
        s = load_structure(str(p))
    if validate_structure(s):
        raise _Refused(validate_record(s))
    return s


def _value(text: str) -> Any:
    try:
        return loads_json_bytes(text.encode("utf-8"), name="flag")
    except ValueError:
        return text


def _pairs(items: Sequence[str] | None, flag: str) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for item in items or ():
        key, sep, val = item.partition("=")
        if not sep or not key:
            raise CorrelaError(f"{flag} expects KEY=VALUE, got {item!r}")
        out[key.strip()] = _value(val.strip())
    return out


def _system(args: argparse.Namespace, m: MetricStructure, n: MetricStructure):
    sig = joint_signature(m, n)
    if args.system_file:
        return system_from_file(_model(SystemFile, args.system_file), sig)
    return make_system(args.system, sig, _pairs(args.trunc, "--trunc"), args.gen or ())


def _omega(args: argparse.Namespace) -> WeakModulus:
    try:
        weights = tuple(float(w) for w in args.omega.split(",") if w.strip())
    except ValueError:
        raise CorrelaError(f"--omega expects comma-separated numbers, got {args.omega!r}") from None
    return WeakModulus(weights, not args.no_shift_increasing)


def _anchor(text: str) -> tuple[str, str, str]:
    parts = text.split(":")
    if len(parts) != 3:
        raise CorrelaError(f"--anchor expects SORT:LEFT:RIGHT, got {text!r}")
    return parts[0], parts[1], parts[2]


# ──────────────────────────────────────────────────────────────────────────────
# Commands
# ──────────────────────────────────────────────────────────────────────────────

def cmd_validate(args: argparse.Namespace) -> int:
    code = EXIT_OK
    for path in args.paths:
        s = load_structure(path)
        rec = validate_record(s)
        _emit(args, rec)
        if not rec["valid"]:
            code = EXIT_FAILED
    return code


def cmd_eval(args: argparse.Namespace) -> int:
    s = _structure(args.structure)
    assignment = {k: str(v) for k, v in _pairs(args.assign, "--assign").items()}
    _emit(args, eval_record(args.formula, s, assignment))
    return EXIT_OK


def cmd_dis(args: argparse.Namespace) -> int:
    spec = _model(CorrelationFile, args.correlation)
    base = Path(args.correlation).parent
    m = _structure(spec.left, base=base)
    n = _structure(spec.right, base=base)
    c = correlation_from_file(spec, m, n)
    _emit(args, dis_record(_system(args, m, n), c))
    return EXIT_OK


def cmd_rho(args: argparse.Namespace) -> int:
    m = _structure(args.left)
    n = _structure(args.right)
    if args.stratified:
        levels = [[p.strip() for p in lvl.split(",") if p.strip()] for lvl in args.stratified]
        _emit(args, stratified_record(levels, m, n))
        return EXIT_OK
    rec = rho_record(
        _system(args, m, n),
        m,
        n,
        mode="heuristic" if args.heuristic else "exact",
        anchors=[_anchor(a) for a in args.anchor or ()],
        force=args.force,
        threads=args.threads,
        budget=args.budget,
        seed=args.seed,
    )
    _emit(args, rec)
    return EXIT_OK


def cmd_baf(args: argparse.Namespace) -> int:
    m = _structure(args.left)
    n = _structure(args.right)
    rec = baf_record(
        _system(args, m, n),
        _omega(args),
        m,
        n,
        k=args.k,
        rounds=args.rounds,
        rows=args.rows,
        threads=args.threads,
    )
    _emit(args, rec)
    return EXIT_OK


def cmd_scott(args: argparse.Namespace) -> int:
    m = _structure(args.left)
    n = _structure(args.right) if args.right else m
    rec = baf_record(_system(args, m, n), _omega(args), m, n, k=args.k, threads=args.threads)
    _emit(args, sealed({"command": "scott", "system": rec["system"], "k": rec["k"], "scott_rank": rec["scott_rank"]}))
    return EXIT_OK


def cmd_embound(args: argparse.Namespace) -> int:
    b = banach_from_file(_model(BanachFile, args.banach))
    scalars = [complex(s) if "j" in s else float(s) for s in args.scalar] if args.scalar else list(DEFAULT_SCALARS)
    rec = embound_record(b, scalars)
    if args.structure_out:
        Path(args.structure_out).write_text(dumps_pretty_json(rec["structure"]), encoding="utf-8")
    _emit(args, rec)
    return EXIT_OK


def cmd_demo(args: argparse.Namespace) -> int:
    rec = demo_record(args.name)
    _emit(args, rec)
    return EXIT_OK if rec["ok"] else EXIT_FAILED


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    uvicorn.run("app.main:app", host=args.host, port=args.port, log_level=args.log_level.lower())
    return EXIT_OK


# ──────────────────────────────────────────────────────────────────────────────
# Parser
# ──────────────────────────────────────────────────────────────────────────────

def _system_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--system", default="gh", help=f"builtin family ({', '.join(BUILTINS)}) or 'custom'")
    p.add_argument("--trunc", action="append", metavar="KEY=VALUE", help="truncation override, e.g. n_max=8")
    p.add_argument("--gen", action="append", metavar="FORMULA", help="extra generator in the formula DSL")
    p.add_argument("--system-file", help="system spec file (overrides --system/--trunc/--gen)")


def _omega_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k", type=int, default=None, help="depth cap (default CORRELA_BAF_DEPTH)")
    p.add_argument("--omega", default="1", help="weak modulus weights, comma-separated (default 1)")
    p.add_argument("--no-shift-increasing", action="store_true", help="do not require nondecreasing weights")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="correla", description="Distortion systems, correlation search and back-and-forth metrics")
    ap.add_argument("--format", choices=("json", "human"), default="json")
    ap.add_argument("--output", help="append records to this file instead of stdout")
    ap.add_argument("--threads", type=int, default=None, help="worker threads (default CORRELA_THREADS)")
    ap.add_argument("--log-level", default=config.log_level())
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check structure files")
    p.add_argument("paths", nargs="+")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("eval", help="evaluate a formula under an assignment")
    p.add_argument("formula")
    p.add_argument("structure")
    p.add_argument("--assign", action="append", metavar="xI=LABEL")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("dis", help="distortion of a correlation file")
    p.add_argument("correlation")
    _system_flags(p)
    p.set_defaults(func=cmd_dis)

    p = sub.add_parser("rho", help="distance between two structures")
    p.add_argument("left")
    p.add_argument("right")
    _system_flags(p)
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--exact", dest="heuristic", action="store_false", default=False, help="branch-and-bound search (default)")
    mode.add_argument("--heuristic", dest="heuristic", action="store_true", help="local search instead of exact search")
    p.add_argument("--anchor", action="append", metavar="SORT:LEFT:RIGHT", help="pair that must be related")
    p.add_argument("--force", action="store_true", help="ignore the size guard")
    p.add_argument("--budget", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--stratified", action="append", metavar="P1,P2", help="nested language level (repeat)")
    p.set_defaults(func=cmd_rho)

    p = sub.add_parser("baf", help="back-and-forth pseudo-metric")
    p.add_argument("left")
    p.add_argument("right")
    _system_flags(p)
    _omega_flags(p)
    stage = p.add_mutually_exclusive_group()
    stage.add_argument("--rounds", type=int, default=None, help="finite rounds")
    stage.add_argument("--fixpoint", dest="rounds", action="store_const", const=None, help="capped fixed point (default)")
    p.add_argument("--rows", action="store_true", help="include the table dump")
    p.set_defaults(func=cmd_baf)

    p = sub.add_parser("scott", help="capped Scott rank of a structure or a pair")
    p.add_argument("left")
    p.add_argument("right", nargs="?")
    _system_flags(p)
    _omega_flags(p)
    p.set_defaults(func=cmd_scott)

    p = sub.add_parser("embound", help="emboundment of a sampled normed space")
    p.add_argument("banach")
    p.add_argument("--scalar", action="append", help="scalar for S predicates (repeat; complex as 1j)")
    p.add_argument("--structure-out", help="write the embounded structure file here")
    p.set_defaults(func=cmd_embound)

    p = sub.add_parser("demo", help="run an acceptance scenario")
    p.add_argument("name", choices=DEMOS)
    p.set_defaults(func=cmd_demo)

    p = sub.add_parser("serve", help="run the HTTP API")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return int(args.func(args))
    except _Refused as r:
        _emit(args, r.record)
        return EXIT_FAILED
    except (OSError, ValueError) as e:
        # CorrelaError is a ValueError: bad input, guards, parse errors
        logger.error("%s", e)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
