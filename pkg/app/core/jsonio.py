# app/core/jsonio.py
from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path
from typing import Any


def loads_json_bytes(blob: bytes, *, name: str = "input.json") -> Any:
    """
    Parse JSON bytes with strict UTF-8 decode.
    Raises ValueError with a crisp message (surfaced as exit code 2 / HTTP 400).
    """
    try:
        text = blob.decode("utf-8")
    except UnicodeDecodeError as e:
        raise ValueError(f"{name}: not valid UTF-8 ({e})") from e

    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ValueError(f"{name}: invalid JSON ({e.msg} at line {e.lineno} col {e.colno})") from e


def load_json_file(path: str | Path) -> Any:
    p = Path(path)
    return loads_json_bytes(p.read_bytes(), name=str(p))


def _finite(obj: Any) -> Any:
    # JSON has no inf/nan; keep records parseable by any reader.
    if isinstance(obj, float):
        if math.isnan(obj):
            return "nan"
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        return obj
    if isinstance(obj, dict):
        return {str(k): _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def dumps_canonical_json(obj: Any) -> str:
    """
    Determinate JSON dump:
    - sorted keys
    - stable separators
    - non-finite floats as strings
    """
    return json.dumps(
        _finite(obj),
        ensure_ascii=False,
        sort_keys=True,
        separators=(",", ":"),
    )


def dumps_pretty_json(obj: Any) -> str:
    """Human-friendly (still Determinate ordering)."""
    return json.dumps(
        _finite(obj),
        ensure_ascii=False,
        sort_keys=True,
        indent=2,
    )


def seal_of(obj: Any, *, digest_size: int = 16) -> str:
    """
    Determinate seal of a JSON-shaped object (identity marker, not a security boundary).
    """
    blob = dumps_canonical_json(obj).encode("utf-8")
    return hashlib.blake2b(blob, digest_size=digest_size).hexdigest()


def sealed(record: dict[str, Any]) -> dict[str, Any]:
    """Return a copy of `record` carrying `seal` over everything else."""
    body = {k: v for k, v in record.items() if k != "seal"}
    return {**body, "seal": seal_of(body)}
