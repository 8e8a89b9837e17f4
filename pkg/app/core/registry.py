# app/core/registry.py
from __future__ import annotations

import logging
import os
import threading
from pathlib import Path
from typing import Any

from pydantic import ValidationError

from app.core import config
from app.core.errors import StructureError
from app.core.jsonio import dumps_canonical_json, load_json_file, loads_json_bytes, seal_of
from app.core.mstruct import MetricStructure, structure_from_file, validate_structure
from app.models.files import StructureFile
from app.models.records import RegistryEntry

logger = logging.getLogger(__name__)


def _atomic_write_text(path: Path, text: str, *, keep_backup: bool = True) -> None:
    """
    Write to <path>.tmp, fsync, then os.replace() into place.
    With keep_backup the previous file survives as <path>.bak.
    """
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    bak = path.with_suffix(path.suffix + ".bak")

    with tmp.open("w", encoding="utf-8") as f:
        f.write(text)
        f.flush()
        os.fsync(f.fileno())

    if keep_backup and path.exists():
        try:
            bak.write_bytes(path.read_bytes())
        except OSError:
            pass

    os.replace(tmp, path)


def _load_best_effort(path: Path) -> dict[str, Any] | None:
    try:
        obj = load_json_file(path)
    except (OSError, ValueError):
        return None
    return obj if isinstance(obj, dict) else None


def parse_structure_bytes(blob: bytes, *, name: str) -> StructureFile:
    obj = loads_json_bytes(blob, name=name)
    try:
        return StructureFile.model_validate(obj)
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(p) for p in first.get("loc", ()))
        raise StructureError(f"{name}: {where or 'file'}: {first.get('msg', 'invalid')}") from None


class StructureRegistry:
    """
    Lock-protected map from content seal to structure file. Entries are kept even when
    invalid so callers can fetch the violation report; computations refuse them.
    """

    def __init__(self, *, persist_path: str | None = None) -> None:
        self.persist_path = Path(persist_path).expanduser().resolve() if persist_path else None
        self._lock = threading.RLock()
        self._files: dict[str, StructureFile] = {}
        self._names: dict[str, str] = {}
        if self.persist_path:
            self._load()

    # ──────────────────────────────────────────────────────────────────
    # Persistence (optional)
    # ──────────────────────────────────────────────────────────────────

    def _load(self) -> None:
        assert self.persist_path is not None
        bak = self.persist_path.with_suffix(self.persist_path.suffix + ".bak")
        obj = _load_best_effort(self.persist_path) or _load_best_effort(bak)
        files: dict[str, StructureFile] = {}
        names: dict[str, str] = {}
        if obj and isinstance(obj.get("structures"), dict):
            for sid, raw in obj["structures"].items():
                if not isinstance(raw, dict) or not isinstance(raw.get("file"), dict):
                    continue
                try:
                    files[sid] = StructureFile.model_validate(raw["file"])
                except ValidationError:
                    logger.warning("registry: dropping unreadable entry %s", sid)
                    continue
                names[sid] = str(raw.get("name") or sid)
        with self._lock:
            self._files, self._names = files, names
        logger.info("registry: loaded %d structure(s) from %s", len(files), self.persist_path)

    def _save(self) -> None:
        if not self.persist_path:
            return
        with self._lock:
            obj = {
                "structures": {
                    sid: {"name": self._names[sid], "file": f.model_dump(mode="json")}
                    for sid, f in self._files.items()
                }
            }
        try:
            _atomic_write_text(self.persist_path, dumps_canonical_json(obj))
        except OSError as e:
            logger.warning("registry: persistence failed (%s)", e)

    # ──────────────────────────────────────────────────────────────────
    # Operations
    # ──────────────────────────────────────────────────────────────────

    def add(self, spec: StructureFile, *, name: str = "") -> RegistryEntry:
        sid = seal_of(spec.model_dump(mode="json"))
        with self._lock:
            self._files[sid] = spec
            self._names.setdefault(sid, name or sid)
        self._save()
        return self.entry(sid)

    def add_bytes(self, blob: bytes, *, name: str) -> RegistryEntry:
        return self.add(parse_structure_bytes(blob, name=name), name=name)

    def entry(self, sid: str) -> RegistryEntry:
        s = self.get(sid)
        violations = validate_structure(s)
        return RegistryEntry(
            id=sid,
            name=self._names.get(sid, sid),
            sorts={so.name: so.size for so in s.sorts},
            predicates=[p.name for p in s.predicates],
            valid=not violations,
            violations=[v.as_dict() for v in violations],
        )

    def get(self, sid: str) -> MetricStructure:
        with self._lock:
            spec = self._files.get(sid)
            name = self._names.get(sid, sid)
        if spec is None:
            raise StructureError(f"unknown structure id {sid!r}")
        return structure_from_file(spec, name=name)

    def has(self, sid: str) -> bool:
        with self._lock:
            return sid in self._files

    def ids(self) -> list[str]:
        with self._lock:
            return sorted(self._files)

    def entries(self) -> list[RegistryEntry]:
        return [self.entry(sid) for sid in self.ids()]

    def seal(self) -> str:
        return seal_of({"ids": self.ids()})


def load_structure(ref: str, registry: StructureRegistry | None = None) -> MetricStructure:
    """A registry id if the registry knows it, otherwise a path to a structure file."""
    if registry is not None and registry.has(ref):
        return registry.get(ref)
    p = Path(ref)
    spec = parse_structure_bytes(p.read_bytes(), name=str(p))
    return structure_from_file(spec, name=p.stem)


_REGISTRY: StructureRegistry | None = None
_REGISTRY_LOCK = threading.Lock()


def get_registry() -> StructureRegistry:
    """Process-wide registry; CORRELA_REGISTRY_PATH enables persistence."""
    global _REGISTRY
    if _REGISTRY is None:
        with _REGISTRY_LOCK:
            if _REGISTRY is None:
                _REGISTRY = StructureRegistry(persist_path=config.registry_path())
    return _REGISTRY
