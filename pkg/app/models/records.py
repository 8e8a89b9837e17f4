# app/models/records.py
from __future__ import annotations

from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator


class RegistryEntry(BaseModel):
    """One registered structure: id is the content seal of its file."""

    id: str
    name: str
    sorts: dict[str, int] = Field(default_factory=dict)
    predicates: list[str] = Field(default_factory=list)
    valid: bool = True
    violations: list[dict[str, Any]] = Field(default_factory=list)


class UploadResponse(BaseModel):
    status: Literal["ok", "error"] = "ok"
    files_received: int = 0
    structures: list[RegistryEntry] = Field(default_factory=list)
    registry_seal: str = ""
    errors: list[str] = Field(default_factory=list)


class ErrorResponse(BaseModel):
    status: Literal["error"] = "error"
    errors: list[str] = Field(default_factory=list)


class _SystemChoice(BaseModel):
    model_config = ConfigDict(extra="allow")

    system: str = "gh"
    truncation: dict[str, Any] = Field(default_factory=dict)
    generators: list[str] = Field(default_factory=list)

    @model_validator(mode="before")
    @classmethod
    def _normalize_aliases(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        d = dict(data)
        if "system" not in d and isinstance(d.get("builtin"), str):
            d["system"] = d["builtin"]
        return d


class RhoRequest(_SystemChoice):
    """ρ between two registered structures (ids from /structures)."""

    left: str
    right: str
    mode: Literal["exact", "heuristic"] = "exact"
    anchors: list[tuple[str, str, str]] = Field(default_factory=list)
    force: bool = False
    budget: int | None = Field(default=None, ge=1)
    seed: int | None = None


class BafRequest(_SystemChoice):
    left: str
    right: str
    k: int | None = Field(default=None, ge=0)
    rounds: int | None = Field(default=None, ge=0)
    omega: list[float] = Field(default_factory=lambda: [1.0])
    shift_increasing: bool = True
    rows: bool = False


class ResultResponse(BaseModel):
    """A sealed computation record (the same record the CLI prints in machine mode)."""

    status: Literal["ok"] = "ok"
    record: dict[str, Any]
