# app/models/files.py
from __future__ import annotations

from typing import Any

from pydantic import BaseModel, ConfigDict, Field, model_validator


class SortSpec(BaseModel):
    """One sort: labels, row-major metric, diameter bound."""

    model_config = ConfigDict(extra="allow", populate_by_name=True)

    name: str
    points: list[str]
    metric: list[list[float]]
    diameter_bound: float

    @model_validator(mode="before")
    @classmethod
    def _normalize_aliases(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        d = dict(data)
        if "diameter_bound" not in d:
            for alias in ("diameterBound", "diam", "bound"):
                if alias in d:
                    d["diameter_bound"] = d[alias]
                    break
        if "points" in d and isinstance(d["points"], list):
            d["points"] = [str(p) for p in d["points"]]
        return d


class PredicateSpec(BaseModel):
    """
    Real-valued predicate with a dense table.

    `values` is nested in point-index order of `arg_sorts`; `range` is the syntactic
    interval [a, b]; `lipschitz` holds one bound per argument position.
    """

    model_config = ConfigDict(extra="allow", populate_by_name=True)

    name: str
    arity: int = Field(..., ge=1)
    arg_sorts: list[str]
    values: Any
    range: tuple[float, float]
    lipschitz: list[float]

    @model_validator(mode="before")
    @classmethod
    def _normalize_aliases(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        d = dict(data)
        if "arg_sorts" not in d and isinstance(d.get("argSorts"), list):
            d["arg_sorts"] = d.get("argSorts")
        if "lipschitz" not in d and isinstance(d.get("lipschitz_bounds"), list):
            d["lipschitz"] = d.get("lipschitz_bounds")
        if "arity" not in d and isinstance(d.get("arg_sorts"), list):
            d["arity"] = len(d["arg_sorts"])
        return d


class StructureFile(BaseModel):
    """Top-level structure file (field names normative)."""

    model_config = ConfigDict(extra="allow")

    sorts: list[SortSpec]
    predicates: list[PredicateSpec] = Field(default_factory=list)
    constants: dict[str, tuple[str, str]] = Field(default_factory=dict)


class CorrelationFile(BaseModel):
    """
    Correlation file: `left`/`right` are structure paths or registry ids; `relation`
    maps sort name → 0/1 matrix (left points × right points); `anchors` are
    [sort, left_label, right_label] triples.
    """

    model_config = ConfigDict(extra="allow")

    left: str
    right: str
    relation: dict[str, list[list[int]]]
    anchors: list[tuple[str, str, str]] = Field(default_factory=list)

    @model_validator(mode="before")
    @classmethod
    def _normalize_aliases(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        d = dict(data)
        if "relation" not in d:
            for alias in ("relations", "matrices", "sorts"):
                if isinstance(d.get(alias), dict):
                    d["relation"] = d[alias]
                    break
        return d


class SystemFile(BaseModel):
    """Distortion-system spec: a builtin family, explicit DSL generators, or both."""

    model_config = ConfigDict(extra="allow")

    name: str = "custom"
    builtin: str | None = None
    truncation: dict[str, Any] = Field(default_factory=dict)
    generators: list[str] = Field(default_factory=list)


class BanachFile(BaseModel):
    """Sampled normed space: `samples` are row vectors (complex entries as [re, im])."""

    model_config = ConfigDict(extra="allow")

    dim: int = Field(..., ge=1)
    field: str = "real"
    norm: str = "l2"
    weights: list[float] | None = None
    samples: list[list[Any]]
    radius_cap: float = Field(..., gt=0)
