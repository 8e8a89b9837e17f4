# conftest.py
from __future__ import annotations

import json
import sys
from pathlib import Path
from typing import Any, Callable

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from app.core.mstruct import MetricStructure, metric_space  # noqa: E402


@pytest.fixture
def point() -> MetricStructure:
    return metric_space(["a"], [[0.0]], diameter_bound=2.0, name="point")


@pytest.fixture
def two_apart() -> MetricStructure:
    """Two points at distance 2."""
    return metric_space(["b", "c"], [[0.0, 2.0], [2.0, 0.0]], diameter_bound=2.0, name="two")


@pytest.fixture
def pair_1() -> MetricStructure:
    return metric_space(["p", "q"], [[0.0, 1.0], [1.0, 0.0]], diameter_bound=3.0, name="pair1")


@pytest.fixture
def pair_3() -> MetricStructure:
    return metric_space(["u", "v"], [[0.0, 3.0], [3.0, 0.0]], diameter_bound=3.0, name="pair3")


@pytest.fixture
def line3() -> MetricStructure:
    """0 - 1 - 2 on a line."""
    return metric_space(
        ["x", "y", "z"],
        [[0.0, 1.0, 2.0], [1.0, 0.0, 1.0], [2.0, 1.0, 0.0]],
        name="line3",
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(7)


def structure_json(points: list[str], metric: list[list[float]], bound: float, **extra: Any) -> dict[str, Any]:
    return {"sorts": [{"name": "S", "points": points, "metric": metric, "diameter_bound": bound}], **extra}


@pytest.fixture
def write_json(tmp_path: Path) -> Callable[[str, Any], Path]:
    def _write(name: str, obj: Any) -> Path:
        p = tmp_path / name
        p.write_text(obj if isinstance(obj, str) else json.dumps(obj), encoding="utf-8")
        return p

    return _write


@pytest.fixture
def files(write_json: Callable[[str, Any], Path]) -> dict[str, Path]:
    """Structure files used by the CLI and API tests."""
    return {
        "point": write_json("point.json", structure_json(["a"], [[0]], 2)),
        "two": write_json("two.json", structure_json(["b", "c"], [[0, 2], [2, 0]], 2)),
        "pair1": write_json("pair1.json", structure_json(["p", "q"], [[0, 1], [1, 0]], 3)),
        "pair3": write_json("pair3.json", structure_json(["u", "v"], [[0, 3], [3, 0]], 3)),
        "triangle": write_json(
            "triangle.json",
            structure_json(["a", "b", "c"], [[0, 1, 3], [1, 0, 1], [3, 1, 0]], 3),
        ),
        "bad": write_json("bad.json", "{not json"),
    }
