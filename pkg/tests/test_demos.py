import pytest

from app.core.demos import DEMOS, run_demo
from app.core.errors import CorrelaError


@pytest.mark.parametrize("name", DEMOS)
def test_every_demo_passes(name):
    report = run_demo(name)
    assert report.ok, [c.as_dict() for c in report.criteria if not c.ok]
    out = report.as_dict()
    assert out["demo"] == name
    assert out["criteria"]


def test_demo_name_is_case_insensitive():
    assert run_demo(" FGHK ").name == "fghk"


def test_unknown_demo():
    with pytest.raises(CorrelaError):
        run_demo("nope")


def test_bm_map_criteria_are_snapped():
    report = run_demo("bm")
    maps = [c for c in report.criteria if c.name.startswith("map ")]
    assert len(maps) == 9
    for c in maps:
        assert c.detail["residual"] > 0
        assert c.detail["distortion"] <= c.detail["residual"] * c.detail["modulus"] + 0.4 + 1e-9
