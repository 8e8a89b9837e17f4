import json

import pytest

from app.cli import main
from app.core import registry
from app.core.registry import StructureRegistry


def _records(capsys):
    out = capsys.readouterr().out
    return [json.loads(line) for line in out.splitlines() if line.strip()]


def test_validate_ok_and_invalid(files, capsys):
    assert main(["validate", str(files["pair1"])]) == 0
    (rec,) = _records(capsys)
    assert rec["valid"] is True
    assert rec["structure"] == "pair1"
    assert "seal" in rec

    assert main(["validate", str(files["pair1"]), str(files["triangle"])]) == 1
    recs = _records(capsys)
    assert [r["valid"] for r in recs] == [True, False]
    assert recs[1]["violations"][0]["kind"] == "triangle"


def test_bad_file_exits_two(files, capsys):
    assert main(["validate", str(files["bad"])]) == 2
    assert "invalid JSON" in capsys.readouterr().err
    assert main(["rho", str(files["pair1"]), str(files["bad"].with_name("absent.json"))]) == 2


def test_rho_exact(files, capsys):
    assert main(["rho", str(files["pair1"]), str(files["pair3"])]) == 0
    (rec,) = _records(capsys)
    assert rec["command"] == "rho" and rec["mode"] == "exact"
    assert rec["value"] == pytest.approx(1.0)
    assert rec["exact"] is True


def test_rho_heuristic_bounds_exact(files, capsys):
    assert main(["rho", str(files["pair1"]), str(files["pair3"]), "--heuristic", "--seed", "1", "--budget", "50"]) == 0
    (rec,) = _records(capsys)
    assert rec["value"] >= 1.0 - 1e-9
    assert rec["exact"] is False


def test_rho_with_anchors(files, capsys):
    args = ["rho", str(files["pair1"]), str(files["pair3"]), "--anchor", "S:p:u", "--anchor", "S:p:v"]
    assert main(args) == 0
    (rec,) = _records(capsys)
    assert rec["value"] == pytest.approx(1.5)


def test_rho_refuses_invalid_structure(files, capsys):
    assert main(["rho", str(files["triangle"]), str(files["pair1"])]) == 1
    (rec,) = _records(capsys)
    assert rec["command"] == "validate" and rec["valid"] is False


def test_bad_flags_exit_two(files, capsys):
    assert main(["rho", str(files["pair1"]), str(files["pair3"]), "--trunc", "nope"]) == 2
    assert main(["rho", str(files["pair1"]), str(files["pair3"]), "--anchor", "S:p"]) == 2
    assert main(["rho", str(files["pair1"]), str(files["pair3"]), "--system", "unknown"]) == 2


def test_baf_capped_and_rounds(files, capsys):
    assert main(["baf", str(files["point"]), str(files["two"]), "--k", "2"]) == 0
    (rec,) = _records(capsys)
    assert rec["value"] == pytest.approx(1.0)
    assert rec["scott_rank"] == 2

    assert main(["baf", str(files["point"]), str(files["two"]), "--rounds", "1"]) == 0
    (rec,) = _records(capsys)
    assert rec["rounds"] == 1 and rec["value"] == 0.0


def test_baf_depth_cap_exits_two(files, capsys):
    assert main(["baf", str(files["point"]), str(files["two"]), "--k", "2", "--rounds", "3"]) == 2


def test_scott_single_structure(files, capsys):
    assert main(["scott", str(files["pair1"]), "--k", "2"]) == 0
    (rec,) = _records(capsys)
    assert rec["command"] == "scott"
    assert rec["scott_rank"] == 0


def test_eval(files, capsys):
    args = ["eval", "(scale 0.5 (d S x0 x1))", str(files["pair3"]), "--assign", "x0=u", "--assign", "x1=v"]
    assert main(args) == 0
    (rec,) = _records(capsys)
    assert rec["value"] == pytest.approx(1.5)
    assert rec["modulus"]["lipschitz"] == {"x0": 0.5, "x1": 0.5}


def test_dis_resolves_paths_next_to_correlation(files, write_json, capsys):
    corr = write_json(
        "corr.json",
        {"left": "pair1.json", "right": "pair3.json", "relation": {"S": [[1, 0], [0, 1]]}},
    )
    assert main(["dis", str(corr)]) == 0
    (rec,) = _records(capsys)
    assert rec["command"] == "dis"
    assert rec["value"] == pytest.approx(1.0)


def test_dis_resolves_registry_ids(files, write_json, monkeypatch, capsys):
    reg = StructureRegistry()
    monkeypatch.setattr(registry, "_REGISTRY", reg)
    left = reg.add_bytes(files["pair1"].read_bytes(), name="pair1")
    right = reg.add_bytes(files["pair3"].read_bytes(), name="pair3")
    corr = write_json("by_id.json", {"left": left.id, "right": right.id, "relation": {"S": [[1, 0], [0, 1]]}})
    assert main(["dis", str(corr)]) == 0
    (rec,) = _records(capsys)
    assert rec["value"] == pytest.approx(1.0)


def test_embound_writes_structure(write_json, tmp_path, capsys):
    banach = write_json("line.json", {"dim": 1, "norm": "l1", "samples": [[0], [1]], "radius_cap": 1.0})
    out = tmp_path / "emb.json"
    assert main(["embound", str(banach), "--structure-out", str(out)]) == 0
    (rec,) = _records(capsys)
    assert rec["norms"][:2] == pytest.approx([0.0, 1.0])
    assert rec["norms"][-1] == "inf"
    assert "sorts" in json.loads(out.read_text(encoding="utf-8"))


def test_demo(capsys):
    assert main(["demo", "fghk"]) == 0
    (rec,) = _records(capsys)
    assert rec["demo"] == "fghk" and rec["ok"] is True


def test_human_format_and_output_file(files, tmp_path, capsys):
    assert main(["--format", "human", "rho", str(files["pair1"]), str(files["pair3"])]) == 0
    text = capsys.readouterr().out
    assert any(line.startswith("value") for line in text.splitlines())

    sink = tmp_path / "records.jsonl"
    for _ in range(2):
        assert main(["--output", str(sink), "validate", str(files["point"])]) == 0
    lines = sink.read_text(encoding="utf-8").splitlines()
    assert len(lines) == 2
    assert json.loads(lines[0])["seal"] == json.loads(lines[1])["seal"]


def test_mode_flags_are_exclusive(files, capsys):
    assert main(["rho", str(files["pair1"]), str(files["pair3"]), "--exact"]) == 0
    assert _records(capsys)[0]["mode"] == "exact"
    assert main(["baf", str(files["point"]), str(files["two"]), "--k", "2", "--fixpoint"]) == 0
    assert _records(capsys)[0]["scott_rank"] == 2
    with pytest.raises(SystemExit):
        main(["rho", str(files["pair1"]), str(files["pair3"]), "--exact", "--heuristic"])
