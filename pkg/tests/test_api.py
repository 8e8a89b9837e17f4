import json

import pytest
from fastapi.testclient import TestClient

from app.core import registry
from app.core.registry import StructureRegistry
from app.main import create_app
from conftest import structure_json


@pytest.fixture
def client(monkeypatch):
    monkeypatch.setattr(registry, "_REGISTRY", StructureRegistry())
    return TestClient(create_app())


def _upload(client, **docs):
    files = [
        (name, (f"{name}.json", doc if isinstance(doc, bytes) else json.dumps(doc).encode(), "application/json"))
        for name, doc in docs.items()
    ]
    return client.post("/correla/structures", files=files)


def _ids(client):
    r = _upload(
        client,
        point=structure_json(["a"], [[0]], 2),
        two=structure_json(["b", "c"], [[0, 2], [2, 0]], 2),
        pair1=structure_json(["p", "q"], [[0, 1], [1, 0]], 3),
        pair3=structure_json(["u", "v"], [[0, 3], [3, 0]], 3),
    )
    assert r.status_code == 200
    return {e["name"].removesuffix(".json"): e["id"] for e in r.json()["structures"]}


def test_health_and_manifest(client):
    assert client.get("/health").json() == {"status": "ok"}
    body = client.get("/").json()
    assert body["name"] == "CORRELA"
    assert "gh" in body["systems"]
    assert "seal" in body


def test_upload_and_list(client):
    ids = _ids(client)
    assert len(ids) == 4
    r = client.get("/correla/structures")
    assert r.status_code == 200
    assert r.headers["ETag"].strip('"') == r.json()["registry_seal"]
    assert sorted(e["id"] for e in r.json()["structures"]) == sorted(ids.values())
    assert client.get(f"/correla/structures/{ids['pair1']}").json()["sorts"] == {"S": 2}


def test_partial_upload_reports_errors(client):
    r = _upload(client, good=structure_json(["a"], [[0]], 1), bad=b"{not json")
    body = r.json()
    assert r.status_code == 200
    assert len(body["structures"]) == 1
    assert any("invalid JSON" in e for e in body["errors"])


def test_upload_with_nothing_usable(client):
    r = _upload(client, bad=b"{not json")
    assert r.status_code == 400
    assert r.json()["status"] == "error"


def test_validate_route(client):
    r = _upload(client, tri=structure_json(["a", "b", "c"], [[0, 1, 3], [1, 0, 1], [3, 1, 0]], 3))
    (entry,) = r.json()["structures"]
    assert entry["valid"] is False
    rec = client.get(f"/correla/structures/{entry['id']}/validate").json()["record"]
    assert rec["violations"][0]["kind"] == "triangle"


def test_rho(client):
    ids = _ids(client)
    r = client.post("/correla/rho", json={"left": ids["pair1"], "right": ids["pair3"]})
    assert r.status_code == 200
    rec = r.json()["record"]
    assert rec["value"] == pytest.approx(1.0)
    assert rec["system"] == "gh"


def test_rho_refuses_invalid_structure(client):
    ids = _ids(client)
    r = _upload(client, tri=structure_json(["a", "b", "c"], [[0, 1, 3], [1, 0, 1], [3, 1, 0]], 3))
    tri = r.json()["structures"][0]["id"]
    r = client.post("/correla/rho", json={"left": tri, "right": ids["pair1"]})
    assert r.status_code == 400
    assert "invalid" in r.json()["errors"][0]


def test_baf(client):
    ids = _ids(client)
    r = client.post("/correla/baf", json={"left": ids["point"], "right": ids["two"], "k": 2})
    rec = r.json()["record"]
    assert rec["value"] == pytest.approx(1.0)
    assert rec["scott_rank"] == 2
    r = client.post("/correla/baf", json={"left": ids["point"], "right": ids["two"], "k": 2, "rounds": 1})
    assert r.json()["record"]["value"] == 0.0


def test_unknown_id_is_400(client):
    r = client.post("/correla/rho", json={"left": "missing", "right": "missing"})
    assert r.status_code == 400
    assert "unknown structure id" in r.json()["errors"][0]


def test_unknown_system_is_400(client):
    ids = _ids(client)
    r = client.post("/correla/rho", json={"left": ids["pair1"], "right": ids["pair3"], "system": "nope"})
    assert r.status_code == 400


def test_demo_route(client):
    rec = client.get("/correla/demo/fghk").json()["record"]
    assert rec["ok"] is True
    assert client.get("/correla/demo/nope").status_code == 400


def test_seal_etag(client):
    r = client.get("/correla/seal")
    etag = r.headers["ETag"]
    assert client.get("/correla/seal", headers={"If-None-Match": etag}).status_code == 304
    _ids(client)
    assert client.get("/correla/seal", headers={"If-None-Match": etag}).status_code == 200


def test_cors_settings_from_env(monkeypatch):
    from app.core import config

    assert config.cors_settings()["allow_origin_regex"] == ".*"
    monkeypatch.setenv("CORRELA_CORS_ORIGINS", "https://a.example, *")
    monkeypatch.setenv("CORRELA_CORS_CREDENTIALS", "true")
    out = config.cors_settings()
    assert out["allow_origins"] == ["https://a.example"]
    assert out["allow_origin_regex"] is None
    assert out["allow_credentials"] is True
