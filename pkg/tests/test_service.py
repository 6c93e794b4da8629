import pytest
from fastapi.testclient import TestClient

from mesohom import service

SMALL_PATCH = {"scenario": "patch-linear", "width_m": 0.06, "height_m": 0.06, "bins_nx": 3, "bins_ny": 3}


@pytest.fixture
def client(tmp_path, monkeypatch):
    monkeypatch.setenv("MESOHOM_RUN_ROOT", str(tmp_path))
    return TestClient(service.app)


@pytest.fixture
def run_id(client):
    r = client.post("/runs", json={"config": SMALL_PATCH})
    assert r.status_code == 200
    return r.json()["run_id"]


def test_health(client):
    r = client.get("/health")
    assert r.status_code == 200 and r.json()["status"] == "ok"


def test_run_manifest_and_files(client, run_id):
    man = client.get(f"/runs/{run_id}").json()
    assert man["scenario"] == "patch-linear"
    assert "bins_exact.csv" in man["files"]
    csv = client.get(f"/runs/{run_id}/files/bins_exact.csv")
    assert csv.status_code == 200 and csv.text.startswith("variant,bin_ix")


def test_config_text_is_accepted(client):
    text = "".join(f"{k} = {v}\n" for k, v in SMALL_PATCH.items())
    r = client.post("/runs", json={"config_text": text, "config": {"seed": 2}})
    assert r.status_code == 200
    assert r.json()["manifest"]["metrics"]["p_max_rel_error"] <= 1e-9


@pytest.mark.parametrize("body", [{"config": {"seed": 1}}, {"config": {"scenario": "bridge"}}, {"config_text": "x y"}])
def test_bad_configs_are_422(client, body):
    assert client.post("/runs", json=body).status_code == 422


def test_unknown_run_and_file(client, run_id):
    assert client.get("/runs/not-a-uuid").status_code == 404
    assert client.get("/runs/00000000-0000-0000-0000-000000000000").status_code == 404
    assert client.get(f"/runs/{run_id}/files/nothing.csv").status_code == 404
    assert client.get(f"/runs/{run_id}/files/..%2Fescape.txt").status_code == 404


def test_compare_endpoint(client, run_id):
    ref = client.get(f"/runs/{run_id}/files/bins_exact.csv").text
    r = client.post(f"/runs/{run_id}/compare", json={"reference_csv": ref, "target": "bins_exact.csv"})
    assert r.status_code == 200 and r.json()["passed"]
    lines = ref.splitlines()
    cells = lines[1].split(",")
    cells[-1] = str(float(cells[-1]) * 1.001)
    lines[1] = ",".join(cells)
    bad = "\n".join(lines) + "\n"
    body = client.post(f"/runs/{run_id}/compare", json={"reference_csv": bad, "target": "bins_exact.csv"}).json()
    assert not body["passed"]
    assert [c["name"] for c in body["columns"] if not c["passed"]] == ["ay[1/m]"]


def test_compare_schema_mismatch_is_422(client, run_id):
    r = client.post(f"/runs/{run_id}/compare", json={"reference_csv": "bin_ix,bin_iy,zz\n0,0,1\n"})
    assert r.status_code == 422
