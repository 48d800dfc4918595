import time

import pytest
from fastapi.testclient import TestClient

from bilinear_cg.config import OUTPUT_DIR_ENV
from bilinear_cg.service import app as app_module
from bilinear_cg.verify import Check


@pytest.fixture
def client(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path))
    with TestClient(app_module.create_app()) as c:
        yield c


def config(**kw):
    base = dict(example=1, level=3, alpha1=1e6, tol=1e-5)
    base.update(kw)
    return base


def wait(client, job_id, timeout=120.0):
    end = time.monotonic() + timeout
    while True:
        job = client.get(f"/jobs/{job_id}").json()
        if job["state"] not in ("queued", "running") or time.monotonic() > end:
            return job
        time.sleep(0.05)


def test_health(client):
    assert client.get("/health").json() == {"status": "ok"}


def test_run_job_round_trip(client, tmp_path):
    resp = client.post("/jobs", json={"kind": "run", "config": config()})
    assert resp.status_code == 202
    job = wait(client, resp.json()["id"])
    assert job["state"] == "done"
    (row,) = job["rows"]
    assert row["level"] == 3 and row["status"] == "converged"
    assert row["err_u"] > 0 and row["ratio_u_err"] is None
    # the environment override redirects output
    assert (tmp_path / "summary.csv").exists()


def test_sweep_job_has_ratios(client):
    resp = client.post("/jobs", json={"kind": "sweep", "config": config(level=None, levels=[3, 4])})
    job = wait(client, resp.json()["id"])
    assert job["state"] == "done"
    assert [r["level"] for r in job["rows"]] == [3, 4]
    assert job["rows"][0]["ratio_y_err"] is None and job["rows"][1]["ratio_y_err"] > 1


def test_unknown_job(client):
    assert client.get("/jobs/nope").status_code == 404


@pytest.mark.parametrize(
    "body",
    [
        {"kind": "run", "config": config(tol=5.0)},
        {"kind": "run", "config": config(colour="red")},
        {"kind": "walk", "config": config()},
        {"kind": "run", "config": config(level=None, levels=[3, 4])},
    ],
)
def test_invalid_requests(client, body):
    assert client.post("/jobs", json=body).status_code == 422


def test_failed_job_is_reported(client, monkeypatch):
    def boom(cfg):
        raise RuntimeError("no luck")

    monkeypatch.setattr(app_module, "run_experiment", boom)
    job = wait(client, client.post("/jobs", json={"kind": "run", "config": config()}).json()["id"])
    assert job["state"] == "failed" and job["error"] == "no luck" and job["error_kind"] == "RuntimeError"


def test_verify_endpoint(client, monkeypatch):
    monkeypatch.setattr(app_module, "run_verify", lambda: [Check("a", 0.0, 1.0), Check("b", 3.0, 1.0)])
    body = client.get("/verify").json()
    assert body["passed"] is False
    assert [c["passed"] for c in body["checks"]] == [True, False]


def test_cli_thin_client(tmp_path, monkeypatch, capsys):
    import httpx

    from bilinear_cg import cli

    monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path))
    app = app_module.create_app()
    monkeypatch.setattr(httpx, "Client", lambda base_url, timeout: TestClient(app, base_url=base_url))
    path = tmp_path / "cfg.txt"
    path.write_text("example = 1\nlevel = 3\nalpha1 = 1e6\ntol = 1e-5\n")
    code = cli.main(["run", str(path), "--server", "http://test", "--poll", "0.05"])
    out = capsys.readouterr().out
    assert code == cli.EXIT_OK
    assert out.splitlines()[1].startswith("3,") and out.rstrip().endswith("converged")
    path.write_text("example = 1\nlevel = 3\nalpha1 = 1e6\ntol = 1e-5\nmax_outer = 1\n")
    assert cli.main(["run", str(path), "--server", "http://test", "--poll", "0.05"]) == cli.EXIT_NOT_CONVERGED
