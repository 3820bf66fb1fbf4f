"""HTTP API tests.

Groups:
  * health and calibrate
  * run — artifacts, determinism, failure shapes
  * train — tiny-budget smoke, bundle round trip
  * compare and stats endpoints
"""

import base64

import pytest
from fastapi.testclient import TestClient

from evcsim import __version__
from evcsim.service import create_app
from evcsim.td3 import AgentBundle

TINY_AGENT = {
    "max_episodes": 2,
    "episode_steps": 40,
    "warmup_steps": 60,
    "batch": 16,
    "stall_episodes": 50,
    "stop_window": 50,
    "stop_threshold": -1e9,
}


@pytest.fixture(scope="module")
def client():
    with TestClient(create_app()) as c:
        yield c


# ------------------------------------------------------ health and calibrate


def test_health_reports_version(client):
    body = client.get("/health").json()
    assert body == {"status": "ok", "version": __version__}


def test_calibrate_returns_full_parameter_set(client):
    body = client.post("/calibrate", json={}).json()
    assert body["params"]["r_load"] == pytest.approx(21.2, rel=0.05)
    assert body["targets"]["p_pv"] == pytest.approx(1043.5996)


def test_calibrate_accepts_target_overrides(client):
    stock = client.post("/calibrate", json={}).json()["params"]
    moved = client.post(
        "/calibrate", json={"targets": {"v_bus": 53.5}}
    ).json()["params"]
    assert moved["r_load"] != stock["r_load"]


def test_calibrate_rejects_unknown_target(client):
    resp = client.post("/calibrate", json={"targets": {"power": 1.0}})
    assert resp.status_code == 422
    assert resp.json()["detail"]["error"] == "invalid-targets"


# ------------------------------------------------------------------------ run


def test_run_returns_all_artifacts(client):
    resp = client.post(
        "/run", json={"config": {"seed": 3, "duration": 8.0,
                                 "attack": {"windows": {"pv": [5.0, 7.0]}}}}
    )
    assert resp.status_code == 200
    body = resp.json()
    assert body["time_series_csv"].startswith("# evcsim=")
    assert body["stats_csv"].count("\n") > 6
    assert len(body["svgs"]) == 5
    assert body["config_hash"]


def test_run_is_deterministic_across_calls(client):
    req = {"config": {"seed": 6, "duration": 8.0,
                      "attack": {"windows": {"bes": [5.0, 6.0]}}}}
    a = client.post("/run", json=req).json()
    b = client.post("/run", json=req).json()
    assert a["time_series_csv"] == b["time_series_csv"]
    assert a["stats_csv"] == b["stats_csv"]
    assert a["svgs"] == b["svgs"]


def test_run_rejects_bad_config_with_one_line(client):
    resp = client.post("/run", json={"config": {"duration": -2}})
    assert resp.status_code == 422
    detail = resp.json()["detail"]
    assert detail["error"] == "invalid-config"
    assert "\n" not in detail["message"]


def test_run_without_bundle_for_td3_channel_fails(client):
    resp = client.post(
        "/run", json={"config": {"strategy": {"pv": "td3"}}}
    )
    assert resp.status_code == 422
    assert resp.json()["detail"]["error"] == "missing-agent"


def test_run_with_unreadable_bundle_path_fails(client):
    resp = client.post(
        "/run",
        json={"config": {"strategy": {"pv": "td3",
                                      "agents": {"pv": "/nonexistent/a.bin"}}}},
    )
    assert resp.status_code == 422
    assert resp.json()["detail"]["error"] == "run-failed"


# ---------------------------------------------------------------------- train


def test_train_single_agent_round_trips_bundle(client):
    resp = client.post(
        "/train",
        json={"config": {"seed": 1, "agent": {"pv": TINY_AGENT}}, "agent": "pv"},
    )
    assert resp.status_code == 200
    body = resp.json()
    art = body["agents"]["pv"]
    assert art["episodes"] == 2
    assert art["seed"] == 1
    lines = art["reward_csv"].splitlines()
    assert lines[4] == "episode,eval_return,train_return"
    assert lines[5].startswith("0,") and lines[5].endswith(",")
    assert len(lines) == 6 + art["episodes"]
    bundle = AgentBundle.from_bytes(base64.b64decode(art["bundle_b64"]))
    assert bundle.cfg.channel == "pv"


def test_train_rejects_unknown_agent_name(client):
    resp = client.post("/train", json={"config": {}, "agent": "grid"})
    assert resp.status_code == 422
    assert resp.json()["detail"]["error"] == "invalid-agent"


def test_train_all_runs_curriculum(client):
    resp = client.post(
        "/train",
        json={
            "config": {
                "seed": 2,
                "agent": {ch: TINY_AGENT for ch in ("pv", "bes", "ev")},
            },
            "agent": "all",
        },
    )
    assert resp.status_code == 200
    agents = resp.json()["agents"]
    assert set(agents) == {"pv", "bes", "ev"}


# ----------------------------------------------------------- compare and stats


def test_compare_returns_rows_per_strategy(client):
    resp = client.post(
        "/compare",
        json={
            "config": {"seed": 3},
            "strategies": ["legacy", "brute_force"],
        },
    )
    assert resp.status_code == 200
    body = resp.json()
    assert set(body["time_series"]) == {"legacy", "brute_force"}
    header = [
        ln for ln in body["stats_csv"].splitlines() if not ln.startswith("#")
    ][0]
    assert header.startswith("strategy,signal,phase")


def test_compare_rejects_unknown_strategy(client):
    resp = client.post(
        "/compare", json={"config": {}, "strategies": ["osmosis"]}
    )
    assert resp.status_code == 422
    assert resp.json()["detail"]["error"] == "run-failed"


def test_stats_endpoint_round_trips_run_output(client):
    run_body = client.post(
        "/run", json={"config": {"seed": 3, "duration": 8.0,
                                 "attack": {"windows": {"pv": [5.0, 7.0]}}}}
    ).json()
    resp = client.post("/stats", json={"csv_text": run_body["time_series_csv"]})
    assert resp.status_code == 200
    text = resp.json()["stats_csv"]
    assert f"# config={run_body['config_hash']}" in text
    assert "v_bus,attack" in text


def test_stats_endpoint_rejects_garbage(client):
    resp = client.post("/stats", json={"csv_text": "not,a,log\n"})
    assert resp.status_code == 422
    assert resp.json()["detail"]["error"] == "invalid-input"
