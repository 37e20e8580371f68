"""HTTP API: schemas, endpoints, and the shared factorization cache."""

import pytest
from fastapi.testclient import TestClient

from swarmtraj.service.app import create_app
from swarmtraj.service.schemas import GenerateRequest, ScenarioModel


@pytest.fixture()
def client():
    return TestClient(create_app())


def small_square_scenario(client, n=4, m=40):
    response = client.post(
        "/scenarios/generate",
        json={"generator": "square", "n": n, "side": 8.0, "radius": 0.4, "m": m},
    )
    assert response.status_code == 200
    return response.json()


def test_health_reports_cache_stats(client):
    doc = client.get("/health").json()
    assert doc["status"] == "ok"
    assert doc["cache"]["entries"] == 0


def test_generate_square_scenario(client):
    doc = small_square_scenario(client, n=8)
    assert doc["n"] == 8
    assert len(doc["start"]) == 8
    assert doc["radius"] == pytest.approx(0.4)


def test_generate_rejects_bad_parameters(client):
    response = client.post(
        "/scenarios/generate", json={"generator": "hallway", "n": 3, "radius": 0.4}
    )
    assert response.status_code == 422


def test_generate_unknown_generator_rejected(client):
    response = client.post("/scenarios/generate", json={"generator": "spiral"})
    assert response.status_code == 422


def test_validate_endpoint_flags_violations(client):
    scenario = {
        "radius": 0.5,
        "start": [[0, 0, 0], [0.1, 0, 0]],
        "goal": [[5, 0, 0], [5, 3, 0]],
    }
    doc = client.post("/scenarios/validate", json=scenario).json()
    assert doc["valid"] is False
    assert any("start pair (0, 1)" in v for v in doc["violations"])


def test_validate_endpoint_accepts_clean_scenario(client):
    scenario = small_square_scenario(client)
    doc = client.post("/scenarios/validate", json=scenario).json()
    assert doc == {"valid": True, "violations": []}


def test_solve_returns_full_report(client):
    scenario = small_square_scenario(client)
    response = client.post("/solve", json={"scenario": scenario, "settings": {"max_iters": 150}})
    assert response.status_code == 200
    doc = response.json()
    assert doc["converged"] is True
    assert len(doc["trajectories"]) == 4
    assert len(doc["trajectories"][0]) == 40
    assert len(doc["times"]) == 40
    assert doc["metrics"]["min_normalized_distance"] >= 0.95
    assert doc["timings"]["total_s"] > 0
    assert len(doc["residual_max_history"]) == doc["iterations"]


def test_solve_can_omit_trajectories(client):
    scenario = small_square_scenario(client)
    doc = client.post(
        "/solve", json={"scenario": scenario, "include_trajectories": False}
    ).json()
    assert doc["trajectories"] is None


def test_solve_rejects_infeasible_instance(client):
    scenario = {
        "radius": 0.5,
        "start": [[0, 0, 0], [0.1, 0, 0]],
        "goal": [[5, 0, 0], [5, 3, 0]],
    }
    response = client.post("/solve", json={"scenario": scenario})
    assert response.status_code == 422
    assert "violations" in response.json()["detail"]


def test_solve_rejects_malformed_scenario(client):
    response = client.post("/solve", json={"scenario": {"start": [[0, 0, 0]]}})
    assert response.status_code == 422


def test_repeat_solves_share_factorizations(client):
    scenario = small_square_scenario(client)
    client.post("/solve", json={"scenario": scenario})
    first = client.get("/cache/stats").json()
    client.post("/solve", json={"scenario": scenario, "settings": {"max_iters": 30}})
    second = client.get("/cache/stats").json()
    assert first["factorizations"] == 10
    assert second["factorizations"] == 10  # warm cache, no new factorization work
    assert second["hits"] > first["hits"]


def test_cache_build_endpoint(client):
    doc = client.post("/cache/build", json={"n": 4, "m": 40}).json()
    assert doc["entries"] == 10
    assert doc["kkt_dimension"] == 4 * 11 + 6 * 4
    stats = client.get("/cache/stats").json()
    assert stats["factorizations"] == 10

    # a later solve with the same shape is all cache hits
    scenario = small_square_scenario(client)
    client.post("/solve", json={"scenario": scenario})
    assert client.get("/cache/stats").json()["factorizations"] == 10


def test_solve_honors_solver_settings(client):
    scenario = small_square_scenario(client)
    doc = client.post(
        "/solve",
        json={
            "scenario": scenario,
            "settings": {"max_iters": 3, "rho_initial": 2.0, "rho_stages": 2, "tolerance": 1e-6},
        },
    ).json()
    assert doc["converged"] is False
    assert doc["iterations"] == 3


def test_settings_validation_rejected(client):
    scenario = small_square_scenario(client)
    response = client.post(
        "/solve", json={"scenario": scenario, "settings": {"rho_growth": 0.5}}
    )
    assert response.status_code == 422


def test_scenario_model_accepts_bare_positions():
    model = ScenarioModel.model_validate(
        {"radius": 0.4, "start": [[0, 0, 0], [4, 0, 0]], "goal": [[4, 4, 0], [0, 4, 0]]}
    )
    spec = model.to_spec()
    assert spec.num_agents == 2
    assert spec.start[0].velocity == (0.0, 0.0, 0.0)


def test_generate_request_roundtrips_through_spec():
    req = GenerateRequest(generator="random", n=4, seed=3, m=30)
    spec = req.to_spec()
    model = ScenarioModel.from_spec(spec)
    assert model.to_spec() == spec


def test_disk_backed_service_cache(tmp_path):
    app = create_app(cache_dir=str(tmp_path))
    client = TestClient(app)
    doc = client.post("/cache/build", json={"n": 2, "m": 30}).json()
    assert doc["bytes"] > 0
    assert (tmp_path / doc["fingerprint"] / "manifest.json").exists()

    # a fresh service instance over the same directory loads, not rebuilds
    client2 = TestClient(create_app(cache_dir=str(tmp_path)))
    scenario = client2.post(
        "/scenarios/generate",
        json={"generator": "square", "n": 2, "side": 8.0, "radius": 0.4, "m": 30},
    ).json()
    response = client2.post("/solve", json={"scenario": scenario})
    assert response.status_code == 200
    assert client2.get("/cache/stats").json()["factorizations"] == 0
