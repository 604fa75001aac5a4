"""
Tests for the Neyman Lab web API
Run with: pytest test_app.py
"""
import pytest
from fastapi.testclient import TestClient

from app import app

client = TestClient(app)

TINY = {"y1": [1.0, 2.0, 0.5, 1.5], "y0": [0.5, 0.5, 1.0, 0.25]}


def test_home():
    response = client.get("/")
    assert response.status_code == 200
    assert response.json()["spec_version"] == "1.0"


def test_designs_lists_grammar():
    specs = [entry["spec"] for entry in client.get("/api/designs").json()["designs"]]
    assert "clip-ogd" in specs
    assert "neyman-oracle" in specs


def test_analyze():
    response = client.post("/api/analyze", json={"p": [0.5, 0.5], "z": [1, 0], "y": [2.0, 1.0], "levels": [0.05]})
    assert response.status_code == 200
    body = response.json()
    assert body["estimate"]["tau_hat"] == pytest.approx(1.0)
    assert body["estimate"]["t_vb_hat"] == pytest.approx(8.0)
    assert {i["kind"] for i in body["intervals"]} == {"chebyshev", "wald"}
    assert [i["conjectural"] for i in body["intervals"] if i["kind"] == "wald"] == [True]


def test_analyze_rejects_boundary_probability():
    response = client.post("/api/analyze", json={"p": [1.0], "z": [1], "y": [2.0]})
    assert response.status_code == 400
    assert "positivity violated" in response.json()["detail"]


def test_analyze_rejects_non_finite_outcome():
    body = '{"p": [0.5, 0.5], "z": [1, 0], "y": [NaN, 1.0]}'
    response = client.post("/api/analyze", content=body, headers={"content-type": "application/json"})
    assert response.status_code == 400
    assert "finite" in response.json()["detail"]


def test_exact():
    response = client.post("/api/exact", json={**TINY, "design": "clip-ogd"})
    assert response.status_code == 200
    body = response.json()
    assert body["exact"]["path_count"] == 16
    assert body["identity"]["holds"] is True
    assert body["variance_from_inverse_moments"] == pytest.approx(body["exact"]["var_tau_hat"], rel=1e-9)


def test_exact_rejects_unknown_design():
    response = client.post("/api/exact", json={**TINY, "design": "thompson"})
    assert response.status_code == 400


def test_exact_rejects_wide_schedule():
    response = client.post("/api/exact", json={"y1": [1.0] * 21, "y0": [1.0] * 21, "design": "bernoulli:0.5"})
    assert response.status_code == 400
    assert "enumeration cap exceeded" in response.json()["detail"]


def test_simulate():
    response = client.post("/api/simulate", json={**TINY, "design": "etc:t0=2", "replications": 100, "seed": 3})
    assert response.status_code == 200
    body = response.json()
    assert body["rep_count"] == 100
    assert body["resolved"] == {"design": "etc", "t0": 2, "p_min": 0.01}


def test_simulate_rejects_bad_levels():
    response = client.post("/api/simulate", json={**TINY, "replications": 10, "levels": [2.0]})
    assert response.status_code == 400


def test_missing_fields_fail_validation():
    assert client.post("/api/simulate", json={"y1": [1.0]}).status_code == 422
