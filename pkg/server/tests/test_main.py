import pytest
from fastapi.testclient import TestClient
from sqlalchemy import create_engine
from sqlalchemy.orm import sessionmaker
from app.main import app
from app.models.database import Base, get_db

# Test database
SQLALCHEMY_DATABASE_URL = "sqlite:///./test.db"
engine = create_engine(SQLALCHEMY_DATABASE_URL, connect_args={"check_same_thread": False})
TestingSessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=engine)

Base.metadata.create_all(bind=engine)

def override_get_db():
    try:
        db = TestingSessionLocal()
        yield db
    finally:
        db.close()

app.dependency_overrides[get_db] = override_get_db

client = TestClient(app)

SHEAR = {
    "description": "diagonal shear",
    "a_terms": [{"exponents": [1, 0, 0, 0], "matrix": [[1.0, 0.0], [0.0, -1.0]], "coefficient": 0.5}],
}

def test_root():
    """Test root endpoint"""
    response = client.get("/")
    assert response.status_code == 200
    assert "Beltrami API" in response.json()["message"]

def test_health_check():
    """Test health check endpoint"""
    response = client.get("/health")
    assert response.status_code == 200
    assert response.json()["status"] == "healthy"

def test_run_completeness():
    """Run a cheap command and read it back"""
    response = client.post("/api/experiments/completeness", json={"truncations": [1e-3, 1e-6]})
    assert response.status_code == 200
    data = response.json()
    assert data["success"] is True
    assert len(data["data"]["records"]) == 2
    run = data["data"]["run"]
    assert run["status"] == "ok"
    assert run["exit_code"] == 0
    assert len(run["config_hash"]) == 64

    response = client.get(f"/api/experiments/{run['id']}")
    assert response.status_code == 200
    assert response.json()["data"]["summary"]["series"]["delta"] == [1e-3, 1e-6]

def test_run_without_body():
    response = client.post("/api/experiments/completeness")
    assert response.status_code == 200
    assert len(response.json()["data"]["records"]) == 3

def test_list_runs():
    """Test listing stored runs"""
    client.post("/api/experiments/completeness")
    response = client.get("/api/experiments/", params={"command": "completeness"})
    assert response.status_code == 200
    data = response.json()
    assert data["success"] is True
    assert len(data["data"]) >= 1
    assert all(run["command"] == "completeness" for run in data["data"])

def test_missing_run():
    response = client.get("/api/experiments/999999")
    assert response.status_code == 404

def test_unknown_command():
    response = client.post("/api/experiments/not-a-command")
    assert response.status_code == 400
    assert response.json()["detail"]["error"] == "SchemaError"

def test_validate_needs_structure():
    response = client.post("/api/experiments/validate", json={})
    assert response.status_code == 400
    assert response.json()["detail"]["exit_code"] == 2

def test_failed_run_is_stored():
    client.post("/api/experiments/gauge-scan", json={"n_samples": 4})
    response = client.get("/api/experiments/", params={"command": "gauge-scan", "limit": 1})
    (run,) = response.json()["data"]
    assert run["status"] == "failed"
    assert run["exit_code"] == 2

def test_malformed_config():
    """Unknown fields are schema errors"""
    response = client.post("/api/experiments/metric", json={"bogus": True})
    assert response.status_code == 400
    data = response.json()
    assert data["success"] is False
    assert data["error"] == "SchemaError"

def test_validate_structure():
    response = client.post("/api/structures/validate", json=SHEAR)
    assert response.status_code == 200
    data = response.json()["data"]
    assert data["accepted"] is True
    assert data["projected"] is True
    assert data["mu_bound"] > 0

def test_rejected_structure():
    response = client.post("/api/structures/validate", json={**SHEAR, "project": False})
    assert response.status_code == 400
    assert response.json()["detail"]["error"] == "StructureRejectedError"

@pytest.mark.parametrize("body", [{"epsilon": 0}, {"a_terms": [{"exponents": [-1, 0, 0, 0], "matrix": [[0, 0], [0, 0]]}]}])
def test_structure_schema_errors(body):
    response = client.post("/api/structures/validate", json=body)
    assert response.status_code == 400
