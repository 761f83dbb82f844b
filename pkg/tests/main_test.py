"""Testing FastAPI endpoints.
"""
import numpy as np
import pytest
from fastapi.testclient import TestClient

from coordtrack.config import toy_config
from coordtrack.main import app
from coordtrack.main import get_model
from coordtrack.model import TrackingModel

MODEL = TrackingModel(toy_config(), seed=0)


class BrokenModel:
    cfg = toy_config()
    vocab = cfg.vocab

    def predict(self, fixed_tmpl, dyn_tmpl, search):
        raise RuntimeError("boom")


@pytest.fixture
def client():
    app.dependency_overrides[get_model] = lambda: MODEL
    yield TestClient(app)
    app.dependency_overrides.clear()


def frames(count, size=48):
    rng = np.random.default_rng(0)
    return [rng.uniform(40.0, 80.0, size=(size, size)).round(1).tolist() for _ in range(count)]


INIT = {"x": 16.0, "y": 18.0, "w": 12.0, "h": 10.0}


def test_help_route(client):
    """Tests if the '/'-route (help-route) lists the endpoints and the
    built-in documentation.
    """
    response = client.get("/")
    assert response.status_code == 200
    assert response.json() == {
        "config": "/config",
        "track": "/track",
        "evaluate": "/evaluate",
        "docs": "/docs",
        "redoc": "/redoc",
    }


def test_config_route(client):
    """The served model's configuration is returned as JSON."""
    response = client.get("/config")
    assert response.status_code == 200
    body = response.json()
    assert body["nbins"] == 100
    assert body["fusion"] == "mpfm"
    assert body["search_size"] == 64


def test_track_returns_one_box_per_frame(client):
    """The first frame reports the initial box with score 1."""
    response = client.post("/track", json={"frames": frames(3), "init_box": INIT})
    assert response.status_code == 200
    body = response.json()
    assert len(body["boxes"]) == len(body["scores"]) == 3
    assert body["boxes"][0] == INIT
    assert body["scores"][0] == 1.0
    assert all(0.0 < s <= 1.0 for s in body["scores"])


def test_track_update_policy_overrides(client):
    """lambda 0 and zu 1 refresh the dynamic template on every tracked frame."""
    response = client.post("/track", json={"frames": frames(3), "init_box": INIT, "lambda": 0.0, "zu": 1})
    assert response.status_code == 200
    assert response.json()["update_frames"] == [1, 2]


@pytest.mark.parametrize(
    "payload",
    [
        pytest.param({"frames": [[[1.0, 2.0], [3.0]]], "init_box": INIT}, id="ragged frame"),
        pytest.param({"frames": [], "init_box": INIT}, id="no frames"),
        pytest.param({"frames": [[[1.0]]], "init_box": {**INIT, "w": 0.0}}, id="empty box"),
        pytest.param({"frames": [[[1.0]]], "init_box": INIT, "lambda": 1.5}, id="threshold above one"),
        pytest.param({"frames": [[[1.0]]], "init_box": INIT, "zu": 0}, id="zero interval"),
    ],
)
def test_track_rejects_bad_requests(client, payload):
    """Malformed frames, boxes and policy values answer 422."""
    response = client.post("/track", json=payload)
    assert response.status_code == 422


def test_track_internal_error_is_500():
    """Unexpected failures answer 500 without leaking details."""
    app.dependency_overrides[get_model] = lambda: BrokenModel()
    try:
        response = TestClient(app).post("/track", json={"frames": frames(2), "init_box": INIT})
    finally:
        app.dependency_overrides.clear()
    assert response.status_code == 500
    assert "boom" not in response.text


def test_evaluate_route(client):
    """Identical tracks score Suc 20/21 and full precision."""
    boxes = [INIT, {"x": 20.0, "y": 20.0, "w": 10.0, "h": 10.0}]
    response = client.post("/evaluate", json={"pred": boxes, "gt": boxes})
    assert response.status_code == 200
    body = response.json()
    assert body["suc"] == pytest.approx(20.0 / 21.0)
    assert body["pre"] == 1.0
    assert body["normp"] == 1.0
    assert body["center_error"] == [0.0, 0.0]


def test_evaluate_length_mismatch_is_422(client):
    """Each prediction needs a ground-truth box."""
    response = client.post("/evaluate", json={"pred": [INIT, INIT], "gt": [INIT]})
    assert response.status_code == 422
