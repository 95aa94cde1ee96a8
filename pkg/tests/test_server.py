import numpy as np
import pytest
from fastapi.testclient import TestClient

from conveyor_vla.main import app, set_service
from conveyor_vla.models.episode import NormStats
from conveyor_vla.network.policy import UnifiedPolicy
from conveyor_vla.services import PolicyService

INSTRUCTION = "pick the cube and place in top"


@pytest.fixture
def client():
    set_service(None)
    yield TestClient(app)
    set_service(None)


@pytest.fixture
def served(tiny_cfg):
    norm = NormStats(
        action_min=[-0.03, -0.03, -1.0],
        action_max=[0.03, 0.03, 1.0],
        proprio_min=[0.0, 0.0, -1.0],
        proprio_max=[1.0, 1.0, 1.0],
    )
    set_service(PolicyService(UnifiedPolicy(tiny_cfg), norm, euler_steps=3, name="tiny"))


def act_body(cfg, **kw):
    views = np.random.default_rng(0).random((cfg.n_views, cfg.image_size, cfg.image_size))
    return {"instruction": INSTRUCTION, "views": views.tolist(), "proprio": [0.5, 0.2, -1.0], **kw}


def test_health(client):
    assert client.get("/health").json() == {"status": "ok", "checkpoint": None}


def test_health_names_checkpoint(client, served):
    assert client.get("/health").json()["checkpoint"] == "tiny"


def test_act_without_checkpoint(client, tiny_cfg):
    response = client.post("/act", json=act_body(tiny_cfg))
    assert response.status_code == 503


def test_act_returns_chunk(client, served, tiny_cfg):
    response = client.post("/act", json=act_body(tiny_cfg, seed=4))
    assert response.status_code == 200
    body = response.json()
    assert body["euler_steps"] == 3
    assert np.asarray(body["chunk"]).shape == (tiny_cfg.chunk_length, 3)
    again = client.post("/act", json=act_body(tiny_cfg, seed=4)).json()
    assert again["chunk"] == body["chunk"]


def test_act_overrides_euler_steps(client, served, tiny_cfg):
    body = client.post("/act", json=act_body(tiny_cfg, euler_steps=1)).json()
    assert body["euler_steps"] == 1


def test_act_accepts_token_ids(client, served, tiny_cfg):
    response = client.post("/act", json=act_body(tiny_cfg, instruction=[1, 2, 6]))
    assert response.status_code == 200


def test_act_unknown_word(client, served, tiny_cfg):
    response = client.post("/act", json=act_body(tiny_cfg, instruction="pick the banana"))
    assert response.status_code == 422
    assert response.json()["error"] == "UnknownTokenError"


def test_act_wrong_view_shape(client, served, tiny_cfg):
    body = act_body(tiny_cfg)
    body["views"] = body["views"][:2]
    response = client.post("/act", json=body)
    assert response.status_code == 422
    assert response.json()["error"] == "ShapeMismatchError"


def test_lpt_plan(client):
    sizes = {"d1": 208, "d2": 122.5, "d3": 96, "d4": 90.5, "d5": 16}
    datasets = [{"id": k, "size": v} for k, v in sizes.items()]
    response = client.post("/lpt/plan", json={"datasets": datasets, "workers": 2})
    assert response.status_code == 200
    body = response.json()
    assert body["plan"]["workers"] == {"0": ["d1", "d4"], "1": ["d2", "d3", "d5"]}
    assert body["max_load"] == 298.5
    assert body["min_load"] == 234.5


def test_lpt_plan_rejects_empty_and_invalid(client):
    assert client.post("/lpt/plan", json={"datasets": [], "workers": 2}).status_code == 422
    bad = {"datasets": [{"id": "a", "size": 0}], "workers": 2}
    assert client.post("/lpt/plan", json=bad).status_code == 422
    zero = {"datasets": [{"id": "a", "size": 1}], "workers": 0}
    assert client.post("/lpt/plan", json=zero).status_code == 422


def test_mask(client):
    response = client.get("/mask", params={"prefix": 1, "action": 1})
    assert response.status_code == 200
    assert response.text == "100\n110\n111\n"


def test_mask_with_generation_block(client):
    text = client.get("/mask", params={"prefix": 1, "gen": 1, "action": 1}).text
    assert text == "1000\n1100\n1110\n1111\n"


def test_mask_rejects_empty_action(client):
    assert client.get("/mask", params={"prefix": 1, "action": 0}).status_code == 422
