"""HTTP retrieval service: round trips, validation, and statelessness."""

import base64
import io

import numpy as np
import pytest
import torch
from fastapi.testclient import TestClient
from PIL import Image

from sketchret.checkpoint import load_model
from sketchret.dataset import load_dataset, split_dataset
from sketchret.evaluation import build_gallery_index
from sketchret.retrieval import save_index
from sketchret.service import ServiceState, build_state, create_app


def _png_b64(path=None, array=None) -> str:
    if path is not None:
        raw = open(path, "rb").read()
    else:
        buf = io.BytesIO()
        Image.fromarray(array, mode="L").save(buf, format="PNG")
        raw = buf.getvalue()
    return base64.b64encode(raw).decode()


@pytest.fixture(scope="module")
def service(micro_run, tiny_dataset_dir, tmp_path_factory):
    cfg, _, ckpt_path = micro_run
    model, ckpt = load_model(ckpt_path)
    dataset = load_dataset(tiny_dataset_dir)
    split = split_dataset(dataset, seed=cfg.seed)[2]
    index = build_gallery_index(model, split, gallery="full")
    index_path = tmp_path_factory.mktemp("svc") / "gallery.idx"
    save_index(index, index_path)
    state = build_state(ckpt_path, index_path, tiny_dataset_dir)
    client = TestClient(create_app(state))
    return client, state, dataset


class TestHealth:
    def test_ok_when_initialized(self, service):
        client, state, _ = service
        resp = client.get("/api/health")
        assert resp.status_code == 200
        body = resp.json()
        assert body["status"] == "ok"
        assert body["model_version"] == state.model_version
        assert body["gallery_size"] == len(state.index)

    def test_503_when_uninitialized(self):
        client = TestClient(create_app(None))
        assert client.get("/api/health").status_code == 503
        resp = client.post("/api/retrieve", json={"image": "aGk=", "k": 1})
        assert resp.status_code == 503


class TestRetrieve:
    def test_gallery_photo_self_retrieves(self, service):
        client, state, dataset = service
        pid = state.index.photo_ids[0]
        resp = client.post(
            "/api/retrieve",
            json={"image": _png_b64(path=dataset.photo_paths[pid]), "k": 5},
        )
        assert resp.status_code == 200
        body = resp.json()
        assert body["results"][0]["photo_id"] == pid
        assert body["results"][0]["distance"] == pytest.approx(0.0, abs=1e-6)

    def test_k_results_sorted(self, service):
        client, state, dataset = service
        pid = state.index.photo_ids[1]
        resp = client.post(
            "/api/retrieve",
            json={"image": _png_b64(path=dataset.photo_paths[pid]), "k": 3},
        )
        results = resp.json()["results"]
        assert len(results) == 3
        dists = [r["distance"] for r in results]
        assert dists == sorted(dists)
        for r in results:
            assert r["thumbnail_url"] == f"/api/photo/{r['photo_id']}"

    def test_identical_requests_identical_results(self, service):
        client, state, dataset = service
        payload = {"image": _png_b64(path=dataset.photo_paths[state.index.photo_ids[2]]),
                   "k": 10}
        bodies = [client.post("/api/retrieve", json=payload).json() for _ in range(3)]
        assert bodies[0]["results"] == bodies[1]["results"] == bodies[2]["results"]
        assert "model_version" in bodies[0] and "latency_ms" in bodies[0]

    def test_resizes_oversized_sketch(self, service):
        client, _, _ = service
        arr = np.zeros((128, 128), dtype=np.uint8)
        arr[20:90, 30:100] = 255
        resp = client.post("/api/retrieve", json={"image": _png_b64(array=arr), "k": 1})
        assert resp.status_code == 200

    def test_malformed_base64_is_400(self, service):
        client, _, _ = service
        resp = client.post("/api/retrieve", json={"image": "not-base64!!!", "k": 1})
        assert resp.status_code == 400
        assert "base64" in resp.json()["detail"]

    def test_non_image_payload_is_400(self, service):
        client, _, _ = service
        resp = client.post(
            "/api/retrieve",
            json={"image": base64.b64encode(b"just some text").decode(), "k": 1},
        )
        assert resp.status_code == 400

    def test_non_png_image_is_400(self, service):
        client, _, _ = service
        buf = io.BytesIO()
        Image.new("L", (32, 32)).save(buf, format="JPEG")
        resp = client.post(
            "/api/retrieve",
            json={"image": base64.b64encode(buf.getvalue()).decode(), "k": 1},
        )
        assert resp.status_code == 400
        assert "PNG" in resp.json()["detail"]

    def test_k_out_of_range_is_400(self, service):
        client, state, dataset = service
        img = _png_b64(path=dataset.photo_paths[state.index.photo_ids[0]])
        for k in (0, len(state.index) + 1):
            resp = client.post("/api/retrieve", json={"image": img, "k": k})
            assert resp.status_code == 400


class TestPhotoEndpoint:
    def test_serves_png(self, service):
        client, state, _ = service
        resp = client.get(f"/api/photo/{state.index.photo_ids[0]}")
        assert resp.status_code == 200
        assert resp.headers["content-type"] == "image/png"
        Image.open(io.BytesIO(resp.content)).verify()

    def test_unknown_id_is_404(self, service):
        client, _, _ = service
        assert client.get("/api/photo/no_such_photo").status_code == 404


class TestStateImmutability:
    def test_requests_leave_index_untouched(self, service):
        client, state, dataset = service
        before = state.index.embeddings.copy()
        payload = {"image": _png_b64(path=dataset.photo_paths[state.index.photo_ids[0]]),
                   "k": 2}
        client.post("/api/retrieve", json=payload)
        assert np.array_equal(before, state.index.embeddings)
        assert not state.model.training
