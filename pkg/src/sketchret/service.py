"""HTTP retrieval service over a trained checkpoint and gallery index.

Requests are stateless reads against immutable model/index state, so
identical requests return identical result lists (latency aside) and
concurrent handling needs no locks.
"""

from __future__ import annotations

import base64
import binascii
import io
import time
from dataclasses import dataclass
from pathlib import Path

import torch
from fastapi import FastAPI, HTTPException
from fastapi.responses import FileResponse, JSONResponse
from PIL import Image, UnidentifiedImageError
from pydantic import BaseModel

from .checkpoint import load_model
from .retrieval import RetrievalIndex, load_index
from .retrieval import query as index_query


class RetrieveRequest(BaseModel):
    image: str  # base64-encoded PNG
    k: int = 10


@dataclass
class ServiceState:
    model: object
    index: RetrievalIndex
    photo_paths: dict[str, str]
    model_version: str
    image_size: int


def build_state(checkpoint: str | Path, index_path: str | Path,
                data_root: str | Path) -> ServiceState:
    model, ckpt = load_model(checkpoint)
    index = load_index(index_path)
    photos = {p.stem: str(p) for p in sorted(Path(data_root).glob("photos/*/*.png"))}
    return ServiceState(
        model=model,
        index=index,
        photo_paths=photos,
        model_version=ckpt.model_version,
        image_size=ckpt.config.image_size,
    )


def _decode_sketch(b64: str, image_size: int) -> torch.Tensor:
    try:
        raw = base64.b64decode(b64, validate=True)
    except (binascii.Error, ValueError) as e:
        raise HTTPException(status_code=400, detail=f"invalid base64: {e}") from e
    try:
        img = Image.open(io.BytesIO(raw))
        img.load()
    except (UnidentifiedImageError, OSError) as e:
        raise HTTPException(status_code=400, detail=f"invalid image data: {e}") from e
    if img.format != "PNG":
        raise HTTPException(status_code=400, detail=f"expected PNG, got {img.format}")
    img = img.convert("L")
    if img.size != (image_size, image_size):
        img = img.resize((image_size, image_size), Image.LANCZOS)
    import numpy as np

    arr = np.asarray(img, dtype=np.float32) / 127.5 - 1.0
    return torch.from_numpy(arr).unsqueeze(0)


def create_app(state: ServiceState | None, static_dir: str | Path | None = None) -> FastAPI:
    """App factory; a ``None`` state serves 503s until replaced."""
    app = FastAPI(title="sketchret retrieval service")
    app.state.retrieval = state

    def _state() -> ServiceState:
        st = app.state.retrieval
        if st is None:
            raise HTTPException(status_code=503, detail="service not initialized")
        return st

    @app.post("/api/retrieve")
    def retrieve(req: RetrieveRequest) -> dict:
        st = _state()
        t0 = time.perf_counter()
        if not 1 <= req.k <= len(st.index):
            raise HTTPException(
                status_code=400,
                detail=f"k must be in [1, {len(st.index)}], got {req.k}",
            )
        sketch = _decode_sketch(req.image, st.image_size)
        with torch.no_grad():
            code = st.model.encode(sketch.unsqueeze(0), ft_active=False)
        hits = index_query(st.index, code.z_inv[0], req.k)
        return {
            "results": [
                {
                    "photo_id": pid,
                    "distance": dist,
                    "thumbnail_url": f"/api/photo/{pid}",
                }
                for pid, dist in hits
            ],
            "model_version": st.model_version,
            "latency_ms": (time.perf_counter() - t0) * 1000.0,
        }

    @app.get("/api/photo/{photo_id}")
    def photo(photo_id: str):
        st = _state()
        path = st.photo_paths.get(photo_id)
        if path is None:
            raise HTTPException(status_code=404, detail=f"unknown photo id {photo_id!r}")
        return FileResponse(path, media_type="image/png")

    @app.get("/api/health")
    def health():
        st = app.state.retrieval
        if st is None:
            return JSONResponse(status_code=503, content={"status": "uninitialized"})
        return {
            "status": "ok",
            "model_version": st.model_version,
            "gallery_size": len(st.index),
        }

    if static_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")
    return app
