"""Gallery embedding index and nearest-neighbor querying on z_inv.

The index is an immutable N x d float32 matrix plus aligned photo ids.
Queries rank by squared Euclidean distance with ties broken by ascending
photo id.  Serialization ("SMIX1") round-trips bitwise.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointError, ContractViolation

INDEX_MAGIC = b"SMIX1"
_EMBED_CHUNK = 64


@dataclass(frozen=True)
class RetrievalIndex:
    embeddings: np.ndarray  # (N, d) float32, read-only
    photo_ids: tuple[str, ...]
    metadata: tuple[dict, ...] = field(default=())

    def __post_init__(self):
        emb = np.ascontiguousarray(self.embeddings, dtype=np.float32)
        if emb.ndim != 2 or emb.shape[0] == 0:
            raise ContractViolation("embeddings must be a non-empty N x d matrix")
        if not np.isfinite(emb).all():
            raise ContractViolation("embeddings must be finite")
        if len(self.photo_ids) != emb.shape[0]:
            raise ContractViolation("photo_ids must align with embedding rows")
        meta = self.metadata or tuple({} for _ in self.photo_ids)
        if len(meta) != emb.shape[0]:
            raise ContractViolation("metadata must align with embedding rows")
        emb.setflags(write=False)
        object.__setattr__(self, "embeddings", emb)
        object.__setattr__(self, "photo_ids", tuple(self.photo_ids))
        object.__setattr__(self, "metadata", tuple(meta))

    def __len__(self) -> int:
        return self.embeddings.shape[0]

    @property
    def d(self) -> int:
        return self.embeddings.shape[1]


def embed_images(model, images: torch.Tensor) -> np.ndarray:
    """z_inv per image with FT layers inactive; deterministic."""
    if images.dim() != 4 or images.shape[0] == 0:
        raise ContractViolation("expected a non-empty (N, C, H, W) batch")
    was_training = model.training
    model.eval()
    outs = []
    with torch.no_grad():
        for i in range(0, images.shape[0], _EMBED_CHUNK):
            code = model.encode(images[i: i + _EMBED_CHUNK], ft_active=False)
            outs.append(code.z_inv.cpu().numpy().astype(np.float32))
    if was_training:
        model.train()
    return np.concatenate(outs, axis=0)


def embed_gallery(
    model,
    photos: torch.Tensor,
    photo_ids,
    metadata=None,
) -> RetrievalIndex:
    """Build an index over a photo gallery."""
    if len(photo_ids) == 0:
        raise ContractViolation("empty gallery")
    emb = embed_images(model, photos)
    return RetrievalIndex(
        embeddings=emb,
        photo_ids=tuple(photo_ids),
        metadata=tuple(metadata) if metadata is not None else (),
    )


def query(index: RetrievalIndex, sketch_embedding, k: int) -> list[tuple[str, float]]:
    """Top-k photo ids by squared Euclidean distance, ascending.

    Ties break on ascending photo id so rankings are deterministic.
    """
    if isinstance(sketch_embedding, torch.Tensor):
        sketch_embedding = sketch_embedding.detach().cpu().numpy()
    q = np.asarray(sketch_embedding, dtype=np.float64).reshape(-1)
    if q.shape[0] != index.d:
        raise ContractViolation(f"query dim {q.shape[0]} != index dim {index.d}")
    if not 1 <= k <= len(index):
        raise ContractViolation(f"k must be in [1, {len(index)}], got {k}")
    diff = index.embeddings.astype(np.float64) - q[None, :]
    dists = (diff * diff).sum(axis=1)
    ids = np.asarray(index.photo_ids)
    order = np.lexsort((ids, dists))[:k]
    return [(str(ids[i]), float(dists[i])) for i in order]


def full_ranking(index: RetrievalIndex, sketch_embedding) -> list[tuple[str, float]]:
    return query(index, sketch_embedding, k=len(index))


# -- serialization ------------------------------------------------------------


def save_index(index: RetrievalIndex, path: str | Path) -> None:
    table = json.dumps(
        {"photo_ids": list(index.photo_ids), "metadata": list(index.metadata)},
        sort_keys=True,
        separators=(",", ":"),
    ).encode()
    with open(path, "wb") as f:
        f.write(INDEX_MAGIC)
        f.write(struct.pack("<II", len(index), index.d))
        f.write(np.ascontiguousarray(index.embeddings, dtype="<f4").tobytes())
        f.write(struct.pack("<I", len(table)))
        f.write(table)


def load_index(path: str | Path) -> RetrievalIndex:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"index not found: {path}")
    data = path.read_bytes()
    if data[: len(INDEX_MAGIC)] != INDEX_MAGIC:
        raise CheckpointError(f"{path} is not a {INDEX_MAGIC.decode()} index")
    off = len(INDEX_MAGIC)
    n, d = struct.unpack_from("<II", data, off)
    off += 8
    nbytes = n * d * 4
    emb = np.frombuffer(data, dtype="<f4", count=n * d, offset=off).reshape(n, d).copy()
    off += nbytes
    (tlen,) = struct.unpack_from("<I", data, off)
    off += 4
    try:
        table = json.loads(data[off: off + tlen])
    except json.JSONDecodeError as e:
        raise CheckpointError(f"corrupt id table in {path}: {e}") from e
    return RetrievalIndex(
        embeddings=emb,
        photo_ids=tuple(table["photo_ids"]),
        metadata=tuple(table["metadata"]),
    )
