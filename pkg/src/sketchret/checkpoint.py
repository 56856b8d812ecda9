"""Byte-deterministic checkpoint files.

Format "SMUP1": 5-byte magic, uint32 little-endian header length, JSON
header (sorted keys), then raw little-endian tensor bytes in header order.
The header stores the training config, optimizer bookkeeping, an epoch
counter under ``extra``, and a content hash over the tensor bytes that
doubles as the model version string.  Identical state always serializes to
identical bytes, which pickle-based formats do not guarantee.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import TrainConfig
from .errors import CheckpointError
from .model import DisentangledVAE

MAGIC = b"SMUP1"
_DTYPES = {
    torch.float32: "<f4",
    torch.float64: "<f8",
    torch.int64: "<i8",
}
_REVERSE = {v: k for k, v in _DTYPES.items()}


@dataclass
class Checkpoint:
    config: TrainConfig
    state: dict[str, torch.Tensor]
    psi: torch.Tensor | None
    extra: dict
    model_version: str
    optimizers: dict[str, dict] = field(default_factory=dict)


def _tensor_bytes(t: torch.Tensor) -> bytes:
    if t.dtype not in _DTYPES:
        raise CheckpointError(f"unsupported tensor dtype {t.dtype}")
    return np.ascontiguousarray(t.detach().cpu().numpy()).astype(
        _DTYPES[t.dtype], copy=False
    ).tobytes()


def _pack_optimizer(name: str, opt: torch.optim.Optimizer):
    """Split an optimizer state dict into JSON-safe header + tensor entries."""
    sd = opt.state_dict()
    tensors: dict[str, torch.Tensor] = {}
    state_meta: dict[str, dict] = {}
    for pid, st in sd["state"].items():
        entry = {}
        for k, v in st.items():
            if isinstance(v, torch.Tensor):
                tname = f"__opt__/{name}/{pid}/{k}"
                tensors[tname] = v
                entry[k] = {"tensor": tname}
            else:
                entry[k] = {"value": v}
        state_meta[str(pid)] = entry
    return {"param_groups": sd["param_groups"], "state": state_meta}, tensors


def save_checkpoint(
    path: str | Path,
    model: DisentangledVAE,
    config: TrainConfig,
    psi: torch.Tensor | None = None,
    optimizers: dict[str, torch.optim.Optimizer] | None = None,
    extra: dict | None = None,
) -> str:
    """Write model, psi, and optimizer state to ``path``; returns the content hash."""
    tensors: dict[str, torch.Tensor] = dict(model.state_dict())
    if psi is not None:
        tensors["__psi__"] = psi
    opt_headers: dict[str, dict] = {}
    for name, opt in (optimizers or {}).items():
        header_part, opt_tensors = _pack_optimizer(name, opt)
        opt_headers[name] = header_part
        tensors.update(opt_tensors)

    blobs, descr, offset = [], [], 0
    for name, t in sorted(tensors.items()):
        raw = _tensor_bytes(t)
        descr.append(
            {
                "name": name,
                "shape": list(t.shape),
                "dtype": _DTYPES[t.dtype],
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        blobs.append(raw)
        offset += len(raw)

    payload = b"".join(blobs)
    version = hashlib.sha256(payload).hexdigest()[:16]
    header = {
        "format": 1,
        "config": config.to_dict(),
        "tensors": descr,
        "optimizers": opt_headers,
        "model_version": version,
        "extra": extra or {},
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        f.write(payload)
    return version


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    data = path.read_bytes()
    if len(data) < len(MAGIC) + 4 or data[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path} is not a {MAGIC.decode()} checkpoint")
    (hlen,) = struct.unpack_from("<I", data, len(MAGIC))
    start = len(MAGIC) + 4
    try:
        header = json.loads(data[start: start + hlen])
    except json.JSONDecodeError as e:
        raise CheckpointError(f"corrupt checkpoint header in {path}: {e}") from e
    payload = data[start + hlen:]
    if hashlib.sha256(payload).hexdigest()[:16] != header["model_version"]:
        raise CheckpointError(f"checkpoint payload hash mismatch in {path}")

    tensors: dict[str, torch.Tensor] = {}
    for d in header["tensors"]:
        raw = payload[d["offset"]: d["offset"] + d["nbytes"]]
        arr = np.frombuffer(raw, dtype=d["dtype"]).reshape(d["shape"]).copy()
        tensors[d["name"]] = torch.from_numpy(arr).to(_REVERSE[d["dtype"]])

    optimizers: dict[str, dict] = {}
    for name, oh in header.get("optimizers", {}).items():
        state = {}
        for pid, entry in oh["state"].items():
            st = {}
            for k, v in entry.items():
                st[k] = tensors.pop(v["tensor"]) if "tensor" in v else v["value"]
            state[int(pid)] = st
        optimizers[name] = {"param_groups": oh["param_groups"], "state": state}

    psi = tensors.pop("__psi__", None)
    return Checkpoint(
        config=TrainConfig.from_dict(header["config"]),
        state=tensors,
        psi=psi,
        extra=header.get("extra", {}),
        model_version=header["model_version"],
        optimizers=optimizers,
    )


def restore_model(ckpt: Checkpoint) -> DisentangledVAE:
    model = DisentangledVAE.from_config(ckpt.config)
    model.load_state_dict(ckpt.state, strict=True)
    model.eval()
    return model


def restore_optimizer(opt: torch.optim.Optimizer, ckpt: Checkpoint, name: str) -> None:
    if name not in ckpt.optimizers:
        raise CheckpointError(f"checkpoint has no optimizer state named {name!r}")
    opt.load_state_dict(ckpt.optimizers[name])


def load_model(path: str | Path) -> tuple[DisentangledVAE, Checkpoint]:
    ckpt = load_checkpoint(path)
    return restore_model(ckpt), ckpt
