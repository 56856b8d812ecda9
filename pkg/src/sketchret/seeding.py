"""Deterministic random-stream derivation.

Streams are keyed by string-able parts hashed with sha256, never Python's
``hash`` (which is salted per process).  Every consumer owns its generator,
so concurrent evaluation cannot reorder draws.
"""

from __future__ import annotations

import hashlib
import random

import torch


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from the given parts."""
    key = ":".join(str(p) for p in parts).encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "big") >> 1


def torch_generator(*parts) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(derive_seed(*parts))
    return g


def python_rng(*parts) -> random.Random:
    return random.Random(derive_seed(*parts))
