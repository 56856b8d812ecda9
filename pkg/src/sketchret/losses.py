"""Loss terms and their per-phase compositions.

Three phases share one composition rule: total = L_rec + lambda1 * L_KL +
lambda2 * (triplet on z_inv + triplet on z_f), with lambda3 * L_Reg added
only in the inner phase.  The reconstruction set per data point is sketch
self-reconstruction, photo self-reconstruction, sketch-to-photo
translation, and (when a second style of the same object exists)
cross-style reconstruction; each carries its own KL on the z_var posterior
it samples from.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import torch

from .errors import ContractViolation
from .model import kl_divergence

__all__ = [
    "Phase",
    "EpisodeBatch",
    "LossTerms",
    "reconstruction_loss",
    "triplet_loss",
    "regulariser_loss",
    "compose_losses",
    "episode_losses",
]


class Phase(str, Enum):
    WARMUP = "warmup"
    INNER = "inner"
    OUTER = "outer"


@dataclass
class EpisodeBatch:
    """Aligned tensors for one episode split.

    ``cross_idx[j]`` indexes a different-style sketch of the same object,
    or -1 when none exists (the cross-style term is then skipped for j).
    """

    sketches: torch.Tensor
    photos: torch.Tensor
    negatives: torch.Tensor
    cross_idx: torch.Tensor
    cross_enabled: bool = True

    def __post_init__(self):
        n = self.sketches.shape[0]
        if self.photos.shape[0] != n or self.negatives.shape[0] != n:
            raise ContractViolation("sketches, photos, negatives must have equal length")
        if self.cross_idx.shape != (n,):
            raise ContractViolation("cross_idx must be a vector aligned with the pairs")
        if ((self.cross_idx >= n) | (self.cross_idx < -1)).any():
            raise ContractViolation("cross_idx entries must be -1 or valid row indices")


@dataclass
class LossTerms:
    """Composite loss with its unweighted components.

    ``total`` is the graph node to differentiate; the component fields are
    the raw sums before weighting.
    """

    total: torch.Tensor
    rec: torch.Tensor
    kl: torch.Tensor
    tri_inv: torch.Tensor
    tri_f: torch.Tensor
    reg: torch.Tensor
    n_cross_skipped: int = 0

    def scalars(self) -> dict[str, float]:
        out = {
            k: float(getattr(self, k).detach())
            for k in ("total", "rec", "kl", "tri_inv", "tri_f", "reg")
        }
        out["n_cross_skipped"] = self.n_cross_skipped
        return out


def reconstruction_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Euclidean norm of the flattened difference.

    Batched inputs (4-D) give one norm per leading row; otherwise a scalar.
    """
    if pred.shape != target.shape:
        raise ContractViolation(
            f"shape mismatch: pred {tuple(pred.shape)} vs target {tuple(target.shape)}"
        )
    diff = pred - target
    if diff.dim() == 4:
        return diff.flatten(1).norm(dim=1)
    return diff.flatten().norm()


def triplet_loss(
    anchor: torch.Tensor,
    positive: torch.Tensor,
    negative: torch.Tensor,
    margin: float,
) -> torch.Tensor:
    """Hinge on squared Euclidean distances: max(0, margin + d+ - d-).

    Accepts single vectors or (B, d) batches; batches give per-row values.
    """
    if anchor.shape != positive.shape or anchor.shape != negative.shape:
        raise ContractViolation("anchor, positive, negative must share dimensions")
    if margin <= 0:
        raise ContractViolation(f"margin must be positive, got {margin}")
    d_pos = (anchor - positive).pow(2).sum(dim=-1)
    d_neg = (anchor - negative).pow(2).sum(dim=-1)
    return torch.clamp(margin + d_pos - d_neg, min=0.0)


def regulariser_loss(psi: torch.Tensor, omega_inv: torch.Tensor) -> torch.Tensor:
    """Weighted l1 penalty sum_h psi_h * |omega_h| (sub-gradient 0 at 0)."""
    psi = psi.flatten()
    omega_inv = omega_inv.flatten()
    if psi.shape != omega_inv.shape:
        raise ContractViolation(
            f"length mismatch: psi has {psi.numel()}, omega has {omega_inv.numel()}"
        )
    if (psi < 0).any():
        raise ContractViolation("psi entries must be non-negative")
    return (psi * omega_inv.abs()).sum()


def _as_weights(weights):
    for name in ("lambda1", "lambda2", "lambda3", "m_zinv", "m_zf"):
        if not hasattr(weights, name):
            raise ContractViolation(f"weights missing field {name}")
    return weights


def compose_losses(
    out: dict[str, torch.Tensor],
    batch: EpisodeBatch,
    phase: Phase,
    weights,
    psi: torch.Tensor | None = None,
    omega_inv: torch.Tensor | None = None,
) -> LossTerms:
    """Combine a model forward bundle into the phase composite.

    Per-point terms are summed over the reconstruction set and averaged
    over the batch; the regulariser (inner phase only) is added once.
    """
    phase = Phase(phase)
    w = _as_weights(weights)
    n = batch.sketches.shape[0]

    rec = reconstruction_loss(out["recon_sketch_self"], batch.sketches)
    rec = rec + reconstruction_loss(out["recon_photo_self"], batch.photos)
    rec = rec + reconstruction_loss(out["recon_sketch_to_photo"], batch.photos)

    kl_s = kl_divergence(out["mu_s"], out["logvar_s"])
    kl_p = kl_divergence(out["mu_p"], out["logvar_p"])
    kl = 2.0 * kl_s + kl_p  # sketch posterior feeds both (a) and (c)

    n_skipped = int((batch.cross_idx < 0).sum()) if batch.cross_enabled else 0
    if "recon_cross_style" in out:
        has_cross = out["has_cross"]
        cross_rec = reconstruction_loss(out["recon_cross_style"], batch.sketches[has_cross])
        rec = rec + torch.zeros_like(rec).masked_scatter(has_cross, cross_rec)
        cross_kl = kl_divergence(out["cross_mu"], out["cross_logvar"])
        kl = kl + torch.zeros_like(kl).masked_scatter(has_cross, cross_kl)

    if "recon_photo_to_sketch" in out:
        rec = rec + reconstruction_loss(out["recon_photo_to_sketch"], batch.sketches)

    tri_inv = triplet_loss(out["z_inv_s"], out["z_inv_p"], out["z_inv_n"], w.m_zinv)
    tri_f = triplet_loss(out["z_f_s"], out["z_f_p"], out["z_f_n"], w.m_zf)

    per_point = rec + w.lambda1 * kl + w.lambda2 * (tri_inv + tri_f)
    total = per_point.sum() / n

    if phase is Phase.INNER and w.lambda3 != 0:
        if psi is None or omega_inv is None:
            raise ContractViolation("inner phase with lambda3 != 0 requires psi and omega_inv")
        reg = regulariser_loss(psi, omega_inv)
        total = total + w.lambda3 * reg
    else:
        reg = total.new_zeros(())

    return LossTerms(
        total=total,
        rec=rec.sum() / n,
        kl=kl.sum() / n,
        tri_inv=tri_inv.sum() / n,
        tri_f=tri_f.sum() / n,
        reg=reg,
        n_cross_skipped=n_skipped,
    )


def flatten_zinv_params(model, params: dict[str, torch.Tensor] | None = None) -> torch.Tensor:
    """Flattened z_inv head weights in a fixed (weight, bias) order."""
    pieces = []
    for name in model.zinv_head_param_names():
        t = params[name] if params is not None and name in params else model.get_parameter(name)
        pieces.append(t.flatten())
    return torch.cat(pieces)


def episode_losses(
    model,
    batch: EpisodeBatch,
    phase: Phase,
    weights,
    psi: torch.Tensor | None = None,
    generator: torch.Generator | None = None,
    ft_generator: torch.Generator | None = None,
    params: dict[str, torch.Tensor] | None = None,
    decode_photo_to_sketch: bool = False,
) -> LossTerms:
    """Run the model on an episode batch and compose the phase loss.

    FT layers are active only in the inner phase (and only if the model has
    them); their noise draws come from ``ft_generator`` so ablations without
    FT consume the same ``generator`` stream.  ``params`` substitutes fast
    weights without mutating the module, keeping the inner-to-outer mapping
    differentiable.
    """
    phase = Phase(phase)
    ft_active = phase is Phase.INNER and model.with_ft
    args = (batch.sketches, batch.photos, batch.negatives, batch.cross_idx)
    kwargs = {
        "ft_active": ft_active,
        "generator": generator,
        "ft_generator": ft_generator,
        "decode_photo_to_sketch": decode_photo_to_sketch,
    }
    if params is not None:
        out = torch.func.functional_call(model, params, args, kwargs)
    else:
        out = model(*args, **kwargs)

    omega = None
    if phase is Phase.INNER and getattr(weights, "lambda3", 0) != 0 and psi is not None:
        omega = flatten_zinv_params(model, params)
    return compose_losses(out, batch, phase, weights, psi=psi, omega_inv=omega)
