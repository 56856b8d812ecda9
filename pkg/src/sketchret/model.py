"""Disentanglement VAE with insertable feature-transform layers.

A shared convolutional encoder maps a sketch or photo to three ``d``-dim
heads: the deterministic modal-invariant code ``z_inv`` (the retrieval
embedding) and the (``mu``, ``log_var``) parameters of the modal-specific
code ``z_var``.  Fusing ``z_inv + z_var`` gives the decoder input; sketch
and photo reconstructions come from separate decoder heads.

Feature-transform (FT) layers sit at the end of each encoder block and
perturb the feature map with a per-channel Gaussian affine whose spreads
are learnable; they are sampled during inner-loop training and bypassed
exactly (not sampled at zero) everywhere else.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ContractViolation, NonFiniteLossError


class Modality(str, Enum):
    SKETCH = "sketch"
    PHOTO = "photo"


@dataclass
class ImageTensor:
    """One image in model space: float tensor (C, H, W) with values in [-1, 1]."""

    data: torch.Tensor
    modality: Modality

    def validate(self, image_size: int | None = None) -> "ImageTensor":
        if self.data.dim() != 3:
            raise ContractViolation(f"image tensor must be (C, H, W), got {tuple(self.data.shape)}")
        _, h, w = self.data.shape
        if h != w:
            raise ContractViolation(f"image must be square, got {h}x{w}")
        if image_size is not None and h != image_size:
            raise ContractViolation(f"image size {h} != configured {image_size}")
        lo, hi = self.data.min().item(), self.data.max().item()
        if lo < -1.0 - 1e-6 or hi > 1.0 + 1e-6:
            raise ContractViolation(f"image values outside [-1, 1]: [{lo}, {hi}]")
        return self


@dataclass
class LatentCode:
    """Encoder output: z_inv plus the (mu, log sigma^2) of the z_var posterior."""

    z_inv: torch.Tensor
    mu: torch.Tensor
    log_var: torch.Tensor

    def validate(self) -> "LatentCode":
        if not (self.z_inv.shape == self.mu.shape == self.log_var.shape):
            raise ContractViolation("z_inv, mu, log_var must share shape")
        for name in ("z_inv", "mu", "log_var"):
            if not torch.isfinite(getattr(self, name)).all():
                raise ContractViolation(f"{name} contains non-finite entries")
        return self


def softplus(x):
    """log(1 + exp(x)), overflow-safe; accepts floats or tensors."""
    if isinstance(x, torch.Tensor):
        return F.softplus(x)
    return max(x, 0.0) + math.log1p(math.exp(-abs(x)))


def reparameterize(mu: torch.Tensor, log_var: torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
    """z_var = mu + exp(log_var / 2) * eps, with eps a standard-normal draw."""
    if mu.shape != log_var.shape or mu.shape != eps.shape:
        raise ContractViolation(
            f"shape mismatch: mu {tuple(mu.shape)}, log_var {tuple(log_var.shape)}, "
            f"eps {tuple(eps.shape)}"
        )
    return mu + torch.exp(0.5 * log_var) * eps


def fuse(z_inv: torch.Tensor, z_var: torch.Tensor) -> torch.Tensor:
    """Element-wise sum of the invariant and variant codes."""
    if z_inv.shape != z_var.shape:
        raise ContractViolation(
            f"dimension mismatch: {tuple(z_inv.shape)} vs {tuple(z_var.shape)}"
        )
    return z_inv + z_var


def kl_divergence(mu: torch.Tensor, log_var: torch.Tensor) -> torch.Tensor:
    """KL(N(mu, exp(log_var)) || N(0, I)), summed over the last dimension.

    Returns a scalar for vector inputs and a per-row vector for batches.
    """
    if mu.shape != log_var.shape:
        raise ContractViolation("mu and log_var must share shape")
    if not (torch.isfinite(mu).all() and torch.isfinite(log_var).all()):
        # a numerical event, not a call-shape bug: training skips the episode
        raise NonFiniteLossError("kl_divergence received non-finite inputs")
    return 0.5 * (mu.pow(2) + log_var.exp() - 1.0 - log_var).sum(dim=-1)


class FeatureTransform(nn.Module):
    """Per-channel stochastic affine on a feature map.

    Draws bias ~ N(0, softplus(bias_spread)) and scale ~ N(1,
    softplus(scale_spread)) once per forward pass, shared across the batch
    and spatial positions.  Sampling is reparameterized so gradients reach
    the spread parameters.
    """

    def __init__(self, channels: int, bias_init: float = 0.6, scale_init: float = 0.25):
        super().__init__()
        self.channels = channels
        # defaults are the fixed-FT operating point; meta-learning tunes from there
        self.bias_spread = nn.Parameter(torch.full((channels,), bias_init))
        self.scale_spread = nn.Parameter(torch.full((channels,), scale_init))

    def forward(
        self,
        feat: torch.Tensor,
        eps_bias: torch.Tensor,
        eps_scale: torch.Tensor,
    ) -> torch.Tensor:
        if feat.shape[1] != self.channels:
            raise ContractViolation(
                f"feature map has {feat.shape[1]} channels, layer expects {self.channels}"
            )
        if eps_bias.numel() != self.channels or eps_scale.numel() != self.channels:
            raise ContractViolation("noise draws must have one entry per channel")
        shape = (1, self.channels, 1, 1)
        bias = (softplus(self.bias_spread) * eps_bias.reshape(-1)).reshape(shape)
        scale = 1.0 + (softplus(self.scale_spread) * eps_scale.reshape(-1)).reshape(shape)
        return scale * feat + bias

    def sample_noise(self, generator: torch.Generator | None, dtype, device):
        eps_bias = torch.randn(self.channels, generator=generator, dtype=dtype, device=device)
        eps_scale = torch.randn(self.channels, generator=generator, dtype=dtype, device=device)
        return eps_bias, eps_scale


def _norm_groups(channels: int) -> int:
    for g in (4, 3, 2, 1):
        if channels % g == 0:
            return g
    return 1


class ConvEncoder(nn.Module):
    """Stride-2 conv blocks (conv -> group norm -> relu -> FT slot) and three linear heads."""

    def __init__(
        self,
        image_size: int,
        image_channels: int,
        channels: tuple[int, ...],
        d: int,
        with_ft: bool,
        ft_init: tuple[float, float] = (0.6, 0.25),
    ):
        super().__init__()
        self.image_size = image_size
        self.image_channels = image_channels
        self.with_ft = with_ft
        convs, norms, fts = [], [], []
        c_in = image_channels
        for c_out in channels:
            convs.append(nn.Conv2d(c_in, c_out, kernel_size=3, stride=2, padding=1))
            norms.append(nn.GroupNorm(_norm_groups(c_out), c_out))
            if with_ft:
                fts.append(FeatureTransform(c_out, ft_init[0], ft_init[1]))
            c_in = c_out
        self.convs = nn.ModuleList(convs)
        self.norms = nn.ModuleList(norms)
        self.fts = nn.ModuleList(fts) if with_ft else nn.ModuleList()
        self.spatial = image_size // (2 ** len(channels))
        flat = channels[-1] * self.spatial * self.spatial
        self.zinv_head = nn.Linear(flat, d)
        self.mu_head = nn.Linear(flat, d)
        self.logvar_head = nn.Linear(flat, d)

    def forward(
        self,
        x: torch.Tensor,
        ft_active: bool = False,
        generator: torch.Generator | None = None,
        ft_noise: list[tuple[torch.Tensor, torch.Tensor]] | None = None,
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        if x.shape[-1] != self.image_size or x.shape[-2] != self.image_size:
            raise ContractViolation(
                f"input is {x.shape[-2]}x{x.shape[-1]}, encoder expects "
                f"{self.image_size}x{self.image_size}"
            )
        if x.shape[1] != self.image_channels:
            raise ContractViolation(
                f"input has {x.shape[1]} channels, encoder expects {self.image_channels}"
            )
        if ft_active and not self.with_ft:
            raise ContractViolation("ft_active requested but encoder was built without FT layers")
        h = x
        for i, (conv, norm) in enumerate(zip(self.convs, self.norms)):
            h = F.relu(norm(conv(h)))
            if ft_active:
                ft = self.fts[i]
                if ft_noise is not None:
                    eps_bias, eps_scale = ft_noise[i]
                else:
                    eps_bias, eps_scale = ft.sample_noise(generator, h.dtype, h.device)
                h = ft(h, eps_bias, eps_scale)
        h = h.flatten(1)
        return self.zinv_head(h), self.mu_head(h), self.logvar_head(h)


class ConvDecoder(nn.Module):
    """Mirror of the encoder: linear from z_f, stride-2 transposed convs, tanh output."""

    def __init__(
        self,
        image_size: int,
        image_channels: int,
        channels: tuple[int, ...],
        d: int,
    ):
        super().__init__()
        self.spatial = image_size // (2 ** len(channels))
        self.c_top = channels[-1]
        self.fc = nn.Linear(d, self.c_top * self.spatial * self.spatial)
        blocks = []
        rev = list(reversed(channels))
        for c_in, c_out in zip(rev, rev[1:]):
            blocks.append(
                nn.Sequential(
                    nn.ConvTranspose2d(c_in, c_out, 3, stride=2, padding=1, output_padding=1),
                    nn.GroupNorm(_norm_groups(c_out), c_out),
                    nn.ReLU(),
                )
            )
        self.blocks = nn.Sequential(*blocks)
        self.out = nn.ConvTranspose2d(rev[-1], image_channels, 3, stride=2, padding=1,
                                      output_padding=1)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        h = F.relu(self.fc(z))
        h = h.reshape(-1, self.c_top, self.spatial, self.spatial)
        h = self.blocks(h)
        return torch.tanh(self.out(h))


class DisentangledVAE(nn.Module):
    """Shared encoder plus one decoder head per modality.

    The retrieval embedding is ``encode(x).z_inv`` with FT layers inactive;
    that path is deterministic and parameter-frozen at query time.
    """

    def __init__(
        self,
        image_size: int = 64,
        image_channels: int = 1,
        channels: tuple[int, ...] = (16, 32, 64, 64),
        d: int = 64,
        with_ft: bool = True,
        ft_init: tuple[float, float] = (0.6, 0.25),
    ):
        super().__init__()
        self.image_size = image_size
        self.image_channels = image_channels
        self.d = d
        self.with_ft = with_ft
        self.encoder = ConvEncoder(image_size, image_channels, channels, d, with_ft, ft_init)
        self.sketch_decoder = ConvDecoder(image_size, image_channels, channels, d)
        self.photo_decoder = ConvDecoder(image_size, image_channels, channels, d)

    @classmethod
    def from_config(cls, cfg) -> "DisentangledVAE":
        return cls(
            image_size=cfg.image_size,
            image_channels=cfg.image_channels,
            channels=tuple(cfg.channels),
            d=cfg.d,
            with_ft=not cfg.no_ft,
            ft_init=(cfg.fixed_ft_omega, cfg.fixed_ft_eta),
        )

    # -- parameter bookkeeping -------------------------------------------------

    def ft_param_names(self) -> list[str]:
        return [n for n, _ in self.named_parameters() if ".fts." in n]

    def task_param_names(self) -> list[str]:
        """Names of the parameters updated by the inner loop (everything but FT spreads)."""
        return [n for n, _ in self.named_parameters() if ".fts." not in n]

    def zinv_head_param_names(self) -> list[str]:
        return ["encoder.zinv_head.weight", "encoder.zinv_head.bias"]

    def zinv_head_numel(self) -> int:
        return sum(self.get_parameter(n).numel() for n in self.zinv_head_param_names())

    # -- forward paths ---------------------------------------------------------

    def encode(
        self,
        images: torch.Tensor,
        ft_active: bool = False,
        generator: torch.Generator | None = None,
        ft_noise=None,
    ) -> LatentCode:
        """Encode a batch (B, C, H, W); deterministic when ft_active is false."""
        single = images.dim() == 3
        if single:
            images = images.unsqueeze(0)
        z_inv, mu, log_var = self.encoder(images, ft_active=ft_active, generator=generator,
                                          ft_noise=ft_noise)
        if single:
            z_inv, mu, log_var = z_inv[0], mu[0], log_var[0]
        return LatentCode(z_inv=z_inv, mu=mu, log_var=log_var)

    def decode(self, z_f: torch.Tensor, modality: Modality | str) -> torch.Tensor:
        """Decode fused codes into the target modality; tanh keeps pixels in (-1, 1)."""
        if not torch.isfinite(z_f).all():
            raise NonFiniteLossError("decode received non-finite z_f")
        try:
            modality = Modality(modality)
        except ValueError:
            raise ContractViolation(f"invalid modality: {modality!r}") from None
        head = self.sketch_decoder if modality is Modality.SKETCH else self.photo_decoder
        single = z_f.dim() == 1
        out = head(z_f.unsqueeze(0) if single else z_f)
        return out[0] if single else out

    def forward(
        self,
        sketches: torch.Tensor,
        photos: torch.Tensor,
        negatives: torch.Tensor,
        cross_idx: torch.Tensor,
        ft_active: bool = False,
        generator: torch.Generator | None = None,
        ft_generator: torch.Generator | None = None,
        decode_photo_to_sketch: bool = False,
    ) -> dict[str, torch.Tensor]:
        """One training pass over an aligned pair batch.

        ``cross_idx[j]`` indexes another sketch of the same object (for the
        cross-style term) or is -1 when no second style exists.  z_var noise
        comes from ``generator``; FT noise comes from ``ft_generator`` (its
        own stream, so runs with and without FT layers consume identical
        z_var draws and stay comparable), falling back to ``generator``.
        """
        n = sketches.shape[0]
        if photos.shape[0] != n or negatives.shape[0] != n or cross_idx.shape[0] != n:
            raise ContractViolation("sketches, photos, negatives, cross_idx must align")

        stacked = torch.cat([sketches, photos, negatives], dim=0)
        ft_noise = None
        if ft_active and self.with_ft:
            g_ft = ft_generator if ft_generator is not None else generator
            ft_noise = [ft.sample_noise(g_ft, stacked.dtype, stacked.device)
                        for ft in self.encoder.fts]
        z_inv_all, mu_all, logvar_all = self.encoder(
            stacked, ft_active=ft_active, generator=generator, ft_noise=ft_noise
        )

        def split(t):
            return t[:n], t[n:2 * n], t[2 * n:]

        z_inv_s, z_inv_p, z_inv_n = split(z_inv_all)
        mu_s, mu_p, mu_n = split(mu_all)
        logvar_s, logvar_p, logvar_n = split(logvar_all)

        eps = torch.randn(3 * n, self.d, generator=generator,
                          dtype=stacked.dtype, device=stacked.device)
        z_var_s = reparameterize(mu_s, logvar_s, eps[:n])
        z_var_p = reparameterize(mu_p, logvar_p, eps[n:2 * n])
        z_var_n = reparameterize(mu_n, logvar_n, eps[2 * n:])

        z_f_s = fuse(z_inv_s, z_var_s)
        z_f_p = fuse(z_inv_p, z_var_p)
        z_f_n = fuse(z_inv_n, z_var_n)

        out = {
            "z_inv_s": z_inv_s, "z_inv_p": z_inv_p, "z_inv_n": z_inv_n,
            "mu_s": mu_s, "mu_p": mu_p,
            "logvar_s": logvar_s, "logvar_p": logvar_p,
            "z_f_s": z_f_s, "z_f_p": z_f_p, "z_f_n": z_f_n,
            "recon_sketch_self": self.sketch_decoder(z_f_s),
            "recon_photo_self": self.photo_decoder(z_f_p),
            "recon_sketch_to_photo": self.photo_decoder(z_f_s),
        }

        has_cross = cross_idx >= 0
        if has_cross.any():
            src = torch.where(has_cross, cross_idx, torch.zeros_like(cross_idx))
            z_f_cross = fuse(z_inv_s, z_var_s[src])
            out["recon_cross_style"] = self.sketch_decoder(z_f_cross[has_cross])
            out["cross_mu"] = mu_s[src][has_cross]
            out["cross_logvar"] = logvar_s[src][has_cross]
        out["has_cross"] = has_cross

        if decode_photo_to_sketch:
            out["recon_photo_to_sketch"] = self.sketch_decoder(z_f_p)
        return out


def init_parameters(model: nn.Module, generator: torch.Generator) -> None:
    """Re-randomize all conv/linear weights from an explicit generator.

    Kaiming-uniform fan-in scaling, matching torch's default layer init but
    reproducible without touching global RNG state.
    """
    for m in model.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            fan_in = nn.init._calculate_correct_fan(m.weight, "fan_in")
            gain = math.sqrt(2.0 / (1 + math.sqrt(5.0) ** 2))
            bound = math.sqrt(3.0) * gain / math.sqrt(fan_in)
            with torch.no_grad():
                m.weight.uniform_(-bound, bound, generator=generator)
                if m.bias is not None:
                    b = 1.0 / math.sqrt(fan_in)
                    m.bias.uniform_(-b, b, generator=generator)
        elif isinstance(m, nn.GroupNorm):
            with torch.no_grad():
                m.weight.fill_(1.0)
                m.bias.fill_(0.0)
