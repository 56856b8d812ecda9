"""Training configuration and its JSON round trip.

The JSON config file mirrors the ``TrainConfig`` field names exactly;
unknown keys are rejected so typos fail loudly instead of silently using
defaults.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ContractViolation


@dataclass
class LossWeights:
    """Weights and margins entering the composite losses.

    ``lambda1`` is the *current* KL weight (the schedule, not the config,
    decides its value for a given epoch).
    """

    lambda1: float = 0.001
    lambda2: float = 1.0
    lambda3: float = 0.7
    m_zinv: float = 0.5
    m_zf: float = 0.3

    def validate(self) -> None:
        for name in ("lambda1", "lambda2", "lambda3"):
            if getattr(self, name) < 0:
                raise ContractViolation(f"{name} must be non-negative")
        for name in ("m_zinv", "m_zf"):
            if getattr(self, name) <= 0:
                raise ContractViolation(f"{name} must be positive")


@dataclass
class TrainConfig:
    # optimisation
    alpha: float = 0.0005          # inner-loop learning rate
    beta: float = 0.0001           # outer-loop learning rate
    warmup_lr: float = 0.0005      # warm-up phase Adam learning rate
    inner_steps: int = 1
    meta_batch: int = 16
    epochs: int = 200
    warmup_epochs: int = 20
    grad_clip: float = 10.0

    # KL weight schedule: constant lambda1_start, then a linear ramp to
    # lambda1_end over the last lambda1_ramp_last_epochs epochs
    lambda1_start: float = 0.001
    lambda1_end: float = 1.8
    lambda1_ramp_last_epochs: int = 75

    # remaining loss weights / margins
    lambda2: float = 1.0
    lambda3: float = 0.7
    m_zinv: float = 0.5
    m_zf: float = 0.3

    # model shape
    d: int = 64
    image_size: int = 64
    image_channels: int = 1
    channels: tuple[int, ...] = (16, 32, 64, 64)

    # episode construction
    val_ratio: float = 0.2         # per-episode validation share r_i = max(1, ceil(val_ratio * n))
    episodes_per_epoch: int = 0    # 0 = one pass over the task list per epoch
    warmup_batch_size: int = 16

    # reproducibility
    seed: int = 0

    # ablations
    no_ft: bool = False            # build without feature-transform layers
    no_regd: bool = False          # freeze psi at zero, drop the L_Reg term
    fixed_ft: bool = False         # FT spreads fixed, not meta-learned
    fixed_ft_omega: float = 0.6    # FT operating point: spread init, frozen under fixed_ft
    fixed_ft_eta: float = 0.25
    no_meta: bool = False          # warm-up-style training for all epochs

    # optional behaviours
    adaptive_inner: bool = False   # non-differentiable Adam inner step (ablation only)
    random_negatives: bool = False # uniform random instead of hard negatives
    photo_to_sketch: bool = False  # add the photo->sketch translation term
    cross_style: bool = True

    # bookkeeping
    checkpoint_every: int = 1
    eval_every: int = 0            # 0 = evaluate only at the end
    eval_split: str = "meta_val"   # split used for periodic evaluation

    def validate(self) -> None:
        if self.inner_steps < 1:
            raise ContractViolation("inner_steps must be >= 1")
        if self.meta_batch < 1:
            raise ContractViolation("meta_batch must be >= 1")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ContractViolation("warmup_epochs must satisfy 0 <= warmup_epochs < epochs")
        if self.lambda1_ramp_last_epochs < 1 or self.lambda1_ramp_last_epochs > self.epochs:
            raise ContractViolation("lambda1_ramp_last_epochs must be in [1, epochs]")
        if self.image_size % (2 ** len(self.channels)) != 0:
            raise ContractViolation(
                f"image_size {self.image_size} not divisible by 2^{len(self.channels)}"
            )
        if self.no_ft and self.fixed_ft:
            raise ContractViolation("no_ft and fixed_ft are mutually exclusive")
        self.loss_weights().validate()

    def loss_weights(self, lambda1: float | None = None) -> LossWeights:
        """Weights for a given epoch; ``lambda1`` defaults to the schedule start."""
        return LossWeights(
            lambda1=self.lambda1_start if lambda1 is None else lambda1,
            lambda2=self.lambda2,
            lambda3=self.lambda3,
            m_zinv=self.m_zinv,
            m_zf=self.m_zf,
        )

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["channels"] = list(self.channels)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ContractViolation(f"unknown config keys: {sorted(unknown)}")
        data = dict(data)
        if "channels" in data:
            data["channels"] = tuple(data["channels"])
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))
