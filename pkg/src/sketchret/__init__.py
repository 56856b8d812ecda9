"""Style-agnostic sketch-based image retrieval.

A disentanglement VAE separates what a sketch depicts (the modal-invariant
code used for retrieval) from how it is drawn; meta-learned feature
transforms and a sparsity regulariser train that separation to survive
drawing styles never seen in training.
"""

from .config import LossWeights, TrainConfig
from .errors import (
    CheckpointError,
    ContractViolation,
    DatasetError,
    NonFiniteLossError,
)
from .evaluation import evaluate
from .losses import (
    EpisodeBatch,
    Phase,
    episode_losses,
    reconstruction_loss,
    regulariser_loss,
    triplet_loss,
)
from .model import (
    DisentangledVAE,
    LatentCode,
    Modality,
    fuse,
    kl_divergence,
    reparameterize,
    softplus,
)
from .retrieval import RetrievalIndex, embed_gallery, load_index, query, save_index
from .trainer import inner_update, lambda1_schedule, outer_step, train, warmup_step

__version__ = "0.1.0"

__all__ = [
    "CheckpointError",
    "ContractViolation",
    "DatasetError",
    "DisentangledVAE",
    "EpisodeBatch",
    "LatentCode",
    "LossWeights",
    "Modality",
    "NonFiniteLossError",
    "Phase",
    "RetrievalIndex",
    "TrainConfig",
    "embed_gallery",
    "episode_losses",
    "evaluate",
    "fuse",
    "inner_update",
    "kl_divergence",
    "lambda1_schedule",
    "load_index",
    "outer_step",
    "query",
    "reconstruction_loss",
    "regulariser_loss",
    "reparameterize",
    "save_index",
    "softplus",
    "train",
    "triplet_loss",
    "warmup_step",
    "__version__",
]
