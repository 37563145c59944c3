"""Model construction, Gaussian posteriors and optimization."""

from .network import MODEL_PROFILES, Network, Stack, build_model, check_shapes, mlp_layers, model_profile
from .optim import Adam, AdamState, adam_step
from .prob_ops import (
    LatentPosterior,
    kl_to_standard_normal,
    log_density_diag_gaussian,
    log_standard_normal,
    recon_loss,
    reparameterize,
)

__all__ = [
    "MODEL_PROFILES",
    "Adam",
    "AdamState",
    "LatentPosterior",
    "Network",
    "Stack",
    "adam_step",
    "build_model",
    "check_shapes",
    "kl_to_standard_normal",
    "log_density_diag_gaussian",
    "log_standard_normal",
    "mlp_layers",
    "model_profile",
    "recon_loss",
    "reparameterize",
]
