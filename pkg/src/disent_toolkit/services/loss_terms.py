"""Plug-in loss terms and the objective that composes them.

Every term maps a sampled posterior (plus the batch and schedule values) to one
scalar tensor. ``Objective.compose`` adds the weighted reconstruction loss and
the enabled terms in order, so any compatible set of terms can be mixed. Terms
that train their own networks (FactorVAE discriminator, IFCVAE adversary) do
so in ``auxiliary_step``, after the model update, on detached codes.
"""

from __future__ import annotations

import logging
import math
from abc import ABC, abstractmethod
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import ClassVar

import numpy as np

from disent_toolkit.autodiff import Tensor, as_tensor, backward, log_softmax, matmul, zero_grad
from disent_toolkit.errors import ConfigError
from disent_toolkit.models.schemas import (
    BTCTermConfig,
    CVAETermConfig,
    DIPTermConfig,
    FactorTCTermConfig,
    IFCVAETermConfig,
    KLTermConfig,
    MMDTermConfig,
    ObjectiveSpec,
    TermConfig,
    TrainConfig,
)
from disent_toolkit.nn.network import Stack, mlp_layers
from disent_toolkit.nn.optim import Adam, AdamState
from disent_toolkit.nn.prob_ops import (
    LatentPosterior,
    kl_to_standard_normal,
    log_density_diag_gaussian,
    log_standard_normal,
    recon_loss,
)
from disent_toolkit.services.synth_data import FactorDataset

logger = logging.getLogger(__name__)


# -- term operations ------------------------------------------------------------


def term_kl_capacity(kl_per_sample: Tensor, beta: float, capacity: float) -> Tensor:
    """beta * |mean(KL) - C|; with C = 0 this is the beta-VAE penalty."""
    if beta < 0 or capacity < 0:
        raise ConfigError(f"beta ({beta}) and capacity ({capacity}) must be non-negative")
    return (as_tensor(kl_per_sample).mean() - capacity).abs() * beta


def _sampled(post: LatentPosterior) -> Tensor:
    if post.z is None:
        raise ValueError("posterior has not been sampled")
    return post.z


def btc_decompose(post: LatentPosterior, dataset_size: int) -> tuple[Tensor, Tensor, Tensor]:
    """(MI, TC, dimKL) by minibatch-weighted sampling.

    Raises:
        ConfigError: If the batch has fewer than two samples or exceeds ``dataset_size``.
    """
    z = _sampled(post)
    batch = z.shape[0]
    if batch < 2:
        raise ConfigError(f"beta-TCVAE needs a batch of at least 2, got {batch}")
    if dataset_size < batch:
        raise ConfigError(f"dataset_size {dataset_size} is smaller than the batch size {batch}")

    pairwise = log_density_diag_gaussian(z, post.mu, post.logvar)
    log_norm = math.log(dataset_size * batch)
    diagonal = np.arange(batch)
    log_qz_given_x = pairwise[diagonal, diagonal].sum(axis=1)
    log_qz = pairwise.sum(axis=2).logsumexp(axis=1) - log_norm
    log_qz_product = (pairwise.logsumexp(axis=1) - log_norm).sum(axis=1)
    log_pz = log_standard_normal(z).sum(axis=1)

    mutual_info = (log_qz_given_x - log_qz).mean()
    total_correlation = (log_qz - log_qz_product).mean()
    dimension_kl = (log_qz_product - log_pz).mean()
    return mutual_info, total_correlation, dimension_kl


def permute_dims(z: Tensor, rng: np.random.Generator) -> Tensor:
    """Shuffle every latent column independently across the batch."""
    z = as_tensor(z)
    batch, dim = z.shape
    rows = np.stack([rng.permutation(batch) for _ in range(dim)], axis=1)
    return z[rows, np.arange(dim)[None, :]]


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy against integer labels."""
    labels = np.asarray(labels, dtype=np.int64)
    return -log_softmax(logits, axis=1)[np.arange(len(labels)), labels].mean()


def accuracy(logits: Tensor, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(logits.data, axis=1) == np.asarray(labels)))


def factor_tc_term(z: Tensor, discriminator: Stack, gamma_tc: float = 1.0) -> Tensor:
    """gamma * mean(logit_real - logit_permuted), the log density-ratio TC estimate."""
    logits = discriminator(z)
    return (logits[:, 0] - logits[:, 1]).mean() * gamma_tc


def factor_disc_step(z: Tensor, z_perm: Tensor, discriminator: Stack, optimizer: Adam) -> tuple[float, float]:
    """One discriminator update on detached codes: real = class 0, permuted = class 1.

    Returns:
        The discriminator loss and its accuracy on this batch.
    """
    z, z_perm = as_tensor(z).detach(), as_tensor(z_perm).detach()
    zero_grad(discriminator.params)
    batch = z.shape[0]
    real_labels = np.zeros(batch, dtype=np.int64)
    perm_labels = np.ones(batch, dtype=np.int64)
    logits_real = discriminator(z)
    logits_perm = discriminator(z_perm)
    loss = (cross_entropy(logits_real, real_labels) + cross_entropy(logits_perm, perm_labels)) * 0.5
    backward(loss)
    optimizer.step()
    zero_grad(discriminator.params)
    acc = 0.5 * (accuracy(logits_real, real_labels) + accuracy(logits_perm, perm_labels))
    return loss.item(), acc


def squared_distances(x: Tensor, y: Tensor) -> Tensor:
    x, y = as_tensor(x), as_tensor(y)
    diff = x.reshape(x.shape[0], 1, x.shape[1]) - y.reshape(1, y.shape[0], y.shape[1])
    return (diff * diff).sum(axis=2)


def mmd_squared(x: Tensor, y: Tensor, sigma2: float) -> Tensor:
    """Biased (V-statistic) MMD^2 with kernel exp(-|a - b|^2 / (2 sigma^2))."""

    def kernel_mean(a: Tensor, b: Tensor) -> Tensor:
        return (squared_distances(a, b) * (-0.5 / sigma2)).exp().mean()

    return kernel_mean(x, x) + kernel_mean(y, y) - kernel_mean(x, y) * 2.0


def mmd_term(
    z: Tensor,
    rng: np.random.Generator,
    lambda_mmd: float,
    bandwidth_mode: str = "latent_dim",
    sigma2: float = 1.0,
) -> Tensor:
    """lambda * MMD^2 between the batch codes and as many fresh prior draws."""
    z = as_tensor(z)
    if z.shape[0] < 2:
        raise ConfigError(f"MMD needs a batch of at least 2, got {z.shape[0]}")
    bandwidth = float(z.shape[1]) if bandwidth_mode == "latent_dim" else sigma2
    prior = Tensor(rng.standard_normal(z.shape))
    return mmd_squared(z, prior, bandwidth) * lambda_mmd


def dip_term(post: LatentPosterior, mode: str, lambda_od: float, lambda_d: float) -> Tensor:
    """Moment-matching penalty pushing the aggregate posterior covariance to identity."""
    mu = post.mu
    batch, dim = mu.shape
    if batch < 2:
        raise ConfigError(f"DIP needs a batch of at least 2, got {batch}")
    centered = mu - mu.mean(axis=0, keepdims=True)
    cov = matmul(centered.T, centered) / batch
    eye = np.eye(dim)
    if mode == "II":
        cov = cov + eye * post.logvar.exp().mean(axis=0, keepdims=True)
    elif mode != "I":
        raise ConfigError(f"unknown DIP mode {mode!r}")
    off_diagonal = cov * (1.0 - eye)
    diagonal = (cov * eye).sum(axis=1)
    return (off_diagonal * off_diagonal).sum() * lambda_od + ((diagonal - 1.0) * (diagonal - 1.0)).sum() * lambda_d


@dataclass
class IFCVAEOutputs:
    """Model-side IFCVAE loss and the classifier cross-entropies behind it."""

    loss: Tensor
    aux_ce: float
    adv_ce: float | None
    aux_accuracy: float
    adv_accuracy: float | None


def ifcvae_terms(
    post: LatentPosterior,
    labels: np.ndarray,
    aux_clf: Stack,
    adv_clf: Stack | None,
    label_dims: int,
    w_aux: float,
    w_adv: float,
) -> IFCVAEOutputs:
    """w_aux * CE(aux(z[:, :L])) - w_adv * CE(adv(z[:, L:])).

    Raises:
        ConfigError: If ``label_dims`` exceeds the latent dimensionality.
    """
    z = _sampled(post)
    if label_dims > z.shape[1]:
        raise ConfigError(f"IFCVAE label_dims {label_dims} exceeds latent_dim {z.shape[1]}")
    aux_logits = aux_clf(z[:, :label_dims])
    aux_ce = cross_entropy(aux_logits, labels)
    loss = aux_ce * w_aux
    adv_ce_value = adv_acc = None
    if adv_clf is not None:
        adv_logits = adv_clf(z[:, label_dims:])
        adv_ce = cross_entropy(adv_logits, labels)
        loss = loss - adv_ce * w_adv
        adv_ce_value = adv_ce.item()
        adv_acc = accuracy(adv_logits, labels)
    return IFCVAEOutputs(
        loss=loss,
        aux_ce=aux_ce.item(),
        adv_ce=adv_ce_value,
        aux_accuracy=accuracy(aux_logits, labels),
        adv_accuracy=adv_acc,
    )


# -- pluggable terms ----------------------------------------------------------------


@dataclass
class TermContext:
    """Everything a term may read during one training step."""

    posterior: LatentPosterior
    images: np.ndarray
    reconstruction: Tensor
    factors: np.ndarray
    rng: np.random.Generator
    capacity: float = 0.0
    recon_weight: float = 1.0
    diagnostics: dict[str, float] = field(default_factory=dict)


class LossTerm(ABC):
    """Base class for objective terms."""

    label: ClassVar[str]
    min_batch: ClassVar[int] = 1

    @abstractmethod
    def __call__(self, ctx: TermContext) -> Tensor | None:
        """Return the weighted scalar contribution, or None for terms without one."""

    def parameters(self) -> dict[str, Tensor]:
        """Parameters trained jointly with the model."""
        return {}

    def auxiliary_parameters(self) -> dict[str, Tensor]:
        """Every parameter this term owns, for checkpoints."""
        return self.parameters()

    def optimizers(self) -> dict[str, AdamState]:
        """Optimizers this term steps itself."""
        return {}

    def auxiliary_step(self, ctx: TermContext) -> dict[str, float]:
        return {}


class KLTerm(LossTerm):
    label = "kl"

    def __init__(self, config: KLTermConfig) -> None:
        self.config = config

    def __call__(self, ctx: TermContext) -> Tensor:
        kl = kl_to_standard_normal(ctx.posterior.mu, ctx.posterior.logvar)
        ctx.diagnostics["kl"] = float(kl.data.mean())
        if not self.config.capacity:
            return kl.mean() * self.config.beta
        return term_kl_capacity(kl, self.config.beta, ctx.capacity)


class BTCTerm(LossTerm):
    label = "btc"
    min_batch = 2

    def __init__(self, config: BTCTermConfig, dataset_size: int) -> None:
        self.config = config
        self.dataset_size = config.dataset_size or dataset_size

    def __call__(self, ctx: TermContext) -> Tensor:
        mi, tc, dim_kl = btc_decompose(ctx.posterior, self.dataset_size)
        ctx.diagnostics.update({"mi": mi.item(), "tc": tc.item(), "dim_kl": dim_kl.item()})
        cfg = self.config
        kl_content = mi * cfg.alpha + dim_kl * cfg.gamma
        if cfg.capacity:
            kl_content = (kl_content - ctx.capacity).abs()
        return kl_content + tc * cfg.beta


class FactorTCTerm(LossTerm):
    label = "factor_tc"

    def __init__(self, config: FactorTCTermConfig, latent_dim: int, rng: np.random.Generator) -> None:
        self.config = config
        layers = mlp_layers(config.disc_hidden, 2, activation="leaky_relu", negative_slope=config.disc_slope)
        self.discriminator = Stack("discriminator", layers, (latent_dim,), rng)
        self.optimizer = Adam(
            self.discriminator.params, lr=config.disc_lr, beta1=config.disc_beta1, beta2=config.disc_beta2
        )
        self._last_z: Tensor | None = None

    def __call__(self, ctx: TermContext) -> Tensor:
        z = _sampled(ctx.posterior)
        self._last_z = z.detach()
        value = factor_tc_term(z, self.discriminator, self.config.gamma_tc)
        ctx.diagnostics["tc_estimate"] = value.item() / self.config.gamma_tc if self.config.gamma_tc else 0.0
        return value

    def auxiliary_parameters(self) -> dict[str, Tensor]:
        return self.discriminator.parameters()

    def optimizers(self) -> dict[str, AdamState]:
        return {"discriminator": self.optimizer.state}

    def auxiliary_step(self, ctx: TermContext) -> dict[str, float]:
        z = self._last_z if self._last_z is not None else _sampled(ctx.posterior).detach()
        z_perm = permute_dims(z, ctx.rng)
        loss, acc = factor_disc_step(z, z_perm, self.discriminator, self.optimizer)
        return {"disc_loss": loss, "disc_accuracy": acc}


class MMDTerm(LossTerm):
    label = "mmd"
    min_batch = 2

    def __init__(self, config: MMDTermConfig) -> None:
        self.config = config

    def __call__(self, ctx: TermContext) -> Tensor:
        cfg = self.config
        value = mmd_term(_sampled(ctx.posterior), ctx.rng, cfg.lambda_mmd, cfg.bandwidth, cfg.sigma2)
        ctx.diagnostics["mmd2"] = value.item() / cfg.lambda_mmd if cfg.lambda_mmd else 0.0
        return value


class DIPTerm(LossTerm):
    min_batch = 2

    def __init__(self, config: DIPTermConfig) -> None:
        self.config = config
        self.label = "dip_i" if config.mode == "I" else "dip_ii"  # type: ignore[misc]

    def __call__(self, ctx: TermContext) -> Tensor:
        cfg = self.config
        return dip_term(ctx.posterior, cfg.mode, cfg.lambda_od, cfg.lambda_d)


class CVAETerm(LossTerm):
    """Marks the model as conditional on one-hot encodings of known factors."""

    label = "cvae"

    def __init__(self, config: CVAETermConfig) -> None:
        self.config = config

    def __call__(self, ctx: TermContext) -> None:
        return None


class IFCVAETerm(LossTerm):
    label = "ifcvae"

    def __init__(
        self, config: IFCVAETermConfig, latent_dim: int, dataset: FactorDataset, rng: np.random.Generator
    ) -> None:
        if config.label_dims > latent_dim:
            raise ConfigError(f"IFCVAE label_dims {config.label_dims} exceeds latent_dim {latent_dim}")
        self.config = config
        self.factor = dataset.space.factor_index(config.label_factor)
        classes = dataset.space.cardinalities[self.factor]
        hidden = config.classifier_hidden
        self.aux_clf = Stack("ifcvae_aux", mlp_layers(hidden, classes), (config.label_dims,), rng)
        self.adv_clf: Stack | None = None
        self.adv_optimizer: Adam | None = None
        if config.label_dims < latent_dim:
            free = latent_dim - config.label_dims
            self.adv_clf = Stack("ifcvae_adv", mlp_layers(hidden, classes), (free,), rng)
            self.adv_optimizer = Adam(self.adv_clf.params, lr=config.classifier_lr)
        else:
            logger.warning("IFCVAE label_dims equals latent_dim; no free latents, adversary disabled")
        self._last_z: Tensor | None = None

    def __call__(self, ctx: TermContext) -> Tensor:
        cfg = self.config
        labels = ctx.factors[:, self.factor]
        out = ifcvae_terms(ctx.posterior, labels, self.aux_clf, self.adv_clf, cfg.label_dims, cfg.w_aux, cfg.w_adv)
        self._last_z = _sampled(ctx.posterior).detach()
        ctx.diagnostics["aux_accuracy"] = out.aux_accuracy
        if out.adv_accuracy is not None:
            ctx.diagnostics["adv_accuracy"] = out.adv_accuracy
        return out.loss

    def parameters(self) -> dict[str, Tensor]:
        return self.aux_clf.parameters()

    def auxiliary_parameters(self) -> dict[str, Tensor]:
        params = self.aux_clf.parameters()
        if self.adv_clf is not None:
            params.update(self.adv_clf.parameters())
        return params

    def optimizers(self) -> dict[str, AdamState]:
        return {} if self.adv_optimizer is None else {"ifcvae_adv": self.adv_optimizer.state}

    def auxiliary_step(self, ctx: TermContext) -> dict[str, float]:
        if self.adv_clf is None or self.adv_optimizer is None:
            return {}
        z = self._last_z if self._last_z is not None else _sampled(ctx.posterior).detach()
        labels = ctx.factors[:, self.factor]
        zero_grad(self.adv_clf.params)
        logits = self.adv_clf(z[:, self.config.label_dims :])
        loss = cross_entropy(logits, labels)
        backward(loss)
        self.adv_optimizer.step()
        zero_grad(self.adv_clf.params)
        return {"adv_loss": loss.item(), "adv_accuracy": accuracy(logits, labels)}


# -- objective ----------------------------------------------------------------------

TERM_NAMES = ("VAE", "BetaVAE", "BTCVAE", "FactorVAE", "InfoVAE", "DIP_I", "DIP_II", "CVAE", "IFCVAE")
CONFLICTING_LABELS = frozenset({"kl", "btc"})


def term_config_for(name: str, config: TrainConfig) -> TermConfig:
    """Map a ``--loss_terms`` name (case-insensitive) to its configured term.

    Raises:
        ConfigError: If the name is unknown, listing the valid names.
    """
    key = name.strip().lower()
    if key == "vae":
        return KLTermConfig(beta=1.0, capacity=False)
    if key == "betavae":
        return config.kl
    if key == "btcvae":
        return config.btc
    if key == "factorvae":
        return config.factorvae
    if key == "infovae":
        return config.infovae
    if key == "dip_i":
        return config.dip_i.model_copy(update={"mode": "I"})
    if key == "dip_ii":
        return config.dip_ii.model_copy(update={"mode": "II"})
    if key == "cvae":
        return config.cvae
    if key == "ifcvae":
        return config.ifcvae
    raise ConfigError(f"unknown loss term {name!r}; valid names: {', '.join(TERM_NAMES)}")


def objective_spec_from_config(config: TrainConfig) -> ObjectiveSpec:
    spec = ObjectiveSpec(
        terms=[term_config_for(name, config) for name in config.loss_terms],
        recon_kind=config.recon_kind,
        allow_term_overlap=config.allow_term_overlap,
    )
    validate_objective(spec, names=config.loss_terms)
    return spec


def _term_label(term: TermConfig) -> str:
    if isinstance(term, DIPTermConfig):
        return "dip_i" if term.mode == "I" else "dip_ii"
    return term.kind


def validate_objective(spec: ObjectiveSpec, names: Sequence[str] | None = None) -> None:
    """Reject duplicate terms and, unless overlap is allowed, KL together with BTC.

    Raises:
        ConfigError: Naming the offending terms.
    """
    labels = [_term_label(term) for term in spec.terms]
    display = list(names) if names is not None and len(names) == len(labels) else labels
    seen: dict[str, str] = {}
    for label, shown in zip(labels, display):
        if label in seen:
            raise ConfigError(f"loss terms {seen[label]} and {shown} configure the same term ({label})")
        seen[label] = shown
    if not spec.allow_term_overlap and CONFLICTING_LABELS <= seen.keys():
        first, second = (seen[label] for label in sorted(CONFLICTING_LABELS, key=labels.index))
        raise ConfigError(
            f"loss terms {first} and {second} both reweight the KL divergence; "
            "set allow_term_overlap to combine them"
        )


@dataclass
class TermBreakdown:
    """Per-term values of one step; ``total`` is the loss that was differentiated."""

    terms: dict[str, float]
    recon: float
    recon_weight: float
    total: float
    diagnostics: dict[str, float] = field(default_factory=dict)

    def component_sum(self) -> float:
        """recon_weight * recon + the terms, added in composition order."""
        value = self.recon * self.recon_weight
        for term_value in self.terms.values():
            value = value + term_value
        return value


class Objective:
    """Ordered, validated set of loss terms with their auxiliary networks."""

    def __init__(self, spec: ObjectiveSpec, terms: list[LossTerm]) -> None:
        self.spec = spec
        self.terms = terms

    @classmethod
    def from_spec(
        cls,
        spec: ObjectiveSpec,
        latent_dim: int,
        dataset: FactorDataset,
        rng: np.random.Generator,
    ) -> Objective:
        validate_objective(spec)
        terms: list[LossTerm] = []
        for term in spec.terms:
            if isinstance(term, KLTermConfig):
                terms.append(KLTerm(term))
            elif isinstance(term, BTCTermConfig):
                terms.append(BTCTerm(term, len(dataset)))
            elif isinstance(term, FactorTCTermConfig):
                terms.append(FactorTCTerm(term, latent_dim, rng))
            elif isinstance(term, MMDTermConfig):
                terms.append(MMDTerm(term))
            elif isinstance(term, DIPTermConfig):
                terms.append(DIPTerm(term))
            elif isinstance(term, CVAETermConfig):
                terms.append(CVAETerm(term))
            else:
                terms.append(IFCVAETerm(term, latent_dim, dataset, rng))
        return cls(spec, terms)

    @property
    def min_batch(self) -> int:
        return max((term.min_batch for term in self.terms), default=1)

    @property
    def condition_factors(self) -> list[str]:
        names: list[str] = []
        for term in self.terms:
            if isinstance(term, CVAETerm):
                names.extend(term.config.condition_factors)
        return names

    def parameters(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        for term in self.terms:
            params.update(term.parameters())
        return params

    def auxiliary_parameters(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        for term in self.terms:
            params.update(term.auxiliary_parameters())
        return params

    def optimizers(self) -> dict[str, AdamState]:
        states: dict[str, AdamState] = {}
        for term in self.terms:
            states.update(term.optimizers())
        return states

    def compose(self, ctx: TermContext) -> tuple[Tensor, TermBreakdown]:
        """Weighted reconstruction plus every term, evaluated in configured order."""
        recon = recon_loss(ctx.images, ctx.reconstruction, self.spec.recon_kind)
        loss = recon * ctx.recon_weight
        values: dict[str, float] = {}
        for term in self.terms:
            value = term(ctx)
            if value is None:
                continue
            loss = loss + value
            values[term.label] = value.item()
        breakdown = TermBreakdown(
            terms=values,
            recon=recon.item(),
            recon_weight=ctx.recon_weight,
            total=loss.item(),
            diagnostics=dict(ctx.diagnostics),
        )
        return loss, breakdown

    def auxiliary_step(self, ctx: TermContext) -> dict[str, float]:
        """Train discriminators/adversaries on the step's detached codes."""
        results: dict[str, float] = {}
        for term in self.terms:
            for key, value in term.auxiliary_step(ctx).items():
                results[f"{term.label}.{key}"] = value
        return results
