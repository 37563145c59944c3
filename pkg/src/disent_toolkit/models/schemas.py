"""Pydantic schemas for model specs, objectives, training configs and reports."""

from __future__ import annotations

import math
from typing import Annotated, Literal

from pydantic import BaseModel, Field, model_validator

Activation = Literal["relu", "sigmoid", "tanh", "leaky_relu", "none"]
LayerKind = Literal["conv", "deconv", "dense", "flatten", "reshape", "activation"]


class LayerSpec(BaseModel):
    """One layer descriptor of an encoder/decoder program."""

    kind: LayerKind = Field(..., description="Layer type")
    out_channels: int | None = Field(None, ge=1, description="Output channels for conv/deconv")
    units: int | None = Field(None, ge=1, description="Output width for dense")
    kernel: int = Field(3, ge=1, description="Square kernel size")
    stride: int = Field(1, ge=1, description="Stride for conv/deconv")
    padding: int = Field(0, ge=0, description="Zero padding for conv/deconv")
    activation: Activation = Field("none", description="Activation applied after the layer")
    negative_slope: float = Field(0.2, ge=0, description="Slope below zero for leaky_relu")
    shape: list[int] | None = Field(None, description="Target per-sample shape for reshape")
    model_config = {"extra": "forbid"}


class ModelSpec(BaseModel):
    """Declarative encoder/decoder architecture, independent of the objective."""

    encoder_layers: list[LayerSpec] = Field(..., min_length=1)
    decoder_layers: list[LayerSpec] = Field(..., min_length=1)
    latent_dim: int = Field(..., ge=1, description="Dimensionality of z")
    image_shape: tuple[int, int, int] = Field(..., description="(channels, height, width)")
    condition_dim: int = Field(0, ge=0, description="One-hot condition width, 0 = unconditional")
    model_config = {"extra": "forbid"}


# -- objective terms ----------------------------------------------------------


class KLTermConfig(BaseModel):
    """beta * |KL(q(z|x) || p(z)) - C| (VAE, beta-VAE, controlled capacity)."""

    kind: Literal["kl"] = "kl"
    beta: float = Field(1.0, ge=0)
    capacity: bool = Field(False, description="Subtract the scheduled capacity C")
    model_config = {"extra": "forbid"}


class BTCTermConfig(BaseModel):
    """beta-TCVAE decomposition alpha*MI + beta*TC + gamma*dimKL."""

    kind: Literal["btc"] = "btc"
    alpha: float = Field(1.0, ge=0)
    beta: float = Field(2.0, ge=0)
    gamma: float = Field(1.0, ge=0)
    dataset_size: int | None = Field(None, ge=1, description="N for minibatch-weighted sampling")
    capacity: bool = Field(False, description="Apply |alpha*MI + gamma*dimKL - C|")
    model_config = {"extra": "forbid"}


class FactorTCTermConfig(BaseModel):
    """FactorVAE adversarial total-correlation estimate."""

    kind: Literal["factor_tc"] = "factor_tc"
    gamma_tc: float = Field(10.0, ge=0)
    disc_hidden: list[int] = Field(default_factory=lambda: [256, 256, 256, 256])
    disc_slope: float = Field(0.2, ge=0)
    disc_lr: float = Field(1e-4, ge=0)
    disc_beta1: float = Field(0.5, ge=0, lt=1)
    disc_beta2: float = Field(0.9, ge=0, lt=1)
    model_config = {"extra": "forbid"}


class MMDTermConfig(BaseModel):
    """InfoVAE maximum mean discrepancy against prior draws."""

    kind: Literal["mmd"] = "mmd"
    lambda_mmd: float = Field(10.0, ge=0)
    bandwidth: Literal["latent_dim", "fixed"] = Field("latent_dim", description="sigma^2 = d or fixed")
    sigma2: float = Field(1.0, gt=0, description="Kernel variance when bandwidth is fixed")
    model_config = {"extra": "forbid"}


class DIPTermConfig(BaseModel):
    """DIP-VAE moment matching of the aggregate posterior covariance."""

    kind: Literal["dip"] = "dip"
    mode: Literal["I", "II"] = "I"
    lambda_od: float = Field(10.0, ge=0)
    lambda_d: float = Field(100.0, ge=0)
    model_config = {"extra": "forbid"}


class CVAETermConfig(BaseModel):
    """Conditioning on known factors (no scalar contribution)."""

    kind: Literal["cvae"] = "cvae"
    condition_factors: list[str] = Field(default_factory=lambda: ["shape"], min_length=1)
    model_config = {"extra": "forbid"}


class IFCVAETermConfig(BaseModel):
    """Auxiliary/adversarial classifiers tying the first latents to a label."""

    kind: Literal["ifcvae"] = "ifcvae"
    label_factor: str = "shape"
    label_dims: int = Field(1, ge=1)
    w_aux: float = Field(1.0, ge=0)
    w_adv: float = Field(1.0, ge=0)
    classifier_hidden: list[int] = Field(default_factory=lambda: [64])
    classifier_lr: float = Field(1e-3, ge=0)
    model_config = {"extra": "forbid"}


TermConfig = Annotated[
    KLTermConfig
    | BTCTermConfig
    | FactorTCTermConfig
    | MMDTermConfig
    | DIPTermConfig
    | CVAETermConfig
    | IFCVAETermConfig,
    Field(discriminator="kind"),
]


class ObjectiveSpec(BaseModel):
    """Ordered list of enabled loss terms."""

    terms: list[TermConfig] = Field(default_factory=list)
    recon_kind: Literal["bernoulli", "mse"] = "bernoulli"
    allow_term_overlap: bool = False
    model_config = {"extra": "forbid"}


# -- schedules ----------------------------------------------------------------


class CapacitySchedule(BaseModel):
    """Linear capacity ramp c_start -> c_max over ramp_iters (nats)."""

    c_start: float = Field(0.0, ge=0)
    c_max: float = Field(0.0, ge=0)
    ramp_iters: int | None = Field(None, ge=1, description="Defaults to 60% of max_iters")
    shape: Literal["linear"] = "linear"
    model_config = {"extra": "forbid"}

    @model_validator(mode="after")
    def _ordered(self) -> CapacitySchedule:
        if self.c_start > self.c_max:
            raise ValueError(f"c_start ({self.c_start}) exceeds c_max ({self.c_max})")
        return self


class ReconWeightSchedule(BaseModel):
    """Linear reconstruction weight w_start -> w_end."""

    w_start: float = Field(1.0, gt=0)
    w_end: float = Field(1.0, gt=0)
    ramp_iters: int | None = Field(None, ge=1, description="Defaults to 60% of max_iters")
    model_config = {"extra": "forbid"}


class PlateauConfig(BaseModel):
    """Reduce-on-plateau settings, evaluated once per epoch."""

    enabled: bool = True
    factor: float = Field(0.95, gt=0, lt=1)
    patience: int = Field(3, ge=0)
    threshold: float = Field(1e-4, ge=0)
    min_lr: float = Field(1e-5, ge=0)
    model_config = {"extra": "forbid"}


class OptimizerConfig(BaseModel):
    """Adam hyperparameters."""

    lr: float = Field(1e-3, ge=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    model_config = {"extra": "forbid"}


# -- training configuration --------------------------------------------------


class TrainConfig(BaseModel):
    """Fully resolved training run configuration."""

    seed: int
    dataset: Literal["shapes5"] = "shapes5"
    dataset_subset: int | None = Field(None, ge=1, description="Train on the first n images only")
    model: str | ModelSpec = Field("shapes5_conv", description="Named profile or inline ModelSpec")
    latent_dim: int = Field(10, ge=1)
    loss_terms: list[str] = Field(default_factory=lambda: ["VAE"], min_length=1)
    recon_kind: Literal["bernoulli", "mse"] = "bernoulli"
    allow_term_overlap: bool = False

    kl: KLTermConfig = Field(default_factory=KLTermConfig)
    btc: BTCTermConfig = Field(default_factory=BTCTermConfig)
    factorvae: FactorTCTermConfig = Field(default_factory=FactorTCTermConfig)
    infovae: MMDTermConfig = Field(default_factory=MMDTermConfig)
    dip_i: DIPTermConfig = Field(default_factory=lambda: DIPTermConfig(mode="I"))
    dip_ii: DIPTermConfig = Field(default_factory=lambda: DIPTermConfig(mode="II", lambda_d=10.0))
    cvae: CVAETermConfig = Field(default_factory=CVAETermConfig)
    ifcvae: IFCVAETermConfig = Field(default_factory=IFCVAETermConfig)

    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    capacity: CapacitySchedule = Field(default_factory=CapacitySchedule)
    recon_weight: ReconWeightSchedule = Field(default_factory=ReconWeightSchedule)
    plateau: PlateauConfig = Field(default_factory=PlateauConfig)

    max_iters: int = Field(5000, ge=1)
    batch_size: int = Field(64, ge=1)
    log_every: int = Field(50, ge=1)
    checkpoint_every: int = Field(1000, ge=1)
    output_dir: str = "runs/default"
    record_wall_time: bool = Field(False, description="Write real wall_ms into the RunLog")
    model_config = {"extra": "forbid"}

    @model_validator(mode="after")
    def _resolve_ramps(self) -> TrainConfig:
        default_ramp = max(1, math.ceil(0.6 * self.max_iters))
        if self.capacity.ramp_iters is None:
            self.capacity = self.capacity.model_copy(update={"ramp_iters": default_ramp})
        if self.recon_weight.ramp_iters is None:
            self.recon_weight = self.recon_weight.model_copy(update={"ramp_iters": default_ramp})
        return self


# -- metrics ------------------------------------------------------------------


class MetricConfig(BaseModel):
    """Sampling budgets for the disentanglement metrics."""

    num_points: int = Field(10000, ge=1, description="Points for MIG/SAP/DCI/IRS (full space if larger)")
    bins: int = Field(20, ge=2)
    betavae_pairs: int = Field(500, ge=50)
    betavae_batch: int = Field(64, ge=1)
    factorvae_votes: int = Field(500, ge=1)
    factorvae_batch: int = Field(64, ge=2)
    factorvae_std_points: int = Field(10000, ge=1000)
    prune_std: float = Field(0.02, ge=0)
    irs_diff_quantile: float = Field(0.99, gt=0, le=1)
    test_fraction: float = Field(0.5, gt=0, lt=1)
    informativeness_classifier: Literal["nearest_centroid", "logistic"] = Field(
        "nearest_centroid", description="Per-factor classifier behind DCI informativeness"
    )
    centroid_shrink: float = Field(1.0, ge=0, description="Shrunken-centroid threshold; 0 keeps plain class means")
    model_config = {"extra": "forbid"}


class DCIScores(BaseModel):
    """DCI sub-scores."""

    disentanglement: float = Field(..., ge=0, le=1)
    completeness: float = Field(..., ge=0, le=1)
    informativeness: float = Field(..., ge=0, le=1)
    model_config = {"extra": "forbid"}


class MetricReport(BaseModel):
    """Scores of all six metrics plus the sampling parameters used."""

    betavae: float | None = Field(None, ge=0, le=1)
    factorvae: float | None = Field(None, ge=0, le=1)
    mig: float | None = Field(None, ge=0, le=1)
    sap: float | None = Field(None, ge=0, le=1)
    dci: DCIScores | None = None
    irs: float | None = Field(None, ge=0, le=1)
    config: MetricConfig
    seed: int
    errors: dict[str, str] = Field(default_factory=dict, description="Per-metric failure messages")
    model_config = {"extra": "forbid"}


# -- run logs -------------------------------------------------------------------


class RunRecord(BaseModel):
    """One RunLog line, written every log_every iterations."""

    iter: int
    total: float
    recon: float
    recon_weight: float
    terms: dict[str, float]
    lr: float
    capacity: float
    wall_ms: float
    aux: dict[str, float] = Field(default_factory=dict, description="Auxiliary network losses")
    diagnostics: dict[str, float] = Field(default_factory=dict, description="Unweighted estimates, not summed")
    model_config = {"extra": "forbid"}


class EpochRecord(BaseModel):
    """Epoch-mean objective and the learning rate after the plateau update."""

    epoch: int
    iter: int
    mean_objective: float
    lr: float
    model_config = {"extra": "forbid"}


class TraversalDim(BaseModel):
    """Effect of sweeping one latent dimension on the decoded image."""

    dim: int
    max_pixel_change: float
    inert: bool
    model_config = {"extra": "forbid"}


class TraversalStats(BaseModel):
    """Summary written next to the traversal grid."""

    sample_index: int
    range: float
    steps: int
    inert_threshold: float
    dims: list[TraversalDim]
    inert_dims: list[int]
    model_config = {"extra": "forbid"}


# -- run browser API ------------------------------------------------------------


class HealthResponse(BaseModel):
    """Response for health check endpoint."""

    status: Literal["healthy"] = Field(default="healthy", description="Health status indicator")
    version: str = Field(..., description="Application version")
    model_config = {"extra": "forbid"}


class RunSummary(BaseModel):
    """A training run found under the runs root."""

    name: str
    last_iter: int | None = Field(None, description="Last logged iteration")
    has_report: bool = False
    has_traversal: bool = False
    loss_terms: list[str] = Field(default_factory=list)
    model_config = {"extra": "forbid"}


class RunListResponse(BaseModel):
    """Response for listing runs."""

    runs: list[RunSummary]
    count: int
    model_config = {"extra": "forbid"}


class RunLogResponse(BaseModel):
    """RunLog records of one run."""

    name: str
    records: list[RunRecord]
    model_config = {"extra": "forbid"}
