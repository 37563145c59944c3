"""Pydantic models for the disentanglement toolkit."""

from .schemas import (
    BTCTermConfig,
    CapacitySchedule,
    CVAETermConfig,
    DCIScores,
    DIPTermConfig,
    EpochRecord,
    FactorTCTermConfig,
    HealthResponse,
    IFCVAETermConfig,
    KLTermConfig,
    LayerSpec,
    MetricConfig,
    MetricReport,
    MMDTermConfig,
    ModelSpec,
    ObjectiveSpec,
    OptimizerConfig,
    PlateauConfig,
    ReconWeightSchedule,
    RunListResponse,
    RunLogResponse,
    RunRecord,
    RunSummary,
    TermConfig,
    TrainConfig,
    TraversalDim,
    TraversalStats,
)

__all__ = [
    "BTCTermConfig",
    "CapacitySchedule",
    "CVAETermConfig",
    "DCIScores",
    "DIPTermConfig",
    "EpochRecord",
    "FactorTCTermConfig",
    "HealthResponse",
    "IFCVAETermConfig",
    "KLTermConfig",
    "LayerSpec",
    "MetricConfig",
    "MetricReport",
    "MMDTermConfig",
    "ModelSpec",
    "ObjectiveSpec",
    "OptimizerConfig",
    "PlateauConfig",
    "ReconWeightSchedule",
    "RunListResponse",
    "RunLogResponse",
    "RunRecord",
    "RunSummary",
    "TermConfig",
    "TrainConfig",
    "TraversalDim",
    "TraversalStats",
]
