"""Services for the disentanglement toolkit."""

from .checkpoint import Checkpoint, load_checkpoint, network_from_checkpoint, save_checkpoint
from .config_loader import ConfigLoader, parse_config, write_resolved
from .evaluation import evaluate_checkpoint, evaluate_tables
from .loss_terms import Objective, TermBreakdown, TermContext, objective_spec_from_config
from .metrics import CodeTable, evaluate_all
from .run_store import RunStore
from .schedules import PlateauScheduler, capacity_at, plateau_update, recon_weight_at
from .synth_data import SHAPES5, FactorDataset, FactorSpace, render, render_dataset
from .trainer import Trainer, train
from .traversal import export_traversals

__all__ = [
    "SHAPES5",
    "Checkpoint",
    "CodeTable",
    "ConfigLoader",
    "FactorDataset",
    "FactorSpace",
    "Objective",
    "PlateauScheduler",
    "RunStore",
    "TermBreakdown",
    "TermContext",
    "Trainer",
    "capacity_at",
    "evaluate_all",
    "evaluate_checkpoint",
    "evaluate_tables",
    "export_traversals",
    "load_checkpoint",
    "network_from_checkpoint",
    "objective_spec_from_config",
    "parse_config",
    "plateau_update",
    "recon_weight_at",
    "render",
    "render_dataset",
    "save_checkpoint",
    "train",
    "write_resolved",
]
