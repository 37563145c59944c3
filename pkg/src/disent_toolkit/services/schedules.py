"""Capacity, reconstruction-weight and reduce-on-plateau schedules."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

from disent_toolkit.errors import ConfigError, NumericError
from disent_toolkit.models.schemas import CapacitySchedule, PlateauConfig, ReconWeightSchedule

logger = logging.getLogger(__name__)


def _linear(start: float, end: float, ramp_iters: int | None, iteration: int) -> float:
    if iteration < 0:
        raise ValueError(f"iteration must be non-negative, got {iteration}")
    if ramp_iters is None:
        raise ConfigError("schedule ramp_iters is unresolved")
    if start == end:
        return start
    fraction = min(iteration / ramp_iters, 1.0)
    return start + (end - start) * fraction


def capacity_at(schedule: CapacitySchedule, iteration: int) -> float:
    """Capacity C in nats at ``iteration``, clamped at ``c_max``."""
    return _linear(schedule.c_start, schedule.c_max, schedule.ramp_iters, iteration)


def recon_weight_at(schedule: ReconWeightSchedule, iteration: int) -> float:
    """Reconstruction weight at ``iteration``, clamped at ``w_end``."""
    return _linear(schedule.w_start, schedule.w_end, schedule.ramp_iters, iteration)


@dataclass
class PlateauLRState:
    current_lr: float
    initial_lr: float
    factor: float = 0.95
    patience: int = 3
    threshold: float = 1e-4
    min_lr: float = 1e-5
    best_value: float = math.inf
    epochs_since_best: int = 0


def plateau_update(state: PlateauLRState, epoch_mean_objective: float) -> float:
    """Feed one epoch-mean objective and return the (possibly reduced) lr."""
    if math.isnan(epoch_mean_objective):
        raise NumericError("plateau scheduler received a NaN epoch objective")
    if epoch_mean_objective < state.best_value * (1.0 - state.threshold):
        state.best_value = epoch_mean_objective
        state.epochs_since_best = 0
    else:
        state.epochs_since_best += 1
    if state.epochs_since_best > state.patience:
        state.current_lr = max(state.current_lr * state.factor, state.min_lr)
        state.epochs_since_best = 0
    return state.current_lr


class PlateauScheduler:
    """Reduce-on-plateau driver owned by the training loop."""

    def __init__(self, config: PlateauConfig, initial_lr: float) -> None:
        self.enabled = config.enabled
        self.state = PlateauLRState(
            current_lr=initial_lr,
            initial_lr=initial_lr,
            factor=config.factor,
            patience=config.patience,
            threshold=config.threshold,
            min_lr=min(config.min_lr, initial_lr),
        )

    @property
    def lr(self) -> float:
        return self.state.current_lr

    def step(self, epoch_mean_objective: float) -> float:
        if not self.enabled:
            if math.isnan(epoch_mean_objective):
                raise NumericError("plateau scheduler received a NaN epoch objective")
            return self.state.current_lr
        previous = self.state.current_lr
        lr = plateau_update(self.state, epoch_mean_objective)
        if lr != previous:
            logger.info("Objective plateaued at %.6g, lr %.6g -> %.6g", self.state.best_value, previous, lr)
        return lr

    def state_dict(self) -> dict[str, float | int | None]:
        """Plain values for the checkpoint header; an unset best is stored as None."""
        values: dict[str, float | int | None] = asdict(self.state)
        if math.isinf(self.state.best_value):
            values["best_value"] = None
        return values

    def load_state_dict(self, values: dict[str, float | int | None]) -> None:
        restored = dict(values)
        if restored.get("best_value") is None:
            restored["best_value"] = math.inf
        self.state = PlateauLRState(**restored)  # type: ignore[arg-type]
