"""Training loop: batches, objective, Adam, schedules, logs and checkpoints."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from disent_toolkit.autodiff import backward, zero_grad
from disent_toolkit.errors import ConfigError, NumericError
from disent_toolkit.models.schemas import EpochRecord, RunRecord, TrainConfig
from disent_toolkit.nn.network import Network, build_model
from disent_toolkit.nn.optim import Adam
from disent_toolkit.services.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from disent_toolkit.services.config_loader import resolve_model_spec, write_resolved
from disent_toolkit.services.loss_terms import Objective, TermBreakdown, TermContext, objective_spec_from_config
from disent_toolkit.services.schedules import PlateauScheduler, capacity_at, recon_weight_at
from disent_toolkit.services.synth_data import EpochIterator, FactorBatch, FactorDataset

logger = logging.getLogger(__name__)

RUN_LOG = "run_log.jsonl"
RUN_CSV = "run_log.csv"
EPOCH_LOG = "epochs.jsonl"
CHECKPOINT_DIR = "checkpoints"


def checkpoint_name(step: int) -> str:
    return f"step_{step:07d}.ckpt"


def _flatten(record: RunRecord) -> dict[str, float | int]:
    row: dict[str, float | int] = {
        "iter": record.iter,
        "total": record.total,
        "recon": record.recon,
        "recon_weight": record.recon_weight,
        "lr": record.lr,
        "capacity": record.capacity,
        "wall_ms": record.wall_ms,
    }
    row.update({f"terms.{k}": v for k, v in record.terms.items()})
    row.update({f"aux.{k}": v for k, v in record.aux.items()})
    row.update({f"diag.{k}": v for k, v in record.diagnostics.items()})
    return row


class RunLogger:
    """Append-only RunLog (JSONL with a CSV mirror) plus per-epoch records."""

    def __init__(self, output_dir: Path, resume_step: int | None = None) -> None:
        self.output_dir = output_dir
        self.jsonl = output_dir / RUN_LOG
        self.csv = output_dir / RUN_CSV
        self.epochs = output_dir / EPOCH_LOG
        output_dir.mkdir(parents=True, exist_ok=True)
        if resume_step is None:
            for path in (self.jsonl, self.csv, self.epochs):
                path.write_text("", encoding="utf-8")
        else:
            self._truncate_after(resume_step)
        self._csv_fields: list[str] | None = self._existing_csv_fields()

    def _truncate_after(self, step: int) -> None:
        """Drop records past ``step`` so a resumed run rewrites them identically."""
        for path in (self.jsonl, self.epochs):
            if not path.exists():
                path.write_text("", encoding="utf-8")
                continue
            kept = [line for line in path.read_text(encoding="utf-8").splitlines() if json.loads(line)["iter"] <= step]
            path.write_text("".join(f"{line}\n" for line in kept), encoding="utf-8")
        if self.csv.exists():
            lines = self.csv.read_text(encoding="utf-8").splitlines()
            kept = lines[:1] + [line for line in lines[1:] if int(line.split(",", 1)[0]) <= step]
            self.csv.write_text("".join(f"{line}\n" for line in kept), encoding="utf-8")

    def _existing_csv_fields(self) -> list[str] | None:
        if not self.csv.exists():
            return None
        with self.csv.open(newline="", encoding="utf-8") as handle:
            header = next(csv.reader(handle), None)
        return header or None

    def record(self, record: RunRecord) -> None:
        with self.jsonl.open("a", encoding="utf-8") as handle:
            handle.write(record.model_dump_json() + "\n")
        row = _flatten(record)
        with self.csv.open("a", newline="", encoding="utf-8") as handle:
            if self._csv_fields is None:
                self._csv_fields = list(row)
                csv.writer(handle, lineterminator="\n").writerow(self._csv_fields)
            writer = csv.DictWriter(handle, fieldnames=self._csv_fields, extrasaction="ignore", lineterminator="\n")
            writer.writerow(row)

    def epoch(self, record: EpochRecord) -> None:
        with self.epochs.open("a", encoding="utf-8") as handle:
            handle.write(record.model_dump_json() + "\n")


@dataclass
class StepResult:
    breakdown: TermBreakdown
    aux: dict[str, float]
    capacity: float


class Trainer:
    """Owns the model, objective, optimizers and data order of one training run."""

    def __init__(self, config: TrainConfig, output_dir: Path | None = None) -> None:
        self.config = config
        self.output_dir = Path(output_dir if output_dir is not None else config.output_dir)
        self.dataset = FactorDataset(subset=config.dataset_subset)

        init_seed, aux_seed, train_seed = np.random.SeedSequence(config.seed).spawn(3)
        self.rng = np.random.default_rng(train_seed)
        objective_spec = objective_spec_from_config(config)
        self.objective = Objective.from_spec(
            objective_spec, config.latent_dim, self.dataset, np.random.default_rng(aux_seed)
        )
        self.condition_factors = self.objective.condition_factors
        self.model_spec = resolve_model_spec(config, self.dataset, self.condition_factors)
        self.network: Network = build_model(self.model_spec, int(init_seed.generate_state(1)[0]))

        self.model_params = {**self.network.parameters(), **self.objective.parameters()}
        opt = config.optimizer
        self.optimizer = Adam(self.model_params, lr=opt.lr, beta1=opt.beta1, beta2=opt.beta2, eps=opt.eps)
        self.plateau = PlateauScheduler(config.plateau, opt.lr)

        self.batch_size = min(config.batch_size, len(self.dataset))
        if self.batch_size < config.batch_size:
            logger.warning("batch_size %d exceeds the dataset size; using %d", config.batch_size, self.batch_size)
        if self.batch_size < self.objective.min_batch:
            raise ConfigError(
                f"the selected loss terms need batches of at least {self.objective.min_batch}, "
                f"but the dataset holds {len(self.dataset)} images"
            )

        self.step = 0
        self.epoch = 0
        self.epoch_sum = 0.0
        self.epoch_count = 0
        self.epoch_iter: EpochIterator | None = None
        self.last_checkpoint: Path | None = None
        self._resumed = False

    # -- condition --------------------------------------------------------------

    def condition_for(self, factors: np.ndarray) -> np.ndarray | None:
        if not self.condition_factors:
            return None
        return self.dataset.one_hot(factors, self.condition_factors)

    # -- data order -------------------------------------------------------------

    def _finish_epoch(self, log: RunLogger | None) -> None:
        if self.epoch_count:
            mean = self.epoch_sum / self.epoch_count
            lr = self.plateau.step(mean)
            self.optimizer.lr = lr
            if log is not None:
                log.epoch(EpochRecord(epoch=self.epoch, iter=self.step, mean_objective=mean, lr=lr))
            logger.info("Epoch %d done at iter %d: mean objective %.6g, lr %.6g", self.epoch, self.step, mean, lr)
        self.epoch += 1
        self.epoch_sum = 0.0
        self.epoch_count = 0

    def next_batch(self, log: RunLogger | None = None) -> FactorBatch:
        """Next training batch, rolling epochs over and skipping too-small tail batches."""
        while True:
            if self.epoch_iter is None:
                self.epoch_iter = self.dataset.iterate_epoch(self.batch_size, self.rng)
            if self.epoch_iter.exhausted:
                self._finish_epoch(log)
                self.epoch_iter = None
                continue
            batch = next(self.epoch_iter)
            if len(batch) >= self.objective.min_batch:
                return batch

    # -- one step ---------------------------------------------------------------

    def train_step(self, batch: FactorBatch) -> StepResult:
        zero_grad(self.model_params)
        zero_grad(self.objective.auxiliary_parameters())
        condition = self.condition_for(batch.factors)
        posterior = self.network.encode(batch.images, condition)
        z = posterior.sample(self.rng)
        reconstruction = self.network.decode(z, condition)
        capacity = capacity_at(self.config.capacity, self.step)
        ctx = TermContext(
            posterior=posterior,
            images=batch.images,
            reconstruction=reconstruction,
            factors=batch.factors,
            rng=self.rng,
            capacity=capacity,
            recon_weight=recon_weight_at(self.config.recon_weight, self.step),
        )
        loss, breakdown = self.objective.compose(ctx)
        if not math.isfinite(breakdown.total):
            raise NumericError(
                f"non-finite loss at iteration {self.step + 1}; last good checkpoint: {self.last_checkpoint}"
            )
        backward(loss)
        self.optimizer.step()
        aux = self.objective.auxiliary_step(ctx)
        self.epoch_sum += breakdown.total
        self.epoch_count += 1
        return StepResult(breakdown=breakdown, aux=aux, capacity=capacity)

    # -- checkpoints -----------------------------------------------------------

    def to_checkpoint(self) -> Checkpoint:
        checkpoint = Checkpoint(
            step=self.step, model_spec=self.model_spec, config=self.config.model_dump(mode="json")
        )
        checkpoint.add_params("model", self.model_params)
        extra_params = {
            name: param for name, param in self.objective.auxiliary_parameters().items() if name not in self.model_params
        }
        checkpoint.add_params("aux", extra_params)
        checkpoint.add_optimizer("model", self.optimizer.state)
        for name, state in self.objective.optimizers().items():
            checkpoint.add_optimizer(name, state)
        checkpoint.extra = {
            "rng": self.rng.bit_generator.state,
            "epoch": self.epoch,
            "epoch_sum": self.epoch_sum,
            "epoch_count": self.epoch_count,
            "epoch_order": None if self.epoch_iter is None else self.epoch_iter.order.tolist(),
            "epoch_position": None if self.epoch_iter is None else self.epoch_iter.position,
            "plateau": self.plateau.state_dict(),
            "condition_factors": self.condition_factors,
        }
        return checkpoint

    def save(self) -> Path:
        path = self.output_dir / CHECKPOINT_DIR / checkpoint_name(self.step)
        self.last_checkpoint = save_checkpoint(path, self.to_checkpoint())
        return self.last_checkpoint

    def restore(self, checkpoint: Checkpoint) -> None:
        """Load parameters, optimizer moments, rng and data position from ``checkpoint``.

        Raises:
            ConfigError: If the checkpoint was made for a different model.
        """
        if checkpoint.model_spec != self.model_spec:
            raise ConfigError("checkpoint model spec differs from the configured model")
        checkpoint.restore_params("model", self.model_params)
        extra_params = {
            name: param for name, param in self.objective.auxiliary_parameters().items() if name not in self.model_params
        }
        checkpoint.restore_params("aux", extra_params)
        checkpoint.restore_optimizer("model", self.optimizer.state)
        for name, state in self.objective.optimizers().items():
            checkpoint.restore_optimizer(name, state)
        extra = checkpoint.extra
        self.rng.bit_generator.state = extra["rng"]
        self.epoch = extra["epoch"]
        self.epoch_sum = extra["epoch_sum"]
        self.epoch_count = extra["epoch_count"]
        if extra["epoch_order"] is None:
            self.epoch_iter = None
        else:
            self.epoch_iter = EpochIterator(
                self.dataset, self.batch_size, np.asarray(extra["epoch_order"]), extra["epoch_position"]
            )
        self.plateau.load_state_dict(extra["plateau"])
        self.optimizer.lr = self.plateau.lr
        self.step = checkpoint.step
        self._resumed = True
        logger.info("Resumed from step %d", self.step)

    # -- loop ----------------------------------------------------------------------

    def _record(self, result: StepResult, started: float) -> RunRecord:
        breakdown = result.breakdown
        wall_ms = (time.perf_counter() - started) * 1000.0 if self.config.record_wall_time else 0.0
        return RunRecord(
            iter=self.step,
            total=breakdown.total,
            recon=breakdown.recon,
            recon_weight=breakdown.recon_weight,
            terms=breakdown.terms,
            lr=self.optimizer.lr,
            capacity=result.capacity,
            wall_ms=wall_ms,
            aux=result.aux,
            diagnostics=breakdown.diagnostics,
        )

    def train(self) -> Path:
        """Run until ``max_iters`` and return the final checkpoint path.

        Raises:
            NumericError: On a non-finite loss or gradient; earlier checkpoints are kept.
        """
        config = self.config
        write_resolved(config, self.output_dir)
        log = RunLogger(self.output_dir, resume_step=self.step if self._resumed else None)
        started = time.perf_counter()
        logger.info(
            "Training %s for %d iterations (batch %d, %d images) into %s",
            "+".join(config.loss_terms), config.max_iters, self.batch_size, len(self.dataset), self.output_dir,
        )
        saved_step = -1
        while self.step < config.max_iters:
            batch = self.next_batch(log)
            result = self.train_step(batch)
            self.step += 1
            if self.step % config.log_every == 0 or self.step == config.max_iters:
                record = self._record(result, started)
                log.record(record)
                logger.info(
                    "iter %d total=%.4f recon=%.4f %s",
                    record.iter, record.total, record.recon,
                    " ".join(f"{k}={v:.4f}" for k, v in record.terms.items()),
                )
            if self.step % config.checkpoint_every == 0:
                self.save()
                saved_step = self.step
        if saved_step != self.step:
            self.save()
        return self.last_checkpoint  # type: ignore[return-value]


def train(config: TrainConfig, output_dir: Path | None = None, resume: Path | None = None) -> Path:
    """Train from scratch or continue from ``resume``; returns the final checkpoint."""
    trainer = Trainer(config, output_dir)
    if resume is not None:
        trainer.restore(load_checkpoint(resume))
    return trainer.train()
