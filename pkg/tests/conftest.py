"""Shared fixtures."""

import json
from pathlib import Path

import numpy as np
import pytest

from disent_toolkit.autodiff import Tensor
from disent_toolkit.models.schemas import TrainConfig
from disent_toolkit.services.images import write_pgm
from disent_toolkit.services.metrics import CodeTable
from disent_toolkit.services.synth_data import FactorDataset


@pytest.fixture(scope="session")
def dataset() -> FactorDataset:
    """The full synthetic dataset, rendered once per session."""
    return FactorDataset()


@pytest.fixture(scope="session")
def perfect_table(dataset: FactorDataset) -> CodeTable:
    """Codes equal to the factor indices themselves."""
    factors = dataset.all_factors()
    return CodeTable(codes=factors.astype(np.float64), factors=factors, cardinalities=dataset.space.cardinalities)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def param(rng: np.random.Generator):
    """Factory for trainable tensors with standard-normal entries."""

    def make(*shape: int, low: float | None = None, high: float | None = None) -> Tensor:
        if low is not None and high is not None:
            data = rng.uniform(low, high, size=shape)
        else:
            data = rng.normal(size=shape)
        return Tensor(data, requires_grad=True)

    return make


@pytest.fixture
def tiny_config(tmp_path: Path):
    """Factory for short dense-model runs on a dataset subset."""

    def make(**overrides) -> TrainConfig:
        values = {
            "seed": 0,
            "model": "shapes5_dense",
            "latent_dim": 3,
            "dataset_subset": 64,
            "batch_size": 16,
            "max_iters": 6,
            "log_every": 2,
            "checkpoint_every": 3,
            "output_dir": str(tmp_path / "run"),
        }
        values.update(overrides)
        return TrainConfig(**values)

    return make


def log_record(iteration: int) -> dict:
    return {
        "iter": iteration,
        "total": 100.0 - iteration,
        "recon": 90.0 - iteration,
        "recon_weight": 1.0,
        "terms": {"kl": 10.0},
        "lr": 1e-4,
        "capacity": 0.0,
        "wall_ms": 0.0,
    }


@pytest.fixture
def runs_root(tmp_path: Path) -> Path:
    """A runs directory with one complete run, one bare run and one stray folder."""
    root = tmp_path / "runs"
    full = root / "alpha"
    (full / "traversals").mkdir(parents=True)
    (full / "config.resolved.json").write_text(json.dumps({"loss_terms": ["BetaVAE"], "seed": 0}))
    lines = [json.dumps(log_record(i)) for i in (10, 20, 30)]
    (full / "run_log.jsonl").write_text("\n".join(lines[:2] + ["{not json"] + lines[2:]) + "\n")
    report = {
        "betavae": 0.8,
        "factorvae": None,
        "mig": 0.3,
        "sap": 0.1,
        "dci": {"disentanglement": 0.5, "completeness": 0.4, "informativeness": 0.9},
        "irs": 0.7,
        "config": {},
        "seed": 0,
        "errors": {"factorvae": "collapsed representation"},
    }
    (full / "report.json").write_text(json.dumps(report))
    stats = {
        "sample_index": 0,
        "range": 3.0,
        "steps": 2,
        "inert_threshold": 0.02,
        "dims": [{"dim": 0, "max_pixel_change": 0.5, "inert": False}],
        "inert_dims": [],
    }
    (full / "traversals" / "traversal_stats.json").write_text(json.dumps(stats))
    write_pgm(full / "traversals" / "traversal_grid.pgm", np.full((32, 64), 0.5))

    bare = root / "beta"
    bare.mkdir()
    (bare / "config.resolved.json").write_text(json.dumps({"loss_terms": ["VAE"]}))
    (root / "scratch").mkdir()
    return root
