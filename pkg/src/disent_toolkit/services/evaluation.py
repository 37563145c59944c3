"""Metric reports for checkpoints and for stored code/factor tables."""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

from disent_toolkit.errors import ConfigError
from disent_toolkit.models.schemas import MetricConfig, MetricReport
from disent_toolkit.nn.network import Network
from disent_toolkit.services.checkpoint import load_checkpoint, network_from_checkpoint
from disent_toolkit.services.metrics import CodeTable, RepresentationFn, evaluate_all
from disent_toolkit.services.synth_data import FactorBatch, FactorDataset

logger = logging.getLogger(__name__)

REPORT_NAME = "report.json"


def representation_for(
    network: Network, dataset: FactorDataset, condition_factors: list[str] | None = None
) -> RepresentationFn:
    """Posterior means as the representation; conditional nets see their batch's condition."""

    def represent(batch: FactorBatch) -> np.ndarray:
        condition = dataset.one_hot(batch.factors, condition_factors) if condition_factors else None
        return network.posterior_mean(batch.images, condition)

    return represent


def write_report(report: MetricReport, out: Path) -> Path:
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report.model_dump(mode="json"), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info("Wrote metric report %s", out)
    return out


def evaluate_network(
    network: Network,
    metric_config: MetricConfig,
    seed: int,
    condition_factors: list[str] | None = None,
) -> MetricReport:
    dataset = FactorDataset()
    if tuple(network.spec.image_shape) != dataset.image_shape:
        raise ConfigError(
            f"model expects images {tuple(network.spec.image_shape)}, dataset yields {dataset.image_shape}"
        )
    table = CodeTable.from_dataset(representation_for(network, dataset, condition_factors), dataset)
    return evaluate_all(table, metric_config, seed)


def evaluate_checkpoint(
    checkpoint_path: Path, out: Path, metric_config: MetricConfig | None = None, seed: int = 0
) -> MetricReport:
    """Encode the full dataset with the checkpoint's model and write ``report.json``.

    Raises:
        ConfigError: If the checkpoint's image shape does not match the dataset.
    """
    checkpoint = load_checkpoint(checkpoint_path)
    network = network_from_checkpoint(checkpoint)
    report = evaluate_network(
        network, metric_config or MetricConfig(), seed, checkpoint.extra.get("condition_factors") or None
    )
    write_report(report, out)
    return report


def evaluate_tables(
    codes_path: Path, factors_path: Path, out: Path, metric_config: MetricConfig | None = None, seed: int = 0
) -> MetricReport:
    """Standalone mode: metrics for a codes CSV and its factors CSV."""
    table = CodeTable.from_csv(codes_path, factors_path)
    report = evaluate_all(table, metric_config or MetricConfig(), seed)
    write_report(report, out)
    return report
