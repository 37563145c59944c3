"""Tests for metric reports written to disk."""

import csv
import json
from pathlib import Path

import pytest

from disent_toolkit.errors import ConfigError
from disent_toolkit.models.schemas import MetricConfig, MetricReport
from disent_toolkit.nn.network import build_model, paper_conv64
from disent_toolkit.services.checkpoint import Checkpoint, save_checkpoint
from disent_toolkit.services.evaluation import REPORT_NAME, evaluate_checkpoint, evaluate_tables
from disent_toolkit.services.trainer import Trainer

FAST = MetricConfig(
    num_points=1000,
    betavae_pairs=60,
    betavae_batch=16,
    factorvae_votes=60,
    factorvae_batch=16,
    factorvae_std_points=1000,
)


def write_rows(path: Path, header: list[str], rows) -> Path:
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        writer.writerows(rows)
    return path


class TestEvaluateTables:
    """Standalone mode from CSV files."""

    def test_perfect_code(self, perfect_table, tmp_path: Path):
        names = ["shape", "scale", "pos_x", "pos_y", "intensity"]
        codes = write_rows(tmp_path / "codes.csv", [f"z{j}" for j in range(5)], perfect_table.codes.tolist())
        factors = write_rows(tmp_path / "factors.csv", names, perfect_table.factors.tolist())

        report = evaluate_tables(codes, factors, tmp_path / REPORT_NAME, FAST, seed=5)

        assert report.mig > 0.9
        stored = json.loads((tmp_path / REPORT_NAME).read_text())
        assert stored["seed"] == 5
        assert stored["config"]["num_points"] == 1000
        assert MetricReport.model_validate(stored) == report


class TestEvaluateCheckpoint:
    """Checkpoint mode encodes the whole dataset."""

    def test_writes_report(self, tiny_config, tmp_path: Path):
        path = Trainer(tiny_config()).save()
        out = tmp_path / "report" / REPORT_NAME

        report = evaluate_checkpoint(path, out, FAST, seed=1)

        assert out.is_file()
        assert MetricReport.model_validate_json(out.read_text()) == report
        for name in ("betavae", "factorvae", "mig", "sap", "dci", "irs"):
            assert (getattr(report, name) is None) == (name in report.errors)

    def test_conditional_checkpoint(self, tiny_config, tmp_path: Path):
        path = Trainer(tiny_config(loss_terms=["VAE", "CVAE"])).save()
        report = evaluate_checkpoint(path, tmp_path / REPORT_NAME, FAST)
        assert report.mig is not None

    def test_image_shape_mismatch(self, tmp_path: Path):
        spec = paper_conv64(latent_dim=3)
        checkpoint = Checkpoint(step=0, model_spec=spec)
        checkpoint.add_params("model", build_model(spec, seed=0).parameters())
        path = save_checkpoint(tmp_path / "big.ckpt", checkpoint)

        with pytest.raises(ConfigError, match="expects images"):
            evaluate_checkpoint(path, tmp_path / REPORT_NAME, FAST)
