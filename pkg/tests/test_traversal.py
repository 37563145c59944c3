"""Tests for traversal export."""

from pathlib import Path

import numpy as np
import pytest

from disent_toolkit.errors import ConfigError
from disent_toolkit.models.schemas import TraversalStats
from disent_toolkit.services.checkpoint import load_checkpoint, save_checkpoint
from disent_toolkit.services.images import read_pgm
from disent_toolkit.services.trainer import Trainer
from disent_toolkit.services.traversal import STATS_NAME, TRAVERSAL_DIR, export_traversals, traversal_stats


@pytest.fixture
def checkpoint(tiny_config) -> Path:
    return Trainer(tiny_config()).save()


class TestExport:
    """Files written by export_traversals."""

    def test_grid_layout(self, checkpoint: Path, tmp_path: Path):
        result = export_traversals(checkpoint, tmp_path / "out", steps=5)
        assert read_pgm(result.grid).shape == (3 * 32, 5 * 32)
        assert [path.name for path in result.rows] == ["dim_00.pgm", "dim_01.pgm", "dim_02.pgm"]
        assert read_pgm(result.rows[1]).shape == (32, 5 * 32)
        assert read_pgm(result.recon_pair).shape == (32, 64)
        assert read_pgm(result.recon_grid).shape == (64, 8 * 32)
        assert result.condition_rows == []

    def test_stats_file(self, checkpoint: Path, tmp_path: Path):
        result = export_traversals(checkpoint, tmp_path, sample_index=7, value_range=2.0, steps=4)
        stored = TraversalStats.model_validate_json((tmp_path / TRAVERSAL_DIR / STATS_NAME).read_text())
        assert stored == result.stats
        assert stored.sample_index == 7
        assert stored.range == 2.0
        assert stored.steps == 4
        assert [dim.dim for dim in stored.dims] == [0, 1, 2]

    def test_disconnected_dimension_is_inert(self, checkpoint: Path, tmp_path: Path):
        stored = load_checkpoint(checkpoint)
        stored.arrays["model/decoder.0.weight"][0] = 0.0
        save_checkpoint(checkpoint, stored)

        stats = export_traversals(checkpoint, tmp_path).stats
        assert stats.dims[0].max_pixel_change == 0.0
        assert 0 in stats.inert_dims

    def test_conditional_model_writes_condition_rows(self, tiny_config, tmp_path: Path):
        path = Trainer(tiny_config(loss_terms=["VAE", "CVAE"])).save()
        result = export_traversals(path, tmp_path)
        assert [row.name for row in result.condition_rows] == ["condition_shape.pgm"]
        assert read_pgm(result.condition_rows[0]).shape == (32, 3 * 32)

    def test_too_few_steps(self, checkpoint: Path, tmp_path: Path):
        with pytest.raises(ConfigError, match="at least 2 steps"):
            export_traversals(checkpoint, tmp_path, steps=1)

    def test_sample_out_of_range(self, checkpoint: Path, tmp_path: Path):
        with pytest.raises(ConfigError, match="out of range"):
            export_traversals(checkpoint, tmp_path, sample_index=10**6)

    def test_missing_checkpoint(self, tmp_path: Path):
        with pytest.raises(ConfigError, match="not found"):
            export_traversals(tmp_path / "nope.ckpt", tmp_path)


def test_traversal_stats_threshold():
    tiles = np.zeros((2, 3, 1, 2, 2))
    tiles[1, 2] = 0.5
    stats = traversal_stats(tiles, sample_index=0, value_range=3.0)
    assert stats.inert_dims == [0]
    assert stats.dims[1].max_pixel_change == pytest.approx(0.5)
