"""Latent traversal grids and reconstruction images from a checkpoint."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from disent_toolkit.autodiff import no_grad
from disent_toolkit.errors import ConfigError
from disent_toolkit.models.schemas import TraversalDim, TraversalStats
from disent_toolkit.nn.network import Network
from disent_toolkit.services.checkpoint import load_checkpoint, network_from_checkpoint
from disent_toolkit.services.images import tile_grid, write_image
from disent_toolkit.services.synth_data import FactorDataset

logger = logging.getLogger(__name__)

TRAVERSAL_DIR = "traversals"
STATS_NAME = "traversal_stats.json"
INERT_THRESHOLD = 0.02
RECON_SAMPLES = 8


@dataclass
class TraversalResult:
    grid: Path
    rows: list[Path]
    recon_pair: Path
    recon_grid: Path
    stats: TraversalStats
    condition_rows: list[Path] = field(default_factory=list)


def traverse(
    network: Network,
    mu: np.ndarray,
    value_range: float,
    steps: int,
    condition: np.ndarray | None = None,
) -> np.ndarray:
    """Decode ``mu`` with each latent swept over [-r, r]; returns (d, S, C, H, W)."""
    if steps < 2:
        raise ConfigError(f"traversal needs at least 2 steps, got {steps}")
    values = np.linspace(-value_range, value_range, steps)
    d = network.latent_dim
    rows = []
    with no_grad():
        for j in range(d):
            codes = np.repeat(mu.reshape(1, d), steps, axis=0)
            codes[:, j] = values
            cond = None if condition is None else np.repeat(condition.reshape(1, -1), steps, axis=0)
            rows.append(network.decode(codes, cond).data.copy())
    return np.stack(rows)


def traversal_stats(
    tiles: np.ndarray, sample_index: int, value_range: float, threshold: float = INERT_THRESHOLD
) -> TraversalStats:
    """Largest per-pixel change along each dimension's sweep; small changes mark inert dims."""
    dims = []
    for j, row in enumerate(tiles):
        change = float(np.max(row.max(axis=0) - row.min(axis=0)))
        dims.append(TraversalDim(dim=j, max_pixel_change=change, inert=change < threshold))
    return TraversalStats(
        sample_index=sample_index,
        range=value_range,
        steps=tiles.shape[1],
        inert_threshold=threshold,
        dims=dims,
        inert_dims=[dim.dim for dim in dims if dim.inert],
    )


def export_traversals(
    checkpoint_path: Path,
    out_dir: Path,
    sample_index: int = 0,
    value_range: float = 3.0,
    steps: int = 10,
    png: bool = False,
) -> TraversalResult:
    """Write the traversal grid, per-dimension rows, reconstructions and statistics.

    Args:
        checkpoint_path: Trained checkpoint to decode with.
        out_dir: Run directory; files go to ``out_dir/traversals``.
        sample_index: Flat dataset index of the image to traverse around.
        value_range: Sweep each latent over [-value_range, value_range].
        steps: Number of tiles per row.
        png: Also write PNG copies.

    Returns:
        Paths of the written files and the traversal statistics.

    Raises:
        ConfigError: If ``steps`` < 2 or the sample index is out of range.
    """
    checkpoint = load_checkpoint(checkpoint_path)
    network = network_from_checkpoint(checkpoint)
    condition_names: list[str] = checkpoint.extra.get("condition_factors", [])
    dataset = FactorDataset()
    if not 0 <= sample_index < len(dataset):
        raise ConfigError(f"sample index {sample_index} out of range [0, {len(dataset)})")
    if tuple(network.spec.image_shape) != dataset.image_shape:
        raise ConfigError(f"checkpoint model expects {tuple(network.spec.image_shape)} images")

    def condition(rows: np.ndarray) -> np.ndarray | None:
        if not condition_names:
            return None
        return dataset.one_hot(dataset.space.factors_of(rows), condition_names)

    target = out_dir / TRAVERSAL_DIR
    sample = np.array([sample_index])
    image = dataset.images[sample]
    sample_condition = condition(sample)
    with no_grad():
        mu = network.encode(image, sample_condition).mu.data.copy()
        reconstruction = network.decode(mu, sample_condition).data.copy()

    tiles = traverse(network, mu[0], value_range, steps, None if sample_condition is None else sample_condition[0])
    grid = target / "traversal_grid.pgm"
    write_image(grid, tile_grid(tiles), png)
    rows = []
    for j, row in enumerate(tiles):
        path = target / f"dim_{j:02d}.pgm"
        write_image(path, tile_grid(row[None]), png)
        rows.append(path)

    recon_pair = target / "recon_pair.pgm"
    write_image(recon_pair, tile_grid(np.stack([image[0], reconstruction[0]])[None]), png)

    first = np.arange(min(RECON_SAMPLES, len(dataset)))
    with no_grad():
        first_condition = condition(first)
        first_mu = network.encode(dataset.images[first], first_condition).mu
        first_recon = network.decode(first_mu, first_condition).data
    recon_grid = target / "recon_grid.pgm"
    write_image(recon_grid, tile_grid(np.stack([dataset.images[first], first_recon])), png)

    condition_rows = []
    if condition_names:
        factors = dataset.space.factors_of(sample)
        for name in condition_names:
            k = dataset.space.factor_index(name)
            variants = np.repeat(factors, dataset.space.cardinalities[k], axis=0)
            variants[:, k] = np.arange(dataset.space.cardinalities[k])
            with no_grad():
                cond = dataset.one_hot(variants, condition_names)
                decoded = network.decode(np.repeat(mu, len(variants), axis=0), cond).data
            path = target / f"condition_{name}.pgm"
            write_image(path, tile_grid(decoded[None]), png)
            condition_rows.append(path)

    stats = traversal_stats(tiles, sample_index, value_range)
    (target / STATS_NAME).write_text(json.dumps(stats.model_dump(mode="json"), indent=2) + "\n", encoding="utf-8")
    logger.info(
        "Exported %dx%d traversal grid to %s; inert dims: %s", len(tiles), steps, grid, stats.inert_dims or "none"
    )
    return TraversalResult(
        grid=grid,
        rows=rows,
        recon_pair=recon_pair,
        recon_grid=recon_grid,
        stats=stats,
        condition_rows=condition_rows,
    )
