"""Procedurally rendered shapes dataset with known factors of variation.

The default ``shapes5`` space draws one of three shapes at one of three sizes
on an 8x8 grid of centers with four intensity levels, giving 2304 grayscale
32x32 images. Rendering is integer arithmetic on a pixel grid, so images are
bit-stable across platforms.
"""

from __future__ import annotations

import csv
import logging
import math
from collections.abc import Iterator, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from disent_toolkit.errors import ConfigError
from disent_toolkit.services.images import write_pgm

logger = logging.getLogger(__name__)

IMAGE_SIZE = 32
SHAPES = ("square", "disc", "diamond")
HALF_WIDTHS = (3, 5, 7)
INTENSITIES = (0.4, 0.6, 0.8, 1.0)
GRID_POSITIONS = 8
# Centers keep a max-scale shape inside the canvas: 7 .. 24.
MARGIN = max(HALF_WIDTHS)
CENTERS = tuple(MARGIN + (i * (IMAGE_SIZE - 1 - 2 * MARGIN)) // (GRID_POSITIONS - 1) for i in range(GRID_POSITIONS))


@dataclass(frozen=True)
class FactorSpace:
    """Factor names and cardinalities; flat indices are mixed-radix, last factor fastest."""

    names: tuple[str, ...]
    cardinalities: tuple[int, ...]

    @property
    def num_factors(self) -> int:
        return len(self.names)

    @property
    def size(self) -> int:
        return math.prod(self.cardinalities)

    def factor_index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ConfigError(f"unknown factor {name!r}; factors are {', '.join(self.names)}") from None

    def check(self, factors: np.ndarray) -> np.ndarray:
        factors = np.asarray(factors)
        if factors.shape[-1] != self.num_factors:
            raise ConfigError(f"expected {self.num_factors} factors per row, got {factors.shape[-1]}")
        upper = np.asarray(self.cardinalities)
        if np.any(factors < 0) or np.any(factors >= upper):
            raise ConfigError(f"factor index out of range for cardinalities {self.cardinalities}")
        return factors.astype(np.int64)

    def index_of(self, factors: np.ndarray) -> np.ndarray:
        factors = self.check(factors)
        return np.ravel_multi_index(tuple(np.moveaxis(factors, -1, 0)), self.cardinalities)

    def factors_of(self, indices: np.ndarray | int) -> np.ndarray:
        indices = np.asarray(indices)
        if np.any(indices < 0) or np.any(indices >= self.size):
            raise ConfigError(f"flat index out of range [0, {self.size})")
        return np.stack(np.unravel_index(indices, self.cardinalities), axis=-1).astype(np.int64)


SHAPES5 = FactorSpace(
    names=("shape", "scale", "pos_x", "pos_y", "intensity"),
    cardinalities=(len(SHAPES), len(HALF_WIDTHS), GRID_POSITIONS, GRID_POSITIONS, len(INTENSITIES)),
)

_ROWS, _COLS = np.mgrid[0:IMAGE_SIZE, 0:IMAGE_SIZE]


def render(factor_tuple: Sequence[int], space: FactorSpace = SHAPES5) -> np.ndarray:
    """Rasterize one factor tuple into a (1, 32, 32) float64 image.

    Raises:
        ConfigError: If any factor index is out of range.
    """
    shape, scale, pos_x, pos_y, intensity = (int(v) for v in space.check(np.asarray(factor_tuple)))
    half = HALF_WIDTHS[scale]
    dx = np.abs(_COLS - CENTERS[pos_x])
    dy = np.abs(_ROWS - CENTERS[pos_y])
    if SHAPES[shape] == "square":
        mask = (dx <= half) & (dy <= half)
    elif SHAPES[shape] == "disc":
        mask = dx * dx + dy * dy <= half * half
    else:
        mask = dx + dy <= half
    image = np.where(mask, INTENSITIES[intensity], 0.0)
    return image[None, :, :]


@dataclass
class FactorBatch:
    """Factor rows and the images rendered from them."""

    factors: np.ndarray
    images: np.ndarray

    def __len__(self) -> int:
        return len(self.factors)


class EpochIterator:
    """One shuffled pass over dataset rows; ``order``/``position`` restore mid-epoch."""

    def __init__(self, dataset: FactorDataset, batch_size: int, order: np.ndarray, position: int = 0) -> None:
        self.dataset = dataset
        self.batch_size = batch_size
        self.order = np.asarray(order, dtype=np.int64)
        self.position = position

    @property
    def num_batches(self) -> int:
        return math.ceil(len(self.order) / self.batch_size)

    @property
    def exhausted(self) -> bool:
        return self.position >= len(self.order)

    def __iter__(self) -> Iterator[FactorBatch]:
        return self

    def __next__(self) -> FactorBatch:
        if self.exhausted:
            raise StopIteration
        rows = self.order[self.position : self.position + self.batch_size]
        self.position += len(rows)
        return self.dataset.batch(rows)


class FactorDataset:
    """The enumerated factor space with cached images, optionally restricted to a prefix."""

    def __init__(self, space: FactorSpace = SHAPES5, subset: int | None = None) -> None:
        if subset is not None and not 1 <= subset <= space.size:
            raise ConfigError(f"dataset_subset must be in [1, {space.size}], got {subset}")
        self.space = space
        self.subset = subset
        self._images: np.ndarray | None = None

    def __len__(self) -> int:
        return self.subset if self.subset is not None else self.space.size

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return (1, IMAGE_SIZE, IMAGE_SIZE)

    @property
    def images(self) -> np.ndarray:
        """Images for every row, rendered once."""
        if self._images is None:
            factors = self.all_factors()
            self._images = np.stack([render(row, self.space) for row in factors])
            logger.debug("Rendered %d images", len(self._images))
        return self._images

    def all_factors(self) -> np.ndarray:
        return self.space.factors_of(np.arange(len(self)))

    def batch(self, rows: np.ndarray) -> FactorBatch:
        rows = np.asarray(rows, dtype=np.int64)
        return FactorBatch(factors=self.space.factors_of(rows), images=self.images[rows])

    def render_factors(self, factors: np.ndarray) -> FactorBatch:
        """Images for arbitrary factor rows of the full space."""
        factors = self.space.check(factors)
        if self.subset is None:
            images = self.images[self.space.index_of(factors)]
        else:
            images = np.stack([render(row, self.space) for row in factors])
        return FactorBatch(factors=factors, images=images)

    def sample_factors(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw ``n`` factor rows, each factor independently uniform."""
        columns = [rng.integers(cardinality, size=n) for cardinality in self.space.cardinalities]
        return np.stack(columns, axis=1).astype(np.int64)

    def sample_with_fixed_factor(self, n: int, k: int, value: int, rng: np.random.Generator) -> FactorBatch:
        if not 0 <= k < self.space.num_factors:
            raise ConfigError(f"factor {k} out of range for {self.space.num_factors} factors")
        if not 0 <= value < self.space.cardinalities[k]:
            raise ConfigError(f"value {value} out of range for factor {self.space.names[k]}")
        factors = self.sample_factors(n, rng)
        factors[:, k] = value
        return self.render_factors(factors)

    def iterate_epoch(self, batch_size: int, rng: np.random.Generator) -> EpochIterator:
        if not 1 <= batch_size <= len(self):
            raise ConfigError(f"batch_size {batch_size} must be in [1, {len(self)}]")
        return EpochIterator(self, batch_size, rng.permutation(len(self)))

    def one_hot(self, factors: np.ndarray, names: Sequence[str]) -> np.ndarray:
        """Concatenated one-hot encodings of the named factors, (B, sum of cardinalities)."""
        factors = np.asarray(factors, dtype=np.int64)
        blocks = []
        for name in names:
            k = self.space.factor_index(name)
            blocks.append(np.eye(self.space.cardinalities[k])[factors[:, k]])
        return np.concatenate(blocks, axis=1)

    def condition_dim(self, names: Sequence[str]) -> int:
        return sum(self.space.cardinalities[self.space.factor_index(name)] for name in names)


def render_dataset(out_dir: Path, dataset: FactorDataset | None = None) -> Path:
    """Dump every image as ``images/NNNNNN.pgm`` plus a ``factors.csv`` index."""
    dataset = dataset or FactorDataset()
    out_dir.mkdir(parents=True, exist_ok=True)
    image_dir = out_dir / "images"
    factors = dataset.all_factors()
    index_path = out_dir / "factors.csv"
    with index_path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["index", "file", *dataset.space.names])
        for index, (row, image) in enumerate(zip(factors, dataset.images)):
            name = f"{index:06d}.pgm"
            write_pgm(image_dir / name, image)
            writer.writerow([index, f"images/{name}", *row.tolist()])
    logger.info("Rendered %d images to %s", len(factors), out_dir)
    return index_path
