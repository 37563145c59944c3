"""Disentanglement metrics computed from codes against ground-truth factors.

All metrics read a :class:`CodeTable`, the representation of every point of
an enumerated factor space (or of a CSV dump). Factor-conditional batches are
drawn by sampling rows that share the pinned factor value, which on a full
enumeration is uniform sampling of the remaining factors.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from collections.abc import Callable
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import LogisticRegression
from sklearn.metrics import mutual_info_score
from sklearn.neighbors import NearestCentroid

from disent_toolkit.errors import DisentError, MetricError
from disent_toolkit.models.schemas import DCIScores, MetricConfig, MetricReport
from disent_toolkit.services.synth_data import FactorBatch, FactorDataset

logger = logging.getLogger(__name__)

RepresentationFn = Callable[[FactorBatch], np.ndarray]

METRIC_NAMES = ("betavae", "factorvae", "mig", "sap", "dci", "irs")
INFORMATIVENESS_CLASSIFIERS = ("nearest_centroid", "logistic")


@dataclass
class CodeTable:
    """Codes (N, d) aligned with integer factors (N, K)."""

    codes: np.ndarray
    factors: np.ndarray
    cardinalities: tuple[int, ...]

    def __post_init__(self) -> None:
        self.codes = np.asarray(self.codes, dtype=np.float64)
        self.factors = np.asarray(self.factors, dtype=np.int64)
        if self.codes.ndim != 2 or self.factors.ndim != 2 or len(self.codes) != len(self.factors):
            raise MetricError(f"codes {self.codes.shape} and factors {self.factors.shape} are not aligned")
        self._rows_by_value: dict[tuple[int, int], np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.codes)

    @property
    def num_factors(self) -> int:
        return self.factors.shape[1]

    @property
    def latent_dim(self) -> int:
        return self.codes.shape[1]

    @classmethod
    def from_dataset(cls, rep: RepresentationFn, dataset: FactorDataset, batch_size: int = 256) -> CodeTable:
        """Encode every row of ``dataset``."""
        rows = np.arange(len(dataset))
        chunks = [rep(dataset.batch(rows[start : start + batch_size])) for start in range(0, len(rows), batch_size)]
        return cls(np.concatenate(chunks, axis=0), dataset.all_factors(), dataset.space.cardinalities)

    @classmethod
    def from_csv(cls, codes_path: Path, factors_path: Path) -> CodeTable:
        """Load a codes CSV (floats) and a factors CSV (ints), each with a header row."""
        codes = _read_csv_matrix(codes_path, float)
        factors = _read_csv_matrix(factors_path, int).astype(np.int64)
        cardinalities = tuple(int(c) for c in factors.max(axis=0) + 1)
        return cls(codes, factors, cardinalities)

    def rows_with(self, k: int, value: int) -> np.ndarray:
        key = (k, value)
        if key not in self._rows_by_value:
            self._rows_by_value[key] = np.flatnonzero(self.factors[:, k] == value)
        return self._rows_by_value[key]

    def sample_fixed(self, n: int, k: int, value: int, rng: np.random.Generator) -> np.ndarray:
        """Codes of ``n`` rows drawn with replacement among those with factor k == value."""
        rows = self.rows_with(k, value)
        if len(rows) == 0:
            raise MetricError(f"no rows with factor {k} = {value}")
        return self.codes[rng.choice(rows, size=n)]

    def sample_factor_value(self, k: int, rng: np.random.Generator) -> int:
        """A value of factor k drawn in proportion to its frequency in the table."""
        return int(self.factors[rng.integers(len(self)), k])

    def subsample(self, num_points: int, rng: np.random.Generator) -> CodeTable:
        if num_points >= len(self):
            return self
        rows = np.sort(rng.choice(len(self), size=num_points, replace=False))
        return CodeTable(self.codes[rows], self.factors[rows], self.cardinalities)

    def split(self, test_fraction: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        order = rng.permutation(len(self))
        cut = int(round(len(self) * (1.0 - test_fraction)))
        return order[:cut], order[cut:]


def _read_csv_matrix(path: Path, kind: type) -> np.ndarray:
    with path.open(newline="") as handle:
        reader = csv.reader(handle)
        next(reader, None)
        rows = [[kind(value) for value in row] for row in reader if row]
    if not rows:
        raise MetricError(f"{path} has no data rows")
    return np.asarray(rows)


# -- shared helpers ---------------------------------------------------------------


def discretize(codes: np.ndarray, bins: int) -> np.ndarray:
    """Equal-count bins per column from ranks; ties share a bin, constants get one bin."""
    n = len(codes)
    ranks = rankdata(codes, method="min", axis=0) - 1
    return (ranks * bins // n).astype(np.int64)


def entropy_of(labels: np.ndarray) -> float:
    return float(mutual_info_score(labels, labels))


def mutual_info_matrix(binned: np.ndarray, factors: np.ndarray) -> np.ndarray:
    """I(code_j; factor_k) in nats, shape (d, K)."""
    d, num_factors = binned.shape[1], factors.shape[1]
    matrix = np.zeros((d, num_factors))
    for j in range(d):
        for k in range(num_factors):
            matrix[j, k] = mutual_info_score(factors[:, k], binned[:, j])
    return np.maximum(matrix, 0.0)


def _clip01(value: float) -> float:
    return float(min(max(value, 0.0), 1.0))


# -- BetaVAE score ----------------------------------------------------------------


def _betavae_points(
    table: CodeTable, num_points: int, batch_size: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    features = np.zeros((num_points, table.latent_dim))
    labels = np.zeros(num_points, dtype=np.int64)
    for i in range(num_points):
        k = int(rng.integers(table.num_factors))
        value = table.sample_factor_value(k, rng)
        first = table.sample_fixed(batch_size, k, value, rng)
        second = table.sample_fixed(batch_size, k, value, rng)
        features[i] = np.mean(np.abs(first - second), axis=0)
        labels[i] = k
    return features, labels


def betavae_score(
    table: CodeTable, num_pairs: int = 500, batch_size: int = 64, rng: np.random.Generator | None = None
) -> float:
    """Held-out accuracy of a logistic classifier predicting the fixed factor."""
    if num_pairs < 50:
        raise MetricError(f"betavae_score needs at least 50 training points, got {num_pairs}")
    rng = rng if rng is not None else np.random.default_rng(0)
    train_x, train_y = _betavae_points(table, num_pairs, batch_size, rng)
    test_x, test_y = _betavae_points(table, max(num_pairs // 2, 1), batch_size, rng)
    if np.all(train_x.std(axis=0) == 0):
        logger.warning("BetaVAE score: all features are constant; score is at chance level")
    if len(np.unique(train_y)) < 2:
        return _clip01(float(np.mean(test_y == train_y[0])))
    classifier = LogisticRegression(max_iter=2000)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        classifier.fit(train_x, train_y)
    return _clip01(float(classifier.score(test_x, test_y)))


# -- FactorVAE score --------------------------------------------------------------


def factorvae_score(
    table: CodeTable,
    num_votes: int = 500,
    batch_size: int = 64,
    std_points: int = 10000,
    prune_std: float = 0.02,
    rng: np.random.Generator | None = None,
) -> float:
    """Majority-vote accuracy of mapping argmin-variance dimensions to the fixed factor.

    Raises:
        MetricError: If every dimension falls below ``prune_std`` ("collapsed representation").
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    reference = table.subsample(max(std_points, 1000), rng).codes
    scale = reference.std(axis=0)
    active = scale >= prune_std
    if not np.any(active):
        raise MetricError("collapsed representation: every latent dimension has std below the pruning threshold")

    def votes(count: int) -> tuple[np.ndarray, np.ndarray]:
        dims = np.zeros(count, dtype=np.int64)
        factors = np.zeros(count, dtype=np.int64)
        for i in range(count):
            k = int(rng.integers(table.num_factors))
            value = table.sample_factor_value(k, rng)
            codes = table.sample_fixed(batch_size, k, value, rng)[:, active] / scale[active]
            dims[i] = int(np.argmin(codes.var(axis=0, ddof=1)))
            factors[i] = k
        return dims, factors

    train_dims, train_factors = votes(num_votes)
    test_dims, test_factors = votes(max(num_votes // 2, 1))
    counts = np.zeros((int(active.sum()), table.num_factors), dtype=np.int64)
    np.add.at(counts, (train_dims, train_factors), 1)
    assignment = np.argmax(counts, axis=1)
    return _clip01(float(np.mean(assignment[test_dims] == test_factors)))


# -- MIG -----------------------------------------------------------------------------


def mig_gaps(table: CodeTable, bins: int = 20) -> np.ndarray:
    """Normalized top-two MI gap per factor; NaN where the factor is constant."""
    if bins < 2:
        raise MetricError(f"MIG needs at least 2 bins, got {bins}")
    info = mutual_info_matrix(discretize(table.codes, bins), table.factors)
    gaps = np.full(table.num_factors, np.nan)
    for k in range(table.num_factors):
        entropy = entropy_of(table.factors[:, k])
        if entropy <= 0:
            continue
        ordered = np.sort(info[:, k])[::-1]
        second = ordered[1] if len(ordered) > 1 else 0.0
        gaps[k] = (ordered[0] - second) / entropy
    return gaps


def mig(table: CodeTable, num_points: int = 10000, bins: int = 20, rng: np.random.Generator | None = None) -> float:
    """Mutual information gap averaged over factors."""
    rng = rng if rng is not None else np.random.default_rng(0)
    gaps = mig_gaps(table.subsample(num_points, rng), bins)
    logger.debug("MIG per factor: %s", np.round(gaps, 4).tolist())
    if np.all(np.isnan(gaps)):
        return 0.0
    return _clip01(float(np.nanmean(gaps)))


# -- SAP -----------------------------------------------------------------------------


def _threshold_rule(values: np.ndarray, positive: np.ndarray) -> tuple[float, bool] | None:
    """Best (threshold, predict-above) single-threshold rule by balanced accuracy."""
    pos = np.sort(values[positive])
    neg = np.sort(values[~positive])
    if len(pos) == 0 or len(neg) == 0:
        return None
    thresholds = np.unique(values)
    # predict positive iff value >= t
    tpr_above = 1.0 - np.searchsorted(pos, thresholds, side="left") / len(pos)
    tnr_above = np.searchsorted(neg, thresholds, side="left") / len(neg)
    # predict positive iff value <= t
    tpr_below = np.searchsorted(pos, thresholds, side="right") / len(pos)
    tnr_below = 1.0 - np.searchsorted(neg, thresholds, side="right") / len(neg)
    above = 0.5 * (tpr_above + tnr_above)
    below = 0.5 * (tpr_below + tnr_below)
    if above.max() >= below.max():
        return float(thresholds[int(np.argmax(above))]), True
    return float(thresholds[int(np.argmax(below))]), False


def _balanced_accuracy(values: np.ndarray, positive: np.ndarray, threshold: float, above: bool) -> float | None:
    if positive.all() or not positive.any():
        return None
    predicted = values >= threshold if above else values <= threshold
    tpr = np.mean(predicted[positive])
    tnr = np.mean(~predicted[~positive])
    return 0.5 * (tpr + tnr)


def sap_matrix(table: CodeTable, test_fraction: float = 0.5, rng: np.random.Generator | None = None) -> np.ndarray:
    """Chance-corrected single-threshold predictability of factor k from code j, (d, K)."""
    rng = rng if rng is not None else np.random.default_rng(0)
    train, test = table.split(test_fraction, rng)
    scores = np.zeros((table.latent_dim, table.num_factors))
    for k in range(table.num_factors):
        classes = np.unique(table.factors[:, k])
        if len(classes) < 2:
            continue
        for j in range(table.latent_dim):
            per_class = []
            for value in classes:
                rule = _threshold_rule(table.codes[train, j], table.factors[train, k] == value)
                if rule is None:
                    continue
                bacc = _balanced_accuracy(table.codes[test, j], table.factors[test, k] == value, *rule)
                if bacc is not None:
                    per_class.append(max(0.0, 2.0 * bacc - 1.0))
            scores[j, k] = float(np.mean(per_class)) if per_class else 0.0
    return scores


def sap(
    table: CodeTable, num_points: int = 10000, test_fraction: float = 0.5, rng: np.random.Generator | None = None
) -> float:
    """Mean gap between the two most predictive code dimensions per factor."""
    rng = rng if rng is not None else np.random.default_rng(0)
    scores = sap_matrix(table.subsample(num_points, rng), test_fraction, rng)
    if scores.shape[0] < 2:
        return _clip01(float(scores.max(axis=0).mean()))
    ordered = np.sort(scores, axis=0)[::-1]
    return _clip01(float(np.mean(ordered[0] - ordered[1])))


# -- DCI -----------------------------------------------------------------------------


def importance_matrix(table: CodeTable, bins: int = 20) -> np.ndarray:
    """R[j, k] = I(code_j; factor_k) / H(factor_k) on quantile-binned codes."""
    info = mutual_info_matrix(discretize(table.codes, bins), table.factors)
    entropies = np.array([entropy_of(table.factors[:, k]) for k in range(table.num_factors)])
    with np.errstate(divide="ignore", invalid="ignore"):
        importance = np.where(entropies > 0, info / entropies, 0.0)
    return np.clip(importance, 0.0, 1.0)


def _normalized_entropy(weights: np.ndarray) -> float:
    if len(weights) < 2:
        return 0.0
    p = weights / weights.sum()
    p = p[p > 0]
    return float(-(p * np.log(p)).sum() / math.log(len(weights)))


def disentanglement_completeness(importance: np.ndarray) -> tuple[float, float]:
    total = importance.sum()
    if total <= 0:
        return 0.0, 0.0
    disentanglement = 0.0
    for row in importance:
        if row.sum() > 0:
            disentanglement += row.sum() / total * (1.0 - _normalized_entropy(row))
    completeness = 0.0
    for column in importance.T:
        if column.sum() > 0:
            completeness += column.sum() / total * (1.0 - _normalized_entropy(column))
    return _clip01(disentanglement), _clip01(completeness)


def informativeness(
    table: CodeTable,
    test_fraction: float = 0.5,
    rng: np.random.Generator | None = None,
    classifier: str = "nearest_centroid",
    shrink: float = 1.0,
) -> float:
    """Mean held-out accuracy of per-factor classifiers on standardized codes.

    ``classifier`` is ``nearest_centroid`` (one centroid per factor value, shrunk
    towards the overall mean by ``shrink`` so dimensions unrelated to the factor
    drop out) or ``logistic`` (multinomial logistic regression).

    Raises:
        MetricError: For an unknown classifier name.
    """
    if classifier not in INFORMATIVENESS_CLASSIFIERS:
        raise MetricError(f"unknown informativeness classifier {classifier!r}")
    rng = rng if rng is not None else np.random.default_rng(0)
    train, test = table.split(test_fraction, rng)
    mean = table.codes[train].mean(axis=0)
    std = table.codes[train].std(axis=0)
    codes = (table.codes - mean) / np.where(std > 0, std, 1.0)
    threshold = shrink if shrink > 0 and np.ptp(codes[train], axis=0).any() else None
    accuracies = []
    for k in range(table.num_factors):
        labels = table.factors[:, k]
        if len(np.unique(labels[train])) < 2:
            accuracies.append(float(np.mean(labels[test] == labels[train][0])))
            continue
        if classifier == "nearest_centroid":
            model = NearestCentroid(shrink_threshold=threshold)
        else:
            model = LogisticRegression(max_iter=2000)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            model.fit(codes[train], labels[train])
        accuracies.append(float(model.score(codes[test], labels[test])))
    return _clip01(float(np.mean(accuracies)))


def dci(
    table: CodeTable,
    num_points: int = 10000,
    bins: int = 20,
    test_fraction: float = 0.5,
    rng: np.random.Generator | None = None,
    classifier: str = "nearest_centroid",
    shrink: float = 1.0,
) -> DCIScores:
    rng = rng if rng is not None else np.random.default_rng(0)
    table = table.subsample(num_points, rng)
    disentanglement, completeness = disentanglement_completeness(importance_matrix(table, bins))
    return DCIScores(
        disentanglement=disentanglement,
        completeness=completeness,
        informativeness=informativeness(table, test_fraction, rng, classifier, shrink),
    )


# -- IRS -------------------------------------------------------------------------------


def irs_per_dimension(table: CodeTable, diff_quantile: float = 0.99) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension robustness to non-parent interventions and the variance weights.

    The parent of code j is the factor with the largest absolute correlation.
    Holding the parent at each of its values, the ``diff_quantile`` quantile of
    |z_j - group mean| measures how far the other factors still move z_j; it is
    averaged over parent values and divided by the largest deviation of z_j from
    its global mean.
    """
    codes, factors = table.codes, table.factors
    weights = codes.var(axis=0)
    scores = np.zeros(table.latent_dim)
    for j in range(table.latent_dim):
        column = codes[:, j]
        max_deviation = np.max(np.abs(column - column.mean()))
        if weights[j] <= 0 or max_deviation <= 0:
            weights[j] = 0.0
            continue
        correlations = np.zeros(table.num_factors)
        for k in range(table.num_factors):
            if factors[:, k].std() > 0:
                correlations[k] = abs(np.corrcoef(column, factors[:, k])[0, 1])
        parent = int(np.argmax(np.nan_to_num(correlations)))
        deviations = []
        for value in np.unique(factors[:, parent]):
            group = column[factors[:, parent] == value]
            deviations.append(np.quantile(np.abs(group - group.mean()), diff_quantile))
        scores[j] = _clip01(1.0 - float(np.mean(deviations)) / max_deviation)
    return scores, weights


def irs(
    table: CodeTable, num_points: int = 10000, diff_quantile: float = 0.99, rng: np.random.Generator | None = None
) -> float:
    """Variance-weighted mean interventional robustness over code dimensions."""
    rng = rng if rng is not None else np.random.default_rng(0)
    scores, weights = irs_per_dimension(table.subsample(num_points, rng), diff_quantile)
    logger.debug("IRS per dimension: %s", np.round(scores, 4).tolist())
    if weights.sum() <= 0:
        logger.warning("IRS: every code dimension is constant; score defined as 0")
        return 0.0
    return _clip01(float(np.average(scores, weights=weights)))


# -- all metrics ------------------------------------------------------------------------


def evaluate_all(table: CodeTable, config: MetricConfig, seed: int) -> MetricReport:
    """Run the six metrics, each on its own seed derived from ``seed``.

    A metric that fails is reported as null with its message under ``errors``.
    """
    streams = dict(zip(METRIC_NAMES, (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(6))))
    runners: dict[str, Callable[[np.random.Generator], float | DCIScores]] = {
        "betavae": lambda rng: betavae_score(table, config.betavae_pairs, config.betavae_batch, rng),
        "factorvae": lambda rng: factorvae_score(
            table, config.factorvae_votes, config.factorvae_batch, config.factorvae_std_points, config.prune_std, rng
        ),
        "mig": lambda rng: mig(table, config.num_points, config.bins, rng),
        "sap": lambda rng: sap(table, config.num_points, config.test_fraction, rng),
        "dci": lambda rng: dci(
            table,
            config.num_points,
            config.bins,
            config.test_fraction,
            rng,
            config.informativeness_classifier,
            config.centroid_shrink,
        ),
        "irs": lambda rng: irs(table, config.num_points, config.irs_diff_quantile, rng),
    }
    scores: dict[str, float | DCIScores | None] = {}
    errors: dict[str, str] = {}
    for name, run in runners.items():
        try:
            scores[name] = run(streams[name])
        except (DisentError, ValueError) as exc:
            logger.warning("Metric %s failed: %s", name, exc)
            scores[name] = None
            errors[name] = str(exc)
        else:
            logger.info("Metric %s: %s", name, scores[name])
    return MetricReport(**scores, config=config, seed=seed, errors=errors)
