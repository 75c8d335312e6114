"""Biased sampling of source/target splits along a principal direction.

To turn one labeled table into a covariate-shift problem, rows are drawn
without replacement with probabilities proportional to Gaussian densities
over the first principal component of the joint covariates: the source
density is shifted by alpha standard deviations and narrowed by beta, the
target density matches the data.  Target labels come back sealed so that
training code cannot touch them by accident.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .density import fit_pca
from .errors import DataError, DomainError


@dataclass(frozen=True)
class ShiftConfig:
    """Sampling-bias parameters.  alpha moves the source density mean
    (in units of the component's std by default), beta divides its std."""

    alpha: float
    beta: float
    sample_fraction: float = 0.4
    seed: int = 0
    alpha_in_std_units: bool = True


class SealedLabels:
    """Holds the target labels out of casual reach.

    Only evaluation code should call unseal(); everything else receives the
    target as an unlabeled Dataset.
    """

    def __init__(self, values: np.ndarray):
        self._values = np.asarray(values, dtype=int).copy()

    def unseal(self) -> np.ndarray:
        return self._values.copy()

    def __len__(self) -> int:
        return len(self._values)

    def __repr__(self) -> str:
        return f"SealedLabels(n={len(self._values)})"


@dataclass
class ShiftSplit:
    """Disjoint source/target samples plus the projections they were drawn on."""

    source: Dataset
    target_unlabeled: Dataset
    target_labels_sealed: SealedLabels
    source_indices: np.ndarray
    target_indices: np.ndarray
    source_projection: np.ndarray
    target_projection: np.ndarray

    @property
    def source_projection_mean(self) -> float:
        return float(self.source_projection.mean())

    @property
    def source_projection_std(self) -> float:
        return float(self.source_projection.std())

    @property
    def target_projection_mean(self) -> float:
        return float(self.target_projection.mean())

    @property
    def target_projection_std(self) -> float:
        return float(self.target_projection.std())


def _gaussian_pdf(x: np.ndarray, mean: float, std: float) -> np.ndarray:
    z = (x - mean) / std
    return np.exp(-0.5 * z * z) / (std * np.sqrt(2.0 * np.pi))


def _draw_without_replacement(rng: np.random.Generator, weights: np.ndarray,
                              k: int, pool: np.ndarray) -> np.ndarray:
    """Sequential proportional draws: pick one row at a time from the pool
    with probability proportional to its weight, then remove it."""
    alive = pool.copy()
    chosen = np.empty(k, dtype=int)
    for step in range(k):
        w = weights[alive]
        total = w.sum()
        if total <= 0.0:
            # density underflowed everywhere in the remaining pool
            j = int(rng.integers(len(alive)))
        else:
            u = rng.random() * total
            j = int(np.searchsorted(np.cumsum(w), u, side="right"))
            j = min(j, len(alive) - 1)
        chosen[step] = alive[j]
        alive = np.delete(alive, j)
    return chosen


def biased_split(data: Dataset, cfg: ShiftConfig) -> ShiftSplit:
    """Draw a source sample and a disjoint target sample of equal size.

    Both sample sizes are round(sample_fraction * n).  The source is drawn
    first from the shifted, narrowed density; the target is then drawn from
    the remaining rows under the unshifted density.
    """
    if data.labels is None:
        raise DataError("biased_split needs a labeled dataset")
    if not (0.0 < cfg.sample_fraction and 2.0 * cfg.sample_fraction <= 1.0):
        raise DomainError("sample_fraction must be in (0, 0.5]")
    if cfg.beta <= 0:
        raise DomainError("beta must be positive")
    k = round(cfg.sample_fraction * data.n)
    if k < 10:
        raise DataError(
            f"sample_fraction {cfg.sample_fraction} of n={data.n} gives "
            f"{k} rows; need at least 10"
        )
    if 2 * k > data.n:
        raise DataError("source and target samples would overlap")

    joint = np.hstack([data.features, data.attribute.astype(float)[:, None]])
    pca = fit_pca(joint, 1)
    projection = pca.project(joint)[:, 0]
    center = float(projection.mean())
    spread = float(projection.std())
    if spread == 0.0:
        raise DataError("projection onto the first component is constant")

    offset = cfg.alpha * spread if cfg.alpha_in_std_units else cfg.alpha
    source_weights = _gaussian_pdf(projection, center + offset, spread / cfg.beta)
    target_weights = _gaussian_pdf(projection, center, spread)

    rng = np.random.default_rng(cfg.seed)
    all_rows = np.arange(data.n)
    source_idx = _draw_without_replacement(rng, source_weights, k, all_rows)
    remaining = np.setdiff1d(all_rows, source_idx, assume_unique=False)
    target_idx = _draw_without_replacement(rng, target_weights, k, remaining)

    source = data.subset(source_idx)
    target_labeled = data.subset(target_idx)
    return ShiftSplit(
        source=source,
        target_unlabeled=target_labeled.without_labels(),
        target_labels_sealed=SealedLabels(target_labeled.labels),
        source_indices=source_idx,
        target_indices=target_idx,
        source_projection=projection[source_idx],
        target_projection=projection[target_idx],
    )
