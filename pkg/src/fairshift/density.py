"""Density-ratio estimation between a source and a target sample.

The pipeline is deliberately low-dimensional and smooth: project the joint
covariates (x, a) of both samples onto leading principal components fit on
their union, run an isotropic Gaussian kernel density estimate per sample in
that space, floor-and-normalize the evaluated densities, and form per-row
ratios in both directions.  The smoothing floor keeps ratios finite where
one sample has no mass; an additional hard clip guards downstream exponents.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import DataError, DomainError


@dataclass(frozen=True)
class DensityConfig:
    """Knobs for the PCA + KDE + normalization pipeline."""

    bandwidth: float = 0.3
    epsilon: float = 0.01
    num_components: int = 2
    ratio_clip: tuple[float, float] = (1e-3, 1e3)

    def fingerprint(self) -> str:
        return (
            f"bw={self.bandwidth:g};eps={self.epsilon:g};"
            f"q={self.num_components};clip={self.ratio_clip[0]:g},{self.ratio_clip[1]:g}"
        )


def default_epsilon(n: int) -> float:
    """Smoothing floor: smaller for small samples, where raw KDE values
    are noisier and a large floor would wash out the ratio signal."""
    return 0.001 if n < 500 else 0.01


@dataclass
class PcaModel:
    """Orthonormal projection onto leading principal directions."""

    mean: np.ndarray
    components: np.ndarray  # (q, d), rows orthonormal
    explained_variance: np.ndarray

    def project(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return (points - self.mean) @ self.components.T


def fit_pca(points: np.ndarray, num_components: int) -> PcaModel:
    """Top eigenvectors of the empirical covariance.

    Component signs are fixed so each component's largest-magnitude
    coordinate is positive, which makes projections reproducible across
    eigensolver implementations.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2:
        raise DataError("fit_pca expects a 2-d array of points")
    n, d = points.shape
    if num_components < 1 or num_components > d:
        raise DomainError(f"num_components must be in [1, {d}]")
    if n < 2:
        raise DataError("need at least two points for a covariance")
    if np.allclose(points, points[0]):
        raise DataError("all points identical: covariance is zero")
    mean = points.mean(axis=0)
    cov = np.cov(points, rowvar=False)
    cov = np.atleast_2d(cov)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:num_components]
    components = eigvecs[:, order].T.copy()
    for row in components:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return PcaModel(
        mean=mean,
        components=components,
        explained_variance=eigvals[order].copy(),
    )


def kde_density(fit_points: np.ndarray, eval_points: np.ndarray,
                bandwidth: float) -> np.ndarray:
    """Isotropic Gaussian KDE: the average of spherical kernels of the given
    bandwidth centered on the fit points, evaluated at the eval points."""
    fit_points = np.atleast_2d(np.asarray(fit_points, dtype=float))
    eval_points = np.atleast_2d(np.asarray(eval_points, dtype=float))
    if bandwidth <= 0:
        raise DomainError("bandwidth must be positive")
    if fit_points.shape[0] == 0:
        raise DataError("no fit points")
    d = fit_points.shape[1]
    if eval_points.shape[1] != d:
        raise DataError("fit and eval points must share a dimension")
    sq = (
        np.sum(eval_points**2, axis=1)[:, None]
        + np.sum(fit_points**2, axis=1)[None, :]
        - 2.0 * eval_points @ fit_points.T
    )
    np.maximum(sq, 0.0, out=sq)
    norm = (2.0 * np.pi * bandwidth**2) ** (d / 2.0)
    return np.exp(-sq / (2.0 * bandwidth**2)).mean(axis=1) / norm


def normalize_densities(raw: np.ndarray, epsilon: float) -> np.ndarray:
    """Floor with epsilon and normalize to a probability vector."""
    raw = np.asarray(raw, dtype=float)
    if epsilon <= 0:
        raise DomainError("epsilon must be positive")
    if raw.ndim != 1 or raw.size == 0:
        raise DataError("expected a non-empty 1-d density array")
    if (raw < 0).any() or not np.isfinite(raw).all():
        raise DataError("raw densities must be finite and non-negative")
    shifted = raw + epsilon
    return shifted / shifted.sum()


@dataclass
class DensityInfo:
    """Per-row density estimates for one evaluation set.

    ratio_st is source density over target density; ratio_ts is its exact
    reciprocal, so importance weights in either direction agree.
    """

    src_density: np.ndarray
    trg_density: np.ndarray
    ratio_st: np.ndarray
    ratio_ts: np.ndarray

    def __len__(self) -> int:
        return len(self.ratio_st)


def _joint_covariates(data: Dataset) -> np.ndarray:
    return np.hstack([data.features, data.attribute.astype(float)[:, None]])


def _info_for(src_raw: np.ndarray, trg_raw: np.ndarray,
              cfg: DensityConfig) -> DensityInfo:
    src_norm = normalize_densities(src_raw, cfg.epsilon)
    trg_norm = normalize_densities(trg_raw, cfg.epsilon)
    lo, hi = cfg.ratio_clip
    if not (0 < lo < hi):
        raise DomainError("ratio_clip must satisfy 0 < lo < hi")
    ratio_st = np.clip(src_norm / trg_norm, lo, hi)
    return DensityInfo(
        src_density=src_norm,
        trg_density=trg_norm,
        ratio_st=ratio_st,
        ratio_ts=1.0 / ratio_st,
    )


def build_density_info(source: Dataset, target: Dataset,
                       cfg: DensityConfig) -> tuple[DensityInfo, DensityInfo]:
    """Estimate densities of both samples at the rows of both samples.

    PCA is fit on the union of the two samples' joint covariates (x, a),
    both KDEs are fit in that shared projection space, and each sample's
    rows get normalized source/target densities plus clipped ratios.
    Returns (info at source rows, info at target rows).
    """
    if source.dim != target.dim:
        raise DataError("source and target have different feature widths")
    pts_src = _joint_covariates(source)
    pts_trg = _joint_covariates(target)
    pca = fit_pca(np.vstack([pts_src, pts_trg]), cfg.num_components)
    proj_src = pca.project(pts_src)
    proj_trg = pca.project(pts_trg)
    src_at_src = kde_density(proj_src, proj_src, cfg.bandwidth)
    src_at_trg = kde_density(proj_src, proj_trg, cfg.bandwidth)
    trg_at_src = kde_density(proj_trg, proj_src, cfg.bandwidth)
    trg_at_trg = kde_density(proj_trg, proj_trg, cfg.bandwidth)
    info_src = _info_for(src_at_src, trg_at_src, cfg)
    info_trg = _info_for(src_at_trg, trg_at_trg, cfg)
    return info_src, info_trg


def write_density_csv(info: DensityInfo, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row_index", "src_density", "trg_density", "ratio_st"])
        for i in range(len(info)):
            writer.writerow([
                i,
                repr(float(info.src_density[i])),
                repr(float(info.trg_density[i])),
                repr(float(info.ratio_st[i])),
            ])


def read_density_csv(path: str) -> DensityInfo:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["row_index", "src_density", "trg_density", "ratio_st"]:
            raise DataError(f"{path}: unexpected density CSV header {header}")
        src, trg, ratio = [], [], []
        for row in reader:
            if not row:
                continue
            src.append(float(row[1]))
            trg.append(float(row[2]))
            ratio.append(float(row[3]))
    if not ratio:
        raise DataError(f"{path}: no density rows")
    ratio_arr = np.array(ratio)
    return DensityInfo(
        src_density=np.array(src),
        trg_density=np.array(trg),
        ratio_st=ratio_arr,
        ratio_ts=1.0 / ratio_arr,
    )
