"""Trained-model containers, prediction, and JSON (de)serialization.

Every trainer returns one of these; every one of them predicts positive
probabilities for a Dataset through the same predict_proba interface so the
experiment runner can treat methods uniformly.  Models round-trip through a
single JSON document shape keyed by a method tag.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .core import (
    DualParams,
    FairnessCriterion,
    GroupMarginals,
    compute_q_batch,
    fairness_weight_vector,
    solve_p_batch,
)
from .data import Dataset, FeatureMap, feature_matrix
from .density import DensityInfo
from .errors import DataError

MODEL_FORMAT = "fairshift-model"


@dataclass
class LinearModel:
    """Plain (optionally importance-weighted) L2 logistic regression."""

    method: str
    theta: np.ndarray
    feature_map: FeatureMap
    C: float
    converged: bool

    def scores(self, data: Dataset) -> np.ndarray:
        return feature_matrix(data, self.feature_map) @ self.theta

    def predict_proba(self, data: Dataset,
                      density: DensityInfo | None = None,
                      rng: np.random.Generator | None = None) -> np.ndarray:
        return expit(self.scores(data))


@dataclass
class RbaModel:
    """Ratio-weighted robust classifier; needs per-row density ratios."""

    theta: np.ndarray
    feature_map: FeatureMap
    C: float
    converged: bool
    method: str = "rba"

    def predict_proba(self, data: Dataset,
                      density: DensityInfo | None = None,
                      rng: np.random.Generator | None = None) -> np.ndarray:
        if density is None:
            raise DataError("rba prediction needs density info for the rows")
        if len(density) != data.n:
            raise DataError("density info does not match the rows")
        z = feature_matrix(data, self.feature_map) @ self.theta
        return expit(density.ratio_st * z)


@dataclass
class FairRobustModel:
    """Fairness-penalized robust model (shift-aware or its iid special case).

    iid models ignore density info and apply unit ratios; shift models
    require ratios for the rows being predicted.
    """

    method: str
    params: DualParams
    marginals: GroupMarginals
    criterion: FairnessCriterion
    feature_map: FeatureMap
    C: float
    iid: bool
    converged: bool
    mu_bracketed: bool
    density_fingerprint: str | None = None

    def _offsets(self, data: Dataset,
                 density: DensityInfo | None) -> tuple[np.ndarray, np.ndarray]:
        if self.iid:
            ratios = np.ones(data.n)
        else:
            if density is None:
                raise DataError(
                    f"{self.method} prediction needs density info for the rows"
                )
            if len(density) != data.n:
                raise DataError("density info does not match the rows")
            ratios = density.ratio_st
        z = feature_matrix(data, self.feature_map) @ self.params.theta
        lam = np.where(data.attribute == 1, self.params.lambda_1,
                       self.params.lambda_0)
        muf = self.params.mu * fairness_weight_vector(
            data.attribute, self.marginals, self.criterion
        )
        return ratios * z + lam, muf

    def predict_proba(self, data: Dataset,
                      density: DensityInfo | None = None,
                      rng: np.random.Generator | None = None) -> np.ndarray:
        offset, muf = self._offsets(data, density)
        p, _ = solve_p_batch(offset, muf)
        return p

    def predict_pairs(self, data: Dataset,
                      density: DensityInfo | None = None
                      ) -> tuple[np.ndarray, np.ndarray]:
        """Predictor and adversary probabilities for each row."""
        offset, muf = self._offsets(data, density)
        p, boundary = solve_p_batch(offset, muf)
        return p, compute_q_batch(p, muf, boundary=boundary)


@dataclass
class HardtMixing:
    """Randomized post-processing rates.

    probs[k, b] is the probability of predicting positive for a row of
    group k whose base prediction is b; tpr_target is the common true
    positive rate both groups are mixed to on the fitting data.
    """

    probs: np.ndarray  # shape (2, 2)
    tpr_target: float
    expected_error: float

    def positive_rate(self, attribute: np.ndarray,
                      base_pred: np.ndarray) -> np.ndarray:
        return self.probs[attribute.astype(int), base_pred.astype(int)]


@dataclass
class HardtModel:
    """Base classifier plus fitted group-dependent randomization."""

    base: LinearModel
    mixing: HardtMixing
    method: str = "hardt"

    @property
    def feature_map(self) -> FeatureMap:
        return self.base.feature_map

    @property
    def C(self) -> float:
        return self.base.C

    @property
    def converged(self) -> bool:
        return self.base.converged

    def predict_proba(self, data: Dataset,
                      density: DensityInfo | None = None,
                      rng: np.random.Generator | None = None) -> np.ndarray:
        """Realized randomized predictions (0.0 or 1.0 per row)."""
        if rng is None:
            raise DataError("hardt prediction is randomized; pass an rng")
        base_pred = (self.base.predict_proba(data) >= 0.5).astype(int)
        rates = self.mixing.positive_rate(data.attribute, base_pred)
        return (rng.random(data.n) < rates).astype(float)


Model = LinearModel | RbaModel | FairRobustModel | HardtModel


def model_to_dict(model: Model) -> dict:
    doc = {
        "format": MODEL_FORMAT,
        "version": 1,
        "method": model.method,
        "feature_map": model.feature_map.to_dict(),
        "C": float(model.C),
        "converged": bool(model.converged),
    }
    if isinstance(model, (LinearModel, RbaModel)):
        doc["theta"] = [float(v) for v in model.theta]
    elif isinstance(model, FairRobustModel):
        doc["params"] = model.params.to_dict()
        doc["marginals"] = {
            "g_tilde_0": model.marginals.g_tilde_0,
            "g_tilde_1": model.marginals.g_tilde_1,
        }
        doc["criterion"] = model.criterion.value
        doc["iid"] = model.iid
        doc["mu_bracketed"] = model.mu_bracketed
        doc["density_fingerprint"] = model.density_fingerprint
    elif isinstance(model, HardtModel):
        doc["base_theta"] = [float(v) for v in model.base.theta]
        doc["mixing"] = {
            "probs": [[float(v) for v in row] for row in model.mixing.probs],
            "tpr_target": float(model.mixing.tpr_target),
            "expected_error": float(model.mixing.expected_error),
        }
    else:
        raise DataError(f"cannot serialize {type(model).__name__}")
    return doc


def model_from_dict(doc: dict) -> Model:
    if doc.get("format") != MODEL_FORMAT:
        raise DataError("not a fairshift model document")
    method = doc["method"]
    feature_map = FeatureMap.from_dict(doc["feature_map"])
    C = float(doc["C"])
    converged = bool(doc["converged"])
    if method in ("lr", "lr_iw"):
        return LinearModel(method=method, theta=np.array(doc["theta"]),
                           feature_map=feature_map, C=C, converged=converged)
    if method == "rba":
        return RbaModel(theta=np.array(doc["theta"]), feature_map=feature_map,
                        C=C, converged=converged)
    if method in ("fair_robust_shift", "fair_lr", "fair_lr_iw"):
        return FairRobustModel(
            method=method,
            params=DualParams.from_dict(doc["params"]),
            marginals=GroupMarginals(**doc["marginals"]),
            criterion=FairnessCriterion(doc["criterion"]),
            feature_map=feature_map,
            C=C,
            iid=bool(doc["iid"]),
            converged=converged,
            mu_bracketed=bool(doc["mu_bracketed"]),
            density_fingerprint=doc.get("density_fingerprint"),
        )
    if method == "hardt":
        base = LinearModel(method="lr", theta=np.array(doc["base_theta"]),
                           feature_map=feature_map, C=C, converged=converged)
        mix = doc["mixing"]
        mixing = HardtMixing(
            probs=np.array(mix["probs"], dtype=float),
            tpr_target=float(mix["tpr_target"]),
            expected_error=float(mix["expected_error"]),
        )
        return HardtModel(base=base, mixing=mixing)
    raise DataError(f"unknown model method {method!r}")


def save_model(model: Model, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh, indent=2)
        fh.write("\n")


def load_model(path: str) -> Model:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read model {path}: {exc}") from exc
    return model_from_dict(doc)
