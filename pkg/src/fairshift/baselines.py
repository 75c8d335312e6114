"""Reference methods: logistic regression (optionally importance-weighted),
randomized equal-opportunity post-processing, and the iid fair classifier.

The iid fair classifier reuses the shift-aware dual machinery with unit
ratios: group membership comes from the observed source labels, the group
masses from (weighted) empirical counts, and the penalty weight from the
same zero-crossing search applied to the source-data violation.
"""

from __future__ import annotations

import logging
from dataclasses import replace

import numpy as np

from .core import (
    FairnessCriterion,
    GroupMarginals,
    MARGINAL_FLOOR,
    fairness_weight_vector,
)
from .data import Dataset, FeatureMap, feature_matrix
from .errors import DataError, DegenerateGroupError
from .models import FairRobustModel, HardtMixing, HardtModel, LinearModel
from .training import (
    TrainConfig,
    _dual_descent,
    _fit_weighted_logistic,
    _resolve_l2,
    search_mu,
)

log = logging.getLogger(__name__)


def train_lr(source: Dataset, weights: np.ndarray | None,
             feature_map: FeatureMap, cfg: TrainConfig,
             method: str = "lr") -> LinearModel:
    """L2-regularized logistic regression on the source.

    Row weights rescale each example's log-loss contribution; passing the
    target/source density ratios turns this into the importance-weighted
    baseline.
    """
    if source.labels is None:
        raise DataError("train_lr needs a labeled source")
    if weights is not None and len(weights) != source.n:
        raise DataError("weights length must match source rows")
    C = _resolve_l2(source, feature_map, cfg)
    phi = feature_matrix(source, feature_map)
    theta, converged = _fit_weighted_logistic(
        phi, source.labels, weights, None, C, cfg.grad_norm_tol, cfg.max_iters
    )
    return LinearModel(method=method, theta=theta, feature_map=feature_map,
                       C=C, converged=converged)


def _group_rates(pred: np.ndarray, a: np.ndarray, y: np.ndarray,
                 k: int) -> tuple[float, float, float, float]:
    pos = (a == k) & (y == 1)
    neg = (a == k) & (y == 0)
    if not pos.any():
        raise DegenerateGroupError(f"group {k} has no positive examples")
    tpr = float(pred[pos].mean())
    fpr = float(pred[neg].mean()) if neg.any() else 0.0
    return tpr, fpr, float(pos.mean()), float(neg.mean())


def _min_fpr_mixing(tpr_b: float, fpr_b: float,
                    tau: float) -> tuple[float, float, float]:
    """Cheapest mixing (t0, t1) reaching derived TPR tau for one group.

    The derived rates are linear in the mixing, so for a fixed tau the
    feasible set is a segment in the unit square and the minimum-FPR point
    sits at one of its endpoints.
    """
    options = []
    if tpr_b >= 1.0:
        options.append((0.0, tau))
    elif tpr_b <= 0.0:
        options.append((tau, 0.0))
    else:
        lo_t1 = max(0.0, (tau - (1.0 - tpr_b)) / tpr_b)
        hi_t1 = min(1.0, tau / tpr_b)
        for t1 in (lo_t1, hi_t1):
            t0 = (tau - t1 * tpr_b) / (1.0 - tpr_b)
            options.append((min(max(t0, 0.0), 1.0), t1))
    best = None
    for t0, t1 in options:
        fpr = t0 * (1.0 - fpr_b) + t1 * fpr_b
        if best is None or fpr < best[2]:
            best = (t0, t1, fpr)
    return best


def hardt_postprocess(predictions: np.ndarray, a: np.ndarray,
                      y: np.ndarray) -> HardtMixing:
    """Fit randomized group mixings equalizing true positive rates.

    predictions are base scores, thresholded at 0.5.  Among all mixings
    whose derived TPRs agree, the expected 0/1 error on the fitting data is
    piecewise linear in the common TPR, so scanning its breakpoints finds
    the exact optimum.
    """
    a = np.asarray(a, dtype=int)
    y = np.asarray(y, dtype=int)
    pred = (np.asarray(predictions, dtype=float) >= 0.5).astype(float)
    rates = {k: _group_rates(pred, a, y, k) for k in (0, 1)}

    taus = {0.0, 1.0}
    for tpr_b, _, _, _ in rates.values():
        taus.add(min(max(tpr_b, 0.0), 1.0))
        taus.add(min(max(1.0 - tpr_b, 0.0), 1.0))
    best = None
    for tau in sorted(taus):
        err = 0.0
        probs = np.zeros((2, 2))
        for k, (tpr_b, fpr_b, w_pos, w_neg) in rates.items():
            t0, t1, fpr = _min_fpr_mixing(tpr_b, fpr_b, tau)
            probs[k, 0] = t0
            probs[k, 1] = t1
            err += w_pos * (1.0 - tau) + w_neg * fpr
        if best is None or err < best[0] - 1e-12:
            best = (err, tau, probs)
    err, tau, probs = best
    return HardtMixing(probs=probs, tpr_target=tau, expected_error=err)


def fit_hardt(source: Dataset, feature_map: FeatureMap,
              cfg: TrainConfig) -> HardtModel:
    """Post-process this module's own logistic regression on the source."""
    base = train_lr(source, None, feature_map, cfg)
    scores = base.predict_proba(source)
    mixing = hardt_postprocess(scores, source.attribute, source.labels)
    return HardtModel(base=base, mixing=mixing)


def _empirical_marginals(source: Dataset, weights: np.ndarray,
                         criterion: FairnessCriterion) -> GroupMarginals:
    a = source.attribute
    y = source.labels
    if criterion == FairnessCriterion.EQUALIZED_OPPORTUNITY:
        g0 = float(np.mean(weights * ((a == 0) & (y == 1))))
        g1 = float(np.mean(weights * ((a == 1) & (y == 1))))
    else:
        g0 = float(np.mean(weights * (a == 0)))
        g1 = float(np.mean(weights * (a == 1)))
    for k, g in ((0, g0), (1, g1)):
        if g < MARGINAL_FLOOR:
            raise DegenerateGroupError(
                f"group {k} has (weighted) mass {g:.3g} in the source; "
                f"the criterion is undefined"
            )
    return GroupMarginals(g_tilde_0=g0, g_tilde_1=g1)


def train_fair_lr(source: Dataset, weights: np.ndarray | None,
                  feature_map: FeatureMap, criterion: FairnessCriterion,
                  cfg: TrainConfig) -> tuple[FairRobustModel, object]:
    """Fair classifier for the iid setting, on source data alone.

    All ratios are one and the fairness weights use the observed labels, so
    rows with a negative label carry no penalty under equalized opportunity.
    With weights set to target/source density ratios every source
    expectation (group masses, gradients, violation) becomes an
    importance-weighted estimate of its target counterpart.

    Returns (model, mu search result).
    """
    if source.labels is None:
        raise DataError("train_fair_lr needs a labeled source")
    method = "fair_lr" if weights is None else "fair_lr_iw"
    w = np.ones(source.n) if weights is None else np.asarray(weights, float)
    if w.shape != (source.n,):
        raise DataError("weights length must match source rows")
    marginals = _empirical_marginals(source, w, criterion)
    slot = fairness_weight_vector(source.attribute, marginals, criterion)
    if criterion == FairnessCriterion.EQUALIZED_OPPORTUNITY:
        f_obs = slot * (source.labels == 1)
    else:
        f_obs = slot
    C = _resolve_l2(source, feature_map, cfg)
    cfg = replace(cfg, l2_strength=C)
    phi = feature_matrix(source, feature_map)
    ones = np.ones(source.n)
    theta_plain, _ = _fit_weighted_logistic(phi, source.labels, w, None, C,
                                            cfg.grad_norm_tol, cfg.max_iters)
    warm = {"theta": theta_plain}

    def inner(mu: float):
        fit = _dual_descent(
            phi_src=phi, y_src=source.labels, r_src=ones, f_src=f_obs,
            lam_src=None, src_weights=w,
            phi_trg=None, r_trg=None, f_trg=None, lam_trg=None, a_trg=None,
            g_tilde=None, mu=mu, C=C, cfg=cfg,
            theta0=warm["theta"], lam0=(0.0, 0.0),
        )
        warm["theta"] = fit.state.params.theta.copy()
        violation = float(np.mean(w * fit.p_source * f_obs))
        return fit, violation

    search = search_mu(inner, cfg)
    model = FairRobustModel(
        method=method,
        params=search.fit.state.params,
        marginals=marginals,
        criterion=criterion,
        feature_map=feature_map,
        C=C,
        iid=True,
        converged=search.fit.state.converged,
        mu_bracketed=search.bracketed,
    )
    return model, search
