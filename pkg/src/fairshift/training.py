"""Model fitting: batch dual descent for the fair robust model, convex
solvers for the ratio-weighted and plain logistic baselines, and the
zero-crossing search for the fairness penalty weight.

The fair robust model is trained by gradient-only descent on its dual: each
iteration solves the per-row predictor/adversary probabilities at the current
multipliers, then moves the feature multipliers along the source
moment-matching gap and the group multipliers along the target group-mass
gap.  Both gaps vanish exactly at the saddle point, so the residuals double
as convergence diagnostics.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit

from .core import (
    DualParams,
    FairnessCriterion,
    GroupMarginals,
    compute_q_batch,
    estimate_group_marginals,
    expected_violation,
    fairness_weight_vector,
    solve_p_batch,
)
from .data import Dataset, FeatureMap, feature_matrix
from .density import DensityConfig, DensityInfo
from .errors import (
    ConvergenceWarningFlag,
    DataError,
    DivergenceError,
    DomainError,
    FairshiftError,
    NumericalError,
)

log = logging.getLogger(__name__)

L2_GRID = (1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0)
_MU_INTERVAL_TOL = 1e-3
_DIVERGENCE_LIMIT = 1e6


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings shared by all trainers.

    l2_strength of None means: pick it by 5-fold cross-validated logistic
    regression on the labeled source over l2_grid.
    """

    learning_rate: float = 1.0
    decay_iters: int = 1000
    max_iters: int = 5000
    grad_norm_tol: float = 1e-4
    l2_strength: float | None = None
    l2_grid: tuple[float, ...] = L2_GRID
    mu_interval: tuple[float, float] = (-1.5, 1.5)
    mu_tol: float = 1e-3
    mu_grid_points: int = 31
    solver_tol: float = 1e-10
    seed: int = 0


@dataclass
class TrainState:
    """Where a dual-descent run stopped."""

    params: DualParams
    xi_residual: np.ndarray
    gamma_residual: np.ndarray
    iterations_used: int
    converged: bool


@dataclass
class FairRobustFit:
    """Final state plus the per-row probabilities it implies."""

    state: TrainState
    p_source: np.ndarray
    q_source: np.ndarray
    p_target: np.ndarray
    q_target: np.ndarray


def _resolve_l2(source: Dataset, feature_map: FeatureMap,
                cfg: TrainConfig) -> float:
    if cfg.l2_strength is not None:
        return float(cfg.l2_strength)
    return select_l2_strength(source, feature_map, cfg)


def _logistic_objective(theta, phi, y, weights, ratios, C, n):
    z = phi @ theta
    t = ratios * z
    # softplus(t)/r - y*z is the per-row negative log likelihood of the
    # ratio-scaled logistic model; with ratios == 1 this is plain logistic.
    nll = np.logaddexp(0.0, t) / ratios - y * z
    obj = float(np.sum(weights * nll) / n + C * theta @ theta)
    grad = phi.T @ (weights * (expit(t) - y)) / n + 2.0 * C * theta
    if not np.isfinite(grad).all():
        j = int(np.flatnonzero(~np.isfinite(grad))[0])
        bad_rows = np.flatnonzero(~np.isfinite(t))
        row = int(bad_rows[0]) if bad_rows.size else -1
        raise NumericalError(
            f"non-finite gradient in feature {j}"
            + (f" (row {row})" if row >= 0 else "")
        )
    return obj, grad


def _fit_weighted_logistic(phi: np.ndarray, y: np.ndarray,
                           weights: np.ndarray | None,
                           ratios: np.ndarray | None,
                           C: float, tol: float,
                           max_iters: int) -> tuple[np.ndarray, bool]:
    n = phi.shape[0]
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    r = np.ones(n) if ratios is None else np.asarray(ratios, dtype=float)
    if (w < 0).any():
        raise DomainError("weights must be non-negative")
    if (r <= 0).any():
        raise DomainError("ratios must be positive")
    res = minimize(
        _logistic_objective,
        np.zeros(phi.shape[1]),
        args=(phi, y.astype(float), w, r, C, n),
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": max_iters, "gtol": min(tol, 1e-8), "ftol": 1e-15},
    )
    _, grad = _logistic_objective(res.x, phi, y.astype(float), w, r, C, n)
    return res.x, bool(np.max(np.abs(grad)) <= tol)


def select_l2_strength(source: Dataset, feature_map: FeatureMap,
                       cfg: TrainConfig, folds: int = 5) -> float:
    """Pick the L2 strength by cross-validated logistic log loss."""
    if source.labels is None:
        raise DataError("need labels to cross-validate the L2 strength")
    phi = feature_matrix(source, feature_map)
    y = source.labels.astype(float)
    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(source.n)
    fold_ids = np.array_split(order, folds)
    best = None
    for C in cfg.l2_grid:
        total = 0.0
        for held in fold_ids:
            train_mask = np.ones(source.n, dtype=bool)
            train_mask[held] = False
            theta, _ = _fit_weighted_logistic(
                phi[train_mask], y[train_mask], None, None, C,
                cfg.grad_norm_tol, cfg.max_iters,
            )
            z = phi[held] @ theta
            total += float(np.sum(np.logaddexp(0.0, z) - y[held] * z))
        if best is None or total < best[0]:
            best = (total, C)
    log.info("selected l2_strength=%g (cv loss %.4f)", best[1], best[0])
    return best[1]


def train_rba(source: Dataset, densities: DensityInfo,
              feature_map: FeatureMap, cfg: TrainConfig):
    """Fit the ratio-weighted robust classifier on the labeled source.

    Scores are scaled per row by the source/target density ratio, so the
    model stays close to uniform where the source badly under-covers the
    target.  Returns a model whose predict_proba doubles as the probe for
    estimating target group marginals.
    """
    from .models import RbaModel

    if source.labels is None:
        raise DataError("train_rba needs a labeled source")
    if len(densities) != source.n:
        raise DataError("density info does not match source rows")
    C = _resolve_l2(source, feature_map, cfg)
    phi = feature_matrix(source, feature_map)
    theta, converged = _fit_weighted_logistic(
        phi, source.labels, None, densities.ratio_st, C,
        cfg.grad_norm_tol, cfg.max_iters,
    )
    if not converged:
        log.warning("train_rba stopped above tolerance")
    return RbaModel(theta=theta, feature_map=feature_map, C=C,
                    converged=converged)


def _dual_descent(phi_src: np.ndarray, y_src: np.ndarray, r_src: np.ndarray,
                  f_src: np.ndarray, lam_src: np.ndarray | None,
                  src_weights: np.ndarray | None,
                  phi_trg: np.ndarray | None, r_trg: np.ndarray | None,
                  f_trg: np.ndarray | None, lam_trg: np.ndarray | None,
                  a_trg: np.ndarray | None,
                  g_tilde: tuple[float, float] | None,
                  mu: float, C: float, cfg: TrainConfig,
                  theta0: np.ndarray, lam0: tuple[float, float],
                  ) -> FairRobustFit:
    """Batch gradient descent on the dual.  phi_trg of None shares the
    source rows (the iid specialization).  g_tilde of None disables the
    group multipliers."""
    theta = np.array(theta0, dtype=float)
    lam = np.array(lam0, dtype=float)
    use_lambda = g_tilde is not None
    share = phi_trg is None
    n = phi_src.shape[0]
    w = np.ones(n) if src_weights is None else np.asarray(src_weights, float)
    muf_src = mu * f_src
    muf_trg = muf_src if share else mu * f_trg
    y = y_src.astype(float)

    iterations = 0
    converged = False
    for t in range(cfg.max_iters + 1):
        off_s = r_src * (phi_src @ theta)
        if use_lambda and lam_src is not None:
            off_s = off_s + lam[lam_src]
        p_s, b_s = solve_p_batch(off_s, muf_src, cfg.solver_tol)
        q_s = compute_q_batch(p_s, muf_src, boundary=b_s)
        if share:
            p_t, q_t = p_s, q_s
        else:
            off_t = r_trg * (phi_trg @ theta)
            if use_lambda and lam_trg is not None:
                off_t = off_t + lam[lam_trg]
            p_t, b_t = solve_p_batch(off_t, muf_trg, cfg.solver_tol)
            q_t = compute_q_batch(p_t, muf_trg, boundary=b_t)

        grad_theta = phi_src.T @ (w * (q_s - y)) / n + 2.0 * C * theta
        if use_lambda:
            grad_lam = np.array([
                float(np.mean(q_t * (a_trg == 0))) - g_tilde[0],
                float(np.mean(q_t * (a_trg == 1))) - g_tilde[1],
            ])
        else:
            grad_lam = np.zeros(2)

        if not (np.isfinite(grad_theta).all() and np.isfinite(grad_lam).all()):
            bad = np.flatnonzero(~np.isfinite(grad_theta))
            j = int(bad[0]) if bad.size else -1
            raise NumericalError(
                f"non-finite dual gradient at iteration {t}"
                + (f" (feature {j})" if j >= 0 else " (group multiplier)")
            )
        gnorm = max(float(np.max(np.abs(grad_theta))),
                    float(np.max(np.abs(grad_lam))))
        if gnorm > _DIVERGENCE_LIMIT:
            raise DivergenceError(
                f"dual gradient norm {gnorm:.3g} at iteration {t}; "
                f"try a smaller learning_rate"
            )
        if gnorm <= cfg.grad_norm_tol:
            converged = True
            break
        if t == cfg.max_iters:
            break
        eta = cfg.learning_rate / (1.0 + t / cfg.decay_iters)
        theta = theta - eta * grad_theta
        if use_lambda:
            lam = lam - eta * grad_lam
        iterations = t + 1

    state = TrainState(
        params=DualParams(theta=theta, lambda_0=float(lam[0]),
                          lambda_1=float(lam[1]), mu=mu),
        xi_residual=grad_theta,
        gamma_residual=grad_lam,
        iterations_used=iterations,
        converged=converged,
    )
    return FairRobustFit(state=state, p_source=p_s, q_source=q_s,
                         p_target=p_t, q_target=q_t)


def train_fair_robust(source: Dataset, target: Dataset,
                      densities: tuple[DensityInfo, DensityInfo],
                      marginals: GroupMarginals, mu: float,
                      feature_map: FeatureMap, criterion: FairnessCriterion,
                      cfg: TrainConfig,
                      theta0: np.ndarray | None = None,
                      lam0: tuple[float, float] = (0.0, 0.0)) -> FairRobustFit:
    """One full dual-descent run of the shift-aware fair model at fixed mu.

    The target must be unlabeled; its group-positive masses come from the
    supplied marginal estimates.  Under demographic parity the group
    multipliers are dropped and only mu carries the fairness constraint.

    When theta0 is omitted, descent starts from the ratio-weighted fit with
    no penalty.  The moment conditions admit spurious saturated roots that a
    noise initialization can fall into; starting at the unpenalized optimum
    keeps the iterate in the basin that deforms continuously with mu.
    """
    if source.labels is None:
        raise DataError("train_fair_robust needs a labeled source")
    if target.labels is not None:
        raise DataError("target must be unlabeled; labels stay sealed")
    src_info, trg_info = densities
    if len(src_info) != source.n or len(trg_info) != target.n:
        raise DataError("density info does not match the source/target rows")
    phi_src = feature_matrix(source, feature_map)
    phi_trg = feature_matrix(target, feature_map)
    f_src = fairness_weight_vector(source.attribute, marginals, criterion)
    f_trg = fairness_weight_vector(target.attribute, marginals, criterion)
    use_lambda = criterion == FairnessCriterion.EQUALIZED_OPPORTUNITY
    C = _resolve_l2(source, feature_map, cfg)
    if theta0 is None:
        theta0 = train_rba(source, src_info, feature_map,
                           replace(cfg, l2_strength=C)).theta
    fit = _dual_descent(
        phi_src=phi_src, y_src=source.labels, r_src=src_info.ratio_st,
        f_src=f_src, lam_src=source.attribute, src_weights=None,
        phi_trg=phi_trg, r_trg=trg_info.ratio_st, f_trg=f_trg,
        lam_trg=target.attribute, a_trg=target.attribute,
        g_tilde=(marginals.g_tilde_0, marginals.g_tilde_1) if use_lambda else None,
        mu=mu, C=C, cfg=cfg, theta0=theta0, lam0=lam0,
    )
    if not fit.state.converged:
        log.warning("train_fair_robust hit max_iters=%d at mu=%g "
                    "(residual %.3g)", cfg.max_iters, mu,
                    float(np.max(np.abs(fit.state.xi_residual))))
    return fit


@dataclass
class MuSearchResult:
    """Outcome of the penalty-weight search."""

    mu: float
    fit: FairRobustFit
    violation: float
    bracketed: bool
    evaluations: int

    @property
    def flags(self) -> list[str]:
        out = []
        if not self.bracketed:
            out.append(ConvergenceWarningFlag.NO_BRACKET)
        if not self.fit.state.converged:
            out.append(ConvergenceWarningFlag.MAX_ITERS)
        return out


def search_mu(inner: Callable[[float], tuple[FairRobustFit, float]],
              cfg: TrainConfig) -> MuSearchResult:
    """Find the penalty weight whose model-expected violation crosses zero.

    inner(mu) must train to convergence at that mu (warm-starting is the
    closure's business) and return the fit plus its expected violation.

    The violation is monotone in mu only near the zero point: past the
    per-row domain cap the curve bends back, so a single endpoint bisection
    can isolate a spurious saturated crossing.  The search therefore scans
    a grid from the middle of the interval outward, returns immediately on
    a within-tolerance value, and otherwise bisects the sign-change cell
    closest to zero.  Without any sign change the least-violating scanned
    weight is returned, flagged.
    """
    lo, hi = cfg.mu_interval
    if not lo < hi:
        raise DomainError("mu_interval must be increasing")
    if cfg.mu_grid_points < 2:
        raise DomainError("mu_grid_points must be at least 2")

    def call(mu):
        try:
            return inner(mu)
        except FairshiftError as exc:
            raise type(exc)(f"inner training failed at mu={mu:.6g}: {exc}") from exc

    grid = list(np.linspace(lo, hi, cfg.mu_grid_points))
    if lo < 0.0 < hi and not any(abs(m) < 1e-12 for m in grid):
        grid.append(0.0)
    grid.sort()
    seen: dict[float, tuple] = {}
    evals = 0
    for mu in sorted(grid, key=lambda m: (abs(m), m)):
        fit, v = call(mu)
        evals += 1
        if abs(v) <= cfg.mu_tol:
            return MuSearchResult(mu, fit, v, True, evals)
        seen[mu] = (fit, v)

    cells = [(grid[i], grid[i + 1]) for i in range(len(grid) - 1)
             if seen[grid[i]][1] * seen[grid[i + 1]][1] < 0]
    if cells:
        a, b = min(cells, key=lambda c: min(abs(c[0]), abs(c[1])))
        (fa, va), (fb, vb) = seen[a], seen[b]
        while b - a > _MU_INTERVAL_TOL:
            m = 0.5 * (a + b)
            fm, vm = call(m)
            evals += 1
            if abs(vm) <= cfg.mu_tol:
                return MuSearchResult(m, fm, vm, True, evals)
            if va * vm < 0:
                b, vb, fb = m, vm, fm
            else:
                a, va, fa = m, vm, fm
        side = (a, va, fa) if abs(va) <= abs(vb) else (b, vb, fb)
        return MuSearchResult(side[0], side[2], side[1], True, evals)

    mu_star, (fit_star, v_star) = min(seen.items(), key=lambda kv: abs(kv[1][1]))
    log.warning("no sign change of the violation on [%g, %g]; "
                "falling back to mu=%g (violation %.3g)", lo, hi, mu_star, v_star)
    return MuSearchResult(mu_star, fit_star, v_star, False, evals)


def fit_fair_robust_shift(source: Dataset, target: Dataset,
                          densities: tuple[DensityInfo, DensityInfo],
                          criterion: FairnessCriterion, cfg: TrainConfig,
                          feature_map: FeatureMap | None = None,
                          density_cfg: DensityConfig | None = None):
    """Full shift-aware pipeline at one split: probe marginals, search mu.

    Returns (model, search result).  The probe is the ratio-weighted model
    with no fairness penalty; its target predictions estimate the unknown
    group-positive masses that the fairness weights normalize by.
    """
    from .models import FairRobustModel

    feature_map = feature_map or FeatureMap.for_dataset(source)
    C = _resolve_l2(source, feature_map, cfg)
    cfg = replace(cfg, l2_strength=C)
    src_info, trg_info = densities
    rba = train_rba(source, src_info, feature_map, cfg)
    probe = rba.predict_proba(target, trg_info)
    marginals = estimate_group_marginals(target, probe, criterion)

    warm: dict = {"theta": rba.theta.copy(), "lam": (0.0, 0.0)}

    def inner(mu: float) -> tuple[FairRobustFit, float]:
        fit = train_fair_robust(
            source, target, densities, marginals, mu, feature_map,
            criterion, cfg, theta0=warm["theta"], lam0=warm["lam"],
        )
        warm["theta"] = fit.state.params.theta.copy()
        warm["lam"] = (fit.state.params.lambda_0, fit.state.params.lambda_1)
        v = expected_violation(target, fit.p_target, fit.q_target,
                               marginals, criterion)
        return fit, v

    search = search_mu(inner, cfg)
    model = FairRobustModel(
        method="fair_robust_shift",
        params=search.fit.state.params,
        marginals=marginals,
        criterion=criterion,
        feature_map=feature_map,
        C=C,
        iid=False,
        converged=search.fit.state.converged,
        mu_bracketed=search.bracketed,
        density_fingerprint=(density_cfg.fingerprint() if density_cfg else None),
    )
    return model, search
