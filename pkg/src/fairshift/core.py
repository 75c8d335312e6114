"""Per-row saddle-point equations of the fair robust log-loss model.

For a row with density ratio r, score dot = theta @ (phi(x,1) - phi(x,0)),
group multiplier lam, and fairness coefficient muf = mu * f(a, 1, 1), the
predictor probability p solves

    h(p) = log((1 - p) / p) + muf * p + r * dot + lam = 0.

h is strictly decreasing on the admissible domain, which is (0, 1] except
when muf > 1, where it shrinks to (0, 1/muf]; if h is still positive at the
upper bound there is no interior root and p sits on the bound.  The
adversary's label probability follows in closed form:

    q = p / (1 - muf * p + muf * p^2),

which equals exactly 1 at the muf > 1 boundary.  Both are solved here in
log-odds space, where h has a uniformly bounded slope, so bisection reaches
tight residuals even for extreme scores.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .data import Dataset
from .errors import DataError, DegenerateGroupError, DomainError

MARGINAL_FLOOR = 1e-6
_MAX_BISECT = 100


class FairnessCriterion(str, enum.Enum):
    EQUALIZED_OPPORTUNITY = "equalized_opportunity"
    DEMOGRAPHIC_PARITY = "demographic_parity"


@dataclass(frozen=True)
class GroupMarginals:
    """Estimated positive-group masses g~_k on the deployment sample."""

    g_tilde_0: float
    g_tilde_1: float

    def __post_init__(self):
        if not (self.g_tilde_0 > 0 and self.g_tilde_1 > 0):
            raise DegenerateGroupError(
                f"group marginals must be positive, got "
                f"({self.g_tilde_0}, {self.g_tilde_1})"
            )


@dataclass
class DualParams:
    """Model parameters: feature multipliers, group multipliers, penalty weight."""

    theta: np.ndarray
    lambda_0: float = 0.0
    lambda_1: float = 0.0
    mu: float = 0.0

    def to_dict(self) -> dict:
        return {
            "theta": [float(v) for v in np.asarray(self.theta)],
            "lambda_0": float(self.lambda_0),
            "lambda_1": float(self.lambda_1),
            "mu": float(self.mu),
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "DualParams":
        return cls(
            theta=np.array(raw["theta"], dtype=float),
            lambda_0=float(raw["lambda_0"]),
            lambda_1=float(raw["lambda_1"]),
            mu=float(raw["mu"]),
        )


def fairness_weight(a: int, y: int, yhat: int, marginals: GroupMarginals,
                    criterion: FairnessCriterion) -> float:
    """Signed group weight f(a, y, yhat).

    Nonzero only for positive predictions: the privileged group contributes
    1/g~_1, the other group -1/g~_0, restricted to true positives under
    equalized opportunity and unrestricted under demographic parity.
    """
    if yhat != 1:
        return 0.0
    if criterion == FairnessCriterion.EQUALIZED_OPPORTUNITY and y != 1:
        return 0.0
    if a == 1:
        return 1.0 / marginals.g_tilde_1
    return -1.0 / marginals.g_tilde_0


def fairness_weight_vector(attribute: np.ndarray, marginals: GroupMarginals,
                           criterion: FairnessCriterion) -> np.ndarray:
    """f(a, 1, 1) per row: the weight each row carries when predicted
    positive with the adversary's label fixed to positive."""
    attribute = np.asarray(attribute)
    del criterion  # same positive-slot value under both criteria
    return np.where(
        attribute == 1, 1.0 / marginals.g_tilde_1, -1.0 / marginals.g_tilde_0
    )


def estimate_group_marginals(target: Dataset, probe: np.ndarray | None,
                             criterion: FairnessCriterion) -> GroupMarginals:
    """Estimate g~_k on the target sample.

    Under equalized opportunity the positive-label mass of each group is
    unknown, so it is filled in with probe probabilities (typically from a
    ratio-weighted model trained without any fairness penalty).  Under
    demographic parity the group fractions themselves suffice.
    """
    a = target.attribute
    if criterion == FairnessCriterion.DEMOGRAPHIC_PARITY:
        g0 = float((a == 0).mean())
        g1 = float((a == 1).mean())
    else:
        if probe is None:
            raise DataError("equalized opportunity needs probe probabilities")
        probe = np.asarray(probe, dtype=float)
        if probe.shape != (target.n,):
            raise DataError("probe length must match target rows")
        if (probe < 0).any() or (probe > 1).any():
            raise DataError("probe values must lie in [0, 1]")
        g0 = float(probe[a == 0].sum() / target.n)
        g1 = float(probe[a == 1].sum() / target.n)
    for k, g in ((0, g0), (1, g1)):
        if g < MARGINAL_FLOOR:
            raise DegenerateGroupError(
                f"estimated marginal for group {k} is {g:.3g} "
                f"(below {MARGINAL_FLOOR:g}); the criterion is undefined"
            )
    return GroupMarginals(g_tilde_0=g0, g_tilde_1=g1)


def _h_logodds(u: np.ndarray, muf: np.ndarray, offset: np.ndarray) -> np.ndarray:
    # h written in log-odds: p = sigmoid(u), log((1-p)/p) = -u
    return -u + muf * expit(u) + offset


def solve_p_batch(offset: np.ndarray, muf: np.ndarray,
                  tol: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized root solve of h over rows.

    offset is r * dot + lam per row.  Returns (p, boundary) where boundary
    marks rows clamped at the muf > 1 upper bound 1/muf.
    """
    offset = np.asarray(offset, dtype=float)
    muf = np.broadcast_to(np.asarray(muf, dtype=float), offset.shape).copy()
    if tol <= 0:
        raise DomainError("tol must be positive")
    if not (np.isfinite(offset).all() and np.isfinite(muf).all()):
        raise DomainError("offset and muf must be finite")

    p = np.empty_like(offset)
    boundary = np.zeros(offset.shape, dtype=bool)

    plain = muf == 0.0
    p[plain] = expit(offset[plain])

    capped = muf > 1.0
    if capped.any():
        u_cap = -np.log(muf[capped] - 1.0)
        at_bound = offset[capped] > u_cap - 1.0
        idx = np.flatnonzero(capped)
        p[idx[at_bound]] = 1.0 / muf[idx[at_bound]]
        boundary[idx[at_bound]] = True

    solve = ~plain & ~boundary
    if solve.any():
        mf = muf[solve]
        off = offset[solve]
        lo = off + np.minimum(mf, 0.0) - 1.0
        hi = off + np.maximum(mf, 0.0) + 1.0
        over_one = mf > 1.0
        if over_one.any():
            hi[over_one] = np.minimum(hi[over_one], -np.log(mf[over_one] - 1.0))
        mid = 0.5 * (lo + hi)
        for _ in range(_MAX_BISECT):
            hval = _h_logodds(mid, mf, off)
            if np.max(np.abs(hval)) <= tol:
                break
            pos = hval > 0.0
            lo = np.where(pos, mid, lo)
            hi = np.where(pos, hi, mid)
            mid = 0.5 * (lo + hi)
        p[solve] = expit(mid)
    # the true root is strictly positive; expit underflows to 0 for offsets
    # below about -745, which would poison q and the dual gradients
    np.maximum(p, np.finfo(float).tiny, out=p)
    return p, boundary


def solve_p(r: float, dot: float, lam: float, muf: float,
            tol: float = 1e-10) -> float:
    """Predictor probability for one row; see the module docstring for h."""
    if r <= 0:
        raise DomainError("density ratio r must be positive")
    p, _ = solve_p_batch(np.array([r * dot + lam]), np.array([muf]), tol)
    return float(p[0])


def _upper_bound(muf: np.ndarray) -> np.ndarray:
    return np.where(muf > 1.0, 1.0 / np.maximum(muf, 1.0), 1.0)


def compute_q_batch(p: np.ndarray, muf: np.ndarray,
                    clamp_slack: float = 1e-9,
                    boundary: np.ndarray | None = None) -> np.ndarray:
    """Adversary probabilities from predictor probabilities.

    Valid only on the admissible domain, where the denominator is strictly
    positive and q lies in [0, 1] up to rounding; tiny excursions are
    clipped, anything larger raises.  Rows flagged as boundary are pinned
    to exactly 1, which the closed form only reaches up to rounding.
    """
    p = np.asarray(p, dtype=float)
    muf = np.broadcast_to(np.asarray(muf, dtype=float), p.shape)
    ub = _upper_bound(muf)
    if ((p <= 0.0) | (p > ub * (1.0 + 1e-9))).any():
        bad = int(np.argmax((p <= 0.0) | (p > ub * (1.0 + 1e-9))))
        raise DomainError(
            f"p={p.flat[bad]} outside admissible domain (0, {ub.flat[bad]}] "
            f"for muf={muf.flat[bad]}"
        )
    q = p / (1.0 - muf * p + muf * p * p)
    if ((q < -clamp_slack) | (q > 1.0 + clamp_slack)).any():
        bad = int(np.argmax((q < -clamp_slack) | (q > 1.0 + clamp_slack)))
        raise DomainError(f"q={q.flat[bad]} escaped [0, 1] beyond rounding")
    q = np.clip(q, 0.0, 1.0)
    if boundary is not None:
        q = np.where(boundary, 1.0, q)
    return q


def compute_q(p: float, muf: float) -> float:
    return float(compute_q_batch(np.array([p]), np.array([muf]))[0])


def expected_violation(target: Dataset, p: np.ndarray, q: np.ndarray,
                       marginals: GroupMarginals,
                       criterion: FairnessCriterion) -> float:
    """Model-expected fairness gap on the deployment sample.

    Under equalized opportunity both the adversary's label and the
    prediction are uncertain, giving mean(q * p * f); demographic parity
    drops the label expectation and uses mean(p * f).
    """
    p = np.asarray(p, dtype=float)
    if p.shape != (target.n,):
        raise DataError("p length must match target rows")
    weights = fairness_weight_vector(target.attribute, marginals, criterion)
    if criterion == FairnessCriterion.DEMOGRAPHIC_PARITY:
        return float(np.mean(p * weights))
    q = np.asarray(q, dtype=float)
    if q.shape != (target.n,):
        raise DataError("q length must match target rows")
    return float(np.mean(q * p * weights))


def residual(p: np.ndarray, muf: np.ndarray, offset: np.ndarray) -> np.ndarray:
    """h evaluated at stored probabilities (for verification)."""
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore"):
        return np.log((1.0 - p) / p) + muf * p + offset
