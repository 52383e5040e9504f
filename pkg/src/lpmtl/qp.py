"""Two-variable working-set solver for the box- and equality-constrained SVM dual.

    maximize    alpha'1 - 1/2 alpha' Y K Y alpha
    subject to  0 <= alpha <= c,  alpha'y = 0
"""

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateTask, NumericError

logger = logging.getLogger(__name__)

MAX_PAIR_UPDATES = 10**6
_CURVATURE_FLOOR = 1e-12


@dataclass
class DualSolution:
    alpha: np.ndarray
    b: float
    objective: float
    kkt_violation: float
    iterations: int
    converged: bool = True


def dual_objective(K, y, alpha):
    """alpha'1 - 1/2 alpha' Y K Y alpha."""
    ya = np.asarray(y, dtype=float) * np.asarray(alpha, dtype=float)
    return float(np.sum(alpha) - 0.5 * ya @ K @ ya)


def _violating_pair(score, up, low):
    # score = -y * grad; returns (i, j, gap) of the maximal violating pair
    if not up.any() or not low.any():
        return -1, -1, 0.0
    s_up = np.where(up, score, -np.inf)
    s_low = np.where(low, score, np.inf)
    i = int(np.argmax(s_up))
    j = int(np.argmin(s_low))
    return i, j, float(s_up[i] - s_low[j])


def _offset(score, alpha, y, c):
    free = (alpha > 0) & (alpha < c)
    if free.any():
        return 0.5 * (score[free].max() + score[free].min())
    at_zero = alpha <= 0
    at_c = alpha >= c
    lower = (at_zero & (y > 0)) | (at_c & (y < 0))
    upper = (at_zero & (y < 0)) | (at_c & (y > 0))
    lb = score[lower].max() if lower.any() else -np.inf
    ub = score[upper].min() if upper.any() else np.inf
    if np.isfinite(lb) and np.isfinite(ub):
        return 0.5 * (lb + ub)
    if np.isfinite(lb):
        return float(lb)
    if np.isfinite(ub):
        return float(ub)
    return 0.0


def solve_svm_dual(K, y, c, tol=1e-6, alpha0=None, max_iter=MAX_PAIR_UPDATES):
    """Maximal-violating-pair ascent on the SVM dual.

    Stops once the gap between the most violating pair drops below ``tol``.
    ``alpha0`` warm-starts the ascent and must be feasible. The offset b is
    the midpoint of the interval allowed by the KKT conditions.
    """
    K = np.asarray(K, dtype=float)
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    if K.shape != (n, n):
        raise ValueError(f"Gram shape {K.shape} does not match {n} labels")
    if c <= 0:
        raise ValueError("box bound c must be positive")
    if np.all(y > 0) or np.all(y < 0):
        raise DegenerateTask("labels contain a single class")

    if alpha0 is None:
        alpha = np.zeros(n)
        grad = -np.ones(n)
    else:
        alpha = np.clip(np.asarray(alpha0, dtype=float), 0.0, c)
        if abs(alpha @ y) > 1e-8 * max(1.0, c * n):
            raise ValueError("warm start violates alpha'y = 0")
        grad = y * (K @ (y * alpha)) - 1.0

    diag = np.diag(K)
    scale = max(float(np.max(np.abs(diag))), 1.0)
    pos = y > 0
    neg = ~pos
    iterations = 0
    converged = False
    gap = np.inf
    while iterations < max_iter:
        score = -y * grad
        below = alpha < c
        above = alpha > 0
        up = (pos & below) | (neg & above)
        low = (pos & above) | (neg & below)
        i, j, gap = _violating_pair(score, up, low)
        if gap < tol:
            # refresh the gradient before accepting convergence
            grad = y * (K @ (y * alpha)) - 1.0
            score = -y * grad
            i, j, gap = _violating_pair(score, up, low)
            if gap < tol:
                converged = True
                break
        curvature = diag[i] + diag[j] - 2.0 * K[i, j]
        if curvature < -1e-10 * scale:
            raise NumericError(f"negative curvature {curvature:.3e}: Gram matrix is not PSD")
        step = gap / max(curvature, _CURVATURE_FLOOR)
        room_i = c - alpha[i] if y[i] > 0 else alpha[i]
        room_j = alpha[j] if y[j] > 0 else c - alpha[j]
        clip_i = room_i <= step and room_i <= room_j
        clip_j = room_j <= step and room_j <= room_i
        step = min(step, room_i, room_j)
        alpha[i] += y[i] * step
        alpha[j] -= y[j] * step
        if clip_i:
            alpha[i] = c if y[i] > 0 else 0.0
        if clip_j:
            alpha[j] = 0.0 if y[j] > 0 else c
        grad += step * y * (K[:, i] - K[:, j])
        iterations += 1

    if not converged:
        logger.warning("SVM dual stopped after %d pair updates (gap %.3e)", iterations, gap)
        grad = y * (K @ (y * alpha)) - 1.0
    score = -y * grad
    b = _offset(score, alpha, y, c)
    return DualSolution(
        alpha=alpha,
        b=float(b),
        objective=dual_objective(K, y, alpha),
        kkt_violation=max(float(gap), 0.0),
        iterations=iterations,
        converged=converged,
    )
