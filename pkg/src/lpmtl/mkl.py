"""Multi-task multiple kernel learning: a shared conic combination sum_m theta_m k_m, ||theta||_r <= 1.

For 1 <= s <= 2 the objective is minimized by block descent over (w, b),
lambda and theta; both weight blocks have closed-form minimizers. For s > 2
theta is updated by projected subgradient descent on the optimal value J(theta)
of the inner lambda-weighted dual, whose gradient follows from Danskin's theorem.
"""

import logging

import numpy as np

from .kernels import build_gram
from .mtl import (
    MtlModel,
    _check_trainable,
    _model_from_large,
    _model_from_small,
    _problems,
    fit_large_s,
    fit_small_s,
    predict,
)
from .norms import project_lr_ball

logger = logging.getLogger(__name__)

ETA0 = 0.1
THETA_MOVE_TOL = 1e-5
ARMIJO = 1e-4


class MklModel(MtlModel):
    """An :class:`MtlModel` whose decision function uses the learned kernel weights ``theta``."""


def _as_mkl(model):
    model.__class__ = MklModel
    return model


def _problems_for(data, kernels, gram):
    gram = build_gram(data, list(kernels)) if gram is None else gram
    problems = _problems(gram, [t.labels for t in data.tasks])
    return problems, _check_trainable(problems)


def train_mkl_small_s(data, kernels, s, r=1.0, C=1.0, tol=1e-6, max_outer=200, inner_tol=1e-6, gram=None):
    """Block descent over (w, b), lambda and theta for 1 <= s <= 2."""
    s, r = float(s), float(r)
    if not 1.0 <= s <= 2.0:
        raise ValueError("train_mkl_small_s needs 1 <= s <= 2")
    if r < 1.0:
        raise ValueError("r must be >= 1")
    problems, flags = _problems_for(data, kernels, gram)
    M = len(problems[0].base)
    theta = np.ones(M) if M == 1 else None
    state, trace, it, conv = fit_small_s(
        problems, s, C, theta=theta, r=None if M == 1 else r, max_outer=max_outer, tol=tol, inner_tol=inner_tol
    )
    return _as_mkl(_model_from_small(state, data, kernels, s, C, r, trace, it, conv, flags))


def _inner_large(problems, s, C, theta, warm, lam0, tol, inner_tol, max_outer):
    state, trace, it, conv = fit_large_s(
        problems, s, C, theta=theta, max_outer=max_outer, tol=tol, inner_tol=inner_tol, warm=warm, lam0=lam0
    )
    if not conv:
        logger.warning("inner solve at theta=%s did not converge after %d steps", np.round(theta, 6), it)
    return state, trace, it, conv


def danskin_gradient(state):
    """dJ/dtheta_m = -sum_t beta_t' Y K_t^m Y beta_t / (2 lambda_t), i.e. -1/2 sum_t lambda_t alpha_t' Y K^m Y alpha_t."""
    return -(state.quads / (2.0 * state.lam[:, None])).sum(axis=0)


def train_mkl_large_s(
    data,
    kernels,
    s,
    r=1.0,
    C=1.0,
    tol=1e-6,
    max_steps=100,
    eta0=ETA0,
    inner_tol=1e-6,
    inner_max_outer=200,
    gram=None,
):
    """Projected Danskin-gradient descent on theta for s > 2.

    Steps are accepted only under a sufficient-decrease test, so the J trace
    is non-increasing and the returned model is the best iterate found.
    Stops when a step would move theta by less than 1e-5 or after ``max_steps``.
    """
    s, r = float(s), float(r)
    if not s > 2.0:
        raise ValueError("train_mkl_large_s needs s > 2")
    if r < 1.0:
        raise ValueError("r must be >= 1")
    problems, flags = _problems_for(data, kernels, gram)
    M = len(problems[0].base)
    theta = np.ones(M) if M == 1 else np.full(M, M ** (-1.0 / r))

    state, trace, it, conv = _inner_large(problems, s, C, theta, None, None, tol, inner_tol, inner_max_outer)
    best = (state, trace, it, conv)
    j_trace = [state.value]
    step = None
    for _ in range(1, max_steps if M > 1 else 1):
        _check_composite(problems, theta)
        g = danskin_gradient(state)
        if step is None:
            # first trial moves each coordinate by at most eta0
            step = eta0 / max(float(np.max(np.abs(g))), 1e-300)
        accepted = False
        moved = 0.0
        while True:
            cand = project_lr_ball(theta - step * g, r)
            moved = float(np.linalg.norm(cand - theta))
            if moved < THETA_MOVE_TOL:
                break
            result = _inner_large(problems, s, C, cand, state.alphas, state.lam, tol, inner_tol, inner_max_outer)
            if result[0].value <= state.value + ARMIJO * float(g @ (cand - theta)):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        theta = cand
        state, trace, it, conv = result
        best = (state, trace, it, conv)
        j_trace.append(state.value)
        step *= 2.0
    state, trace, it, conv = best
    model = _model_from_large(state, data, kernels, s, C, r, trace, it, conv, flags)
    model.trace = j_trace
    return _as_mkl(model)


def _check_composite(problems, theta):
    for prob in problems:
        K = prob.composite(theta)
        np.linalg.cholesky(K + 1e-8 * np.eye(K.shape[0]))


def train_mkl(data, kernels, s, r=1.0, C=1.0, **kwargs):
    if float(s) <= 2.0:
        return train_mkl_small_s(data, kernels, s, r, C, **kwargs)
    return train_mkl_large_s(data, kernels, s, r, C, **kwargs)


def predict_mkl(model, x, task_index):
    """f_t(x) = scale_t * sum_i alpha_t^i y_t^i sum_m theta_m k_m(x_t^i, x) + b_t."""
    return predict(model, x, task_index)


def inner_value(data, kernels, theta, s, C, gram=None, **kwargs):
    """J(theta): optimal value of the training problem with kernel weights fixed at ``theta``."""
    problems, _ = _problems_for(data, kernels, gram)
    theta = np.asarray(theta, dtype=float)
    if float(s) > 2.0:
        return fit_large_s(problems, s, C, theta=theta, **kwargs)[0].value
    return fit_small_s(problems, s, C, theta=theta, **kwargs)[0].value

