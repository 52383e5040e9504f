"""lp-coupled multi-task SVM.

The model minimizes

    (sum_t (||w_t||^2 / 2)^(s/2))^(2/s) + C * sum_{t,i} hinge(y_t^i f_t(x_t^i))

with f_t(x) = <w_t, phi(x)> + b_t. For 1 <= s <= 2 the coupling term is
rewritten variationally as sum_t ||w_t||^2 / (2 lambda_t) over the
l_{s/(2-s)} ball and solved by block coordinate descent over (w, b) and
lambda. For s > 2 it becomes max_lambda sum_t lambda_t ||w_t||^2 / 2 over the
l_{s/(s-2)} ball; the dual of the inner problem is maximized jointly over
(beta, lambda) with beta_t = lambda_t * alpha_t, where it is jointly concave.
"""

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidTask, ParseError
from .kernels import KernelSpec, build_gram, kernel_matrix
from .norms import INF, holder_maximizer, lp_norm
from .qp import dual_objective, solve_svm_dual

logger = logging.getLogger(__name__)

WEIGHT_FLOOR = 1e-8
MODEL_FORMAT = "lpmtl-model"
MODEL_VERSION = 1


def lambda_norm_exponent(s):
    """Exponent of the ball that constrains lambda: s/(2-s) for s <= 2, s/(s-2) above."""
    s = float(s)
    if s < 1:
        raise ValueError("s must be >= 1")
    if s == 2.0:
        return INF
    if math.isinf(s):
        return 1.0
    if s < 2.0:
        return s / (2.0 - s)
    return s / (s - 2.0)


def floored_power_weights(a, power, q, floor=WEIGHT_FLOOR):
    """Minimize sum_t a_t / x_t over {x >= floor, ||x||_q <= 1}.

    The solution has the form x_t = max(floor, kappa * a_t^power) with
    power = 1/(q+1) and kappa fixing ||x||_q = 1. ``power`` is passed
    explicitly so callers can use the s-parametrized form.
    """
    a = np.maximum(np.asarray(a, dtype=float), 0.0)
    n = a.size
    if math.isinf(q):
        return np.ones(n)
    base = np.zeros(n)
    pos = a > 0
    if pos.any():
        base[pos] = (a[pos] / a[pos].max()) ** power
    floored = ~pos
    if floored.all():
        return np.full(n, n ** (-1.0 / q))
    for _ in range(n + 1):
        budget = 1.0 - floored.sum() * floor**q
        kappa = (budget / np.sum(base[~floored] ** q)) ** (1.0 / q)
        x = np.where(floored, floor, kappa * base)
        newly = (~floored) & (x < floor)
        if not newly.any():
            return x
        floored |= newly
    return x


def lambda_step_small(w_norms, s):
    """Closed-form lambda for fixed w when 1 <= s <= 2.

    lambda_t = ||w_t||^(2-s) / (sum_u ||w_u||^s)^((2-s)/s), floored at 1e-8.
    """
    w_norms = np.asarray(w_norms, dtype=float)
    q = lambda_norm_exponent(s)
    return floored_power_weights(w_norms**2 / 2.0, 1.0 / (q + 1.0), q)


def lambda_step_large(g, s):
    """Hölder step for s > 2: argmax of sum_t lambda_t g_t over the l_{s/(s-2)} ball."""
    return holder_maximizer(np.asarray(g, dtype=float), lambda_norm_exponent(s))


@dataclass
class MtlModel:
    """A trained lp-coupled multi-task SVM.

    Decision function of task t: ``scales[t] * K_t(x, X_t) @ (alphas[t] * y_t) + b[t]``,
    where K_t is the (possibly theta-weighted) kernel. Small-s models keep the
    scaled-kernel duals (scale = lambda_t); large-s models keep the alpha of the
    lambda-weighted dual (scale = 1, box C / lambda_t).
    """

    s: float
    C: float
    kernels: tuple
    theta: np.ndarray
    lam: np.ndarray
    alphas: list
    b: np.ndarray
    scales: np.ndarray
    features: list
    labels: list
    task_names: list
    r: float = None
    degenerate: tuple = ()
    trace: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False

    @property
    def num_tasks(self):
        return len(self.alphas)

    @property
    def kernel(self):
        return self.kernels[0]

    @property
    def regime(self):
        return "small" if self.s <= 2.0 else "large"

    def box(self, t):
        return self.C if self.regime == "small" else self.C / self.lam[t]

    def decision(self, X, t):
        if not 0 <= t < self.num_tasks:
            raise InvalidTask(f"unknown task index {t}")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        coef = self.scales[t] * self.alphas[t] * self.labels[t]
        out = np.full(X.shape[0], float(self.b[t]))
        for w, spec in zip(self.theta, self.kernels):
            if w == 0.0:
                continue
            out += w * (kernel_matrix(spec, X, self.features[t]) @ coef)
        return out

    def predict(self, X, t):
        return np.where(self.decision(X, t) >= 0, 1.0, -1.0)

    def to_dict(self):
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "s": _enc(self.s),
            "r": None if self.r is None else _enc(self.r),
            "C": self.C,
            "kernels": [k.to_dict() for k in self.kernels],
            "theta": self.theta.tolist(),
            "lambda": self.lam.tolist(),
            "b": self.b.tolist(),
            "scales": self.scales.tolist(),
            "iterations": self.iterations,
            "converged": self.converged,
            "trace": list(self.trace),
            "tasks": [
                {
                    "name": name,
                    "alpha": a.tolist(),
                    "labels": y.tolist(),
                    "features": X.tolist(),
                    "degenerate": bool(dg),
                }
                for name, a, y, X, dg in zip(
                    self.task_names, self.alphas, self.labels, self.features, self.degenerate
                )
            ],
        }

    @classmethod
    def from_dict(cls, d):
        try:
            if d.get("format") != MODEL_FORMAT:
                raise ParseError(f"not a {MODEL_FORMAT} document")
            if d.get("version") != MODEL_VERSION:
                raise ParseError(f"unsupported model version {d.get('version')!r}")
            tasks = d["tasks"]
            return cls(
                s=_dec(d["s"]),
                r=None if d.get("r") is None else _dec(d["r"]),
                C=float(d["C"]),
                kernels=tuple(KernelSpec.from_dict(k) for k in d["kernels"]),
                theta=np.array(d["theta"], dtype=float),
                lam=np.array(d["lambda"], dtype=float),
                b=np.array(d["b"], dtype=float),
                scales=np.array(d["scales"], dtype=float),
                alphas=[np.array(t["alpha"], dtype=float) for t in tasks],
                labels=[np.array(t["labels"], dtype=float) for t in tasks],
                features=[np.array(t["features"], dtype=float).reshape(len(t["labels"]), -1) for t in tasks],
                task_names=[t["name"] for t in tasks],
                degenerate=tuple(bool(t.get("degenerate", False)) for t in tasks),
                trace=list(d.get("trace", [])),
                iterations=int(d.get("iterations", 0)),
                converged=bool(d.get("converged", False)),
            )
        except ParseError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed model document: {exc}") from exc

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"model file is not valid JSON: {exc}") from exc
        return cls.from_dict(doc)


def _enc(x):
    return "inf" if math.isinf(x) else x


def _dec(x):
    return INF if x == "inf" else float(x)


def predict(model, x, task_index):
    """Decision value(s) f_t(x) for task ``task_index``."""
    x = np.asarray(x, dtype=float)
    out = model.decision(np.atleast_2d(x), task_index)
    return float(out[0]) if x.ndim == 1 else out


# ---------------------------------------------------------------------------
# shared training state
# ---------------------------------------------------------------------------


@dataclass
class _TaskProblem:
    base: tuple  # Gram matrices K_t^m
    y: np.ndarray
    degenerate: bool

    def composite(self, theta):
        if len(self.base) == 1:
            return self.base[0] * theta[0] if theta[0] != 1.0 else self.base[0]
        return sum(w * K for w, K in zip(theta, self.base))

    def quad(self, K, alpha):
        ya = self.y * alpha
        return float(ya @ K @ ya)


def _problems(gram, ys):
    out = []
    for row, y in zip(gram.mats, ys):
        y = np.asarray(y, dtype=float)
        out.append(_TaskProblem(tuple(row), y, bool(np.all(y > 0) or np.all(y < 0))))
    return out


def _constant_task(y):
    # single-class task: constant classifier f = label, zero weight vector
    return np.zeros(y.shape[0]), float(y[0])


def _hinge(y, f):
    return float(np.sum(np.maximum(0.0, 1.0 - y * f)))


@dataclass
class _State:
    lam: np.ndarray
    theta: np.ndarray
    alphas: list
    b: np.ndarray
    value: float
    quads: np.ndarray  # (T, M): alpha' Y K^m Y alpha for the stored alpha


def _svm_pass(problems, kernel_factor, box, theta, warm, inner_tol):
    """Solve every task's SVM subproblem; returns alphas, offsets, dual objectives and per-kernel quads."""
    alphas, offsets, duals = [], [], []
    quads = np.zeros((len(problems), len(theta)))
    for t, prob in enumerate(problems):
        if prob.degenerate:
            a, b = _constant_task(prob.y)
            alphas.append(a)
            offsets.append(b)
            duals.append(0.0)
            continue
        K = prob.composite(theta) * kernel_factor[t] if kernel_factor[t] != 1.0 else prob.composite(theta)
        a0 = warm[t] if warm is not None else None
        if a0 is not None and a0.max(initial=0.0) > box[t]:
            a0 = a0 * (box[t] / a0.max())
        sol = solve_svm_dual(K, prob.y, box[t], tol=inner_tol, alpha0=a0)
        alphas.append(sol.alpha)
        offsets.append(sol.b)
        duals.append(sol.objective)
        for m, Km in enumerate(prob.base):
            quads[t, m] = prob.quad(Km, sol.alpha)
    return alphas, np.array(offsets), np.array(duals), quads


# ---------------------------------------------------------------------------
# 1 <= s <= 2: block coordinate descent on sum_t ||w_t||^2/(2 lambda_t) + C sum xi
# ---------------------------------------------------------------------------


def _small_s_value(problems, lam, theta, alphas, b, C):
    """Variational objective and per-kernel ||w_t^m||^2 for scaled-kernel duals."""
    total = 0.0
    wsq = np.zeros((len(problems), len(theta)))
    for t, prob in enumerate(problems):
        a = alphas[t]
        if prob.degenerate:
            continue
        Kth = prob.composite(theta)
        ya = prob.y * a
        f = lam[t] * (Kth @ ya) + b[t]
        total += lam[t] * float(ya @ Kth @ ya) / 2.0 + C * _hinge(prob.y, f)
        for m, Km in enumerate(prob.base):
            wsq[t, m] = theta[m] ** 2 * lam[t] ** 2 * float(ya @ Km @ ya)
    return total, wsq


def fit_small_s(problems, s, C, theta=None, r=None, max_outer=200, tol=1e-6, inner_tol=1e-6):
    """Block descent over (alpha, b), lambda and optionally theta (when ``r`` is given)."""
    T = len(problems)
    M = len(problems[0].base)
    q = lambda_norm_exponent(s)
    lam = np.full(T, T ** (-1.0 / q))
    if theta is None:
        theta = np.full(M, M ** (-1.0 / r)) if r is not None else np.ones(M)
    theta = np.asarray(theta, dtype=float)
    learn_theta = r is not None and M > 1

    accepted = None
    trace = []
    warm = None
    converged = False
    iterations = 0
    value_after = math.inf
    for iterations in range(1, max_outer + 1):
        alphas, b, _, quads = _svm_pass(problems, lam, np.full(T, C), theta, warm, inner_tol)
        value, wsq = _small_s_value(problems, lam, theta, alphas, b, C)
        if value > value_after * (1.0 + 1e-12) + 1e-300:
            # the inner solver could not improve on the previous iterate
            logger.debug("svm step did not improve (%.12g > %.12g); stopping", value, value_after)
            converged = True
            break
        prev = accepted.value if accepted else None
        accepted = _State(lam.copy(), theta.copy(), alphas, b, value, quads)
        trace.append(value)
        if prev is not None and abs(prev - value) <= tol * max(abs(value), 1e-300):
            converged = True
            break
        warm = alphas
        # lambda step: minimize sum_t A_t / lambda_t with A_t = sum_m ||w_t^m||^2 / (2 theta_m)
        scaled = np.divide(wsq, theta[None, :], out=np.zeros_like(wsq), where=theta[None, :] > 0)
        per_task = scaled.sum(axis=1) / 2.0
        lam_new = floored_power_weights(per_task, 1.0 / (q + 1.0), q)
        theta_new = theta
        if learn_theta:
            per_kernel = (wsq / lam_new[:, None]).sum(axis=0) / 2.0
            theta_new = floored_power_weights(per_kernel, 1.0 / (r + 1.0), r)
        # objective of the current w under the new weights; the next SVM step must not exceed it
        value_after = _variational_value(wsq, lam_new, theta_new) + (value - _variational_value(wsq, lam, theta))
        lam, theta = lam_new, theta_new
    return accepted, trace, iterations, converged


def _variational_value(wsq, lam, theta):
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(wsq > 0, wsq / (2.0 * lam[:, None] * theta[None, :]), 0.0)
    return float(terms.sum())


# ---------------------------------------------------------------------------
# s > 2: joint ascent over (beta, lambda) of sum_t beta'1 - beta'Q_t beta / (2 lambda_t)
# ---------------------------------------------------------------------------


def fit_large_s(problems, s, C, theta=None, max_outer=200, tol=1e-6, inner_tol=1e-6, warm=None, lam0=None):
    """Block ascent on the lambda-weighted dual; returns alphas in the lambda-weighted form.

    In terms of beta_t = lambda_t alpha_t the per-task subproblem is a standard
    SVM dual with kernel K_t / lambda_t and box C, and for fixed beta the best
    lambda minimizes sum_t c_t / lambda_t with c_t = beta_t' Y K_t Y beta_t / 2.
    """
    T = len(problems)
    M = len(problems[0].base)
    q = lambda_norm_exponent(s)
    theta = np.ones(M) if theta is None else np.asarray(theta, dtype=float)
    lam = np.full(T, T ** (-1.0 / q)) if lam0 is None else np.asarray(lam0, dtype=float).copy()

    trace = []
    state = None
    converged = False
    iterations = 0
    for iterations in range(1, max_outer + 1):
        betas, b, duals, quads = _svm_pass(problems, 1.0 / lam, np.full(T, C), theta, warm, inner_tol)
        value = float(duals.sum())
        prev = trace[-1] if trace else None
        trace.append(value)
        state = _State(lam.copy(), theta.copy(), betas, b, value, quads)
        if prev is not None and abs(value - prev) <= tol * max(abs(value), 1e-300):
            converged = True
            break
        warm = betas
        c = (quads * theta[None, :]).sum(axis=1) / 2.0
        lam = floored_power_weights(c, 1.0 / (q + 1.0), q)
    return state, trace, iterations, converged


def _to_weighted_alphas(state):
    return [beta / lam for beta, lam in zip(state.alphas, state.lam)]


# ---------------------------------------------------------------------------
# public trainers
# ---------------------------------------------------------------------------


def _check_trainable(problems):
    flags = tuple(p.degenerate for p in problems)
    for t, flag in enumerate(flags):
        if flag:
            logger.warning("task %d has a single class; trained as a constant classifier", t)
    return flags


def _model_from_small(state, data, specs, s, C, r, trace, iterations, converged, flags):
    return MtlModel(
        s=float(s),
        C=float(C),
        kernels=tuple(specs),
        theta=state.theta,
        lam=state.lam,
        alphas=list(state.alphas),
        b=state.b,
        scales=state.lam.copy(),
        features=[t.features for t in data.tasks],
        labels=[t.labels for t in data.tasks],
        task_names=[t.name for t in data.tasks],
        r=r,
        degenerate=flags,
        trace=trace,
        iterations=iterations,
        converged=converged,
    )


def _model_from_large(state, data, specs, s, C, r, trace, iterations, converged, flags):
    return MtlModel(
        s=float(s),
        C=float(C),
        kernels=tuple(specs),
        theta=state.theta,
        lam=state.lam,
        alphas=_to_weighted_alphas(state),
        b=state.b,
        scales=np.ones(len(state.alphas)),
        features=[t.features for t in data.tasks],
        labels=[t.labels for t in data.tasks],
        task_names=[t.name for t in data.tasks],
        r=r,
        degenerate=flags,
        trace=trace,
        iterations=iterations,
        converged=converged,
    )


def train_small_s(data, kernel, s, C, max_outer=200, tol=1e-6, inner_tol=1e-6, gram=None):
    """Train with 1 <= s <= 2 by block coordinate descent over (w, b) and lambda."""
    s = float(s)
    if not 1.0 <= s <= 2.0:
        raise ValueError("train_small_s needs 1 <= s <= 2")
    gram = build_gram(data, [kernel]) if gram is None else gram
    problems = _problems(gram, [t.labels for t in data.tasks])
    flags = _check_trainable(problems)
    state, trace, it, conv = fit_small_s(problems, s, C, max_outer=max_outer, tol=tol, inner_tol=inner_tol)
    return _model_from_small(state, data, [kernel], s, C, None, trace, it, conv, flags)


def train_large_s(data, kernel, s, C, max_outer=200, tol=1e-6, inner_tol=1e-6, gram=None):
    """Train with s > 2 by joint block ascent on the lambda-weighted SVM dual."""
    s = float(s)
    if not s > 2.0:
        raise ValueError("train_large_s needs s > 2")
    gram = build_gram(data, [kernel]) if gram is None else gram
    problems = _problems(gram, [t.labels for t in data.tasks])
    flags = _check_trainable(problems)
    state, trace, it, conv = fit_large_s(problems, s, C, max_outer=max_outer, tol=tol, inner_tol=inner_tol)
    return _model_from_large(state, data, [kernel], s, C, None, trace, it, conv, flags)


def train(data, kernel, s, C, **kwargs):
    """Dispatch to the small- or large-s trainer."""
    if float(s) <= 2.0:
        return train_small_s(data, kernel, s, C, **kwargs)
    return train_large_s(data, kernel, s, C, **kwargs)


def task_weight_norms(model, gram=None):
    """||w_t||^2 per task, from the dual expansion."""
    out = np.zeros(model.num_tasks)
    for t in range(model.num_tasks):
        coef = model.scales[t] * model.alphas[t] * model.labels[t]
        K = sum(
            w * kernel_matrix(spec, model.features[t]) if gram is None else w * gram.mats[t][m]
            for m, (w, spec) in enumerate(zip(model.theta, model.kernels))
        )
        out[t] = float(coef @ K @ coef)
    return out


def per_task_dual_objectives(model):
    """alpha_t'1 - 1/2 alpha_t' Y K_t Y alpha_t in the lambda-weighted (large-s) form."""
    out = np.zeros(model.num_tasks)
    for t in range(model.num_tasks):
        K = sum(w * kernel_matrix(spec, model.features[t]) for w, spec in zip(model.theta, model.kernels))
        alpha = model.alphas[t] * model.scales[t] / (1.0 if model.regime == "large" else model.lam[t])
        out[t] = dual_objective(K, model.labels[t], alpha)
    return out


def objective_value(model, data=None):
    """(sum_t (||w_t||^2/2)^(s/2))^(2/s) + C * total hinge, evaluated on ``data`` (default: training data)."""
    # with kernel weights, sum_m ||w_t^m||^2 / theta_m is the norm under the composite kernel
    reg = task_weight_norms(model) / 2.0
    hinge = 0.0
    tasks = data.tasks if data is not None else None
    for t in range(model.num_tasks):
        X = tasks[t].features if tasks is not None else model.features[t]
        y = tasks[t].labels if tasks is not None else model.labels[t]
        hinge += _hinge(y, model.decision(X, t))
    return lp_norm(reg, model.s / 2.0) + model.C * hinge


def accuracy(model, data):
    """Per-task accuracies and their mean."""
    accs = []
    for t, task in enumerate(data.tasks):
        accs.append(float(np.mean(model.predict(task.features, t) == task.labels)))
    return accs, float(np.mean(accs))
