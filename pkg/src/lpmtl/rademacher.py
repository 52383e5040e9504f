"""Empirical Rademacher complexity of lp-coupled multi-task kernel classes.

For tasks with N samples each and sign vectors sigma_t, the single-kernel
ERC is (2 / (T N)) sqrt(R) E ||u||_{s*} with u_t = sqrt(sigma_t' K_t sigma_t).
With M kernels and weights on the unit l_r ball (s >= 2) it is

    (2 / (T N)) sqrt(R) E [ max_theta sum_t (theta' u_t)^(s*/2) ]^(1/s*),

where u_t^m = sigma_t' K_t^m sigma_t. Expectations are Monte Carlo averages over
sign vectors drawn from counter-based streams, so sample d of a run only
depends on (seed, d, t) and runs with different grids of s share their samples.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidDataset, NumericError, UnsupportedExponent
from .norms import INF, dual_exponent, lp_norm_rows, project_lr_ball_rows

logger = logging.getLogger(__name__)

ASSUMPTION_VIOLATED = "assumption-violated"
BRANCHES = ("single_kernel", "general", "small_rstar", "large_rstar", "equal_radius")

PGA_MAX_ITER = 500
PGA_REL_TOL = 1e-9
_RADICAND_TOL = 1e-8
_CHUNK = 512


@dataclass(frozen=True)
class ErcParams:
    s: float
    r: float = None
    R: float = 1.0
    num_samples: int = 1000
    seed: int = 0

    def __post_init__(self):
        if not self.s >= 1.0:
            raise ValueError("s must be >= 1")
        if self.r is not None and not self.r >= 1.0:
            raise ValueError("r must be >= 1")
        if not self.R > 0:
            raise ValueError("R must be positive")
        if int(self.num_samples) != self.num_samples or self.num_samples < 1:
            raise ValueError("num_samples must be a positive integer")


@dataclass
class ErcReport:
    estimate: float
    std_error: float
    bound: object  # float, or ASSUMPTION_VIOLATED
    bound_value: float
    bound_branch: str
    tau: float
    rho: float
    per_sample: np.ndarray = None
    excluded: int = 0
    params: ErcParams = None
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "estimate": self.estimate,
            "std_error": self.std_error,
            "bound": self.bound,
            "bound_value": self.bound_value,
            "branch": self.bound_branch,
            "tau": self.tau,
            "rho": self.rho,
            "excluded": self.excluded,
        }


# ---------------------------------------------------------------------------
# sign vectors
# ---------------------------------------------------------------------------


def _stream_key(seed):
    return np.random.SeedSequence(int(seed) % 2**64).generate_state(2, dtype=np.uint64)


def _signs(key, sample_index, task, n):
    # Philox counter: low words advance within the stream, high words hold (task, sample)
    bg = np.random.Philox(key=key, counter=[0, 0, int(task), int(sample_index)])
    words = bg.random_raw((n + 63) // 64)
    bits = np.unpackbits(np.ascontiguousarray(words).view(np.uint8), bitorder="little")[:n]
    return 2.0 * bits - 1.0


def sample_sigma(task_sizes, seed, sample_index):
    """Rademacher vectors for every task; a pure function of (seed, sample_index, task)."""
    key = _stream_key(seed)
    out = []
    for t, n in enumerate(task_sizes):
        if n < 1:
            raise InvalidDataset("task sizes must be >= 1")
        out.append(_signs(key, sample_index, t, int(n)))
    return out


def _forms_chunk(mats, task_sizes, key, indices):
    D = len(indices)
    U = np.zeros((D, len(mats), len(mats[0])))
    for t, (row, n) in enumerate(zip(mats, task_sizes)):
        S = np.stack([_signs(key, d, t, n) for d in indices])
        for m, K in enumerate(row):
            U[:, t, m] = np.einsum("dn,dn->d", S @ K, S)
    return U


def sigma_quadratic_forms(gram, seed, num_samples, workers=1):
    """Array of sigma_t' K_t^m sigma_t with shape (D, T, M), negatives from rounding clipped at 0.

    The result does not depend on ``workers``: chunks are computed
    independently and reassembled in sample order.
    """
    key = _stream_key(seed)
    indices = np.arange(int(num_samples))
    chunks = [indices[i : i + _CHUNK] for i in range(0, indices.size, _CHUNK)]
    mats, sizes = gram.mats, gram.task_sizes
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda idx: _forms_chunk(mats, sizes, key, idx), chunks))
    else:
        parts = [_forms_chunk(mats, sizes, key, idx) for idx in chunks]
    U = np.concatenate(parts, axis=0)
    traces = np.array([[np.trace(K) for K in row] for row in mats])
    scale = np.maximum(traces, 1.0) * np.array(sizes, dtype=float)[:, None]
    if np.any(U < -_RADICAND_TOL * scale[None, :, :]):
        raise NumericError("sigma' K sigma is clearly negative: Gram matrix is not PSD")
    return np.maximum(U, 0.0)


def _require_equal_sizes(gram):
    if not gram.equal_sizes:
        raise InvalidDataset(
            f"ERC estimation needs equal task sizes, got {sorted(set(gram.task_sizes))}; "
            "subsample every task to the smallest size first"
        )
    return gram.task_sizes[0]


def _summarize(values, scale):
    values = np.asarray(values, dtype=float) * scale
    D = values.size
    estimate = float(values.mean())
    if D < 2 or np.ptp(values) == 0.0:
        return estimate, 0.0, values
    return estimate, float(values.std(ddof=1) / math.sqrt(D)), values


# ---------------------------------------------------------------------------
# single kernel
# ---------------------------------------------------------------------------


def single_kernel_values(U, s):
    """Per-sample ||u||_{s*} with u_t = sqrt(sigma_t' K_t sigma_t); ``U`` has shape (D, T) or (D, T, 1)."""
    U = np.asarray(U, dtype=float)
    if U.ndim == 3:
        U = U[:, :, 0]
    return lp_norm_rows(np.sqrt(U), dual_exponent(s))


def erc_single_kernel(gram, params, assumption_ok=None, forms=None, workers=1, keep_samples=False):
    if gram.num_kernels != 1:
        raise ValueError("erc_single_kernel expects a single-kernel Gram stack")
    N = _require_equal_sizes(gram)
    T = gram.num_tasks
    U = forms if forms is not None else sigma_quadratic_forms(gram, params.seed, params.num_samples, workers)
    values = single_kernel_values(U, params.s)
    estimate, se, per = _summarize(values, 2.0 * math.sqrt(params.R) / (T * N))
    return _report(estimate, se, per, 0, T, N, 1, params, gram, assumption_ok, keep_samples)


# ---------------------------------------------------------------------------
# multiple kernels
# ---------------------------------------------------------------------------


def _objective(theta, U, p):
    # sum_t (theta' u_t)^p for a batch: theta (D, M), U (D, T, M)
    inner = np.einsum("dm,dtm->dt", theta, U)
    return np.sum(np.maximum(inner, 0.0) ** p, axis=1)


def _gradient(theta, U, p):
    inner = np.einsum("dm,dtm->dt", theta, U)
    with np.errstate(divide="ignore"):
        w = np.where(inner > 0, p * np.maximum(inner, 1e-300) ** (p - 1.0), 0.0)
    return np.einsum("dt,dtm->dm", w, U)


def maximize_kernel_weights(U, s, r, max_iter=PGA_MAX_ITER, rel_tol=PGA_REL_TOL):
    """Batched projected gradient ascent of sum_t (theta' u_t)^(s*/2) over the unit l_r ball.

    Returns (theta, value, converged) per sample. Each step backtracks from
    1.0 until the objective does not decrease; a sample stops once its
    relative improvement falls below ``rel_tol``.
    """
    U = np.asarray(U, dtype=float)
    D, T, M = U.shape
    p = dual_exponent(s) / 2.0
    theta = np.full((D, M), M ** (-1.0 / r) if not math.isinf(r) else 1.0)
    value = _objective(theta, U, p)
    if M == 1 or p == 1.0:
        # linear objective: the maximizer is available in closed form
        return _linear_maximizer(U, r, p, theta, value)
    active = np.ones(D, dtype=bool)
    converged = np.zeros(D, dtype=bool)
    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        th, Ua, val = theta[idx], U[idx], value[idx]
        g = _gradient(th, Ua, p)
        step = np.ones(idx.size)
        best_th, best_val = th.copy(), val.copy()
        pending = np.ones(idx.size, dtype=bool)
        for _ in range(60):
            if not pending.any():
                break
            k = np.flatnonzero(pending)
            cand = project_lr_ball_rows(th[k] + step[k, None] * g[k], r)
            cval = _objective(cand, Ua[k], p)
            ok = cval >= val[k]
            best_th[k[ok]] = cand[ok]
            best_val[k[ok]] = cval[ok]
            pending[k[ok]] = False
            step[k[~ok]] *= 0.5
        gain = best_val - val
        done = gain <= rel_tol * np.maximum(np.abs(val), 1e-300)
        theta[idx] = best_th
        value[idx] = best_val
        converged[idx[done]] = True
        active[idx[done]] = False
    return theta, value, converged


def _linear_maximizer(U, r, p, theta, value):
    D, T, M = U.shape
    if M == 1:
        theta = np.ones((D, 1))
        return theta, _objective(theta, U, p), np.ones(D, dtype=bool)
    # p == 1: maximize theta' sum_t u_t, a Hölder problem per sample
    g = U.sum(axis=1)
    rs = dual_exponent(r)
    out = np.zeros_like(g)
    for d in range(D):
        gd = g[d]
        if not np.any(gd > 0):
            out[d] = theta[d]
        elif math.isinf(r):
            out[d] = 1.0
        elif r == 1.0:
            out[d, int(np.argmax(gd))] = 1.0
        else:
            scaled = gd / gd.max()
            out[d] = (scaled / np.sum(scaled**rs) ** (1.0 / rs)) ** (rs - 1.0)
    return out, _objective(out, U, p), np.ones(D, dtype=bool)


def multi_kernel_values(U, s, r, **kwargs):
    """Per-sample [max_theta sum_t (theta' u_t)^(s*/2)]^(1/s*) and the convergence mask."""
    if s < 2.0:
        raise UnsupportedExponent("the multi-kernel ERC is only computed for s >= 2")
    _, value, converged = maximize_kernel_weights(U, s, r, **kwargs)
    return value ** (1.0 / dual_exponent(s)), converged


def erc_multi_kernel(gram, params, assumption_ok=None, forms=None, workers=1, keep_samples=False):
    if params.r is None:
        raise ValueError("erc_multi_kernel needs r")
    if params.s < 2.0:
        raise UnsupportedExponent("the multi-kernel ERC is only computed for s >= 2")
    N = _require_equal_sizes(gram)
    T, M = gram.num_tasks, gram.num_kernels
    U = forms if forms is not None else sigma_quadratic_forms(gram, params.seed, params.num_samples, workers)
    values, converged = multi_kernel_values(U, params.s, params.r)
    excluded = int(np.sum(~converged))
    if excluded:
        logger.warning("%d of %d samples did not converge and were excluded", excluded, values.size)
    if excluded == values.size:
        raise NumericError("no sample converged")
    estimate, se, per = _summarize(values[converged], 2.0 * math.sqrt(params.R) / (T * N))
    return _report(estimate, se, per, excluded, T, N, M, params, gram, assumption_ok, keep_samples)


def _report(estimate, se, per, excluded, T, N, M, params, gram, assumption_ok, keep_samples):
    if assumption_ok is None:
        assumption_ok = gram.max_diag <= 1.0 + 1e-12
    bound, branch, tau, rho = erc_bound(T, N, M, params, assumption_ok)
    value = bound if assumption_ok else erc_bound(T, N, M, params, True)[0]
    return ErcReport(
        estimate=estimate,
        std_error=se,
        bound=bound,
        bound_value=value,
        bound_branch=branch,
        tau=tau,
        rho=rho,
        per_sample=per if keep_samples else None,
        excluded=excluded,
        params=params,
    )


# ---------------------------------------------------------------------------
# closed-form bounds
# ---------------------------------------------------------------------------


def _rho_checked(rho):
    if not rho > 1.0:
        raise ValueError(f"rho = {rho:g} must exceed 1; this bound needs at least two tasks")
    return rho


def _tau(s, rho):
    return dual_exponent(max(s, dual_exponent(rho)))


def erc_bound(T, N, M, params, assumption_ok=True):
    """Closed-form ERC upper bound; returns (bound, branch, tau, rho).

    Single kernel (M == 1 and no r): (2/(T sqrt N)) sqrt(tau R T^(2/s*)),
    tau = (max{s, rho*})*, rho = 2 ln T. For s = inf this is the equal-radius
    value 2 sqrt(R/N). With kernel weights the branch follows r*: r* <= ln T,
    r* >= ln(MT) or the general bound with coefficient s* in between.
    A violated k(x, x) <= 1 assumption replaces the bound by
    ASSUMPTION_VIOLATED (the numeric value stays available with assumption_ok=True).
    """
    if T < 1 or N < 1 or M < 1:
        raise ValueError("T, N and M must be positive")
    s, R = params.s, params.R
    ss = dual_exponent(s)
    lead = 2.0 / (T * math.sqrt(N))
    t_pow = T ** (2.0 / ss)

    if params.r is None:
        if M != 1:
            raise ValueError("multi-kernel bounds need r")
        if math.isinf(s):
            bound, branch, tau, rho = lead * math.sqrt(R * t_pow), "equal_radius", 1.0, math.nan
            if T >= 2:
                rho = 2.0 * math.log(T)
        else:
            rho = _rho_checked(2.0 * math.log(T))
            tau = _tau(s, rho)
            bound, branch = lead * math.sqrt(tau * R * t_pow), "single_kernel"
    else:
        rs = dual_exponent(params.r)
        if T >= 2 and rs <= math.log(T):
            rho = _rho_checked(2.0 * math.log(T))
            tau = _tau(s, rho)
            bound, branch = lead * math.sqrt(tau * R * t_pow * M ** (1.0 / rs)), "small_rstar"
        elif rs >= math.log(M * T):
            rho = _rho_checked(2.0 * math.log(M * T))
            tau = _tau(s, rho)
            bound, branch = lead * math.sqrt(tau * R * t_pow * M ** (2.0 / tau)), "large_rstar"
        else:
            rho, tau = math.nan, math.nan
            expo = max(1.0 / rs, 2.0 / ss)
            bound = lead * math.sqrt(R * ss * t_pow * M**expo) if not math.isinf(ss) else INF
            branch = "general"
    if not assumption_ok:
        return ASSUMPTION_VIOLATED, branch, tau, rho
    return bound, branch, tau, rho


# ---------------------------------------------------------------------------
# generalization bound
# ---------------------------------------------------------------------------


def ramp_loss(margins, gamma=1.0):
    """min(1, max(0, 1 - y f / gamma)): bounded, 1/gamma-Lipschitz, dominates the 0/1 loss."""
    m = np.asarray(margins, dtype=float)
    return np.clip(1.0 - m / gamma, 0.0, 1.0)


def empirical_ramp_error(model, data, gamma=1.0):
    losses = [ramp_loss(task.labels * model.decision(task.features, t), gamma) for t, task in enumerate(data.tasks)]
    return float(np.mean(np.concatenate(losses)))


def generalization_bound(empirical_error, erc, gamma, delta, T, N):
    """Empirical error + erc / gamma + sqrt(9 ln(2/delta) / (2 T N))."""
    if not 0.0 <= empirical_error <= 1.0:
        raise ValueError("empirical_error must lie in [0, 1]")
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    if erc < 0:
        raise ValueError("erc must be nonnegative")
    return empirical_error + erc / gamma + math.sqrt(9.0 * math.log(2.0 / delta) / (2.0 * T * N))
