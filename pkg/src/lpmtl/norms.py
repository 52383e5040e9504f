"""lp-norm utilities: conjugate exponents, Hölder maximizers and l_r-ball projections.

Exponents are plain floats; ``math.inf`` stands for p = +inf and is handled
explicitly so that 1* = inf and inf* = 1 are exact.
"""

import math

import numpy as np

from .errors import InvalidExponent, ZeroVector

INF = math.inf


def parse_exponent(value):
    """Accept floats, ints and the strings 'inf'/'infinity' (any case, optional '+')."""
    if isinstance(value, str):
        text = value.strip().lower().lstrip("+")
        if text in ("inf", "infinity", "∞"):
            return INF
        if "/" in text:
            num, den = text.split("/", 1)
            value = float(num) / float(den)
        else:
            value = float(text)
    value = float(value)
    if math.isnan(value) or value < 1.0:
        raise InvalidExponent(f"exponent must be >= 1, got {value!r}")
    return value


def dual_exponent(a):
    """Hölder conjugate a* = a / (a - 1), with 1* = inf and inf* = 1."""
    a = float(a)
    if math.isnan(a) or a < 1.0:
        raise InvalidExponent(f"exponent must be >= 1, got {a!r}")
    if a == 1.0:
        return INF
    if math.isinf(a):
        return 1.0
    return a / (a - 1.0)


def lp_norm(v, p):
    """l_p norm of a vector (absolute values are taken).

    Computed on the max-rescaled vector so that large p does not overflow.
    """
    v = np.abs(np.asarray(v, dtype=float))
    if v.size == 0:
        return 0.0
    top = float(v.max())
    if top == 0.0:
        return 0.0
    if math.isinf(p):
        return top
    if p == 1.0:
        return float(v.sum())
    if p == 2.0:
        return float(np.sqrt(np.dot(v, v)))
    return top * float(np.sum((v / top) ** p)) ** (1.0 / p)


def lp_norm_rows(V, p):
    """Row-wise :func:`lp_norm` for a 2-D array."""
    V = np.abs(np.asarray(V, dtype=float))
    if math.isinf(p):
        return V.max(axis=1)
    if p == 1.0:
        return V.sum(axis=1)
    if p == 2.0:
        return np.sqrt(np.einsum("ij,ij->i", V, V))
    top = V.max(axis=1)
    safe = np.where(top > 0, top, 1.0)
    out = safe * np.sum((V / safe[:, None]) ** p, axis=1) ** (1.0 / p)
    return np.where(top > 0, out, 0.0)


def holder_maximizer(g, q):
    """Maximize g'x over {x >= 0, ||x||_q <= 1} for a nonnegative, nonzero g.

    The optimal value is ||g||_{q*}. For q = 1 all mass goes to the first
    maximal coordinate, for q = inf the maximizer is the all-ones vector.
    """
    g = np.asarray(g, dtype=float)
    if np.any(g < 0):
        raise ValueError("holder_maximizer expects a nonnegative vector")
    if not np.any(g > 0):
        raise ZeroVector("holder_maximizer is undefined for the zero vector")
    q = float(q)
    if q < 1.0:
        raise InvalidExponent(f"exponent must be >= 1, got {q!r}")
    if math.isinf(q):
        return np.ones_like(g)
    if q == 1.0:
        x = np.zeros_like(g)
        x[int(np.argmax(g))] = 1.0
        return x
    qs = dual_exponent(q)
    # x_i = (g_i / ||g||_{q*})^(q*-1), evaluated on g / max(g) to keep the power finite
    scaled = g / g.max()
    return (scaled / lp_norm(scaled, qs)) ** (qs - 1.0)


def project_simplex_rows(V, radius=1.0):
    """Euclidean projection of each row onto {x >= 0, sum(x) = radius} (sort-based)."""
    V = np.atleast_2d(np.asarray(V, dtype=float))
    n = V.shape[1]
    U = -np.sort(-V, axis=1)
    css = np.cumsum(U, axis=1) - radius
    ind = np.arange(1, n + 1)
    cond = U - css / ind > 0
    rho = n - 1 - np.argmax(cond[:, ::-1], axis=1)
    shift = css[np.arange(V.shape[0]), rho] / (rho + 1)
    return np.maximum(V - shift[:, None], 0.0)


def _project_power_ball_rows(V, r, tol):
    # KKT for min 0.5||x - v||^2 s.t. sum x^r <= 1:  x_i + mu r x_i^(r-1) = v_i,
    # solved by bisection on mu (outer) and on each x_i (inner, monotone in x_i).
    def coords(mu):
        lo = np.zeros_like(V)
        hi = V.copy()
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            too_big = mid + mu[:, None] * r * mid ** (r - 1.0) > V
            hi = np.where(too_big, mid, hi)
            lo = np.where(too_big, lo, mid)
            if np.all(hi - lo <= 1e-16 * np.maximum(V, 1.0)):
                break
        return 0.5 * (lo + hi)

    rows = V.shape[0]
    mu_lo = np.zeros(rows)
    mu_hi = np.ones(rows)
    for _ in range(200):
        over = np.sum(coords(mu_hi) ** r, axis=1) > 1.0
        if not np.any(over):
            break
        mu_hi = np.where(over, 2.0 * mu_hi, mu_hi)
    for _ in range(400):
        if np.all(mu_hi - mu_lo <= tol * np.maximum(1.0, mu_hi)):
            break
        mid = 0.5 * (mu_lo + mu_hi)
        over = np.sum(coords(mid) ** r, axis=1) > 1.0
        mu_lo = np.where(over, mid, mu_lo)
        mu_hi = np.where(over, mu_hi, mid)
    X = coords(mu_hi)
    # land exactly inside the ball; bisection leaves x within tol of the sphere
    norms = lp_norm_rows(X, r)
    return X / np.maximum(norms, 1.0)[:, None]


def project_lr_ball_rows(V, r, tol=1e-10):
    """Row-wise Euclidean projection of max(V, 0) onto {x >= 0, ||x||_r <= 1}."""
    V = np.maximum(np.atleast_2d(np.asarray(V, dtype=float)), 0.0)
    r = float(r)
    if r < 1.0:
        raise InvalidExponent(f"exponent must be >= 1, got {r!r}")
    if math.isinf(r):
        return np.minimum(V, 1.0)
    out = V.copy()
    norms = lp_norm_rows(V, r)
    outside = norms > 1.0
    if not np.any(outside):
        return out
    W = V[outside]
    if r == 1.0:
        out[outside] = project_simplex_rows(W)
    elif r == 2.0:
        out[outside] = W / norms[outside][:, None]
    else:
        out[outside] = _project_power_ball_rows(W, r, tol)
    return out


def project_lr_ball(v, r, tol=1e-10):
    """Euclidean projection of max(v, 0) onto the nonnegative part of the unit l_r ball."""
    return project_lr_ball_rows(np.asarray(v, dtype=float)[None, :], r, tol)[0]
