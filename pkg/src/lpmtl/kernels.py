"""Kernel functions and per-task Gram matrix stacks."""

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist, pdist, squareform

from .errors import ConfigError, InvalidDataset, NumericError

SYMMETRY_TOL = 1e-10
PSD_REL_TOL = 1e-8
DIAG_TOL = 1e-12

KINDS = ("gaussian", "linear", "polynomial")


@dataclass(frozen=True)
class KernelSpec:
    """A base kernel.

    Gaussian: exp(-||x - x'||^2 / (2 * spread^2)).
    Polynomial: (x . x' + 1)^degree.
    ``normalize`` divides k(x, x') by sqrt(k(x, x) k(x', x')).
    """

    kind: str
    spread: float = None
    degree: int = None
    normalize: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "gaussian":
            if self.spread is None or not np.isfinite(self.spread) or self.spread <= 0:
                raise ConfigError("gaussian kernel needs a positive spread")
        if self.kind == "polynomial":
            if self.degree is None or int(self.degree) != self.degree or self.degree < 1:
                raise ConfigError("polynomial kernel needs an integer degree >= 1")

    @classmethod
    def gaussian(cls, spread, normalize=False):
        return cls("gaussian", spread=float(spread), normalize=normalize)

    @classmethod
    def linear(cls, normalize=False):
        return cls("linear", normalize=normalize)

    @classmethod
    def polynomial(cls, degree, normalize=False):
        return cls("polynomial", degree=int(degree), normalize=normalize)

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict) or "kind" not in d:
            raise ConfigError(f"kernel spec must be an object with a 'kind': {d!r}")
        unknown = set(d) - {"kind", "spread", "degree", "normalize"}
        if unknown:
            raise ConfigError(f"unknown kernel fields {sorted(unknown)}")
        spread = d.get("spread")
        degree = d.get("degree")
        return cls(
            d["kind"],
            spread=None if spread is None else float(spread),
            degree=None if degree is None else int(degree),
            normalize=bool(d.get("normalize", False)),
        )

    def to_dict(self):
        d = {"kind": self.kind}
        if self.kind == "gaussian":
            d["spread"] = self.spread
        if self.kind == "polynomial":
            d["degree"] = self.degree
        d["normalize"] = self.normalize
        return d

    @property
    def label(self):
        tail = "n" if self.normalize else ""
        if self.kind == "gaussian":
            return f"gaussian({self.spread:g}){tail}"
        if self.kind == "polynomial":
            return f"poly({self.degree}){tail}"
        return f"linear{tail}"

    def with_normalize(self, normalize=True):
        return KernelSpec(self.kind, self.spread, self.degree, normalize)


def _raw(spec, X, Z):
    if spec.kind == "gaussian":
        d2 = squareform(pdist(X, "sqeuclidean")) if Z is None else cdist(X, Z, "sqeuclidean")
        return np.exp(-d2 / (2.0 * spec.spread**2))
    G = X @ (X if Z is None else Z).T
    if spec.kind == "polynomial":
        G = (G + 1.0) ** spec.degree
    return G


def _self_values(spec, X):
    if spec.kind == "gaussian":
        return np.ones(X.shape[0])
    sq = np.einsum("ij,ij->i", X, X)
    return sq if spec.kind == "linear" else (sq + 1.0) ** spec.degree


def kernel_matrix(spec, X, Z=None):
    """k(X_i, Z_j) for all pairs; ``Z=None`` builds the symmetric Gram of X."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if Z is not None:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
    K = _raw(spec, X, Z)
    if spec.normalize and spec.kind != "gaussian":
        dx = _self_values(spec, X)
        dz = dx if Z is None else _self_values(spec, Z)
        if np.any(dx <= 0) or np.any(dz <= 0):
            raise NumericError("cannot normalize a kernel at a point with k(x, x) = 0")
        K = K / np.sqrt(np.outer(dx, dz))
        if Z is None:
            np.fill_diagonal(K, 1.0)
    if Z is None:
        K = 0.5 * (K + K.T)
    return K


@dataclass(frozen=True)
class GramStack:
    """Gram matrices K_t^m for T tasks and M kernels, stored as ``mats[t][m]``."""

    mats: tuple
    task_sizes: tuple

    @property
    def num_tasks(self):
        return len(self.mats)

    @property
    def num_kernels(self):
        return len(self.mats[0])

    @property
    def max_diag(self):
        return max(float(np.max(np.diag(K))) for row in self.mats for K in row)

    @property
    def equal_sizes(self):
        return len(set(self.task_sizes)) == 1

    def task(self, t):
        return self.mats[t]

    def kernel(self, m):
        """Single-kernel stack holding only kernel ``m``."""
        return GramStack(tuple((row[m],) for row in self.mats), self.task_sizes)

    def composite(self, theta):
        """Per-task sum_m theta_m K_t^m."""
        theta = np.asarray(theta, dtype=float)
        return [sum(w * K for w, K in zip(theta, row)) for row in self.mats]

    def scaled(self, factor):
        return GramStack(tuple(tuple(K * factor for K in row) for row in self.mats), self.task_sizes)

    def validate(self):
        for t, row in enumerate(self.mats):
            for m, K in enumerate(row):
                check_gram(K, where=f"task {t}, kernel {m}")
        return self


def check_gram(K, where="gram"):
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise NumericError(f"{where}: Gram matrix must be square")
    if not np.all(np.isfinite(K)):
        raise NumericError(f"{where}: non-finite Gram entry")
    if np.max(np.abs(K - K.T), initial=0.0) > SYMMETRY_TOL:
        raise NumericError(f"{where}: Gram matrix is not symmetric")
    n = K.shape[0]
    sym = 0.5 * (K + K.T)
    smallest = float(np.linalg.eigvalsh(sym)[0])
    if smallest < -PSD_REL_TOL * max(float(np.trace(sym)), 0.0) / n:
        raise NumericError(f"{where}: Gram matrix is not PSD (smallest eigenvalue {smallest:.3e})")


def stack_from_matrices(mats):
    """Wrap precomputed per-task matrices (``mats[t][m]``) into a validated stack."""
    rows = []
    for row in mats:
        if isinstance(row, np.ndarray) and row.ndim == 2:
            row = (row,)
        rows.append(tuple(np.asarray(K, dtype=float) for K in row))
    if len({len(r) for r in rows}) != 1:
        raise InvalidDataset("every task needs the same number of kernels")
    stack = GramStack(tuple(rows), tuple(r[0].shape[0] for r in rows))
    return stack.validate()


def build_gram(data, specs):
    """Per-task, per-kernel Gram matrices for a dataset."""
    if isinstance(specs, KernelSpec):
        specs = [specs]
    if not specs:
        raise ConfigError("need at least one kernel")
    rows = []
    for task in data.tasks:
        if task.size == 0:
            raise InvalidDataset(f"task {task.name} is empty")
        if not np.all(np.isfinite(task.features)):
            raise NumericError(f"task {task.name}: non-finite feature value")
        rows.append(tuple(kernel_matrix(spec, task.features) for spec in specs))
    return GramStack(tuple(rows), data.task_sizes).validate()


def check_bound_assumption(gram):
    """True iff every diagonal entry satisfies k(x, x) <= 1 (up to 1e-12)."""
    return gram.max_diag <= 1.0 + DIAG_TOL
