"""Multi-task datasets: CSV I/O, one-vs-one task construction, splits and synthetic generators."""

import csv
import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidDataset, NumericError, ParseError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Task:
    features: np.ndarray
    labels: np.ndarray
    name: str = ""

    @property
    def size(self):
        return int(self.labels.shape[0])


@dataclass(frozen=True)
class MultiTaskDataset:
    """Per-task binary samples (x_t^i, y_t^i) with y in {-1, +1}."""

    tasks: tuple
    feature_dim: int = field(init=False)

    def __post_init__(self):
        tasks = tuple(self.tasks)
        if not tasks:
            raise InvalidDataset("dataset has no tasks")
        dims = set()
        clean = []
        for idx, task in enumerate(tasks):
            X = np.array(task.features, dtype=float)
            y = np.array(task.labels, dtype=float).ravel()
            if X.ndim != 2:
                raise InvalidDataset(f"task {idx}: features must be 2-D")
            if X.shape[0] == 0:
                raise InvalidDataset(f"task {idx} ({task.name}) is empty")
            if X.shape[0] != y.shape[0]:
                raise InvalidDataset(f"task {idx}: {X.shape[0]} rows but {y.shape[0]} labels")
            if not np.all(np.isfinite(X)):
                raise NumericError(f"task {idx}: non-finite feature value")
            if not np.all(np.isin(y, (-1.0, 1.0))):
                raise InvalidDataset(f"task {idx}: labels must be -1 or +1")
            dims.add(X.shape[1])
            X.setflags(write=False)
            y.setflags(write=False)
            clean.append(Task(X, y, task.name or f"task{idx}"))
        if len(dims) != 1:
            raise InvalidDataset(f"inconsistent feature dimensions across tasks: {sorted(dims)}")
        object.__setattr__(self, "tasks", tuple(clean))
        object.__setattr__(self, "feature_dim", dims.pop())

    @property
    def num_tasks(self):
        return len(self.tasks)

    @property
    def task_sizes(self):
        return tuple(t.size for t in self.tasks)

    @property
    def total_size(self):
        return sum(self.task_sizes)

    def __len__(self):
        return len(self.tasks)

    def __getitem__(self, idx):
        return self.tasks[idx]

    def equals(self, other):
        if self.num_tasks != other.num_tasks:
            return False
        return all(
            a.name == b.name
            and np.array_equal(a.features, b.features)
            and np.array_equal(a.labels, b.labels)
            for a, b in zip(self.tasks, other.tasks)
        )


def from_arrays(features, labels, names=None):
    names = names or [f"task{i}" for i in range(len(features))]
    return MultiTaskDataset(tuple(Task(X, y, n) for X, y, n in zip(features, labels, names)))


def load_csv(path):
    """Read a ``task_id,label,f1,...,fd`` file; tasks keep first-appearance order."""
    groups = {}
    dim = None
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", line=1) from None
        if len(header) < 3 or header[0].strip() != "task_id" or header[1].strip() != "label":
            raise ParseError("header must start with task_id,label followed by feature columns", line=1)
        dim = len(header) - 2
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != dim + 2:
                raise ParseError(f"expected {dim + 2} columns, found {len(row)}", line=lineno)
            task_id = row[0].strip()
            try:
                label = float(row[1])
            except ValueError:
                raise ParseError(f"unparseable label {row[1]!r}", line=lineno) from None
            if label not in (-1.0, 1.0):
                raise ParseError(f"label must be -1 or 1, got {row[1]!r}", line=lineno)
            try:
                x = [float(v) for v in row[2:]]
            except ValueError:
                raise ParseError("unparseable feature value", line=lineno) from None
            if not all(math.isfinite(v) for v in x):
                raise ParseError("non-finite feature value", line=lineno)
            feats, labs = groups.setdefault(task_id, ([], []))
            feats.append(x)
            labs.append(label)
    if not groups:
        raise ParseError("no data rows")
    tasks = tuple(
        Task(np.array(f, dtype=float).reshape(len(f), dim), np.array(l), name)
        for name, (f, l) in groups.items()
    )
    return MultiTaskDataset(tasks)


def write_csv(data, fh):
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["task_id", "label"] + [f"f{j + 1}" for j in range(data.feature_dim)])
    for task in data.tasks:
        for x, y in zip(task.features, task.labels):
            writer.writerow([task.name, int(y)] + [repr(float(v)) for v in x])


def save_csv(data, path):
    with open(path, "w", newline="") as fh:
        write_csv(data, fh)


def load_manifest(path):
    """Load a dataset described by ``{"path": ..., "preprocessing": {...}}``.

    Relative paths resolve against the manifest's directory. Supported
    preprocessing flags: ``subsample_to_min`` (bool) and ``seed`` (int).
    """
    path = Path(path)
    with open(path) as fh:
        manifest = json.load(fh)
    try:
        data_path = Path(manifest["path"])
    except (KeyError, TypeError):
        raise ParseError("manifest needs a 'path' entry") from None
    if not data_path.is_absolute():
        data_path = path.parent / data_path
    data = load_csv(data_path)
    prep = manifest.get("preprocessing", {}) or {}
    if prep.get("subsample_to_min"):
        data = subsample_to_min(data, seed=int(prep.get("seed", 0)))
    return data


def load_dataset(path):
    """Dispatch on extension: ``.json`` manifests, anything else is CSV."""
    if str(path).endswith(".json"):
        return load_manifest(path)
    return load_csv(path)


def one_vs_one_tasks(features, class_labels, classes=None):
    """One binary task per unordered class pair, pairs in lexicographic order.

    The lower class of each pair is mapped to +1. ``classes`` optionally
    declares the full class list; declared classes without samples are
    dropped with a warning.
    """
    X = np.asarray(features, dtype=float)
    c = np.asarray(class_labels)
    present = sorted(np.unique(c).tolist())
    if classes is not None:
        for k in classes:
            if k not in present:
                logger.warning("class %r has no samples and is excluded", k)
    if len(present) < 2:
        raise InvalidDataset("one-vs-one needs at least two classes")
    tasks = []
    for a, b in itertools.combinations(present, 2):
        mask = (c == a) | (c == b)
        y = np.where(c[mask] == a, 1.0, -1.0)
        tasks.append(Task(X[mask], y, f"{a}_vs_{b}"))
    return MultiTaskDataset(tuple(tasks))


def _task_rng(seed, task_index, purpose):
    return np.random.default_rng([int(seed) % 2**63, int(task_index), purpose])


def split(data, train_fraction, seed):
    """Stratified per-task, per-class split; deterministic in ``seed``.

    Each class with at least two samples keeps at least one sample on each
    side. A class with a single sample goes to the training side.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0, 1)")
    train_tasks, test_tasks = [], []
    for t, task in enumerate(data.tasks):
        rng = _task_rng(seed, t, 1)
        train_idx, test_idx = [], []
        for label in (1.0, -1.0):
            idx = np.flatnonzero(task.labels == label)
            n = idx.size
            if n == 0:
                continue
            if n == 1:
                logger.warning("task %s: class %+d has one sample; kept in train", task.name, int(label))
                train_idx.extend(idx.tolist())
                continue
            k = int(round(train_fraction * n))
            k = min(max(k, 1), n - 1)
            perm = rng.permutation(idx)
            train_idx.extend(perm[:k].tolist())
            test_idx.extend(perm[k:].tolist())
        train_idx = np.sort(np.array(train_idx, dtype=int))
        test_idx = np.sort(np.array(test_idx, dtype=int))
        train_tasks.append(Task(task.features[train_idx], task.labels[train_idx], task.name))
        if test_idx.size == 0:
            raise InvalidDataset(f"task {task.name}: no samples left for the test side")
        test_tasks.append(Task(task.features[test_idx], task.labels[test_idx], task.name))
    return MultiTaskDataset(tuple(train_tasks)), MultiTaskDataset(tuple(test_tasks))


def subsample_to_min(data, seed=0):
    """Subsample every task to the smallest task size (uniformly, without replacement)."""
    n_min = min(data.task_sizes)
    tasks = []
    for t, task in enumerate(data.tasks):
        if task.size == n_min:
            tasks.append(task)
            continue
        idx = np.sort(_task_rng(seed, t, 2).choice(task.size, size=n_min, replace=False))
        tasks.append(Task(task.features[idx], task.labels[idx], task.name))
    return MultiTaskDataset(tuple(tasks))


def synth_multitask(T, N, d, relatedness, noise, seed):
    """Gaussian inputs labelled by per-task linear separators.

    w_t = relatedness * w_shared + (1 - relatedness) * w_private (unit-normalized);
    labels are sign(w_t'x) with each label flipped independently with
    probability ``noise``.
    """
    if T < 1 or N < 1 or d < 1:
        raise ValueError("T, N and d must be positive")
    if not 0.0 <= relatedness <= 1.0:
        raise ValueError("relatedness must lie in [0, 1]")
    if not 0.0 <= noise <= 1.0:
        raise ValueError("noise must lie in [0, 1]")
    rng = np.random.default_rng(int(seed) % 2**63)
    w_shared = rng.standard_normal(d)
    w_shared /= np.linalg.norm(w_shared)
    tasks = []
    for t in range(T):
        w_private = rng.standard_normal(d)
        w_private /= np.linalg.norm(w_private)
        w = relatedness * w_shared + (1.0 - relatedness) * w_private
        norm = np.linalg.norm(w)
        w = w / norm if norm > 0 else w_shared
        X = rng.standard_normal((N, d))
        y = np.where(X @ w >= 0, 1.0, -1.0)
        flip = rng.random(N) < noise
        y[flip] = -y[flip]
        tasks.append(Task(X, y, f"task{t}"))
    return MultiTaskDataset(tuple(tasks))
