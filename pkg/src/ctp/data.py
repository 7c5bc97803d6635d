"""Synthetic Gaussian tasks and their CSV interchange format.

CSV layout, one file per task and split (``task<k>_<split>.csv``)::

    task_id,class_offset,n_t,split,x0,x1,...,x<d-1>,label

Floats are written with 17 significant digits so a load after a save
reproduces every value exactly.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, ParseError

SPLITS = ("train", "test")
META_COLUMNS = ("task_id", "class_offset", "n_t", "split")


@dataclass
class TaskDataset:
    task_id: int
    inputs: np.ndarray
    labels: np.ndarray
    n_t: int
    class_offset: int
    split: str = "train"

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2:
            raise DataError(f"task {self.task_id}: inputs must be 2-D, got {self.inputs.shape}")
        if len(self.labels) != len(self.inputs):
            raise DataError(f"task {self.task_id}: {len(self.inputs)} inputs vs {len(self.labels)} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_t):
            raise DataError(f"task {self.task_id}: labels must lie in [0, {self.n_t})")
        if self.split not in SPLITS:
            raise DataError(f"unknown split {self.split!r}")

    def __len__(self):
        return len(self.labels)

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def global_labels(self) -> np.ndarray:
        return self.labels + self.class_offset


@dataclass(frozen=True)
class SyntheticSpec:
    """Isotropic unit-variance Gaussian classes, ``classes_per_task`` per task.

    ``cluster_separation`` is the distance between neighbouring class means
    in units of the cluster standard deviation.
    """

    num_tasks: int = 3
    classes_per_task: int = 3
    input_dim: int = 8
    cluster_separation: float = 10.0
    train_per_class: int = 200
    test_per_class: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.num_tasks < 1:
            raise ConfigError("num_tasks must be >= 1")
        if self.classes_per_task < 2:
            raise ConfigError("classes_per_task must be >= 2")
        if self.input_dim < 1:
            raise ConfigError("input_dim must be >= 1")
        if not self.cluster_separation > 0:
            raise ConfigError("cluster_separation must be > 0")
        if self.train_per_class < 2 or self.test_per_class < 2:
            raise ConfigError("samples per class must be >= 2")


def _simplex(n, dim, rng):
    """``n`` points with all pairwise distances 1, randomly rotated into ``dim``."""
    centred = np.eye(n) - 1.0 / n
    # rows span an (n-1)-dim subspace; express them in an orthonormal basis of it
    u, s, vt = np.linalg.svd(centred)
    coords = centred @ vt[: n - 1].T / np.sqrt(2.0)
    pad = np.zeros((n, dim))
    pad[:, : n - 1] = coords
    rot, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    return pad @ rot.T


def _grid(n, dim):
    side = 2
    while side ** dim < n:
        side += 1
    idx = np.stack(np.unravel_index(np.arange(n), (side,) * dim), axis=1).astype(float)
    return idx - idx.mean(axis=0)


def class_means(spec: SyntheticSpec) -> np.ndarray:
    """Means of all ``num_tasks * classes_per_task`` classes, shape (C, input_dim)."""
    n = spec.num_tasks * spec.classes_per_task
    rng = np.random.default_rng([spec.seed, 0])
    if n <= spec.input_dim + 1:
        unit = _simplex(n, spec.input_dim, rng)
    else:
        unit = _grid(n, spec.input_dim)
    return spec.cluster_separation * unit


def generate(spec: SyntheticSpec) -> tuple:
    """Return ``(train_tasks, test_tasks)``, two lists of :class:`TaskDataset`.

    Each split holds exactly the requested count per class; samples within a
    split are shuffled so consecutive rows mix classes.
    """
    means = class_means(spec)
    rng = np.random.default_rng([spec.seed, 1])
    train, test = [], []
    k = spec.classes_per_task
    for t in range(spec.num_tasks):
        splits = {}
        for split, count in (("train", spec.train_per_class), ("test", spec.test_per_class)):
            xs, ys = [], []
            for c in range(k):
                xs.append(means[t * k + c] + rng.normal(size=(count, spec.input_dim)))
                ys.append(np.full(count, c))
            X, y = np.concatenate(xs), np.concatenate(ys)
            order = rng.permutation(len(y))
            splits[split] = TaskDataset(t, X[order], y[order], k, t * k, split)
        train.append(splits["train"])
        test.append(splits["test"])
    return train, test


def check_tasks(tasks) -> None:
    """Task ids must be 0..T-1 in order with cumulative class offsets."""
    offset = 0
    for i, ds in enumerate(tasks):
        if ds.task_id != i:
            raise ConfigError(f"expected task id {i} at position {i}, got {ds.task_id}")
        if ds.class_offset != offset:
            raise DataError(f"task {i}: class_offset {ds.class_offset}, expected {offset}")
        offset += ds.n_t


# ---------------------------------------------------------------------------
# CSV


def task_filename(task_id: int, split: str) -> str:
    return f"task{task_id}_{split}.csv"


def save_csv(ds: TaskDataset, path) -> None:
    d = ds.input_dim
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*META_COLUMNS, *(f"x{i}" for i in range(d)), "label"])
        for x, y in zip(ds.inputs, ds.labels):
            w.writerow([ds.task_id, ds.class_offset, ds.n_t, ds.split,
                        *(format(v, ".17g") for v in x), int(y)])


def _int_field(row, key, line):
    try:
        return int(row[key])
    except (TypeError, ValueError):
        raise ParseError(f"column {key!r}: expected an integer, got {row[key]!r}", line) from None


def load_csv(path) -> TaskDataset:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in (*META_COLUMNS, "label"):
            if col not in header:
                raise ParseError(f"missing column {col!r} in {path}", 1)
        feats = sorted((h for h in header if re.fullmatch(r"x\d+", h)), key=lambda h: int(h[1:]))
        if not feats:
            raise ParseError(f"no feature columns in {path}", 1)
        meta = None
        xs, ys = [], []
        for line, row in enumerate(reader, start=2):
            if None in row or any(v is None for v in row.values()):
                raise ParseError("wrong number of fields", line)
            this = (_int_field(row, "task_id", line), _int_field(row, "class_offset", line),
                    _int_field(row, "n_t", line), row["split"])
            if meta is None:
                meta = this
            elif this != meta:
                raise ParseError(
                    f"inconsistent task metadata {this}, earlier rows had {meta}", line)
            try:
                xs.append([float(row[h]) for h in feats])
            except ValueError:
                raise ParseError("non-numeric feature value", line) from None
            ys.append(_int_field(row, "label", line))
            if not 0 <= ys[-1] < this[2]:
                raise ParseError(f"label {ys[-1]} outside [0, {this[2]})", line)
    if meta is None:
        raise ParseError(f"{path} has no data rows", 2)
    task_id, offset, n_t, split = meta
    return TaskDataset(task_id, np.array(xs, dtype=float), np.array(ys, dtype=np.int64),
                       n_t, offset, split)


def save_tasks(tasks, directory) -> list:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for ds in tasks:
        p = directory / task_filename(ds.task_id, ds.split)
        save_csv(ds, p)
        paths.append(p)
    return paths


def load_tasks(directory, split: str) -> list:
    """Load every ``task<k>_<split>.csv`` in ``directory`` sorted by k."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"data directory {directory} does not exist")
    found = []
    for p in directory.iterdir():
        m = re.fullmatch(rf"task(\d+)_{split}\.csv", p.name)
        if m:
            found.append((int(m.group(1)), p))
    if not found:
        raise DataError(f"no task*_{split}.csv files in {directory}")
    tasks = [load_csv(p) for _, p in sorted(found)]
    check_tasks(tasks)
    return tasks
