"""Labeled stream sources and the arrival policies of the skip baselines."""

from __future__ import annotations

import csv
import gzip
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

N_TASKS = 5
DRIFTS = ("none", "rotate", "split_tasks")
SKIP_KINDS = ("oracle", "one_skip", "random_n", "last_n")


class StreamError(ValueError):
    """Raised for unreadable or inconsistent stream sources."""


@dataclass(frozen=True)
class StreamItem:
    index: int
    arrival: float
    features: np.ndarray
    label: int


@dataclass(frozen=True)
class Stream:
    """A finite labeled stream; item ``i`` arrives at ``i * t_d``."""

    X: np.ndarray
    y: np.ndarray
    n_classes: int
    t_d: float = 1.0

    def __post_init__(self):
        if self.X.ndim != 2 or self.y.shape != (self.X.shape[0],):
            raise StreamError("features must be (n, d) and labels (n,)")
        if not self.t_d > 0:
            raise StreamError("arrival interval t_d must be > 0")

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def item(self, i: int) -> StreamItem:
        return StreamItem(i, i * self.t_d, self.X[i], int(self.y[i]))

    def __iter__(self) -> Iterator[StreamItem]:
        return (self.item(i) for i in range(len(self)))

    def with_interval(self, t_d: float) -> "Stream":
        return Stream(self.X, self.y, self.n_classes, t_d)

    def head(self, n: int) -> "Stream":
        return Stream(self.X[:n], self.y[:n], self.n_classes, self.t_d)


def synth_drift_stream(
    n: int, n_features: int, n_classes: int, drift: str = "none", seed: int = 0, t_d: float = 1.0
) -> Stream:
    """Gaussian class clusters with an optional distribution shift.

    ``rotate`` turns all cluster centres through one full revolution in a
    random plane over the stream.  ``split_tasks`` shows the classes in five
    contiguous phases, each drawing labels only from its own class group.
    """
    if n < 1:
        raise ValueError("stream length must be >= 1")
    if drift not in DRIFTS:
        raise ValueError(f"unknown drift {drift!r}; expected one of {DRIFTS}")
    if n_classes < 2 or n_features < 1:
        raise ValueError("need at least 2 classes and 1 feature")
    rng = np.random.default_rng(seed)
    centres = rng.normal(0.0, 2.0, size=(n_classes, n_features))
    if drift == "split_tasks":
        if n_classes < N_TASKS:
            raise ValueError(f"split_tasks needs at least {N_TASKS} classes")
        groups = np.array_split(np.arange(n_classes), N_TASKS)
        phase = np.minimum(np.arange(n) * N_TASKS // n, N_TASKS - 1)
        y = np.array([rng.choice(groups[p]) for p in phase], dtype=np.int64)
    else:
        y = rng.integers(0, n_classes, size=n)
    X = centres[y] + rng.normal(size=(n, n_features))
    if drift == "rotate" and n_features >= 2:
        u, v = _random_plane(rng, n_features)
        angle = 2 * np.pi * np.arange(n) / n
        base = centres[y]
        a, b = base @ u, base @ v
        cos, sin = np.cos(angle), np.sin(angle)
        shift = np.outer(a * (cos - 1) - b * sin, u) + np.outer(a * sin + b * (cos - 1), v)
        X = X + shift
    return Stream(X, y.astype(np.int64), n_classes, t_d)


def _random_plane(rng: np.random.Generator, d: int) -> tuple[np.ndarray, np.ndarray]:
    q, _ = np.linalg.qr(rng.normal(size=(d, 2)))
    return q[:, 0], q[:, 1]


def synth_tabular_stream(
    n: int = 50_000,
    seed: int = 0,
    n_continuous: int = 10,
    n_binary: int = 44,
    n_classes: int = 7,
    mean_run: float = 50.0,
    drift_period: int = 5_000,
    centre_scale: float = 0.3,
    binary_concentration: float = 8.0,
    t_d: float = 1.0,
) -> Stream:
    """Covertype-shaped synthetic stream: 54 features, 7 classes.

    Consecutive rows tend to share a label (runs of mean length
    ``mean_run``), the way spatially ordered survey data does, and class
    centres wander with period ``drift_period``.  Binary indicator columns
    are drawn from class-dependent Bernoulli rates; a larger
    ``binary_concentration`` pulls those rates toward 0.5 and makes classes
    harder to tell apart.
    """
    if n < 1:
        raise ValueError("stream length must be >= 1")
    rng = np.random.default_rng(seed)
    stay = 1.0 - 1.0 / mean_run
    prior = rng.dirichlet(np.full(n_classes, 2.0))
    y = np.empty(n, dtype=np.int64)
    y[0] = rng.choice(n_classes, p=prior)
    switch = rng.random(n) > stay
    fresh = rng.choice(n_classes, size=n, p=prior)
    for t in range(1, n):
        y[t] = fresh[t] if switch[t] else y[t - 1]
    centres = rng.normal(0.0, centre_scale, size=(n_classes, n_continuous))
    wander = rng.normal(0.0, centre_scale, size=(n_classes, n_continuous))
    phase = np.sin(2 * np.pi * np.arange(n) / drift_period)[:, None]
    cont = centres[y] + phase * wander[y] + rng.normal(0.0, 1.0, size=(n, n_continuous))
    rates = rng.beta(binary_concentration, binary_concentration, size=(n_classes, n_binary))
    binary = (rng.random((n, n_binary)) < rates[y]).astype(np.float64)
    return Stream(np.hstack([cont, binary]), y, n_classes, t_d)


def load_csv_stream(path, label_column: str, t_d: float = 1.0) -> Stream:
    """Rows in file order; every non-label column is a numeric feature.

    Files ending in ``.gz`` are decompressed.  Labels are mapped to
    ``0..K-1`` in sorted order of their distinct values.
    """
    path = Path(path)
    if not path.exists():
        raise StreamError(f"stream file not found: {path}")
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rt", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise StreamError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if label_column not in header:
            raise StreamError(f"{path}: label column {label_column!r} not found")
        li = header.index(label_column)
        feats, labels = [], []
        for rowno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise StreamError(f"{path}: row {rowno}: expected {len(header)} fields, got {len(row)}")
            try:
                feats.append([float(v) for k, v in enumerate(row) if k != li])
            except ValueError as exc:
                raise StreamError(f"{path}: row {rowno}: {exc}") from None
            labels.append(row[li].strip())
    if not labels:
        raise StreamError(f"{path}: no data rows")
    classes = sorted(set(labels), key=_label_sort_key)
    index = {c: k for k, c in enumerate(classes)}
    y = np.array([index[c] for c in labels], dtype=np.int64)
    X = np.asarray(feats, dtype=np.float64).reshape(len(labels), len(header) - 1)
    return Stream(X, y, len(classes), t_d)


def _label_sort_key(label: str):
    try:
        return (0, float(label), label)
    except ValueError:
        return (1, 0.0, label)


def save_csv_stream(stream: Stream, path, label_column: str = "label") -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([f"f{k}" for k in range(stream.n_features)] + [label_column])
    for x, y in zip(stream.X, stream.y):
        writer.writerow([repr(float(v)) for v in x] + [int(y)])
    data = buf.getvalue()
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.GzipFile(path, "wb", mtime=0) as fh:
            fh.write(data.encode())
    else:
        path.write_text(data)


@dataclass(frozen=True)
class SkipPolicy:
    """Which arrivals a single sequential learner keeps.

    ``random_n``/``last_n`` buffer the newest ``B`` unprocessed arrivals and,
    whenever the learner is free, train on ``N`` of them and drop the rest.
    """

    kind: str = "oracle"
    B: int = 1
    N: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SKIP_KINDS:
            raise ValueError(f"unknown skip policy {self.kind!r}; expected one of {SKIP_KINDS}")
        if self.kind in ("random_n", "last_n") and not 1 <= self.N <= self.B:
            raise ValueError(f"need 1 <= N <= B, got N={self.N}, B={self.B}")


@dataclass(frozen=True)
class SkipResult:
    """Kept items in processing order, with the time each one's update lands."""

    kept: np.ndarray
    finish: np.ndarray
    dropped: np.ndarray

    @property
    def keep_rate(self) -> float:
        total = len(self.kept) + len(self.dropped)
        return len(self.kept) / total if total else 0.0


def apply_skip_policy(stream: Stream, policy: SkipPolicy, processing_time: float) -> SkipResult:
    """Filter a stream through a learner that needs ``processing_time`` per item.

    The oracle learner takes no time, so it keeps everything and each update
    lands at its item's arrival.
    """
    n = len(stream)
    t_d = stream.t_d
    if policy.kind == "oracle":
        idx = np.arange(n)
        return SkipResult(idx, idx * t_d, np.array([], dtype=np.int64))
    if not processing_time > 0:
        raise ValueError("processing_time must be > 0")
    kept, finish = [], []
    if policy.kind == "one_skip":
        free_at = 0.0
        for i in range(n):
            t = i * t_d
            if t >= free_at:
                free_at = t + processing_time
                kept.append(i)
                finish.append(free_at)
    else:
        rng = np.random.default_rng(policy.seed)
        buffer: list[int] = []
        free_at = 0.0
        for i in range(n):
            t = i * t_d
            buffer.append(i)
            if len(buffer) > policy.B:
                buffer.pop(0)
            if t >= free_at and len(buffer) >= policy.N:
                if policy.kind == "last_n":
                    chosen = buffer[-policy.N:]
                else:
                    chosen = sorted(rng.choice(buffer, size=policy.N, replace=False).tolist())
                for k in chosen:
                    t += processing_time
                    kept.append(k)
                    finish.append(t)
                free_at = t
                buffer = []
    kept_arr = np.asarray(kept, dtype=np.int64)
    mask = np.ones(n, dtype=bool)
    mask[kept_arr] = False
    return SkipResult(kept_arr, np.asarray(finish, dtype=np.float64), np.flatnonzero(mask))
