"""Per-layer cost profiles, stage aggregation and candidate partition schemes."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

PROFILE_HEADER = "ferret-profile v1"
PROFILE_FIELDS = ("t_f", "t_b", "w", "a")


class ProfileError(ValueError):
    """Raised for malformed profile files or invalid layer records."""


class BoundError(ValueError):
    """Raised when a stage time bound cannot hold the largest layer."""


@dataclass(frozen=True)
class LayerProfile:
    t_f: float
    t_b: float
    w: int
    a: int

    @property
    def t(self) -> float:
        return self.t_f + self.t_b


@dataclass(frozen=True)
class ModelProfile:
    layers: tuple[LayerProfile, ...]

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise ProfileError("profile must contain at least one layer")
        for i, layer in enumerate(self.layers):
            _check_layer(i, layer)

    def __len__(self) -> int:
        return len(self.layers)

    @property
    def layer_times(self) -> list[float]:
        return [layer.t_f + layer.t_b for layer in self.layers]

    @property
    def max_layer_time(self) -> float:
        return max(self.layer_times)

    @property
    def max_forward(self) -> float:
        return max(layer.t_f for layer in self.layers)

    @property
    def total_time(self) -> float:
        return math.fsum(self.layer_times)


def _check_layer(i: int, layer: LayerProfile) -> None:
    if not layer.t_f > 0:
        raise ProfileError(f"layer {i}: t_f must be > 0")
    if not layer.t_b > 0:
        raise ProfileError(f"layer {i}: t_b must be > 0")
    if layer.w < 0:
        raise ProfileError(f"layer {i}: w must be >= 0")
    if layer.a < 0:
        raise ProfileError(f"layer {i}: a must be >= 0")


@dataclass(frozen=True)
class PartitionScheme:
    """Stage boundaries ``[L_0, ..., L_P]``; stage ``j`` owns layers ``[L_j, L_{j+1})``."""

    bounds: tuple[int, ...]

    def __post_init__(self):
        b = tuple(int(x) for x in self.bounds)
        object.__setattr__(self, "bounds", b)
        if len(b) < 2:
            raise ValueError("partition needs at least one stage")
        if b[0] != 0:
            raise ValueError("partition must start at layer 0")
        if any(b1 <= b0 for b0, b1 in zip(b, b[1:])):
            raise ValueError(f"partition bounds must be strictly increasing: {list(b)}")

    @property
    def n_stages(self) -> int:
        return len(self.bounds) - 1

    def stage_of(self, layer: int) -> int:
        for j in range(self.n_stages):
            if self.bounds[j] <= layer < self.bounds[j + 1]:
                return j
        raise IndexError(layer)

    def check(self, profile: ModelProfile) -> None:
        if self.bounds[-1] != len(profile):
            raise ValueError(
                f"partition ends at {self.bounds[-1]} but profile has {len(profile)} layers"
            )


@dataclass(frozen=True)
class StageStats:
    """Stage-level aggregates of a partitioned profile.

    ``t_f``/``t_b`` are the slowest stage's summed forward/backward times, which
    is the per-stage cost every pipeline stage is scheduled with.
    """

    w: tuple[int, ...]
    a: tuple[int, ...]
    inner_a: tuple[int, ...]
    t_f: float
    t_b: float

    def __post_init__(self):
        for name in ("w", "a", "inner_a"):
            object.__setattr__(self, name, tuple(int(x) for x in getattr(self, name)))
        if not (len(self.w) == len(self.a) == len(self.inner_a) >= 1):
            raise ValueError("stage arrays must be non-empty and equally long")
        if any(i > a for i, a in zip(self.inner_a, self.a)):
            raise ValueError("inner activations cannot exceed stage activations")
        if not (self.t_f > 0 and self.t_b > 0):
            raise ValueError("stage times must be positive")

    @property
    def n_stages(self) -> int:
        return len(self.w)

    @classmethod
    def uniform(cls, n_stages: int, w: int, a: int, t_f: float, t_b: float, inner_a: int = 0):
        return cls((w,) * n_stages, (a,) * n_stages, (inner_a,) * n_stages, t_f, t_b)


def load_profile(path) -> ModelProfile:
    path = Path(path)
    if not path.exists():
        raise ProfileError(f"profile file not found: {path}")
    lines = [ln.strip() for ln in path.read_text().splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines or lines[0] != PROFILE_HEADER:
        found = lines[0] if lines else "<empty>"
        raise ProfileError(f"unsupported profile header {found!r}, expected {PROFILE_HEADER!r}")
    if len(lines) < 2 or tuple(f.strip() for f in lines[1].split(",")) != PROFILE_FIELDS:
        raise ProfileError(f"profile field row must be {','.join(PROFILE_FIELDS)}")
    layers = []
    for i, row in enumerate(lines[2:]):
        parts = [p.strip() for p in row.split(",")]
        if len(parts) != len(PROFILE_FIELDS):
            raise ProfileError(f"layer {i}: expected {len(PROFILE_FIELDS)} fields, got {len(parts)}")
        try:
            t_f, t_b = float(parts[0]), float(parts[1])
            w, a = int(parts[2]), int(parts[3])
        except ValueError as exc:
            raise ProfileError(f"layer {i}: {exc}") from None
        layer = LayerProfile(t_f, t_b, w, a)
        _check_layer(i, layer)
        layers.append(layer)
    if not layers:
        raise ProfileError("profile contains no layers")
    return ModelProfile(tuple(layers))


def save_profile(profile: ModelProfile, path) -> None:
    rows = [PROFILE_HEADER, ",".join(PROFILE_FIELDS)]
    rows += [f"{l.t_f!r},{l.t_b!r},{l.w},{l.a}" for l in profile.layers]
    Path(path).write_text("\n".join(rows) + "\n")


def synth_profile(n_layers: int, seed: int = 0, cost_model: str = "uniform") -> ModelProfile:
    """Synthetic layer costs for desk-scale experiments.

    ``uniform`` draws comparable layers; ``pyramid`` makes early layers
    activation-heavy and late layers parameter-heavy, like a conv net
    tapering into a classifier head.  Backward passes cost 1.5-2.5x forward.
    """
    if n_layers < 1:
        raise ValueError("n_layers must be >= 1")
    if cost_model not in ("uniform", "pyramid"):
        raise ValueError(f"unknown cost model {cost_model!r}")
    rng = np.random.default_rng(seed)
    layers = []
    for i in range(n_layers):
        if cost_model == "uniform":
            t_f = float(rng.uniform(0.8, 1.2))
            w = int(rng.integers(800, 1200))
            a = int(rng.integers(80, 120))
        else:
            frac = i / max(n_layers - 1, 1)
            t_f = float(rng.uniform(0.8, 1.2) * (1.5 - frac))
            w = int(rng.integers(200, 400) * (1 + 4 * frac))
            a = int(rng.integers(200, 400) * (1 + 4 * (1 - frac)))
        t_b = float(t_f * rng.uniform(1.5, 2.5))
        layers.append(LayerProfile(t_f, t_b, w, a))
    return ModelProfile(tuple(layers))


def partition_by_bound(profile: ModelProfile, t_c: float) -> PartitionScheme:
    """Greedy left-to-right grouping of consecutive layers under a stage time bound."""
    biggest = profile.max_layer_time
    if t_c < biggest:
        raise BoundError(f"stage bound {t_c} is below the largest layer time {biggest}")
    bounds = [0]
    acc = 0.0
    for i, t in enumerate(profile.layer_times):
        acc += t
        if acc > t_c:
            bounds.append(i)
            acc = t
    bounds.append(len(profile))
    return PartitionScheme(tuple(bounds))


def stage_stats(profile: ModelProfile, L: PartitionScheme) -> StageStats:
    L.check(profile)
    w, a, inner, tf, tb = [], [], [], [], []
    for lo, hi in zip(L.bounds, L.bounds[1:]):
        layers = profile.layers[lo:hi]
        w.append(sum(l.w for l in layers))
        a.append(sum(l.a for l in layers))
        # recomputation keeps only the stage's boundary output; everything
        # after the first layer of the stage can be regenerated
        inner.append(sum(l.a for l in profile.layers[lo + 1 : hi]))
        tf.append(math.fsum(l.t_f for l in layers))
        tb.append(math.fsum(l.t_b for l in layers))
    return StageStats(tuple(w), tuple(a), tuple(inner), max(tf), max(tb))


def candidate_bounds(profile: ModelProfile) -> list[float]:
    """All contiguous-span stage times that can hold the largest single layer."""
    times = profile.layer_times
    floor = max(times)
    out = set()
    n = len(times)
    for i in range(n):
        acc = 0.0
        for k in range(i, n):
            acc += times[k]
            if acc >= floor:
                out.add(acc)
    out.add(math.fsum(times) if n > 1 else times[0])
    return sorted(out)


def all_partitions(n_layers: int) -> list[PartitionScheme]:
    """Every contiguous partition of ``n_layers`` layers (2^(n-1) of them)."""
    schemes = []
    for mask in range(1 << (n_layers - 1)):
        cuts = [i + 1 for i in range(n_layers - 1) if mask >> i & 1]
        schemes.append(PartitionScheme(tuple([0, *cuts, n_layers])))
    return schemes


def layer_times_of(profile: ModelProfile, L: PartitionScheme) -> Sequence[float]:
    return [math.fsum(profile.layer_times[lo:hi]) for lo, hi in zip(L.bounds, L.bounds[1:])]
