"""Brute-force reference solvers used to check the planner and the learner.

These deliberately avoid the planner's greedy machinery and only rely on the
public rate/memory models.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from ferret.analytics import (
    PipelineConfig,
    StreamSpec,
    WorkerConfig,
    adaptation_rate,
    memory_footprint,
    n_workers_for,
    worker_memory,
    worker_rate,
)
from ferret.profile import (
    ModelProfile,
    PartitionScheme,
    StageStats,
    all_partitions,
    candidate_bounds,
    partition_by_bound,
    stage_stats,
)


class GuardExceeded(RuntimeError):
    """Raised when an enumeration would exceed the configured size guard."""


@dataclass(frozen=True)
class EnumerationGrid:
    """Per-stage knob choices and the enumeration size guard.

    Stage ``j`` may use accumulation ``c_a in max_accumulate`` with no omission,
    or accumulation 1 with any omission count in ``[1, P-1-j]``.  Each worker
    may also be removed.
    """

    max_accumulate: int = 3
    recompute: tuple[int, ...] = (0, 1)
    allow_removal: bool = True
    guard: int = 10**6

    def stage_options(self, P: int, j: int) -> list[tuple[int, int]]:
        opts = [(ca, 0) for ca in range(1, self.max_accumulate + 1)]
        opts += [(1, co) for co in range(1, P - j)]
        return opts

    def worker_options(self, P: int, c_r: int) -> list[WorkerConfig]:
        per_stage = [self.stage_options(P, j) for j in range(P)]
        size = math.prod(len(o) for o in per_stage)
        if size > self.guard:
            raise GuardExceeded(f"{size} per-worker configurations exceed guard {self.guard}")
        out = []
        for combo in itertools.product(*per_stage):
            c_a = tuple(ca for ca, _ in combo)
            c_o = tuple(co for _, co in combo)
            out.append(WorkerConfig(0, c_r, c_a, c_o))
        return out


def _pareto(points: list[tuple[int, float, WorkerConfig]]) -> list[tuple[int, float, WorkerConfig]]:
    """Options not dominated in (lower memory, higher rate); ties keep the first seen."""
    points = sorted(points, key=lambda p: (p[0], -p[1]))
    front = []
    best_rate = -math.inf
    for mem, rate, w in points:
        if rate > best_rate:
            front.append((mem, rate, w))
            best_rate = rate
    return front


def exhaustive_best_config(
    stats: StageStats, grid: EnumerationGrid, s: StreamSpec, M: float, t_d: float | None = None
) -> tuple[PipelineConfig | None, float]:
    """Highest-rate grid configuration with memory within ``M``.

    Every active worker contributes independently to rate and memory, so the
    search enumerates each worker's options, keeps the Pareto frontier, and
    then enumerates multisets of frontier choices over the worker slots.
    ``t_d`` fixes the slot count; without it a single worker slot is used.
    Returns ``(None, 0.0)`` when nothing (not even the empty config) fits.
    """
    P = stats.n_stages
    best_cfg, best_rate = None, -math.inf
    total = 0
    for c_r in grid.recompute:
        N = n_workers_for(stats, t_d, c_r) if t_d is not None else 1
        options = grid.worker_options(P, c_r)
        points = [(worker_memory(stats, w), worker_rate(stats, w, s), w) for w in options]
        front = _pareto(points)
        choices = list(front)
        if grid.allow_removal:
            choices = [(0, 0.0, None)] + choices
        n_multisets = math.comb(len(choices) + N - 1, N)
        total += len(options) + n_multisets
        if total > grid.guard:
            raise GuardExceeded(f"enumeration size {total} exceeds guard {grid.guard}")
        for combo in itertools.combinations_with_replacement(range(len(choices)), N):
            mem = sum(choices[k][0] for k in combo)
            if mem > M:
                continue
            rate = math.fsum(choices[k][1] for k in combo)
            if rate > best_rate:
                workers = []
                for slot, k in enumerate(combo):
                    w = choices[k][2]
                    if w is None:
                        workers.append(WorkerConfig(-1, c_r, (1,) * P, (0,) * P))
                    else:
                        workers.append(WorkerConfig(slot, c_r, w.c_a, w.c_o))
                best_cfg, best_rate = PipelineConfig(tuple(workers), N), rate
    if best_cfg is None:
        return None, 0.0
    # the frontier sums must agree with the public models on the assembled config
    assert memory_footprint(stats, best_cfg) <= M
    return best_cfg, adaptation_rate(stats, best_cfg, s)


def bound_partitions(profile: ModelProfile) -> list[PartitionScheme]:
    """Distinct partitions reachable by greedy grouping under some candidate bound."""
    out = {}
    for t_c in candidate_bounds(profile):
        L = partition_by_bound(profile, t_c)
        out.setdefault(L.bounds, L)
    return list(out.values())


def exhaustive_best_plan(
    profile: ModelProfile,
    t_d: float,
    s: StreamSpec,
    M: float,
    grid: EnumerationGrid | None = None,
    partitions: list[PartitionScheme] | None = None,
) -> tuple[tuple[int, ...], PipelineConfig | None, float]:
    """Best (partition, config) over ``partitions`` (default: all contiguous ones) and the grid."""
    grid = grid or EnumerationGrid()
    best = ((0, len(profile)), None, -math.inf)
    if partitions is None:
        partitions = all_partitions(len(profile))
    for L in partitions:
        cfg, rate = exhaustive_best_config(stage_stats(profile, L), grid, s, M, t_d)
        if cfg is not None and rate > best[2]:
            best = (L.bounds, cfg, rate)
    if best[1] is None:
        return best[0], None, 0.0
    return best


def finite_difference_grad(loss_fn, params: list[np.ndarray], h: float = 1e-5) -> list[np.ndarray]:
    """Central-difference gradient of ``loss_fn()`` w.r.t. each array in ``params``.

    ``loss_fn`` must read the arrays in place, so perturbations are visible.
    """
    if not h > 0:
        raise ValueError("step h must be > 0")
    grads = []
    for p in params:
        g = np.zeros_like(p, dtype=np.float64)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            up = loss_fn()
            flat[k] = orig - h
            down = loss_fn()
            flat[k] = orig
            gflat[k] = (up - down) / (2 * h)
        grads.append(g)
    return grads
