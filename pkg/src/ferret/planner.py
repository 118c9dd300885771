"""Budgeted configuration search and partition enumeration."""

from __future__ import annotations

import bisect
import logging
import math
from dataclasses import dataclass, field

from ferret.analytics import (
    Move,
    PipelineConfig,
    StreamSpec,
    WorkerConfig,
    adaptation_rate,
    default_config,
    memory_footprint,
    worker_memory,
    worker_moves,
    worker_rate,
)
from ferret.profile import (
    ModelProfile,
    PartitionScheme,
    StageStats,
    candidate_bounds,
    partition_by_bound,
    stage_stats,
)

log = logging.getLogger(__name__)

_KIND_ORDER = {"accumulate": 0, "omit": 1, "remove": 2}


@dataclass(frozen=True)
class TraceEntry:
    kind: str
    worker: int
    stage: int | None
    dR: float
    dM: int

    def to_dict(self) -> dict:
        return {"kind": self.kind, "worker": self.worker, "stage": self.stage,
                "dR": self.dR, "dM": self.dM}


@dataclass(frozen=True)
class SearchResult:
    config: PipelineConfig
    rate: float
    memory: int
    infeasible: bool
    trace: tuple[TraceEntry, ...] = ()


@dataclass(frozen=True)
class PlanResult:
    L: PartitionScheme
    C: PipelineConfig
    rate: float
    memory: int
    t_c: float
    trace: tuple[TraceEntry, ...] = field(default=())
    infeasible: bool = False


def _move_key(m: Move, worker: int | None = None):
    """Sort key; the smallest key is the move to apply next.

    Moves that free memory at no rate cost come first (largest saving first);
    the rest are ranked by memory freed per unit of rate lost.  ``worker``
    overrides the move's own worker index for tie-breaking.
    """
    n = m.worker if worker is None else worker
    dR = m.dR
    if dR >= 0.0:  # also catches -0.0
        return (0, m.dM, 0.0, _KIND_ORDER[m.kind], n, m.stage or 0)
    ratio = m.dM / dR
    return (1, 0, -ratio, _KIND_ORDER[m.kind], n, m.stage or 0)


def iterative_config_search(
    stats: StageStats, t_d: float, c_r: int, s: StreamSpec, M: float
) -> SearchResult:
    """Greedily degrade the default interleaved config until it fits in ``M``."""
    if not M >= 0:
        raise ValueError("memory budget must be >= 0")
    C = default_config(stats, t_d, c_r)
    memory = memory_footprint(stats, C)
    if memory <= M:
        # no move raises the rate, so the defaults are optimal when they fit
        return SearchResult(C, adaptation_rate(stats, C, s), memory, False, ())
    trace = []
    # a move's effect depends only on its worker's knobs, so workers sharing
    # knobs share their best move and it is evaluated once per knob state
    best_cache: dict = {}

    workers = list(C.workers)
    history: list[list[WorkerConfig]] = [[] for _ in workers]

    def best_for(n: int) -> Move | None:
        w = workers[n]
        key = (w.c_r, w.c_a, w.c_o)
        if key not in best_cache:
            current = PipelineConfig(tuple(workers), C.modulus)
            useful = [m for m in worker_moves(stats, current, s, n) if m.dM < 0]
            best_cache[key] = min(useful, key=_move_key) if useful else None
        return best_cache[key]

    groups: dict = {}
    for n in C.active_workers:
        w = workers[n]
        groups.setdefault((w.c_r, w.c_a, w.c_o), []).append(n)
    def step() -> Move | None:
        nonlocal memory
        best, best_key, n = None, None, -1
        for members in groups.values():
            m = best_for(members[0])
            if m is None:
                continue
            k = _move_key(m, members[0])
            if best_key is None or k < best_key:
                best, best_key, n = m, k, members[0]
        if best is None:
            return None
        old = workers[n]
        history[n].append(old)
        workers[n] = best.changed(old)
        memory += best.dM
        trace.append(TraceEntry(best.kind, n, best.stage, best.dR, best.dM))
        old_key = (old.c_r, old.c_a, old.c_o)
        groups[old_key].remove(n)
        if not groups[old_key]:
            del groups[old_key]
        w = workers[n]
        if w.active:
            bisect.insort(groups.setdefault((w.c_r, w.c_a, w.c_o), []), n)
        return best

    while memory > M:
        if step() is None:
            break
    if memory > M:
        C = PipelineConfig(tuple(workers), C.modulus)
        return SearchResult(C, adaptation_rate(stats, C, s), memory_footprint(stats, C), True, tuple(trace))

    # The first state within budget is the plain greedy answer.  Carrying on
    # to the next worker removal can free enough memory to restore more than
    # the removal cost, so both states get the undo pass and the better wins.
    results = [_finish(stats, s, M, C.modulus, workers, history, memory, trace)]
    while True:
        m = step()
        if m is None or m.kind == "remove":
            break
    if m is not None and groups:
        results.append(_finish(stats, s, M, C.modulus, workers, history, memory, trace))
    best = results[0]
    for r in results[1:]:
        if r.rate > best.rate:
            best = r
    return best


def _finish(stats, s, M, modulus, workers, history, memory, trace) -> SearchResult:
    workers = list(workers)
    history = [list(h) for h in history]
    trace = list(trace)
    _reclaim(stats, s, M, workers, history, memory, trace)
    C = PipelineConfig(tuple(workers), modulus)
    rate = adaptation_rate(stats, C, s)
    memory = memory_footprint(stats, C)
    return SearchResult(C, rate, memory, memory > M or not C.active_workers, tuple(trace))


def _reclaim(stats, s, M, workers, history, memory, trace) -> int:
    """Undo earlier moves while the budget has room for them.

    Removing a worker can free more memory than the budget needed, leaving
    other workers degraded for nothing.  Each step restores one worker to its
    previous knob state, picking the largest rate gain per unit of memory.
    """
    cache: dict = {}

    def cost(w: WorkerConfig) -> tuple[int, float]:
        key = (w.c_d >= 0, w.c_r, w.c_a, w.c_o)
        if key not in cache:
            cache[key] = (worker_memory(stats, w), worker_rate(stats, w, s))
        return cache[key]

    while True:
        best = None
        for n, now in enumerate(workers):
            if not history[n]:
                continue
            (m_prev, r_prev), (m_now, r_now) = cost(history[n][-1]), cost(now)
            dM, dR = m_prev - m_now, r_prev - r_now
            if memory + dM > M or dR <= 0:
                continue
            key = (-dR / dM if dM > 0 else -math.inf, -dR, n)
            if best is None or key < best[0]:
                best = (key, n, dR, dM)
        if best is None:
            return memory
        _, n, dR, dM = best
        workers[n] = history[n].pop()
        memory += dM
        trace.append(TraceEntry("restore", n, None, dR, dM))


def search(stats: StageStats, t_d: float, s: StreamSpec, M: float) -> SearchResult:
    """Best of the plain and the all-workers-recompute branches."""
    plain = iterative_config_search(stats, t_d, 0, s, M)
    recomp = iterative_config_search(stats, t_d, 1, s, M)
    if plain.infeasible != recomp.infeasible:
        return recomp if plain.infeasible else plain
    return recomp if recomp.rate > plain.rate else plain


def plan(profile: ModelProfile, t_d: float, s: StreamSpec, M: float) -> PlanResult:
    """Try every candidate stage bound, keep the highest-rate feasible plan.

    A partition's unconstrained rate bounds what any budget allows on it, so
    partitions are searched in order of that bound and the scan stops once
    the bound falls below the best feasible rate.  Ties between equal rates
    go to the earlier candidate bound, as in a plain scan.
    """
    partitions = []
    seen = set()
    for t_c in candidate_bounds(profile):
        L = partition_by_bound(profile, t_c)
        # larger bounds often regroup into a partition already searched
        if L.bounds in seen:
            continue
        seen.add(L.bounds)
        stats = stage_stats(profile, L)
        C = default_config(stats, t_d)
        partitions.append((adaptation_rate(stats, C, s), len(partitions), L, t_c, stats))
    partitions.sort(key=lambda p: (-p[0], p[1]))
    best: PlanResult | None = None
    best_index = 0
    for bound, index, L, t_c, stats in partitions:
        if best is not None and not best.infeasible and bound < best.rate:
            break
        res = search(stats, t_d, s, M)
        cand = PlanResult(L, res.config, res.rate, res.memory, t_c, res.trace, res.infeasible)
        if best is None or _better(cand, best) or (_tied(cand, best) and index < best_index):
            best, best_index = cand, index
    assert best is not None
    return best


def _better(a: PlanResult, b: PlanResult) -> bool:
    if a.infeasible != b.infeasible:
        return b.infeasible
    return a.rate > b.rate


def _tied(a: PlanResult, b: PlanResult) -> bool:
    return a.infeasible == b.infeasible and a.rate == b.rate


def min_feasible_budget(profile: ModelProfile, t_d: float, s: StreamSpec) -> int:
    """Smallest budget for which some partition keeps at least one worker."""
    best = math.inf
    for t_c in candidate_bounds(profile):
        stats = stage_stats(profile, partition_by_bound(profile, t_c))
        for c_r in (0, 1):
            # a single worker with every omittable stage omitted
            per_stage = [stats.w[i] + stats.a[i] - c_r * stats.inner_a[i] for i in range(stats.n_stages)]
            best = min(best, sum(per_stage))
    return int(best)
