"""Closed-form adaptation rate and memory models for interleaved pipeline workers.

A worker runs the whole model as a ``P``-stage pipeline.  ``N`` workers are
interleaved over the stream: item ``i`` goes to the worker whose delay
``c_d`` equals ``i mod modulus``.  Four knobs trade adaptation rate for
memory:

* recompute (``c_r``): drop inner activations and redo the forward pass,
* accumulate (``c_a[j]``): apply an update every ``c_a[j]`` backwards,
* omit (``c_o[j]``): skip backwards that would need stale weights,
* remove (``c_d = -1``): shut the worker down and drop its residue class.
"""

from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

from ferret.profile import StageStats

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Raised for configurations violating the pipeline invariants."""


class InapplicableMove(ValueError):
    """Raised when a memory-saving move cannot be applied to a worker or stage."""


@dataclass(frozen=True)
class WorkerConfig:
    c_d: int
    c_r: int
    c_a: tuple[int, ...]
    c_o: tuple[int, ...]

    def __post_init__(self):
        # the planner builds many of these from tuples it already owns
        if type(self.c_a) is not tuple:
            object.__setattr__(self, "c_a", tuple(int(x) for x in self.c_a))
        if type(self.c_o) is not tuple:
            object.__setattr__(self, "c_o", tuple(int(x) for x in self.c_o))

    @property
    def active(self) -> bool:
        return self.c_d >= 0

    @classmethod
    def default(cls, n_stages: int, delay: int, c_r: int = 0) -> "WorkerConfig":
        return cls(delay, c_r, (1,) * n_stages, (0,) * n_stages)

    def validate(self, n_stages: int) -> None:
        P = n_stages
        if self.c_d < -1:
            raise ConfigError(f"delay {self.c_d} must be >= -1")
        if self.c_r not in (0, 1):
            raise ConfigError(f"recompute flag must be 0 or 1, got {self.c_r}")
        if len(self.c_a) != P or len(self.c_o) != P:
            raise ConfigError(f"accumulation/omission lists must have {P} entries")
        for j, (ca, co) in enumerate(zip(self.c_a, self.c_o)):
            if ca < 1:
                raise ConfigError(f"stage {j}: accumulation count must be >= 1")
            if not 0 <= co <= P - 1 - j:
                raise ConfigError(f"stage {j}: omission count {co} outside [0, {P - 1 - j}]")
            if co > 0 and ca != 1:
                raise ConfigError(f"stage {j}: omission requires accumulation count 1")


@dataclass(frozen=True)
class PipelineConfig:
    workers: tuple[WorkerConfig, ...]
    modulus: int

    def __post_init__(self):
        object.__setattr__(self, "workers", tuple(self.workers))

    @property
    def n_stages(self) -> int:
        return len(self.workers[0].c_a)

    @property
    def active_workers(self) -> list[int]:
        return [n for n, w in enumerate(self.workers) if w.active]

    def validate(self, n_stages: int | None = None) -> None:
        if not self.workers:
            raise ConfigError("a pipeline needs at least one worker")
        P = self.n_stages if n_stages is None else n_stages
        if self.modulus < 1:
            raise ConfigError("modulus must be >= 1")
        seen = set()
        for w in self.workers:
            w.validate(P)
            if w.active:
                if w.c_d >= self.modulus:
                    raise ConfigError(f"delay {w.c_d} outside [0, {self.modulus})")
                if w.c_d in seen:
                    raise ConfigError(f"duplicate worker delay {w.c_d}")
                seen.add(w.c_d)

    def with_worker(self, n: int, worker: WorkerConfig) -> "PipelineConfig":
        workers = list(self.workers)
        workers[n] = worker
        return replace(self, workers=tuple(workers))


@dataclass(frozen=True)
class StreamSpec:
    """Arrival interval ``t_d``, value decay ``c`` and initial item value ``V_D``."""

    t_d: float
    c: float = 0.0
    V_D: float = 1.0
    T: float = math.inf

    def __post_init__(self):
        if not self.t_d > 0:
            raise ValueError("t_d must be > 0")
        if self.c < 0:
            raise ValueError("decay c must be >= 0")
        if not self.V_D > 0:
            raise ValueError("V_D must be > 0")
        if not self.T > 0:
            raise ValueError("horizon T must be > 0")


@dataclass(frozen=True)
class RateMemory:
    rate: float
    memory: int


def default_decay(stats: StageStats) -> float:
    """Decay under which an item's value halves over one forward+backward pass."""
    return math.log(2.0) / (stats.t_f + stats.t_b)


def iteration_time(stats: StageStats, c_r: int) -> float:
    return stats.t_f + stats.t_b + c_r * stats.t_f


def n_workers_for(stats: StageStats, t_d: float, c_r: int) -> int:
    """Number of interleaved workers needed to keep up with the arrival rate."""
    q = iteration_time(stats, c_r) / t_d
    n = math.ceil(q)
    # guard against 2.0000000000000004 style round-up
    if n - q > 1 - 1e-9:
        n -= 1
    return max(n, 1)


def default_config(stats: StageStats, t_d: float, c_r: int = 0) -> PipelineConfig:
    N = n_workers_for(stats, t_d, c_r)
    P = stats.n_stages
    return PipelineConfig(tuple(WorkerConfig.default(P, n, c_r) for n in range(N)), N)


def omission_period(c_o: Sequence[int], i: int) -> int:
    """Cadence divisor of stage ``i``: LCM of ``c_o[k] + 1`` over ``k >= i``."""
    return math.lcm(*(co + 1 for co in c_o[i:]))


def _periods(c_o: Sequence[int]) -> list[int]:
    out = [1] * (len(c_o) + 1)
    for i in range(len(c_o) - 1, -1, -1):
        out[i] = math.lcm(out[i + 1], c_o[i] + 1)
    return out[:-1]


class _ValueTable:
    """Memoized per-stage value terms for one (stats, stream, recompute) triple.

    ``prefix(i, k)`` is the summed decayed value of the ``k`` youngest items in
    a stage-``i`` update group, per unit iteration time and before the
    omission period is applied.
    """

    def __init__(self, stats: StageStats, s: StreamSpec, c_r: int):
        P = stats.n_stages
        self._stats, self._s, self._c_r = stats, s, c_r
        total = sum(stats.w)
        self.share = [w / total for w in stats.w] if total else [1.0 / P] * P
        self.terms = [[] for _ in range(P)]
        self._prefix = [[0.0] for _ in range(P)]
        # (stage, c_a, period) -> (step, dR, dM) of an accumulation move
        self.accumulate_moves: dict = {}

    def _grow(self, i: int, n: int) -> None:
        row = self.terms[i]
        while len(row) < n:
            row.append(value_term(self._stats, self._s, self._c_r, i, len(row), 1))
        pre = self._prefix[i]
        while len(pre) <= n:
            pre.append(math.fsum(row[: len(pre)]))

    def prefix(self, i: int, k: int) -> float:
        if k >= len(self._prefix[i]):
            self._grow(i, k)
        return self._prefix[i][k]

    def group_sum(self, i: int, lo: int, hi: int) -> float:
        if hi > len(self.terms[i]):
            self._grow(i, hi)
        return math.fsum(self.terms[i][lo:hi])

    def stage(self, i: int, c_a: int, period: int) -> float:
        """Weighted stage-``i`` rate for accumulation ``c_a`` and omission ``period``."""
        return self.share[i] * self.prefix(i, c_a) / (c_a * period)


@functools.lru_cache(maxsize=256)
def _table(stats: StageStats, s: StreamSpec, c_r: int) -> _ValueTable:
    return _ValueTable(stats, s, c_r)


def value_term(stats: StageStats, s: StreamSpec, c_r: int, i: int, j: int, period: int) -> float:
    """Value per unit time of the ``j``-th oldest item in a stage-``i`` update group."""
    P = stats.n_stages
    tf, tb = stats.t_f, stats.t_b
    latency = (P + j) * tf + (P - i + j) * tb + c_r * (P - i + j) * tf
    return math.exp(-s.c * latency) * s.V_D / (period * (tf + tb + c_r * tf))


def worker_rate(stats: StageStats, worker: WorkerConfig, s: StreamSpec) -> float:
    if not worker.active:
        return 0.0
    tab = _table(stats, s, worker.c_r)
    periods = _periods(worker.c_o)
    return math.fsum(tab.stage(i, worker.c_a[i], periods[i]) for i in range(stats.n_stages))


def adaptation_rate(stats: StageStats, C: PipelineConfig, s: StreamSpec) -> float:
    C.validate(stats.n_stages)
    return math.fsum(worker_rate(stats, w, s) for w in C.workers)


def slot_size(stats: StageStats, c_r: int, i: int) -> int:
    """Memory of one stored version of stage ``i``: weights plus kept activations."""
    return stats.w[i] + stats.a[i] - c_r * stats.inner_a[i]


def multiplicity(worker: WorkerConfig, i: int) -> int:
    P = len(worker.c_a)
    m = 1 + math.ceil((P - i - 1) / worker.c_a[i]) - worker.c_o[i]
    if m < 1:
        raise ConfigError(f"stage {i}: stored version count {m} < 1")
    return m


def worker_memory(stats: StageStats, worker: WorkerConfig) -> int:
    if not worker.active:
        return 0
    return sum(multiplicity(worker, i) * slot_size(stats, worker.c_r, i) for i in range(stats.n_stages))


def memory_footprint(stats: StageStats, C: PipelineConfig) -> int:
    C.validate(stats.n_stages)
    return sum(worker_memory(stats, w) for w in C.workers)


def rate_memory(stats: StageStats, C: PipelineConfig, s: StreamSpec) -> RateMemory:
    return RateMemory(adaptation_rate(stats, C, s), memory_footprint(stats, C))


# ---------------------------------------------------------------------------
# memory-saving moves


@dataclass(frozen=True)
class Move:
    """One applicable memory-saving move and its predicted effect."""

    kind: str  # "recompute" | "accumulate" | "omit" | "remove"
    worker: int
    stage: int | None
    dR: float
    dM: int
    base: WorkerConfig = field(repr=False, compare=False)
    d_ca: int | None = None

    def changed(self, w: WorkerConfig) -> WorkerConfig:
        """Worker ``w`` with this move's knob change applied."""
        j = self.stage
        if self.kind == "recompute":
            return WorkerConfig(w.c_d, 1, w.c_a, w.c_o)
        if self.kind == "remove":
            return WorkerConfig(-1, w.c_r, w.c_a, w.c_o)
        c_a, c_o = list(w.c_a), list(w.c_o)
        if self.kind == "accumulate":
            c_a[j] += self.d_ca
        elif j < len(c_a) - 1:
            c_a[j] = 1
            c_o[j] = len(c_a) - 1 - j
        return WorkerConfig(w.c_d, w.c_r, tuple(c_a), tuple(c_o))

    @property
    def new_worker(self) -> WorkerConfig:
        return self.changed(self.base)

    def apply(self, C: PipelineConfig) -> PipelineConfig:
        # knobs on other stages may have moved since this move was evaluated
        return C.with_worker(self.worker, self.changed(C.workers[self.worker]))


def _active_worker(C: PipelineConfig, n: int) -> WorkerConfig:
    w = C.workers[n]
    if not w.active:
        raise InapplicableMove(f"worker {n} is removed")
    return w


def delta_recompute(stats: StageStats, C: PipelineConfig, s: StreamSpec, n: int) -> Move:
    """Turn on activation recomputation for worker ``n``."""
    w = _active_worker(C, n)
    if w.c_r:
        raise InapplicableMove(f"worker {n} already recomputes")
    with_rc, without = _table(stats, s, 1), _table(stats, s, 0)
    periods = _periods(w.c_o)
    dR = math.fsum(
        with_rc.stage(i, w.c_a[i], periods[i]) - without.stage(i, w.c_a[i], periods[i])
        for i in range(stats.n_stages)
    )
    dM = -sum(multiplicity(w, i) * stats.inner_a[i] for i in range(stats.n_stages))
    return Move("recompute", n, None, dR, dM, w)


def accumulate_step(P: int, j: int, c_a: int) -> int | None:
    """Smallest accumulation increase that actually frees a stored version.

    Returns ``None`` when no finite increase helps (only one extra version is
    stored, or none at all), which is where omission takes over.
    """
    s = P - 1 - j
    if s <= 0:
        return None
    q = -(-s // c_a)
    if q <= 1:
        return None
    return -(-s // (q - 1)) - c_a


def _accumulate(stats, tab, w, n, j, periods) -> Move:
    ca = w.c_a[j]
    key = (j, ca, periods[j])
    hit = tab.accumulate_moves.get(key)
    if hit is None:
        P = stats.n_stages
        d = accumulate_step(P, j, ca)
        added = tab.group_sum(j, ca, ca + d)
        kept = tab.prefix(j, ca)
        dR = tab.share[j] * (added / (ca + d) - d * kept / ((ca + d) * ca)) / periods[j]
        s_ = P - 1 - j
        freed = -(-s_ // ca) - -(-s_ // (ca + d))
        hit = tab.accumulate_moves[key] = (d, dR, -freed * slot_size(stats, w.c_r, j))
    d, dR, dM = hit
    return Move("accumulate", n, j, dR, dM, w, d_ca=d)


def delta_accumulate(stats: StageStats, C: PipelineConfig, s: StreamSpec, n: int, j: int) -> Move:
    """Raise the accumulation count of stage ``j`` on worker ``n``."""
    w = _active_worker(C, n)
    if w.c_o[j] != 0:
        raise InapplicableMove(f"worker {n} stage {j} already omits backwards")
    if accumulate_step(stats.n_stages, j, w.c_a[j]) is None:
        raise InapplicableMove(f"worker {n} stage {j}: accumulation cannot free memory")
    return _accumulate(stats, _table(stats, s, w.c_r), w, n, j, _periods(w.c_o))


def _omit(stats, tab, w, n, j, periods, rates) -> Move:
    P = stats.n_stages
    cadence = P - j
    # only stages at or before j see stage j in their omission window
    terms = [rates[i] * (periods[i] / math.lcm(periods[i], cadence) - 1.0) for i in range(j)]
    terms.append(tab.stage(j, 1, math.lcm(periods[j], cadence)) - rates[j])
    dM = -(-(-(P - j - 1) // w.c_a[j])) * slot_size(stats, w.c_r, j)
    return Move("omit", n, j, math.fsum(terms), dM, w)


def delta_omit(stats: StageStats, C: PipelineConfig, s: StreamSpec, n: int, j: int) -> Move:
    """Skip every backward of stage ``j`` on worker ``n`` that would need old weights."""
    w = _active_worker(C, n)
    P = stats.n_stages
    if w.c_o[j] != 0:
        raise InapplicableMove(f"worker {n} stage {j} already omits backwards")
    if j == P - 1:
        # nothing stored beyond the current version, so nothing to omit
        return Move("omit", n, j, 0.0, 0, w)
    if accumulate_step(P, j, w.c_a[j]) is not None:
        raise InapplicableMove(f"worker {n} stage {j}: accumulation still applies")
    tab = _table(stats, s, w.c_r)
    periods = _periods(w.c_o)
    rates = [tab.stage(i, w.c_a[i], periods[i]) for i in range(P)]
    return _omit(stats, tab, w, n, j, periods, rates)


def delta_remove(stats: StageStats, C: PipelineConfig, s: StreamSpec, n: int) -> Move:
    """Shut worker ``n`` down; its residue class of the stream is dropped."""
    move = _remove_move(stats, C, s, n)
    if len(C.active_workers) == 1:
        log.warning("removing the last active worker; adaptation rate drops to 0")
    return move


def _remove_move(stats: StageStats, C: PipelineConfig, s: StreamSpec, n: int) -> Move:
    w = _active_worker(C, n)
    P = stats.n_stages
    if any(w.c_o[j] == 0 for j in range(P - 1)):
        raise InapplicableMove(f"worker {n} still stores extra versions")
    return Move("remove", n, None, -worker_rate(stats, w, s), -worker_memory(stats, w), w)


def worker_moves(
    stats: StageStats, C: PipelineConfig, s: StreamSpec, n: int, stages: Sequence[int] | None = None
) -> list[Move]:
    """Applicable accumulate/omit moves on one worker (optionally only ``stages``), then removal."""
    w = C.workers[n]
    if not w.active:
        return []
    P = stats.n_stages
    tab = _table(stats, s, w.c_r)
    periods = _periods(w.c_o)
    rates = None
    moves = []
    for j in range(P - 1) if stages is None else stages:
        if w.c_o[j] != 0 or j == P - 1:
            continue
        if accumulate_step(P, j, w.c_a[j]) is not None:
            moves.append(_accumulate(stats, tab, w, n, j, periods))
        else:
            if rates is None:
                rates = [tab.stage(i, w.c_a[i], periods[i]) for i in range(P)]
            moves.append(_omit(stats, tab, w, n, j, periods, rates))
    if stages is None and all(w.c_o[j] != 0 for j in range(P - 1)):
        moves.append(_remove_move(stats, C, s, n))
    return moves
