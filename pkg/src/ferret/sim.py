"""Virtual-time simulator of interleaved 1F1B pipeline workers.

Every (worker, stage) pair is its own device.  Items are routed by residue
class, flow forward through the stages and back, and each device applies an
update to the shared stage parameters every ``c_a`` backward passes.  The
simulator records per-item latency, per-update staleness and the memory held
by stored weight versions and activations, which is what the closed-form
models predict.

Memory accounting per device: the current weights are always resident; each
in-flight item that will run a backward keeps a stash of the weight version
it read plus its stage activations.  Items that read the same version share
one stash slot.  A device refreshes its weight copy from the shared model
only when it commits an update, so the versions it holds are its own commits.
"""

from __future__ import annotations

import heapq
import json
import math
from collections import Counter, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

from ferret.analytics import PipelineConfig, StreamSpec
from ferret.profile import StageStats

TRACE_HEADER = "ferret-trace v1"


class SimEvent(NamedTuple):
    time: float
    kind: str  # arrival | drop | forward | recompute | backward | update | commit
    worker: int
    stage: int
    item: int
    staleness: int = 0
    version: int = 0


class UpdateRecord(NamedTuple):
    time: float
    worker: int
    stage: int
    version: int  # shared stage version after this update
    items: tuple[int, ...]
    staleness: tuple[int, ...]


@dataclass
class SimTrace:
    events: list[SimEvent]
    n_items: int
    n_stages: int
    arrivals: list[float]
    per_item_latency: list[float]
    peak_memory: int
    peak_live: int
    device_peaks: dict[tuple[int, int], int]
    update_staleness: dict[int, int]
    updates: list[UpdateRecord]
    weight_share: tuple[float, ...]
    t_d: float
    realized: float = field(default=0.0)

    @property
    def dropped(self) -> list[int]:
        return [i for i, lat in enumerate(self.per_item_latency) if math.isinf(lat)]

    @property
    def max_staleness(self) -> int:
        return max(self.update_staleness, default=0)


# task kinds; backward sorts first so it has priority on a free device
_BWD, _FWD = 0, 1


class _Device:
    __slots__ = (
        "worker", "stage", "c_a", "c_o", "window", "recent", "slot", "queue", "busy",
        "epoch", "pulled", "refs", "own_count", "group", "mem", "peak", "do",
    )

    def __init__(self, worker: int, stage: int, P: int, c_a: int, c_o: int, slot: int):
        self.worker, self.stage = worker, stage
        self.c_a, self.c_o = c_a, c_o
        self.window = P - stage - 1
        self.recent: deque = deque(maxlen=max(self.window, 1))
        self.slot = slot  # activation memory of one stash
        self.queue: list = []
        self.busy = False
        self.epoch = 0  # local commit count
        self.pulled = 0  # shared version held by the local weight copy
        self.refs: Counter = Counter()  # epoch -> stashing items
        self.own_count = 0
        self.group: list[int] = []
        self.mem = 0
        self.peak = 0
        self.do: dict[int, bool] = {}

    def decide(self, item: int) -> bool:
        """Whether this stage runs a real backward for ``item``.

        Out of every ``P - stage`` consecutive items at most
        ``P - stage - c_o`` keep their stash, which bounds stored versions.
        """
        if self.window == 0:
            keep = True
        else:
            keep = sum(self.recent) <= self.window - self.c_o
            self.recent.append(1 if keep else 0)
        self.do[item] = keep
        return keep

    def memory(self, w: int) -> int:
        held = len(self.refs)
        versions = held + (0 if self.epoch in self.refs else 1)
        return versions * w + held * self.slot


def simulate(stats: StageStats, C: PipelineConfig, s: StreamSpec, n_items: int) -> SimTrace:
    """Run ``n_items`` arrivals spaced ``s.t_d`` apart through the configured pipeline."""
    C.validate(stats.n_stages)
    P = stats.n_stages
    tf, tb = stats.t_f, stats.t_b
    total_w = sum(stats.w)
    share = tuple(w / total_w for w in stats.w) if total_w else (1.0 / P,) * P

    by_delay = {w.c_d: n for n, w in enumerate(C.workers) if w.active}
    devices: dict[tuple[int, int], _Device] = {}
    for n in sorted(by_delay.values()):
        w = C.workers[n]
        for i in range(P):
            slot = stats.a[i] - w.c_r * stats.inner_a[i]
            dev = _Device(n, i, P, w.c_a[i], w.c_o[i], slot)
            dev.mem = dev.peak = stats.w[i]
            devices[(n, i)] = dev
    order = sorted(devices)

    events: list[SimEvent] = []
    log = events.append
    version = [0] * P
    reads: dict[tuple[int, int], int] = {}
    real: dict[tuple[int, int], bool] = {}
    latency = [math.inf] * n_items
    arrivals = [k * s.t_d for k in range(n_items)]
    staleness_hist: Counter = Counter()
    updates: list[UpdateRecord] = []

    heap: list = []
    seq = 0
    for k in range(n_items):
        heap.append((arrivals[k], seq, "arrive", k))
        seq += 1
    heapq.heapify(heap)

    live = sum(d.mem for d in devices.values())
    peak_live = live

    def enqueue(dev: _Device, kind: int, item: int) -> None:
        heapq.heappush(dev.queue, (kind, item))

    while heap:
        now = heap[0][0]
        touched = set()
        while heap and heap[0][0] == now:
            _, _, what, payload = heapq.heappop(heap)
            if what == "arrive":
                item = payload
                log(SimEvent(now, "arrival", -1, -1, item))
                n = by_delay.get(item % C.modulus)
                if n is None:
                    log(SimEvent(now, "drop", -1, -1, item))
                    continue
                head = devices[(n, 0)]
                if any(kind == _FWD for kind, _ in head.queue):
                    # one item may wait for a busy worker; later ones are skipped
                    log(SimEvent(now, "drop", n, -1, item))
                    continue
                enqueue(head, _FWD, item)
                touched.add((n, 0))
                continue
            dev, kind, item = payload
            dev.busy = False
            touched.add((dev.worker, dev.stage))
            n, i = dev.worker, dev.stage
            if kind == _FWD:
                if i < P - 1:
                    enqueue(devices[(n, i + 1)], _FWD, item)
                    touched.add((n, i + 1))
                else:
                    enqueue(dev, _BWD, item)
                continue
            # backward finished on stage i
            own = dev.do.pop(item)
            real[(item, i)] = own and (i == P - 1 or real.pop((item, i + 1), False))
            if i > 0:
                enqueue(devices[(n, i - 1)], _BWD, item)
                touched.add((n, i - 1))
            else:
                latency[item] = now - arrivals[item]
            if not own:
                continue
            e = reads.pop((item, i))
            dev.refs[e] -= 1
            if dev.refs[e] == 0:
                del dev.refs[e]
            if real.get((item, i)):
                dev.group.append(item)
            dev.own_count += 1
            if dev.own_count % dev.c_a:
                continue
            before = version[i]
            taus = tuple(before - reads.pop((item_, i, "v")) for item_ in dev.group)
            for item_, tau in zip(dev.group, taus):
                log(SimEvent(now, "update", n, i, item_, tau, before + 1))
                staleness_hist[tau] += 1
            version[i] = before + 1
            log(SimEvent(now, "commit", n, i, -1, 0, version[i]))
            updates.append(UpdateRecord(now, n, i, version[i], tuple(dev.group), taus))
            dev.group = []
            dev.epoch += 1
            dev.pulled = version[i]
        # start work on every idle device with something queued
        for key in order:
            dev = devices[key]
            if dev.busy or not dev.queue:
                continue
            kind, item = heapq.heappop(dev.queue)
            n, i = key
            dev.busy = True
            touched.add(key)
            if kind == _FWD:
                log(SimEvent(now, "forward", n, i, item, 0, dev.pulled))
                if dev.decide(item):
                    reads[(item, i)] = dev.epoch
                    reads[(item, i, "v")] = dev.pulled
                    dev.refs[dev.epoch] += 1
                else:
                    reads[(item, i, "v")] = dev.pulled
                done = now + tf
            else:
                c_r = C.workers[n].c_r
                if c_r:
                    log(SimEvent(now, "recompute", n, i, item))
                log(SimEvent(now, "backward", n, i, item))
                done = now + tb + c_r * tf
            heapq.heappush(heap, (done, seq, "done", (dev, kind, item)))
            seq += 1
        for key in touched:
            dev = devices[key]
            new = dev.memory(stats.w[key[1]])
            live += new - dev.mem
            dev.mem = new
            if new > dev.peak:
                dev.peak = new
        if live > peak_live:
            peak_live = live

    device_peaks = {k: d.peak for k, d in devices.items()}
    trace = SimTrace(
        events=events,
        n_items=n_items,
        n_stages=P,
        arrivals=arrivals,
        per_item_latency=latency,
        peak_memory=sum(device_peaks.values()),
        peak_live=peak_live,
        device_peaks=device_peaks,
        update_staleness=dict(sorted(staleness_hist.items())),
        updates=updates,
        weight_share=share,
        t_d=s.t_d,
    )
    if n_items > default_warmup(P):
        trace.realized = realized_value(trace, s)
    return trace


def default_warmup(n_stages: int) -> int:
    return 3 * n_stages


def peak_memory(trace: SimTrace) -> int:
    """Sum over devices of each device's peak stored weights and activations."""
    return trace.peak_memory


def realized_value(trace: SimTrace, s: StreamSpec, warmup: int | None = None) -> float:
    """Decayed item value captured by updates per unit time, after a warm-up.

    Each update of stage ``i`` credits every item whose real gradient it
    carries with that stage's parameter share of the item's decayed value.
    Items before ``warmup`` are excluded from both value and elapsed time.
    """
    warmup = default_warmup(trace.n_stages) if warmup is None else warmup
    span = (trace.n_items - warmup) * s.t_d
    if span <= 0:
        raise ValueError("trace has no items after the warm-up period")
    total = []
    for u in trace.updates:
        share = trace.weight_share[u.stage]
        for item in u.items:
            if item >= warmup:
                total.append(share * math.exp(-s.c * (u.time - trace.arrivals[item])) * s.V_D)
    return math.fsum(total) / span


def summary(trace: SimTrace) -> dict:
    n = trace.n_items
    return {
        "n_items": n,
        "peak_memory": trace.peak_memory,
        "peak_live": trace.peak_live,
        "realized_value": trace.realized,
        "drop_rate": (len(trace.dropped) / n) if n else 0.0,
        "staleness_histogram": {str(k): v for k, v in trace.update_staleness.items()},
        "n_updates": len(trace.updates),
    }


def write_trace(trace: SimTrace, path) -> None:
    """Event log as text: a header line, then one event per line."""
    lines = [TRACE_HEADER, "time,kind,worker,stage,item,staleness,version"]
    lines += [
        f"{e.time!r},{e.kind},{e.worker},{e.stage},{e.item},{e.staleness},{e.version}"
        for e in trace.events
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def write_summary(trace: SimTrace, path) -> None:
    Path(path).write_text(json.dumps({"format": TRACE_HEADER, **summary(trace)}, indent=2, sort_keys=True) + "\n")


def read_trace_events(path) -> list[SimEvent]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != TRACE_HEADER:
        raise ValueError(f"not a {TRACE_HEADER} file: {path}")
    out = []
    for row in lines[2:]:
        t, kind, w, st, item, tau, ver = row.split(",")
        out.append(SimEvent(float(t), kind, int(w), int(st), int(item), int(tau), int(ver)))
    return out
