import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ferret.analytics import (
    ConfigError,
    PipelineConfig,
    StreamSpec,
    WorkerConfig,
    adaptation_rate,
    default_config,
    memory_footprint,
)
from ferret.profile import StageStats
from ferret.sim import (
    TRACE_HEADER,
    peak_memory,
    read_trace_events,
    realized_value,
    simulate,
    summary,
    write_summary,
    write_trace,
)


def single(P, modulus=1, c_r=0):
    return PipelineConfig((WorkerConfig(0, c_r, (1,) * P, (0,) * P),), modulus)


def random_case(rng: random.Random, restricted: bool = False):
    """Seeded config generator shared by the memory and rate checks."""
    P = rng.randint(1, 4)
    t_f, t_b = rng.randint(1, 3), rng.randint(1, 4)
    a = tuple(rng.randint(1, 9) for _ in range(P))
    inner = tuple(rng.randint(0, x) for x in a) if not restricted else (0,) * P
    stats = StageStats(tuple(rng.randint(1, 9) for _ in range(P)), a, inner, t_f, t_b)
    c_r = rng.randint(0, 1)
    N = rng.choice([1, 2, 4])
    t_d = (t_f + t_b + c_r * t_f) / N
    workers = []
    for n in range(N):
        c_a, c_o = [], []
        for j in range(P):
            if rng.random() < 0.35 and j < P - 1:
                c_a.append(1)
                c_o.append(P - 1 - j if restricted else rng.randint(1, P - 1 - j))
            else:
                c_a.append(rng.randint(1, 3))
                c_o.append(0)
        if restricted:
            for j in range(P):
                if any(c_o[j + 1:]):
                    c_a[j] = 1
        delay = -1 if (not restricted and rng.random() < 0.15) else n
        workers.append(WorkerConfig(delay, c_r, tuple(c_a), tuple(c_o)))
    return stats, PipelineConfig(tuple(workers), N), t_d


class TestSimulateExamples:
    def test_no_items(self):
        stats = StageStats.uniform(2, 10, 5, 1, 1)
        tr = simulate(stats, single(2), StreamSpec(1.0), 0)
        assert tr.events == [] and tr.peak_memory == 20 and peak_memory(tr) == 20

    def test_single_stage_no_overlap(self):
        stats = StageStats.uniform(1, 10, 5, 1, 1)
        tr = simulate(stats, single(1), StreamSpec(2.0), 5)
        assert tr.per_item_latency == [2.0] * 5
        assert tr.update_staleness == {0: 5}
        assert not tr.dropped

    def test_uncovered_residue_is_dropped(self):
        stats = StageStats.uniform(2, 10, 5, 1, 1)
        tr = simulate(stats, single(2, modulus=2), StreamSpec(1.0), 10)
        assert tr.dropped == [1, 3, 5, 7, 9]
        assert [tr.per_item_latency[i] for i in range(0, 10, 2)] == [4.0] * 5
        drops = [e.item for e in tr.events if e.kind == "drop"]
        assert drops == [1, 3, 5, 7, 9]

    def test_every_item_has_forwards_and_backwards(self):
        stats = StageStats.uniform(3, 10, 5, 1, 2)
        tr = simulate(stats, default_config(stats, 1.0), StreamSpec(1.0), 30)
        for kind in ("forward", "backward"):
            per_item = [0] * 30
            for e in tr.events:
                if e.kind == kind:
                    per_item[e.item] += 1
            assert per_item == [3] * 30
        times = [e.time for e in tr.events]
        assert times == sorted(times)

    def test_recompute_emits_extra_forward(self):
        stats = StageStats.uniform(2, 10, 5, 1, 1, inner_a=2)
        tr = simulate(stats, single(2, c_r=1), StreamSpec(3.0), 4)
        assert sum(e.kind == "recompute" for e in tr.events) == 8


class TestPeakMemory:
    def test_two_stage_fixture(self):
        stats = StageStats.uniform(2, 10, 5, 1, 1)
        tr = simulate(stats, default_config(stats, 2.0), StreamSpec(2.0), 100)
        assert tr.peak_memory == 45

    def test_two_stage_recompute_fixture(self):
        stats = StageStats.uniform(2, 10, 5, 1, 1, inner_a=2)
        tr = simulate(stats, default_config(stats, 3.0, 1), StreamSpec(3.0), 100)
        assert tr.peak_memory == 39

    def test_resident_weights_lower_bound(self):
        stats = StageStats((3, 4, 5), (1, 2, 3), (0, 0, 0), 1, 2)
        C = default_config(stats, 1.0)
        tr = simulate(stats, C, StreamSpec(1.0), 40)
        assert tr.peak_memory >= len(C.active_workers) * sum(stats.w)

    def test_random_configs_match_closed_form(self):
        rng = random.Random(11)
        checked = 0
        while checked < 40:
            stats, C, t_d = random_case(rng)
            try:
                expected = memory_footprint(stats, C)
            except ConfigError:
                continue
            tr = simulate(stats, C, StreamSpec(t_d), 40 * stats.n_stages * 3 + 20)
            assert tr.peak_memory == expected
            checked += 1


class TestRealizedValue:
    def test_all_dropped(self):
        stats = StageStats.uniform(1, 10, 5, 1, 1)
        C = PipelineConfig((WorkerConfig(-1, 0, (1,), (0,)),), 1)
        tr = simulate(stats, C, StreamSpec(1.0), 20)
        assert realized_value(tr, StreamSpec(1.0, c=0.1)) == 0.0

    def test_no_decay_counts_items_per_second(self):
        stats = StageStats.uniform(1, 10, 5, 1, 1)
        tr = simulate(stats, single(1), StreamSpec(2.0), 50)
        assert realized_value(tr, StreamSpec(2.0, c=0.0), warmup=0) == pytest.approx(0.5, rel=1e-12)

    def test_two_stage_converges_to_closed_form(self):
        stats = StageStats.uniform(2, 10, 5, 1, 1)
        s = StreamSpec(2.0, c=0.1)
        tr = simulate(stats, default_config(stats, 2.0), s, 200)
        assert realized_value(tr, s) == pytest.approx(0.35276, rel=0.05)

    def test_too_short(self):
        stats = StageStats.uniform(2, 10, 5, 1, 1)
        tr = simulate(stats, single(2), StreamSpec(2.0), 4)
        with pytest.raises(ValueError):
            realized_value(tr, StreamSpec(2.0))

    def test_restricted_configs_match_closed_form(self):
        rng = random.Random(5)
        for _ in range(15):
            stats, C, t_d = random_case(rng, restricted=True)
            s = StreamSpec(t_d, c=math.log(2) / (stats.t_f + stats.t_b))
            tr = simulate(stats, C, s, 600 * len(C.workers))
            assert realized_value(tr, s) == pytest.approx(adaptation_rate(stats, C, s), rel=0.02)


class TestTraceIO:
    def test_round_trip_and_determinism(self, tmp_path):
        stats = StageStats((3, 4), (2, 2), (1, 0), 1, 2)
        C = PipelineConfig((WorkerConfig(0, 1, (2, 1), (0, 0)), WorkerConfig(1, 1, (1, 1), (1, 0))), 2)
        a = simulate(stats, C, StreamSpec(2.0, c=0.1), 60)
        b = simulate(stats, C, StreamSpec(2.0, c=0.1), 60)
        write_trace(a, tmp_path / "a.txt")
        write_trace(b, tmp_path / "b.txt")
        assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()
        assert (tmp_path / "a.txt").read_text().splitlines()[0] == TRACE_HEADER
        assert read_trace_events(tmp_path / "a.txt") == a.events
        write_summary(a, tmp_path / "s.json")
        assert '"format": "ferret-trace v1"' in (tmp_path / "s.json").read_text()

    def test_summary_fields(self):
        stats = StageStats.uniform(2, 10, 5, 1, 1)
        tr = simulate(stats, single(2, modulus=2), StreamSpec(1.0), 10)
        info = summary(tr)
        assert info["drop_rate"] == 0.5 and info["n_items"] == 10
        assert sum(info["staleness_histogram"].values()) == sum(tr.update_staleness.values())

    def test_bad_header(self, tmp_path):
        p = tmp_path / "x.txt"
        p.write_text("nope\n")
        with pytest.raises(ValueError):
            read_trace_events(p)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(1, 4), st.sets(st.integers(0, 3), min_size=1), st.integers(20, 60))
def test_throughput_bound(P, modulus, delays, n_items):
    delays = sorted(d for d in delays if d < modulus)
    if not delays:
        return
    stats = StageStats.uniform(P, 3, 2, 1.0, 1.0)
    t_d = 2.0 / modulus
    C = PipelineConfig(tuple(WorkerConfig(d, 0, (1,) * P, (0,) * P) for d in delays), modulus)
    tr = simulate(stats, C, StreamSpec(t_d), n_items)
    processed = [i for i in range(n_items) if not math.isinf(tr.per_item_latency[i])]
    assert processed == [i for i in range(n_items) if i % modulus in delays]
    starts: dict[int, list[float]] = {}
    for e in tr.events:
        if e.kind == "forward" and e.stage == 0:
            starts.setdefault(e.worker, []).append(e.time)
    for times in starts.values():
        assert all(b - a >= modulus * t_d - 1e-9 for a, b in zip(times, times[1:]))
