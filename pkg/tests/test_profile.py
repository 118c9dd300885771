import itertools
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ferret.profile import (
    BoundError,
    LayerProfile,
    ModelProfile,
    PartitionScheme,
    ProfileError,
    all_partitions,
    candidate_bounds,
    load_profile,
    partition_by_bound,
    save_profile,
    stage_stats,
    synth_profile,
)


def profile_of(times, w=None, a=None):
    w = w or [1] * len(times)
    a = a or [1] * len(times)
    # split each layer time into forward and backward halves
    return ModelProfile(tuple(LayerProfile(t / 2, t / 2, wi, ai) for t, wi, ai in zip(times, w, a)))


def write(tmp_path, text):
    p = tmp_path / "p.txt"
    p.write_text(text)
    return p


class TestLoadProfile:
    def test_single_layer(self, tmp_path):
        prof = load_profile(write(tmp_path, "ferret-profile v1\nt_f,t_b,w,a\n1,1,10,5\n"))
        assert len(prof) == 1
        assert prof.layers[0] == LayerProfile(1.0, 1.0, 10, 5)

    def test_zero_forward_time_names_layer(self, tmp_path):
        text = "ferret-profile v1\nt_f,t_b,w,a\n1,1,1,1\n1,1,1,1\n0,1,1,1\n"
        with pytest.raises(ProfileError, match="layer 2: t_f must be > 0"):
            load_profile(write(tmp_path, text))

    def test_round_trip_is_bit_identical(self, tmp_path):
        prof = synth_profile(4, seed=3)
        path = tmp_path / "rt.txt"
        save_profile(prof, path)
        assert load_profile(path) == prof
        first = path.read_text()
        save_profile(load_profile(path), path)
        assert path.read_text() == first

    def test_missing_file(self, tmp_path):
        with pytest.raises(ProfileError, match="not found"):
            load_profile(tmp_path / "nope.txt")

    def test_unknown_version(self, tmp_path):
        with pytest.raises(ProfileError, match="header"):
            load_profile(write(tmp_path, "ferret-profile v2\nt_f,t_b,w,a\n1,1,1,1\n"))

    def test_malformed_row(self, tmp_path):
        with pytest.raises(ProfileError, match="layer 0"):
            load_profile(write(tmp_path, "ferret-profile v1\nt_f,t_b,w,a\n1,1,x,1\n"))

    def test_comments_are_skipped(self, tmp_path):
        prof = load_profile(write(tmp_path, "# made by hand\nferret-profile v1\nt_f,t_b,w,a\n2,3,4,5\n"))
        assert prof.layers[0].t == 5.0


class TestSynthProfile:
    def test_single_layer(self):
        prof = synth_profile(1, seed=0, cost_model="uniform")
        assert len(prof) == 1 and prof.layers[0].t_f > 0 and prof.layers[0].t_b > 0

    def test_deterministic(self):
        assert synth_profile(8, seed=7, cost_model="pyramid") == synth_profile(8, seed=7, cost_model="pyramid")

    def test_seed_changes_profile(self):
        assert synth_profile(8, seed=7, cost_model="pyramid") != synth_profile(8, seed=8, cost_model="pyramid")

    def test_zero_layers_rejected(self):
        with pytest.raises(ValueError):
            synth_profile(0)


class TestPartitionByBound:
    def test_large_bound_gives_one_stage(self):
        prof = profile_of([1, 2, 3])
        assert partition_by_bound(prof, 6.0).bounds == (0, 3)

    def test_forced_singletons(self):
        assert partition_by_bound(profile_of([1, 1, 1]), 1.0).bounds == (0, 1, 2, 3)

    def test_hand_traced_grouping(self):
        assert partition_by_bound(profile_of([1, 0.5, 0.5, 1]), 1.2).bounds == (0, 1, 3, 4)

    def test_bound_below_largest_layer(self):
        with pytest.raises(BoundError, match="3"):
            partition_by_bound(profile_of([1, 3]), 2.0)

    def test_greedy_is_minimal_among_groupings(self):
        # exhaustive oracle over all contiguous groupings of the hand example
        prof = profile_of([1, 0.5, 0.5, 1])
        t_c = 1.2
        feasible = [
            L for L in all_partitions(4)
            if all(sum(prof.layer_times[lo:hi]) <= t_c for lo, hi in zip(L.bounds, L.bounds[1:]))
        ]
        best = min(L.n_stages for L in feasible)
        assert partition_by_bound(prof, t_c).n_stages == best


class TestStageStats:
    def test_single_stage(self):
        prof = profile_of([1, 1, 1], w=[1, 2, 3], a=[4, 5, 6])
        s = stage_stats(prof, PartitionScheme((0, 3)))
        assert s.w == (6,) and s.a == (15,) and s.inner_a == (11,)

    def test_singleton_stages_have_no_inner_activations(self):
        prof = profile_of([1, 1, 1], a=[4, 5, 6])
        assert stage_stats(prof, PartitionScheme((0, 1, 2, 3))).inner_a == (0, 0, 0)

    def test_hand_sum(self):
        prof = profile_of([1, 1, 1, 1], w=[1, 2, 3, 4])
        assert stage_stats(prof, PartitionScheme((0, 2, 4))).w == (3, 7)

    def test_times_are_stage_maxima(self):
        prof = profile_of([1, 2, 4])
        s = stage_stats(prof, PartitionScheme((0, 2, 3)))
        assert s.t_f == pytest.approx(2.0) and s.t_b == pytest.approx(2.0)


class TestCandidateBounds:
    def test_one_layer(self):
        assert candidate_bounds(profile_of([3])) == [3.0]

    def test_two_equal_layers(self):
        assert candidate_bounds(profile_of([1, 1])) == [1.0, 2.0]

    def test_filter_by_largest_layer(self):
        # spans are 1, 2, 4, 3, 6, 7; those below the largest layer (4) are dropped
        assert candidate_bounds(profile_of([1, 2, 4])) == [4.0, 6.0, 7.0]


def test_partition_scheme_validation():
    with pytest.raises(ValueError):
        PartitionScheme((1, 2))
    with pytest.raises(ValueError):
        PartitionScheme((0, 2, 2))


times_strategy = st.lists(st.floats(0.1, 5.0, allow_nan=False), min_size=1, max_size=8)


@settings(max_examples=60, deadline=None)
@given(times_strategy)
def test_every_candidate_partitions(times):
    prof = profile_of(times)
    cands = candidate_bounds(prof)
    n = len(times)
    assert len(cands) <= (n * n + n) // 2
    assert max(cands) == pytest.approx(sum(times))
    for t_c in cands:
        L = partition_by_bound(prof, t_c)
        L.check(prof)
        spans = [math.fsum(prof.layer_times[lo:hi]) for lo, hi in zip(L.bounds, L.bounds[1:])]
        assert all(s <= t_c * (1 + 1e-12) for s in spans)
        # merging any adjacent pair must break the bound
        for a, b in itertools.pairwise(spans):
            assert a + b > t_c * (1 - 1e-12)


@settings(max_examples=60, deadline=None)
@given(times_strategy)
def test_stage_count_is_monotone_in_bound(times):
    prof = profile_of(times)
    counts = [partition_by_bound(prof, t_c).n_stages for t_c in candidate_bounds(prof)]
    assert counts == sorted(counts, reverse=True)
