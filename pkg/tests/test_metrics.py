import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ferret.metrics import (
    RESULT_FIELDS,
    RecordError,
    RunRecord,
    accuracy_from_flags,
    agm,
    gain_table,
    mean_stderr,
    online_accuracy,
    read_results,
    tagm,
    write_results,
)


class TestOnlineAccuracy:
    def test_all_correct(self):
        assert online_accuracy([(1, 1), (0, 0)]) == 100.0

    def test_half(self):
        assert online_accuracy([(1, 1), (0, 1)]) == 50.0

    def test_drops_count_as_wrong(self):
        assert online_accuracy([(1, 1), (None, 2), (0, 1), (3, 3)]) == 50.0

    def test_empty(self):
        with pytest.raises(ValueError):
            online_accuracy([])
        with pytest.raises(ValueError):
            accuracy_from_flags([])

    def test_flags(self):
        assert accuracy_from_flags([True, False, False, True]) == 50.0


class TestGains:
    def test_identity(self):
        assert agm(70.0, 100, 70.0, 100) == 0.0
        assert tagm(70.0, 100, 70.0, 100) == 0.0

    def test_agm_memory_ratio(self):
        assert agm(60.0, 200, 50.0, 100) == pytest.approx(10 - math.log(2), abs=1e-12)
        assert agm(60.0, 200, 50.0, 100) == pytest.approx(9.307, abs=5e-4)

    def test_pure_memory_penalty(self):
        assert agm(50.0, math.e * 10, 50.0, 10) == pytest.approx(-1.0, abs=1e-12)

    def test_tagm(self):
        assert tagm(55.0, 10, 50.0, 10) == 5.0
        assert tagm(55.0, 20, 50.0, 10) == pytest.approx(4.307, abs=5e-4)

    def test_non_positive_memory(self):
        with pytest.raises(ValueError):
            agm(1, 0, 1, 1)
        with pytest.raises(ValueError):
            tagm(1, 1, 1, -2)


tuples = st.tuples(st.floats(0, 100), st.floats(1, 1e7), st.floats(0, 100), st.floats(1, 1e7))


@settings(max_examples=200)
@given(tuples, st.floats(1e-3, 1e3))
def test_gain_identities(t, k):
    a, Ma, b, Mb = t
    assert agm(a, Ma, b, Mb) == pytest.approx(-agm(b, Mb, a, Ma), abs=1e-12)
    assert agm(a, Ma, a, Ma) == 0.0
    assert agm(a, k * Ma, b, k * Mb) == pytest.approx(agm(a, Ma, b, Mb), abs=1e-12)


class TestRecords:
    def records(self):
        return [
            RunRecord("s", "one_skip", 0, 50.0, 40.0, 100),
            RunRecord("s", "ferret", 0, 60.0, 45.0, 200),
            RunRecord("s", "one_skip", 1, 52.0, 41.0, 100),
            RunRecord("s", "ferret", 1, 61.0, 47.0, 200),
        ]

    def test_validation(self):
        with pytest.raises(RecordError):
            RunRecord("s", "m", 0, 101.0, 0.0, 1)
        with pytest.raises(RecordError):
            RunRecord("s", "m", 0, 1.0, 0.0, 0)

    def test_gain_table_pairs_by_seed(self):
        rows = gain_table(self.records(), "one_skip")
        ferret = [r for r in rows if r["method"] == "ferret"]
        assert ferret[0]["agm"] == pytest.approx(10 - math.log(2))
        assert ferret[1]["tagm"] == pytest.approx(6 - math.log(2))
        assert all(r["agm"] == 0.0 for r in rows if r["method"] == "one_skip")

    def test_missing_baseline(self):
        with pytest.raises(RecordError, match="oracle"):
            gain_table(self.records(), "oracle")

    def test_round_trip(self, tmp_path):
        rows = gain_table(self.records(), "one_skip")
        write_results(rows, tmp_path / "r.csv")
        text = (tmp_path / "r.csv").read_text()
        assert text.splitlines()[0] == ",".join(RESULT_FIELDS)
        back = read_results(tmp_path / "r.csv")
        assert [(r.method, r.seed, r.oacc, r.memory) for r in back] == \
               [(r.method, r.seed, r.oacc, r.memory) for r in self.records()]

    def test_read_errors(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("setting,method\nx,y\n")
        with pytest.raises(RecordError, match="missing columns"):
            read_results(p)
        p.write_text("setting,method,oacc,tacc,memory,seed\ns,m,abc,1,1,0\n")
        with pytest.raises(RecordError, match="row 2"):
            read_results(p)
        with pytest.raises(RecordError, match="not found"):
            read_results(tmp_path / "none.csv")

    def test_mean_stderr(self):
        m, e = mean_stderr([1.0, 2.0, 3.0])
        assert m == 2.0 and e == pytest.approx(np.std([1, 2, 3], ddof=1) / math.sqrt(3))
        assert mean_stderr([4.0]) == (4.0, 0.0)
