import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stalesgd.core import (
    StalenessError,
    StalenessSample,
    StalenessSummary,
    StalenessTrace,
    compute_staleness,
    summarize_staleness,
)


def _trace(values, n=1, lam=1):
    return StalenessTrace([StalenessSample(i, 0, v) for i, v in enumerate(values)], n, lam)


@pytest.mark.parametrize("i,j,expected", [(5, 5, 0), (7, 5, 2), (0, 0, 0)])
def test_compute_staleness(i, j, expected):
    assert compute_staleness(i, j) == expected


def test_future_timestamp_rejected():
    with pytest.raises(StalenessError):
        compute_staleness(3, 4)
    with pytest.raises(StalenessError):
        compute_staleness(3, -1)


def test_negative_sample_rejected():
    with pytest.raises(StalenessError):
        StalenessSample(0, 0, -1)


def test_summary_hand_counted():
    s = summarize_staleness(_trace([0, 1, 2, 1, 0], n=1))
    assert s.mean == pytest.approx(0.8)
    assert s.max == 2
    assert s.histogram == {0: 2, 1: 2, 2: 1}
    assert s.fraction_exceeding == 0.0


def test_summary_all_zero():
    s = summarize_staleness(_trace([0] * 7))
    assert s.mean == 0 and s.max == 0


def test_summary_fraction_exceeding():
    s = summarize_staleness(_trace([0, 3, 1, 5], n=1))
    assert s.fraction_exceeding == 0.5


def test_empty_trace_rejected():
    with pytest.raises(ValueError):
        summarize_staleness(StalenessTrace())


def test_summary_json_round_trip():
    s = summarize_staleness(_trace([0, 1, 1, 4], n=2))
    doc = json.loads(s.to_json())
    assert set(doc) == {"mean", "max", "histogram", "fraction_exceeding"}
    assert doc["histogram"] == {"0": 1, "1": 2, "4": 1}
    assert StalenessSummary.from_dict(doc) == s


def test_per_update_grouping():
    t = StalenessTrace([StalenessSample(0, 1, 2), StalenessSample(0, 2, 3), StalenessSample(1, 0, 1)])
    assert t.per_update() == [[2, 3], [1]]


@given(st.lists(st.integers(0, 50), min_size=1, max_size=200), st.integers(1, 10))
def test_histogram_totals(values, n):
    s = summarize_staleness(_trace(values, n=n))
    assert sum(s.histogram.values()) == len(values)
    assert 0.0 <= s.fraction_exceeding <= 1.0
    assert s.max == max(values)
    assert s.mean == pytest.approx(np.mean(values))
