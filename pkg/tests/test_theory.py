import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stalesgd.core import StalenessSample, StalenessTrace
from stalesgd.theory import (
    TheoryConstants,
    TraceCorruption,
    bound_report,
    bound_rhs,
    check_prerequisites,
    constant_staleness_rate,
    decompose_trace,
    h_staleness,
    recommend_alpha0,
    weighted_gradient_average,
)

UNIT = TheoryConstants()
P4 = [1, 1, 1, 1]


def test_decompose_c1_is_identity():
    d = decompose_trace([[3], [5], [2]], c=1)
    np.testing.assert_array_equal(d.p, [3, 5, 2])
    assert d.T == 3


def test_decompose_single_group_of_three():
    np.testing.assert_array_equal(decompose_trace([[1, 1, 1]], c=3).p, [1, 1, 1])


def test_decompose_positions():
    np.testing.assert_array_equal(decompose_trace([[2, 3], [1, 1]], c=2).p, [2, 3, 1, 1])


def test_decompose_from_trace_object():
    t = StalenessTrace([StalenessSample(0, 0, 2), StalenessSample(0, 1, 3), StalenessSample(1, 0, 4),
                        StalenessSample(1, 1, 1)], protocol_n=15, lam=30)
    d = decompose_trace(t, c=2)
    np.testing.assert_array_equal(d.p, [2, 3, 4, 1])
    assert d.n == 15


def test_decompose_zero_staleness():
    np.testing.assert_array_equal(decompose_trace([[0, 2]], c=2).p, [1, 2])
    with pytest.raises(TraceCorruption):
        decompose_trace([[0, 2]], c=2, strict=True)


def test_decompose_rejects_bad_groups_and_negatives():
    with pytest.raises(TraceCorruption):
        decompose_trace([[1, 1], [1]], c=2)
    with pytest.raises(TraceCorruption):
        decompose_trace([[-1]], c=1)


def test_recommend_alpha0_unit():
    assert recommend_alpha0(UNIT, P4) == pytest.approx(math.sqrt(1 / 8), rel=1e-15)


def test_recommend_alpha0_c2_mu4():
    k = TheoryConstants(c=2, mu=4)
    assert recommend_alpha0(k, P4) == pytest.approx(math.sqrt(2), rel=1e-15)


def test_recommend_alpha0_mu_scaling():
    a1 = recommend_alpha0(TheoryConstants(mu=3), [1, 2, 5])
    a2 = recommend_alpha0(TheoryConstants(mu=6), [1, 2, 5])
    assert a2 / a1 == pytest.approx(math.sqrt(2), rel=1e-14)


def test_recommend_alpha0_empty():
    with pytest.raises(ValueError):
        recommend_alpha0(UNIT, [])


def test_prerequisites_hand_evaluated():
    # backward bound per t (window clipped): inf, 1, 0.5, 0.5
    # forward lhs per t: a + a^2*{2, 2, 1, 0}
    a = 0.353553
    ok_back, ok_fwd, first = check_prerequisites(a, UNIT, P4)
    assert (ok_back, ok_fwd, first) == (True, True, None)
    assert a + a * a * 2 == pytest.approx(0.6036, abs=1e-4)
    # both windows are tight at a = 0.5: backward 0.5 <= 0.5, forward 0.5 + 2 * 0.25 <= 1
    assert check_prerequisites(0.5, UNIT, P4) == (True, True, None)
    ok_back, ok_fwd, first = check_prerequisites(0.5 + 1e-9, UNIT, P4)
    assert not ok_back and not ok_fwd
    assert first == ("forward_window", 0)


def test_prerequisites_large_alpha_violates():
    ok_back, ok_fwd, first = check_prerequisites(10.0, UNIT, P4)
    assert not ok_back and not ok_fwd
    assert first is not None


def test_prerequisites_vanishing_alpha():
    p = np.random.default_rng(0).integers(1, 40, size=500)
    k = TheoryConstants(C1=2, C2=0.5, C3=3, C4=4, mu=8, c=3, n=20)
    assert check_prerequisites(1e-12, k, p) == (True, True, None)


def test_bound_rhs_unit():
    assert bound_rhs(UNIT, P4) == pytest.approx(math.sqrt(2), rel=1e-15)


def test_constant_rate_values():
    assert constant_staleness_rate(UNIT, 4) == pytest.approx(math.sqrt(2), rel=1e-15)
    k = TheoryConstants(C1=1.7, C2=0.3, mu=5)
    assert constant_staleness_rate(k, 400) == pytest.approx(constant_staleness_rate(k, 100) / 2, rel=1e-14)
    k4 = TheoryConstants(C1=1.7, C2=0.3, mu=20)
    assert constant_staleness_rate(k4, 100) == pytest.approx(constant_staleness_rate(k, 100) / 2, rel=1e-14)
    with pytest.raises(ValueError):
        constant_staleness_rate(UNIT, 0)


@pytest.mark.parametrize("T", [1, 2, 3, 4])
def test_uniform_staleness_minimizes_bound_by_enumeration(T):
    # every integer staleness vector in {1..4}^T against the uniform vector with the same sum of 1/p
    k = TheoryConstants(C1=1.3, C2=0.7, mu=2)
    for p in itertools.product(range(1, 5), repeat=T):
        inv_sum = sum(1.0 / x for x in p)
        uniform = [T / inv_sum] * T
        assert bound_rhs(k, uniform) <= bound_rhs(k, p) * (1 + 1e-12)


def test_h_values():
    assert h_staleness([1, 1, 1, 1]) == 0.5
    assert h_staleness([1]) == 1.0
    for bad in ([], [1, 0], [2, -1]):
        with pytest.raises(ValueError):
            h_staleness(bad)


def test_weighted_gradient_average():
    assert weighted_gradient_average([1.0, 3.0], [1, 1]) == 2.0
    assert weighted_gradient_average([1.0, 4.0], [1, 2]) == pytest.approx((1 + 2) / 1.5)


def test_bound_report_json():
    doc = json.loads(bound_report(UNIT, P4).to_json())
    assert doc["alpha0"] == pytest.approx(math.sqrt(1 / 8))
    assert doc["rhs"] == pytest.approx(math.sqrt(2))
    assert doc["prereq5_ok"] and doc["prereq6_ok"] and doc["first_violation"] is None
    assert doc["inputs"]["T"] == 4 and doc["inputs"]["C1"] == 1.0


consts = st.builds(TheoryConstants, C1=st.floats(0.01, 100), C2=st.floats(0.01, 100),
                   mu=st.integers(1, 512), c=st.integers(1, 30), n=st.integers(1, 30))
staleness = st.lists(st.integers(1, 60), min_size=1, max_size=100)


@settings(max_examples=200)
@given(consts, st.integers(1, 10_000), st.floats(0.1, 100))
def test_bound_rhs_constant_identity(k, T, p):
    assert bound_rhs(k, np.full(T, p)) == pytest.approx(constant_staleness_rate(k, T), rel=1e-12)


@given(consts, staleness, st.data())
def test_alpha0_monotone(k, p, data):
    base = recommend_alpha0(k, p)
    k2 = TheoryConstants(k.C1, k.C2, k.C3, k.C4, mu=k.mu + 1, c=k.c, n=k.n)
    assert recommend_alpha0(k2, p) > base
    i = data.draw(st.integers(0, len(p) - 1))
    bumped = list(p)
    bumped[i] += 1
    assert recommend_alpha0(k, bumped) > base


@given(st.lists(st.floats(0.01, 100), min_size=2, max_size=50))
def test_h_uniform_is_minimal(z):
    z = np.asarray(z)
    uniform = np.full(z.size, z.mean())
    assert h_staleness(uniform) <= h_staleness(z) * (1 + 1e-12)
