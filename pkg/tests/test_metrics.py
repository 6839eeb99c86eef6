import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aggrisk.metrics import (
    EmptyYltError,
    InsufficientTrialsError,
    MetricError,
    exceedance_curve,
    pml,
    rpl_report,
    tvar,
    var,
    var_tvar_report,
)
from aggrisk.model import YearLossTable

ONE_TO_TEN = YearLossTable(np.arange(1, 11), np.arange(1.0, 11.0))


# -- independent oracles: full sorts and direct counting

def ep_oracle(losses):
    n = len(losses)
    return [(v, sum(1 for x in losses if x >= v) / n) for v in sorted(set(losses))]


def pml_oracle(losses, rp):
    rank = math.ceil(Fraction(len(losses)) / Fraction(str(rp)))
    return sorted(losses, reverse=True)[rank - 1]


def var_oracle(losses, alpha):
    n = len(losses)
    for v in sorted(losses):
        if Fraction(sum(1 for x in losses if x <= v), n) >= Fraction(str(alpha)):
            return v


def tvar_oracle(losses, alpha):
    k = math.ceil((1 - Fraction(str(alpha))) * len(losses))
    return float(sum(Fraction(x) for x in sorted(losses, reverse=True)[:k]) / k)


def test_ep_curve_examples():
    assert exceedance_curve(np.array([1.0, 2.0, 3.0, 4.0])).points == [(1, 1.0), (2, 0.75), (3, 0.5), (4, 0.25)]
    assert exceedance_curve(np.full(7, 3.5)).points == [(3.5, 1.0)]


def test_pml_examples():
    assert pml(ONE_TO_TEN, 10) == 10
    assert pml(ONE_TO_TEN, 2) == 6
    assert rpl_report(ONE_TO_TEN, [2, 5, 10]) == [(2, 6), (5, 9), (10, 10)]
    assert rpl_report(ONE_TO_TEN, []) == []
    assert rpl_report(ONE_TO_TEN, [5, 2, 5, 2.0]) == [(2, 6), (5, 9)]


def test_var_tvar_examples():
    assert var(ONE_TO_TEN, 0.8) == 8
    assert tvar(ONE_TO_TEN, 0.8) == 9.5
    # 0.7 * 10 is 7.000000000000001 in binary floating point; the rank must still be 7
    assert var(ONE_TO_TEN, 0.7) == 7
    assert tvar(ONE_TO_TEN, 0.7) == 9
    assert var(np.full(5, 2.5), 0.9) == tvar(np.full(5, 2.5), 0.9) == 2.5
    assert var_tvar_report(ONE_TO_TEN, [0.8, 0.7, 0.8]) == [(0.7, 7, 9), (0.8, 8, 9.5)]


def test_errors():
    empty = YearLossTable(np.zeros(0, dtype=np.int64), np.zeros(0))
    for fn in (exceedance_curve, lambda y: pml(y, 2), lambda y: var(y, 0.5), lambda y: tvar(y, 0.5)):
        with pytest.raises(EmptyYltError):
            fn(empty)
    with pytest.raises(InsufficientTrialsError):
        pml(ONE_TO_TEN, 11)
    for rp in (1, 0.5, -3, float("nan"), float("inf")):
        with pytest.raises(MetricError):
            pml(ONE_TO_TEN, rp)
    for a in (0, 1, -0.1, 1.5):
        with pytest.raises(MetricError):
            var(ONE_TO_TEN, a)
        with pytest.raises(MetricError):
            tvar(ONE_TO_TEN, a)
    with pytest.raises(MetricError):
        rpl_report(ONE_TO_TEN, [2, 20])


def test_float32_ylt():
    ylt = YearLossTable(np.arange(1, 5), np.array([1.5, 2.5, 3.5, 4.5], dtype=np.float32))
    assert pml(ylt, 2) == 3.5
    assert tvar(ylt, 0.5) == 4.0


losses_st = st.lists(st.one_of(st.floats(0, 1e9, allow_nan=False), st.sampled_from([0.0, 1.0, 2.0])),
                     min_size=1, max_size=200)
alpha_st = st.sampled_from([0.01, 0.1, 0.25, 0.5, 0.7, 0.8, 0.9, 0.95, 0.99, 0.995, 0.999])


@settings(max_examples=200, deadline=None)
@given(losses_st, alpha_st, st.data())
def test_matches_oracles(losses, alpha, data):
    arr = np.array(losses)
    assert exceedance_curve(arr).points == ep_oracle(losses)
    assert var(arr, alpha) == var_oracle(losses, alpha)
    assert tvar(arr, alpha) == tvar_oracle(losses, alpha)
    if len(losses) >= 2:
        rp = data.draw(st.sampled_from([x for x in (1.5, 2, 2.5, 5, 10, 100, 250) if x <= len(losses)]))
        assert pml(arr, rp) == pml_oracle(losses, rp)


@settings(max_examples=100, deadline=None)
@given(losses_st, st.permutations(range(200)))
def test_invariants(losses, perm):
    arr = np.array(losses)
    n = arr.size
    ep = exceedance_curve(arr)
    assert np.all(np.diff(ep.probabilities) < 0) and np.all(np.diff(ep.losses) > 0)
    assert ep.probabilities[0] == 1.0 and np.all(ep.probabilities > 0)
    alphas = [0.1, 0.5, 0.9, 0.99]
    tv = [tvar(arr, a) for a in alphas]
    assert all(a <= b for a, b in zip(tv, tv[1:]))
    assert all(tvar(arr, a) >= var(arr, a) for a in alphas)
    rps = [rp for rp in (1.5, 2, 4, 10, 50, 100) if rp <= n]
    pmls = [pml(arr, rp) for rp in rps]
    assert all(a <= b for a, b in zip(pmls, pmls[1:]))
    for rp, value in zip(rps, pmls):
        # largest loss whose exceedance probability is at least 1/RP
        eligible = [v for v, p in ep.points if p >= 1 / rp]
        assert value == max(eligible)
    shuffled = arr[[i for i in perm if i < n]]
    assert pml(shuffled, rps[0]) == pmls[0] if rps else True
    assert tvar(shuffled, 0.9) == tv[2]
    assert exceedance_curve(shuffled).points == ep.points


def test_tvar_of_equal_tail_is_exact():
    x = 715827883.355911
    losses = np.array([0.0, 0.0, x, x, x])
    assert tvar(losses, 0.5) == var(losses, 0.5) == x
