from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from costream import Conv, Sequential
from costream.timing import LayerTiming, accumulate, combine, delay, readiness_schedule


def test_delay_units():
    assert delay(LayerTiming(3, 0)) == 2
    assert delay(LayerTiming(3, 2)) == 0
    assert LayerTiming(1).d == 0


@pytest.mark.parametrize("f,p,s", [(0, 0, 1), (3, 3, 1), (3, -1, 1), (3, 0, 0)])
def test_layer_timing_rejects_invalid(f, p, s):
    with pytest.raises(ValueError):
        LayerTiming(f, p, s)


def test_worked_example_accumulation():
    nt = accumulate([LayerTiming(3, 2, 2), LayerTiming(3, 0, 1)])
    assert nt.s_acc == (2, 2)
    assert nt.p_acc == (2, 2)
    assert nt.f_acc == (3, 7)
    assert nt.d_acc == (0, 4)
    assert (nt.s_nn, nt.r_nn, nt.d_nn) == (2, Fraction(1, 2), 4)


def test_accumulate_empty():
    with pytest.raises(ValueError):
        accumulate([])


def test_readiness_schedule():
    nt = accumulate([LayerTiming(3, 2, 2), LayerTiming(3, 0, 1)])
    sched = readiness_schedule(nt, 10)
    assert [t for t, r in enumerate(sched) if r] == [4, 6, 8]


layer_st = st.integers(1, 5).flatmap(
    lambda f: st.tuples(st.just(f), st.integers(0, f - 1), st.integers(1, 3))
).map(lambda t: LayerTiming(*t))


@given(st.lists(layer_st, min_size=1, max_size=5), st.lists(layer_st, min_size=1, max_size=5))
def test_combine_matches_accumulate(a, b):
    assert combine(accumulate(a), accumulate(b)) == accumulate(a + b)


@given(st.lists(layer_st, min_size=1, max_size=5))
def test_accumulate_matches_module_chain(layers):
    net = Sequential([Conv(1, 1, lt.f, lt.p, lt.s) for lt in layers])
    nt = accumulate(layers)
    assert (net.delay, net.stride, net.receptive_field, net.padding) == (nt.d_nn, nt.s_nn, nt.f_nn, nt.p_nn)
