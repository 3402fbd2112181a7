from fractions import Fraction

import numpy as np
import pytest

import oracles
from costream import AvgPool, Conv, Delay, Linear, Sequential, count_flops, relu
from costream.netspec import build
from costream.profile import cost, measure, redundancy_ratio
from costream.randnet import min_length, random_doc


def test_pointwise_ratio_equals_window():
    m = Linear(3, 2, np.ones((2, 3)))
    rep = cost(m, (1, 3), 64)
    assert rep.flops_forward == 64 * rep.flops_step
    assert redundancy_ratio(m, (1, 3), 64) == 64


def test_conv_forward_counts_output_columns():
    m = Conv(2, 3, 3)
    rep = cost(m, (1, 2), 10)
    assert rep.flops_step == 2 * 1 * 3 * 2 * 3
    assert rep.flops_forward == 8 * rep.flops_step
    assert rep.state_bytes == 2 * 1 * 2 * 8
    assert rep.params_count == 3 * 2 * 3 + 3


def test_three_layer_stack_ratio():
    c = 4
    net = Sequential(Conv(c, c, 3), Conv(c, c, 3), Conv(c, c, 3))
    ratio = redundancy_ratio(net, (1, c), 64)
    assert ratio == Fraction(62 + 60 + 58, 3)
    assert 60.0 <= float(ratio) <= 62.0


def test_per_prediction_ratio_halves():
    net = Sequential(Conv(1, 2, 3, stride=2), Conv(2, 1, 3))
    per_step = redundancy_ratio(net, (1, 1), 32)
    assert redundancy_ratio(net, (1, 1), 32, per_prediction=True) == per_step / 2


@pytest.mark.parametrize("seed", range(40))
def test_analytic_matches_instrumented_on_random_nets(seed):
    doc = random_doc(seed)
    m = build(doc)
    shape = doc.input.step_shape(2)
    t = min_length(m) + 3
    assert cost(m, shape, t) == measure(m, shape, t)


def test_step_cost_constant_after_saturation(rng):
    net = Sequential(Conv(2, 2, 3, padding=1), relu(), AvgPool(4, stride=2), Delay(2))
    costs = set()
    with count_flops() as counter:
        for x in rng.standard_normal((100, 1, 2)):
            y = net.forward_step(x)
            spent = counter.reset()
            if y is not None:
                costs.add(spent)
    assert costs == {cost(net, (1, 2), 16).flops_step}


@pytest.mark.parametrize("seed", range(20))
def test_state_bytes_match_per_layer_rule(seed):
    doc = random_doc(seed)
    m = build(doc)
    shape = doc.input.step_shape()
    assert cost(m, shape, min_length(m)).state_bytes == oracles.state_bytes(m, shape)


def test_cost_rejects_short_window():
    with pytest.raises(ValueError):
        cost(Conv(1, 1, 5), (1, 1), 3)
