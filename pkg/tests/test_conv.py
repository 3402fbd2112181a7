import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from costream import ConstructionError, Conv, ShapeError, conv_forward, stack_ready


@st.composite
def conv_case(draw):
    n_sp = draw(st.integers(0, 2))
    kt = draw(st.integers(1, 4))
    ks = tuple(draw(st.integers(1, 3)) for _ in range(n_sp))
    spatial = tuple(draw(st.integers(k, 5)) for k in ks)
    return dict(
        c_in=draw(st.integers(1, 3)), c_out=draw(st.integers(1, 3)), kt=kt, ks=ks, spatial=spatial,
        padding=draw(st.integers(0, kt - 1)), stride=draw(st.integers(1, 3)),
        sp_pad=tuple(draw(st.integers(0, k - 1)) for k in ks),
        sp_str=tuple(draw(st.integers(1, 2)) for _ in ks),
        extra=draw(st.integers(0, 6)), seed=draw(st.integers(0, 2 ** 32 - 1)),
    )


def _make(case):
    rng = np.random.default_rng(case["seed"])
    kernel = rng.uniform(-1, 1, (case["c_out"], case["c_in"], case["kt"]) + case["ks"])
    bias = rng.uniform(-1, 1, case["c_out"])
    m = Conv(case["c_in"], case["c_out"], (case["kt"],) + case["ks"], case["padding"], case["stride"],
             case["sp_pad"], case["sp_str"], kernel=kernel, bias=bias)
    t = max(1, case["kt"] - 2 * case["padding"]) + case["extra"]
    x = rng.standard_normal((2, case["c_in"], t) + case["spatial"])
    return m, x


@settings(max_examples=60, deadline=None)
@given(conv_case())
def test_conv_matches_oracle_in_both_modes(case):
    m, x = _make(case)
    want = oracles.conv(x, m.kernel, m.bias, m.padding, m.stride, m.spatial_padding, m.spatial_stride)
    got = m.forward(x)
    np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)
    steps = stack_ready(m.forward_steps(x, pad_end=True))
    np.testing.assert_allclose(steps, want, rtol=1e-12, atol=1e-12)


def test_conv_timing_attributes():
    assert Conv(1, 1, 3, padding=0).delay == 2
    assert Conv(1, 1, 3, padding=2).delay == 0
    m = Conv(1, 1, 5, padding=1, stride=2)
    assert (m.receptive_field, m.padding, m.stride, m.delay) == (5, 1, 2, 3)


def test_conv_state_bytes(rng):
    m = Conv(3, 2, (4, 2), kernel=rng.uniform(-1, 1, (2, 3, 4, 2)))
    m.forward_steps(rng.standard_normal((2, 3, 6, 5)))
    assert m.state_nbytes() == (4 - 1) * 2 * 3 * 5 * 8


def test_first_ready_tick_is_delay(rng):
    m = Conv(1, 1, 5, padding=1, stride=2, kernel=rng.uniform(-1, 1, (1, 1, 5)))
    outs = m.forward_steps(rng.standard_normal((1, 1, 12)))
    ready = [t for t, y in enumerate(outs) if y is not None]
    assert ready == [3, 5, 7, 9, 11]


@pytest.mark.parametrize("kw", [dict(padding=3), dict(padding=-1), dict(stride=0)])
def test_conv_rejects_bad_timing(kw):
    with pytest.raises(ConstructionError):
        Conv(1, 1, 3, **kw)


def test_conv_shape_errors(rng):
    m = Conv(2, 1, 3)
    with pytest.raises(ShapeError):
        m.forward(rng.standard_normal((1, 3, 5)))
    with pytest.raises(ShapeError):
        m.forward_step(rng.standard_normal((1, 3)))
    with pytest.raises(ShapeError):
        Conv(2, 1, 3, kernel=np.zeros((1, 2, 2)))


def test_conv_forward_function_pads_symmetrically(rng):
    x = rng.standard_normal((1, 1, 4))
    k = np.ones((1, 1, 3))
    y = conv_forward(x, k, padding=1)
    np.testing.assert_allclose(y[0, 0], [x[0, 0, :2].sum(), x[0, 0, :3].sum(), x[0, 0, 1:].sum(), x[0, 0, 2:].sum()])
