import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from costream import MhaParams, MultiheadAttention, ShapeError, mha_forward, stack_ready


def random_params(rng, e, h, n, bias=True):
    w = [rng.uniform(-1, 1, (e, e)) for _ in range(4)]
    b = [rng.uniform(-1, 1, e) if bias else None for _ in range(4)]
    return MhaParams(e, h, n, *w, *b)


@st.composite
def mha_case(draw):
    h = draw(st.integers(1, 3))
    return dict(e=h * draw(st.integers(1, 2)), h=h, n=draw(st.integers(1, 5)),
                extra=draw(st.integers(0, 5)), bias=draw(st.booleans()),
                seed=draw(st.integers(0, 2 ** 32 - 1)))


@settings(max_examples=40, deadline=None)
@given(mha_case())
def test_sliding_attention_matches_oracle(case):
    rng = np.random.default_rng(case["seed"])
    p = random_params(rng, case["e"], case["h"], case["n"], case["bias"])
    m = MultiheadAttention(p)
    x = rng.standard_normal((2, case["e"], case["n"] + case["extra"]))
    want = oracles.attention_sliding(p, x)
    np.testing.assert_allclose(m.forward(x), want, rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(stack_ready(m.forward_steps(x, pad_end=True)), want, rtol=1e-9, atol=1e-9)


def test_full_attention_matches_oracle(rng):
    p = random_params(rng, 4, 2, 5)
    x = rng.standard_normal((2, 4, 5))
    np.testing.assert_allclose(mha_forward(p, x), oracles.attention_full(p, x), rtol=1e-9, atol=1e-9)


def test_step_output_is_last_row_of_full_attention(rng):
    p = random_params(rng, 4, 2, 3)
    m = MultiheadAttention(p)
    x = rng.standard_normal((1, 4, 3))
    outs = m.forward_steps(x)
    assert outs[0] is None and outs[1] is None
    np.testing.assert_allclose(outs[2], mha_forward(p, x)[:, :, -1], rtol=1e-12)


def test_attention_state_and_timing(rng):
    m = MultiheadAttention(random_params(rng, 4, 1, 4))
    assert (m.receptive_field, m.delay, m.padding) == (4, 3, 0)
    m.forward_steps(rng.standard_normal((2, 4, 6)))
    assert m.state_nbytes() == 2 * (4 - 1) * 2 * 4 * 8


def test_attention_validation(rng):
    with pytest.raises(ValueError):
        MhaParams.zeros(5, 2, 3)
    with pytest.raises(ShapeError):
        mha_forward(random_params(rng, 4, 2, 3), np.zeros((1, 4, 4)))
    with pytest.raises(ShapeError):
        MultiheadAttention(MhaParams.zeros(4, 2, 3)).forward_step(np.zeros((1, 3)))
