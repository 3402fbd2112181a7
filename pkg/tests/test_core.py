import numpy as np
import pytest

from costream import (
    CallMode,
    Conv,
    Delay,
    InsufficientLengthError,
    Lambda,
    ShapeError,
    call_mode,
    stack_ready,
    state_digest,
)
from costream.core import RingBuffer


def _conv(rng, **kw):
    k = rng.uniform(-1, 1, (2, 2, 3))
    return Conv(2, 2, 3, kernel=k, bias=rng.uniform(-1, 1, 2), **kw)


def test_call_mode_dispatch(rng):
    m = _conv(rng, padding=2)  # delay 0: first step is ready
    x = rng.standard_normal((1, 2, 6))
    assert m(x).shape == (1, 2, 8)
    m.call_mode = "forward_step"
    assert m(x[:, :, 0]).shape == (1, 2)
    m.clean_state()
    m.call_mode = CallMode.FORWARD_STEPS
    assert len(m(x)) == 6


def test_call_mode_context_restores(rng):
    m = _conv(rng)
    x = rng.standard_normal((1, 2, 5))
    with call_mode("forward_steps"):
        assert isinstance(m(x), list)
    assert m(x).shape == (1, 2, 3)
    with pytest.raises(ValueError):
        with call_mode("sideways"):
            pass


def test_update_state_false_leaves_state_untouched(rng):
    m = _conv(rng)
    x = rng.standard_normal((1, 2, 6))
    m.forward_steps(x[:, :, :3])
    before = state_digest(m)
    a = m.forward_step(x[:, :, 3], update_state=False)
    assert state_digest(m) == before
    b = m.forward_step(x[:, :, 3])
    np.testing.assert_array_equal(a, b)
    assert state_digest(m) != before
    snapshot = state_digest(m)
    m.forward_steps(x, update_state=False, pad_end=True)
    assert state_digest(m) == snapshot


def test_clean_state_resets(rng):
    m = _conv(rng)
    fresh = state_digest(m)
    m.forward_steps(rng.standard_normal((1, 2, 4)))
    m.clean_state()
    assert state_digest(m) == fresh


def test_empty_input_does_not_advance(rng):
    m = _conv(rng)
    before = state_digest(m)
    assert m.forward_step(None) is None
    assert state_digest(m) == before


def test_forward_never_touches_state(rng):
    m = _conv(rng)
    m.forward_steps(rng.standard_normal((1, 2, 2)))
    before = state_digest(m)
    m.forward(rng.standard_normal((1, 2, 7)))
    assert state_digest(m) == before


def test_insufficient_length(rng):
    m = _conv(rng)
    with pytest.raises(InsufficientLengthError):
        m.forward(rng.standard_normal((1, 2, 2)))


def test_step_shape_must_stay_fixed(rng):
    m = _conv(rng)
    m.forward_step(rng.standard_normal((1, 2)))
    with pytest.raises(ShapeError):
        m.forward_step(rng.standard_normal((2, 2)))


def test_lambda_shape_consistency():
    calls = iter([np.zeros((1, 2)), np.zeros((1, 3))])
    m = Lambda(lambda x: next(calls), "shifty")
    m.forward_step(np.zeros((1, 2)))
    with pytest.raises(ShapeError):
        m.forward_step(np.zeros((1, 2)))


def test_stack_ready_and_delay_schedule():
    m = Delay(2)
    outs = m.forward_steps(np.arange(5.0).reshape(1, 1, 5), pad_end=True)
    assert [o is None for o in outs] == [True, True] + [False] * 5
    np.testing.assert_array_equal(stack_ready(outs)[0, 0], np.arange(5.0))
    assert stack_ready([None, None]) is None


def test_ring_buffer_order():
    rb = RingBuffer(3)
    rb.allocate((1,))
    for v in range(5):
        rb.push(np.array([float(v)]))
    np.testing.assert_array_equal(rb.ordered().ravel(), [2.0, 3.0, 4.0])
    assert rb.oldest()[0] == 2.0
    assert rb.nbytes == 24
