import numpy as np
import pytest

import oracles
from costream import ConstructionError, Delay, Linear, Reshape, ShapeError, lambda_from_name, stack_ready


def test_linear_matches_oracle(rng):
    w, b = rng.uniform(-1, 1, (3, 2)), rng.uniform(-1, 1, 3)
    m = Linear(2, 3, w, b)
    x = rng.standard_normal((2, 2, 5, 3))
    np.testing.assert_allclose(m.forward(x), oracles.linear(x, w, b), rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(m.forward_step(x[:, :, 1]), oracles.linear(x[:, :, 1], w, b), rtol=1e-12, atol=1e-12)
    assert m.delay == 0 and m.receptive_field == 1
    with pytest.raises(ShapeError):
        m.forward_step(np.zeros((1, 4)))


def test_delay_rows():
    m = Delay(2)
    outs = [m.forward_step(np.array([[v]])) for v in (1.0, 2.0, 3.0)]
    assert outs[0] is None and outs[1] is None
    assert outs[2][0, 0] == 1.0
    assert (m.delay, m.receptive_field, m.padding) == (2, 3, 0)


def test_delay_zero_is_identity(rng):
    x = rng.standard_normal((1, 2, 4))
    np.testing.assert_array_equal(stack_ready(Delay(0).forward_steps(x)), x)
    with pytest.raises(ConstructionError):
        Delay(-1)


def test_reshape(rng):
    m = Reshape((6,))
    x = rng.standard_normal((2, 2, 4, 3))
    assert m.forward(x).shape == (2, 6, 4)
    np.testing.assert_array_equal(m.forward_step(x[:, :, 0]), x[:, :, 0].reshape(2, 6))
    with pytest.raises(ShapeError):
        m.forward_step(np.zeros((1, 5)))


@pytest.mark.parametrize("name,value", [("relu", 0.0), ("identity", -2.0), ("scale:0.5", -1.0), ("add:3", 1.0)])
def test_lambda_catalog(name, value):
    assert lambda_from_name(name).forward_step(np.array([[-2.0]]))[0, 0] == value


@pytest.mark.parametrize("name", ["sigmoid", "scale", "scale:x", "relu:1"])
def test_lambda_catalog_rejects(name):
    with pytest.raises(ConstructionError):
        lambda_from_name(name)
