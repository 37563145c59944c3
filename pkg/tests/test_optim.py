"""Tests for the Adam optimizer."""

import numpy as np
import pytest

from disent_toolkit.autodiff import Tensor, backward
from disent_toolkit.errors import NumericError, ShapeError
from disent_toolkit.nn import Adam, AdamState, adam_step


class TestAdamStep:
    """Single bias-corrected updates."""

    def test_first_step_is_lr_times_sign(self):
        params = {"w": Tensor([1.0, -2.0])}
        state = AdamState.for_params(params)
        adam_step(state, params, {"w": np.array([0.1, -0.1])})
        expected_step = 1e-3 * 0.1 / (0.1 + 1e-8)
        np.testing.assert_allclose(params["w"].data, [1.0 - expected_step, -2.0 + expected_step], rtol=1e-12)
        assert state.t == 1

    def test_missing_gradient_counts_as_zero(self):
        params = {"w": Tensor([3.0]), "b": Tensor([4.0])}
        state = AdamState.for_params(params)
        adam_step(state, params, {"w": np.array([1.0])})
        assert params["b"].data[0] == 4.0
        assert params["w"].data[0] < 3.0

    def test_non_finite_gradient_leaves_everything_untouched(self):
        params = {"a": Tensor([1.0]), "b": Tensor([2.0])}
        state = AdamState.for_params(params)
        with pytest.raises(NumericError, match="b"):
            adam_step(state, params, {"a": np.array([1.0]), "b": np.array([np.nan])})
        assert params["a"].data[0] == 1.0
        assert state.t == 0
        assert state.m["a"][0] == 0.0

    def test_gradient_shape_mismatch(self):
        params = {"w": Tensor(np.zeros(3))}
        state = AdamState.for_params(params)
        with pytest.raises(ShapeError, match="w"):
            adam_step(state, params, {"w": np.zeros(2)})


class TestAdam:
    """Optimizer bound to a parameter dict."""

    def test_minimizes_quadratic(self):
        x = Tensor([0.0], requires_grad=True)
        optimizer = Adam({"x": x}, lr=0.01)
        for _ in range(3000):
            optimizer.zero_grad()
            backward(((x - 3.0) * (x - 3.0)).sum())
            optimizer.step()
        assert x.data[0] == pytest.approx(3.0, abs=0.05)

    def test_lr_setter_reaches_state(self):
        optimizer = Adam({"x": Tensor([0.0])}, lr=0.01)
        optimizer.lr = 0.5
        assert optimizer.state.lr == 0.5
        assert optimizer.state.hyperparameters()["lr"] == 0.5
