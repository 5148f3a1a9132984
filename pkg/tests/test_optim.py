"""SGD momentum update rule and the cosine schedule."""

import math

import numpy as np
import pytest

from apcnn import ops
from apcnn.errors import ConfigError
from apcnn.optim import cosine_lr, sgd_step, zero_grads
from apcnn.tensor import Parameter, Rng, Tensor, backward


class TestCosineLr:
    def test_starts_at_lr0(self):
        assert cosine_lr(0, 100, 0.001) == 0.001

    def test_ends_at_zero(self):
        assert cosine_lr(100, 100, 0.001) == pytest.approx(0.0, abs=1e-18)
        assert cosine_lr(50, 50, 0.1) == pytest.approx(0.0, abs=1e-18)

    def test_halfway_is_half(self):
        assert cosine_lr(50, 100, 0.2) == pytest.approx(0.1)

    def test_matches_formula(self):
        for t in range(0, 31, 3):
            assert cosine_lr(t, 30, 0.01) == pytest.approx(0.01 * 0.5 * (1 + math.cos(math.pi * t / 30)))

    def test_rejects_bad_args(self):
        with pytest.raises(ConfigError):
            cosine_lr(-1, 10, 0.1)
        with pytest.raises(ConfigError):
            cosine_lr(11, 10, 0.1)
        with pytest.raises(ConfigError):
            cosine_lr(0, 10, 0.0)


class TestSgdStep:
    def test_single_step_no_momentum(self):
        p = Parameter("p", np.zeros((1, 1, 1, 1), np.float32))
        p.tensor.grad = np.ones((1, 1, 1, 1), np.float32)
        sgd_step([p], lr=0.1, momentum=0.0)
        assert p.data.reshape(()) == pytest.approx(-0.1)

    def test_momentum_accumulates_velocity(self):
        # Two unit-gradient steps with momentum m: p = -lr*(1) - lr*(1 + m)
        p = Parameter("p", np.zeros((1, 1, 1, 1), np.float32))
        for _ in range(2):
            p.tensor.grad = np.ones((1, 1, 1, 1), np.float32)
            sgd_step([p], lr=0.1, momentum=0.9)
        assert p.data.reshape(()) == pytest.approx(-0.1 - 0.1 * 1.9)

    def test_missing_grad_skipped(self):
        p = Parameter("p", np.full((1, 1, 1, 1), 3.0, np.float32))
        sgd_step([p], lr=0.1, momentum=0.9)
        assert p.data.reshape(()) == 3.0

    def test_zero_grads(self):
        p = Parameter("p", np.zeros((1, 1, 1, 1), np.float32))
        p.tensor.grad = np.ones((1, 1, 1, 1), np.float32)
        zero_grads([p])
        assert p.grad is None

    def test_training_determinism(self):
        # Same seed, same data order: bit-identical parameters after k steps.
        def run():
            rng = Rng(77)
            p = Parameter("w", rng.normal((4, 3, 1, 1)))
            x = Tensor(rng.normal((5, 3, 1, 1)))
            for _ in range(10):
                zero_grads([p])
                out = ops.fc(x, p, Tensor(np.zeros((1, 4, 1, 1), np.float32)))
                backward(ops.tsum(ops.ewise_mul(out, out)))
                sgd_step([p], lr=0.01, momentum=0.9)
            return p.data.copy()

        np.testing.assert_array_equal(run(), run())
