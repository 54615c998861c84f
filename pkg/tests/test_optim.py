"""Optimizer, learning-rate schedule, and gradient clipping."""

import math

import numpy as np
import pytest

from surgflow.autodiff import Tensor, reduce_sum
from surgflow.errors import ConfigError
from surgflow.optim import AdamW, CosineWarmupSchedule, clip_global_norm
from surgflow.rng import SessionRng


def quad_params(seed=0):
    rng = SessionRng(seed)
    return {"x": Tensor(rng.normal(1.0, (4,)), requires_grad=True)}


class TestAdamW:
    def test_minimizes_quadratic(self):
        params = quad_params()
        opt = AdamW(params, lr=0.1, weight_decay=0.0)
        for _ in range(200):
            opt.zero_grad()
            loss = reduce_sum(params["x"] * params["x"])
            loss.backward()
            opt.step()
        assert np.all(np.abs(params["x"].data) < 1e-2)

    def test_first_step_size_is_lr(self):
        # with bias correction, |update| == lr regardless of gradient scale
        params = {"x": Tensor(np.array([5.0], np.float32), requires_grad=True)}
        opt = AdamW(params, lr=0.25, weight_decay=0.0)
        opt.zero_grad()
        reduce_sum(params["x"] * 3.0).backward()
        before = params["x"].data.copy()
        opt.step()
        assert abs(before[0] - params["x"].data[0]) == pytest.approx(0.25, rel=1e-4)

    def test_weight_decay_decoupled(self):
        # zero gradient: only the decay term moves the weights
        params = {"x": Tensor(np.array([2.0], np.float32), requires_grad=True)}
        opt = AdamW(params, lr=0.1, weight_decay=0.5)
        params["x"].grad = np.zeros(1, np.float32)
        opt.step()
        assert params["x"].data[0] == pytest.approx(2.0 - 0.1 * 0.5 * 2.0)

    def test_frozen_params_skipped(self):
        frozen = Tensor(np.ones(2, np.float32), requires_grad=False)
        opt = AdamW({"f": frozen}, lr=0.1)
        assert "f" not in opt.params


class TestSchedule:
    def test_warmup_then_cosine(self):
        sched = CosineWarmupSchedule(1.0, 0.0, warmup_steps=4, total_steps=12)
        assert sched.lr(0) == pytest.approx(0.25)
        assert sched.lr(3) == pytest.approx(1.0)
        # midpoint of the cosine phase
        assert sched.lr(8) == pytest.approx(0.5)
        assert sched.lr(12) == pytest.approx(0.0, abs=1e-12)
        assert sched.lr(50) == pytest.approx(0.0, abs=1e-12)

    def test_monotone_decay_after_warmup(self):
        sched = CosineWarmupSchedule(1e-3, 1e-6, warmup_steps=5, total_steps=40)
        values = [sched.lr(s) for s in range(5, 41)]
        assert all(a >= b for a, b in zip(values, values[1:]))
        assert values[-1] == pytest.approx(1e-6)

    def test_invalid_configs(self):
        with pytest.raises(ConfigError):
            CosineWarmupSchedule(1.0, 0.0, warmup_steps=0, total_steps=5)
        with pytest.raises(ConfigError):
            CosineWarmupSchedule(1.0, 0.0, warmup_steps=5, total_steps=5)
        with pytest.raises(ConfigError):
            CosineWarmupSchedule(1.0, 2.0, warmup_steps=1, total_steps=5)


class TestClipping:
    def test_norm_preserved_below_threshold(self):
        params = quad_params(1)
        params["x"].grad = np.array([0.3, 0.0, 0.0, 0.0], np.float32)
        norm = clip_global_norm(params, max_norm=5.0)
        assert norm == pytest.approx(0.3)
        np.testing.assert_allclose(params["x"].grad, [0.3, 0, 0, 0])

    def test_scaled_to_max_norm(self):
        params = quad_params(2)
        params["x"].grad = np.full(4, 10.0, np.float32)
        before = math.sqrt(4 * 100.0)
        norm = clip_global_norm(params, max_norm=5.0)
        assert norm == pytest.approx(before)
        after = np.linalg.norm(params["x"].grad)
        assert after == pytest.approx(5.0, rel=1e-5)

    def test_global_across_tensors(self):
        a = Tensor(np.zeros(1, np.float32), requires_grad=True)
        b = Tensor(np.zeros(1, np.float32), requires_grad=True)
        a.grad = np.array([3.0], np.float32)
        b.grad = np.array([4.0], np.float32)
        clip_global_norm({"a": a, "b": b}, max_norm=1.0)
        total = math.sqrt(a.grad[0] ** 2 + b.grad[0] ** 2)
        assert total == pytest.approx(1.0, rel=1e-5)
        # direction preserved
        assert a.grad[0] / b.grad[0] == pytest.approx(0.75, rel=1e-5)

    def test_none_grads_ignored(self):
        params = quad_params(3)
        assert clip_global_norm(params, 1.0) == 0.0
