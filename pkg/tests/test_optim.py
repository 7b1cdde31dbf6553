"""Optimizer update rules against hand-unrolled recursions."""

import numpy as np
import pytest

from perfuseg.autograd import Tensor
from perfuseg.errors import ConfigError
from perfuseg.optim import Adam, SgdNesterov, make_optimizer


def _param(values):
    t = Tensor(np.asarray(values, dtype=np.float64), requires_grad=True)
    return t


def test_nesterov_matches_hand_unrolled():
    lr, mu = 0.1, 0.9
    opt = SgdNesterov(lr=lr, momentum=mu)
    p = _param([1.0, -2.0])
    w = p.data.copy()
    v = np.zeros_like(w)
    rng = np.random.default_rng(0)
    for _ in range(5):
        g = rng.normal(size=2)
        p.grad = g.copy()
        opt.step({"w": p})
        v = mu * v - lr * g
        w = w + mu * v - lr * g
        assert np.allclose(p.data, w, atol=1e-12)


def test_nesterov_zero_momentum_is_plain_sgd():
    opt = SgdNesterov(lr=0.5, momentum=0.0)
    p = _param([4.0])
    p.grad = np.array([2.0])
    opt.step({"w": p})
    assert np.allclose(p.data, [3.0])


def test_adam_matches_hand_unrolled():
    lr, b1, b2, eps = 0.01, 0.9, 0.999, 1e-8
    opt = Adam(lr=lr, beta1=b1, beta2=b2, eps=eps)
    p = _param([0.5, -0.5, 3.0])
    w = p.data.copy()
    m = np.zeros_like(w)
    v = np.zeros_like(w)
    rng = np.random.default_rng(1)
    for t in range(1, 6):
        g = rng.normal(size=3)
        p.grad = g.copy()
        opt.step({"w": p})
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        w = w - lr * mhat / (np.sqrt(vhat) + eps)
        assert np.allclose(p.data, w, atol=1e-12)


def test_step_skips_params_without_grad():
    opt = SgdNesterov(lr=0.1)
    p = _param([1.0])
    opt.step({"w": p})
    assert p.data[0] == 1.0


def test_state_round_trip_preserves_trajectory():
    rng = np.random.default_rng(2)
    grads = [rng.normal(size=3) for _ in range(6)]

    def run(split):
        opt = SgdNesterov(lr=0.05, momentum=0.9)
        p = _param([1.0, 2.0, 3.0])
        for i, g in enumerate(grads):
            if i == split:
                state = opt.state_arrays()
                opt = SgdNesterov(lr=0.05, momentum=0.9)
                opt.load_state_arrays(state)
            p.grad = g.copy()
            opt.step({"w": p})
        return p.data

    assert np.array_equal(run(split=3), run(split=-1))


def test_make_optimizer_names_and_errors():
    assert isinstance(make_optimizer("sgd", lr=0.1), SgdNesterov)
    assert isinstance(make_optimizer("sgd_nesterov", lr=0.1), SgdNesterov)
    assert isinstance(make_optimizer("sgd-nesterov", lr=0.1), SgdNesterov)
    assert isinstance(make_optimizer("adam", lr=0.1), Adam)
    with pytest.raises(ConfigError):
        make_optimizer("rmsprop")
