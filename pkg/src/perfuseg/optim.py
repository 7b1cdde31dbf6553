"""Optimizers: SGD with Nesterov momentum, and Adam."""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .autograd import Tensor


class SgdNesterov:
    """v <- mu*v - lr*g (gradient taken at the lookahead point);
    w <- w + mu*v - lr*g."""

    kind = "sgd-nesterov"

    def __init__(self, lr: float = 0.01, momentum: float = 0.9):
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.velocity: dict[str, np.ndarray] = {}
        self.step_count = 0

    def step(self, params: dict[str, Tensor]) -> None:
        self.step_count += 1
        for name, p in params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ShapeError(f"gradient/parameter shape mismatch for {name}")
            v = self.velocity.get(name)
            if v is None:
                v = np.zeros_like(p.data)
            v = self.momentum * v - self.lr * g
            self.velocity[name] = v
            p.data = p.data + self.momentum * v - self.lr * g

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {f"velocity/{k}": v for k, v in self.velocity.items()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.velocity = {
            k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith("velocity/")
        }

    def hyperparams(self) -> dict[str, float]:
        return {"lr": self.lr, "momentum": self.momentum}


class Adam:
    """Standard bias-corrected Adam update."""

    kind = "adam"

    def __init__(self, lr: float = 0.001, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def step(self, params: dict[str, Tensor]) -> None:
        self.step_count += 1
        t = self.step_count
        for name, p in params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ShapeError(f"gradient/parameter shape mismatch for {name}")
            m = self.m.get(name, np.zeros_like(p.data))
            v = self.v.get(name, np.zeros_like(p.data))
            m = self.beta1 * m + (1 - self.beta1) * g
            v = self.beta2 * v + (1 - self.beta2) * g * g
            self.m[name] = m
            self.v[name] = v
            mhat = m / (1 - self.beta1**t)
            vhat = v / (1 - self.beta2**t)
            p.data = p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {f"m/{k}": v for k, v in self.m.items()}
        out.update({f"v/{k}": v for k, v in self.v.items()})
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.m = {k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith("m/")}
        self.v = {k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith("v/")}

    def hyperparams(self) -> dict[str, float]:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}


def make_optimizer(kind: str, **kwargs):
    if kind in ("sgd", "sgd-nesterov", "sgd_nesterov"):
        return SgdNesterov(
            lr=kwargs.get("lr", 0.01), momentum=kwargs.get("momentum", 0.9)
        )
    if kind == "adam":
        return Adam(
            lr=kwargs.get("lr", 0.001),
            beta1=kwargs.get("beta1", 0.9),
            beta2=kwargs.get("beta2", 0.999),
            eps=kwargs.get("eps", 1e-8),
        )
    from .errors import ConfigError

    raise ConfigError(f"unknown optimizer {kind!r}")
