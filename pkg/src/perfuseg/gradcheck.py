"""Central finite-difference gradient checker for every differentiable op.

Runs in float64.  Inputs are drawn with distinct values separated by more
than the finite-difference step so that max/argmax kinks are never crossed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor


def _distinct(rng: np.random.Generator, shape, scale: float = 0.05) -> np.ndarray:
    """Values with pairwise gaps of `scale`, shuffled, centered off zero."""
    n = int(np.prod(shape))
    vals = (rng.permutation(n) - n / 2 + 0.25) * scale
    return vals.reshape(shape).astype(np.float64)


def _weighted_sum(t: Tensor) -> Tensor:
    w = Tensor(np.cos(np.arange(t.data.size, dtype=np.float64) * 0.7).reshape(t.data.shape))
    return ag.tensor_sum(ag.mul(t, w))


def numeric_gradient(fn, tensors, index: int, step: float = 1e-3) -> np.ndarray:
    base = tensors[index].data
    num = np.zeros_like(base)
    flat, nf = base.reshape(-1), num.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = float(fn(*tensors).data)
        flat[i] = orig - step
        lo = float(fn(*tensors).data)
        flat[i] = orig
        nf[i] = (hi - lo) / (2 * step)
    return num


def max_relative_error(fn, arrays, step: float = 1e-3) -> float:
    """Compare reverse-mode gradients of fn against central differences."""
    tensors = [Tensor(a.astype(np.float64), requires_grad=True) for a in arrays]
    fn(*tensors).backward()
    worst = 0.0
    for i, t in enumerate(tensors):
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = numeric_gradient(fn, tensors, i, step)
        denom = max(np.abs(numeric).max(), np.abs(analytic).max(), 1e-8)
        worst = max(worst, float(np.abs(numeric - analytic).max() / denom))
    return worst


@dataclass
class CheckCase:
    name: str
    build: callable  # rng -> (fn, arrays)


def _conv_case(shape, kshape, depth_mode):
    def build(rng):
        arrays = [
            rng.standard_normal(shape),
            rng.standard_normal(kshape) * 0.5,
            rng.standard_normal(kshape[-1]) * 0.1,
        ]
        return (lambda x, k, b: _weighted_sum(ag.conv3d(x, k, b, depth_mode)), arrays)

    return build


def _cross_entropy_case(rng):
    # the one-hot target is a constant, not a differentiated input
    target = Tensor(np.eye(4)[rng.integers(0, 4, 3)])
    fn = lambda x: ag.cross_entropy_loss(ag.softmax(x), target, validate=False)
    return fn, [rng.standard_normal((3, 4))]


def _cases() -> list[CheckCase]:
    return [
        CheckCase("conv3d/same", _conv_case((2, 3, 5, 5, 2), (2, 3, 3, 2, 3), "same")),
        CheckCase("conv3d/valid", _conv_case((1, 4, 5, 5, 2), (3, 3, 3, 2, 2), "valid")),
        CheckCase("conv3d/full-depth", _conv_case((1, 9, 4, 4, 1), (9, 3, 3, 1, 2), "same")),
        CheckCase(
            "max_pool3d",
            lambda rng: (
                lambda x: _weighted_sum(ag.pool3d(x, "max", (2, 2, 2))),
                [_distinct(rng, (1, 5, 6, 6, 2))],
            ),
        ),
        CheckCase(
            "avg_pool3d",
            lambda rng: (
                lambda x: _weighted_sum(ag.pool3d(x, "avg", (3, 2, 2))),
                [rng.standard_normal((1, 5, 6, 6, 2))],
            ),
        ),
        CheckCase(
            "channel_pool",
            lambda rng: (
                lambda x: _weighted_sum(ag.channel_pool(x, 2)),
                [_distinct(rng, (1, 2, 3, 3, 4))],
            ),
        ),
        CheckCase(
            "transpose_conv3d",
            lambda rng: (
                lambda x, k, b: _weighted_sum(ag.transpose_conv3d(x, k, b)),
                [
                    rng.standard_normal((1, 2, 3, 3, 4)),
                    rng.standard_normal((1, 2, 2, 4, 2)) * 0.5,
                    rng.standard_normal(2) * 0.1,
                ],
            ),
        ),
        CheckCase(
            "dense",
            lambda rng: (
                lambda x, w, b: _weighted_sum(ag.dense(x, w, b)),
                [rng.standard_normal((3, 8)), rng.standard_normal((8, 5)), rng.standard_normal(5)],
            ),
        ),
        CheckCase(
            "relu",
            lambda rng: (lambda x: _weighted_sum(ag.relu(x)), [_distinct(rng, (4, 7))]),
        ),
        CheckCase(
            "sigmoid",
            lambda rng: (lambda x: _weighted_sum(ag.sigmoid(x)), [rng.standard_normal((4, 7))]),
        ),
        CheckCase(
            "softmax",
            lambda rng: (lambda x: _weighted_sum(ag.softmax(x)), [rng.standard_normal((3, 6))]),
        ),
        CheckCase(
            "soft_dice_loss",
            lambda rng: (
                lambda p, t: ag.soft_dice_loss(p, t),
                [rng.uniform(0.05, 0.95, (2, 8, 8)), rng.uniform(0.05, 0.95, (2, 8, 8))],
            ),
        ),
        CheckCase("cross_entropy_loss", _cross_entropy_case),
    ]


def run_gradcheck(seed: int = 0, repeats: int = 10, tolerance: float = 1e-4):
    """Return {op name: worst relative error over `repeats` random draws}."""
    results: dict[str, float] = {}
    for case in _cases():
        worst = 0.0
        for r in range(repeats):
            rng = np.random.default_rng(seed * 1000 + r)
            fn, arrays = case.build(rng)
            worst = max(worst, max_relative_error(fn, arrays))
        results[case.name] = worst
    return results, all(v < tolerance for v in results.values())
