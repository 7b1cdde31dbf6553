"""Leave-one-patient-out training: fold planning, tile dataset assembly,
the epoch loop with early stopping, and divergence detection.

The batch cost is the SUM of per-tile losses (soft Dice for the
segmenter, cross-entropy for the classifiers); logged costs are per-tile
means so they are comparable across batch sizes.  Early stopping watches
the held-out patient's cost by default and keeps the best checkpoint.
Augmentation (extra transformed copies of core-containing tiles) is
computed once up front, so runs are reproducible from (data, config,
seed) alone.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigError, DivergenceError, ValidationError
from .models import ModelSpec, build_model, forward
from .optim import make_optimizer
from .tiles import TILE, TileSample, augment_core_tiles, label_samples, tile_slice
from .volume import TissueClass

CLASS_ORDER = (TissueClass.BRAIN, TissueClass.PENUMBRA, TissueClass.CORE,
               TissueClass.BACKGROUND)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    patience: int = 10
    batch_size: int = 32
    optimizer: str = "sgd_nesterov"
    learning_rate: float = 0.01
    momentum: float = 0.9
    stride: int = TILE
    augment: bool = True
    background_keep: float = 1.0  # fraction of background-labeled tiles kept
    max_grad_norm: float = 1.0  # global-norm gradient clip; 0 disables
    min_improvement: float = 1e-5
    monitor: str = "validation"  # or "training"
    seed: int = 0

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch size must be >= 1")
        if not self.patience < self.epochs:
            raise ConfigError(f"patience {self.patience} must be < epochs {self.epochs}")
        if not 0.0 <= self.background_keep <= 1.0:
            raise ConfigError("background_keep must be in [0, 1]")
        if self.monitor not in ("validation", "training"):
            raise ConfigError(f"monitor must be validation|training, got {self.monitor!r}")
        if self.max_grad_norm < 0.0:
            raise ConfigError("max_grad_norm must be >= 0 (0 disables clipping)")


@dataclass(frozen=True)
class FoldPlan:
    held_out: str
    training: tuple


def lopo_split(patient_ids) -> list[FoldPlan]:
    ids = list(patient_ids)
    if len(ids) < 2:
        raise ConfigError(f"leave-one-out needs at least 2 patients, got {len(ids)}")
    if len(set(ids)) != len(ids):
        raise ConfigError("duplicate patient id in cohort")
    return [
        FoldPlan(held_out=pid, training=tuple(p for p in ids if p != pid))
        for pid in ids
    ]


def collect_tiles(volume, labels: np.ndarray, stride: int = TILE) -> list[TileSample]:
    """All labeled tiles of every slice of one patient's CtpVolume;
    labels (S, H, W)."""
    samples: list[TileSample] = []
    for si in range(volume.n_slices):
        samples.extend(label_samples(tile_slice(volume, si, labels[si], stride)))
    return samples


def build_dataset(data: dict, patient_ids, config: TrainConfig,
                  augment: bool | None = None) -> list[TileSample]:
    """Assemble tile samples for the given patients.

    `data` maps patient id -> (CtpVolume, labels (S, H, W) uint8).
    Background-labeled tiles are subsampled by `config.background_keep`
    (seeded); core tiles are augmented when enabled.
    """
    if augment is None:
        augment = config.augment
    rng = np.random.default_rng(config.seed)
    samples: list[TileSample] = []
    for pid in patient_ids:
        if pid not in data:
            raise ValidationError(f"no data for patient {pid!r}")
        volume, labels = data[pid]
        tiles = collect_tiles(volume, labels, config.stride)
        if config.background_keep < 1.0:
            kept = []
            for sample in tiles:
                if sample.tile_label is TissueClass.BACKGROUND:
                    if rng.random() >= config.background_keep:
                        continue
                kept.append(sample)
            tiles = kept
        samples.extend(tiles)
    if augment:
        samples = augment_core_tiles(samples)
    return samples


def _to_arrays(samples: list[TileSample], classifier: bool):
    x = np.stack([s.input for s in samples]).astype(np.float32)[..., None]
    if classifier:
        y = np.zeros((len(samples), len(CLASS_ORDER)), dtype=np.float32)
        for i, s in enumerate(samples):
            y[i, CLASS_ORDER.index(s.tile_label)] = 1.0
    else:
        y = np.stack([s.target for s in samples]).astype(np.float32) / 255.0
    return x, y


def _loss(spec: ModelSpec, pred: Tensor, target: Tensor) -> Tensor:
    if spec.is_classifier:
        return ag.cross_entropy_loss(pred, target)
    return ag.soft_dice_loss(pred, target)


def evaluate_cost(spec: ModelSpec, params: dict, x: np.ndarray, y: np.ndarray,
                  batch_size: int) -> float:
    total = 0.0
    for lo in range(0, len(x), batch_size):
        xb = Tensor(x[lo : lo + batch_size])
        yb = Tensor(y[lo : lo + batch_size])
        total += float(_loss(spec, forward(spec, params, xb), yb).data)
    return total / len(x)


@dataclass
class FoldResult:
    spec: ModelSpec
    params: dict  # best-validation parameters
    optimizer_state: dict
    log: list = field(default_factory=list)  # (epoch, train_cost, val_cost, seconds)
    best_epoch: int = -1
    best_cost: float = float("inf")
    stopped_early: bool = False


def clip_gradients(params: dict, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most `max_norm`.

    The batch cost is a sum over tiles, so the raw gradient magnitude grows
    with batch size; an occasional spike combined with momentum can pin the
    output sigmoid against a rail where gradients vanish and training
    stalls.  Returns the pre-clip norm.
    """
    grads = [p.grad for p in params.values() if p.grad is not None]
    if not grads:
        return 0.0
    norm = float(np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads)))
    if max_norm > 0.0 and norm > max_norm:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * np.asarray(scale, dtype=p.grad.dtype)
    return norm


def train_fold(plan: FoldPlan, config: TrainConfig, model_name: str,
               data: dict) -> FoldResult:
    config.validate()
    if plan.held_out in plan.training:
        raise ConfigError("held-out patient appears in the training set")
    train_samples = build_dataset(data, plan.training, config)
    if not train_samples:
        raise ValidationError("empty training set")
    leaked = {s.patient_id for s in train_samples} & {plan.held_out}
    if leaked:
        raise ConfigError(f"held-out patient tiles leaked into training: {leaked}")
    val_samples = build_dataset(data, [plan.held_out], config, augment=False) \
        if plan.held_out in data else []

    n_frames = train_samples[0].input.shape[0]
    spec, params = build_model(model_name, n_frames=n_frames, seed=config.seed)
    optimizer = make_optimizer(config.optimizer, lr=config.learning_rate,
                               momentum=config.momentum)

    x_train, y_train = _to_arrays(train_samples, spec.is_classifier)
    x_val, y_val = _to_arrays(val_samples, spec.is_classifier) if val_samples else (None, None)

    rng = np.random.default_rng(config.seed + 1)
    result = FoldResult(spec=spec, params=params, optimizer_state={})
    best_params = {k: v.data.copy() for k, v in params.items()}
    since_best = 0

    for epoch in range(config.epochs):
        t_start = time.monotonic()
        perm = rng.permutation(len(x_train))
        epoch_cost = 0.0
        for bi, lo in enumerate(range(0, len(perm), config.batch_size)):
            idx = perm[lo : lo + config.batch_size]
            xb = Tensor(x_train[idx])
            yb = Tensor(y_train[idx])
            try:
                loss = _loss(spec, forward(spec, params, xb), yb)
            except ValidationError as exc:
                raise DivergenceError(
                    f"non-finite values at epoch {epoch}, batch {bi}: {exc}"
                ) from exc
            cost = float(loss.data)
            if not np.isfinite(cost):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}, batch {bi}"
                )
            epoch_cost += cost
            for p in params.values():
                p.grad = None
            loss.backward()
            clip_gradients(params, config.max_grad_norm)
            optimizer.step(params)
        train_cost = epoch_cost / len(x_train)
        try:
            val_cost = (
                evaluate_cost(spec, params, x_val, y_val, config.batch_size)
                if x_val is not None else train_cost
            )
        except ValidationError as exc:
            raise DivergenceError(
                f"non-finite values in validation after epoch {epoch}: {exc}"
            ) from exc
        seconds = time.monotonic() - t_start
        result.log.append((epoch, train_cost, val_cost, seconds))

        monitored = val_cost if config.monitor == "validation" else train_cost
        if monitored < result.best_cost - config.min_improvement:
            result.best_cost = monitored
            result.best_epoch = epoch
            best_params = {k: v.data.copy() for k, v in params.items()}
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                result.stopped_early = True
                break

    result.params = {
        k: Tensor(v, requires_grad=True, name=k) for k, v in best_params.items()
    }
    result.optimizer_state = optimizer.state_arrays()
    return result
