"""Declarative builders for the three classifier networks and the mJ-Net
segmenter, plus a per-layer parameter auditor.

Layer chains follow the published comparison table.  Where that table
leaves widths or axis conventions unstated (dense hidden sizes, the
behavior of the decoder's (2,1,1) pools on a time axis already collapsed
to 1), the choices here are solved to land as close as possible to the
published parameter totals; the auditor itemizes whatever difference
remains instead of hiding it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigError, ModelConstructionError

MODEL_NAMES = ("arch1", "arch2", "arch3", "mjnet")

# Published parameter totals used as audit targets.
DECLARED_TOTALS = {"arch1": 203_320, "arch2": 773_384, "arch3": 63_312, "mjnet": 981_553}

# Dense hidden widths solved from the declared totals given the layer
# chains below (closest integer solution; see `perfuseg model audit`).
DENSE_HIDDEN = {"arch1": 638, "arch2": 630, "arch3": 137}

N_CLASSES = 4


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # conv | avg_pool | max_pool | channel_pool | up_concat | flatten | dense
    name: str
    kernel: tuple | None = None  # (kd, kh, kw) for conv / up_concat
    filters: int | None = None
    window: tuple | None = None  # pooling window
    depth_mode: str = "same"
    activation: str | None = None  # relu | sigmoid | softmax | None
    skip_from: str | None = None  # layer name whose output is concatenated
    units: int | None = None  # dense width


@dataclass
class ModelSpec:
    name: str
    layers: list[LayerSpec]
    input_shape: tuple  # (T, 16, 16, 1)
    output_shape: tuple
    shapes: dict = field(default_factory=dict)  # layer name -> output shape (no batch)

    @property
    def is_classifier(self) -> bool:
        return self.output_shape == (N_CLASSES,)


def _classifier_head(hidden: int) -> list[LayerSpec]:
    return [
        LayerSpec("flatten", "flatten"),
        LayerSpec("dense", "fc1", units=hidden, activation="relu"),
        LayerSpec("dense", "fc2", units=N_CLASSES, activation="softmax"),
    ]


def _arch1_layers(t: int) -> list[LayerSpec]:
    return [
        LayerSpec("conv", "conv1", kernel=(t, 3, 3), filters=16, activation="relu"),
        LayerSpec("avg_pool", "avgpool", window=(t, 2, 2)),
        LayerSpec("conv", "conv2", kernel=(1, 3, 3), filters=32, activation="relu"),
        LayerSpec("conv", "conv3", kernel=(1, 3, 3), filters=32, activation="relu"),
        LayerSpec("max_pool", "pool1", window=(1, 2, 2)),
        LayerSpec("conv", "conv4", kernel=(1, 3, 3), filters=64, activation="relu"),
        LayerSpec("max_pool", "pool2", window=(1, 2, 2)),
    ] + _classifier_head(DENSE_HIDDEN["arch1"])


def _arch2_layers(t: int) -> list[LayerSpec]:
    del t  # every kernel is (3,3,3) regardless of the time extent
    return [
        LayerSpec("conv", "conv1", kernel=(3, 3, 3), filters=16, activation="relu"),
        LayerSpec("conv", "conv2", kernel=(3, 3, 3), filters=32, activation="relu"),
        LayerSpec("max_pool", "pool1", window=(2, 2, 2)),
        LayerSpec("conv", "conv3", kernel=(3, 3, 3), filters=32, activation="relu"),
        LayerSpec("conv", "conv4", kernel=(3, 3, 3), filters=32, activation="relu"),
        LayerSpec("max_pool", "pool2", window=(2, 2, 2)),
        LayerSpec("conv", "conv5", kernel=(3, 3, 3), filters=64, activation="relu"),
        LayerSpec("max_pool", "pool3", window=(2, 2, 2)),
    ] + _classifier_head(DENSE_HIDDEN["arch2"])


def _arch3_layers(t: int) -> list[LayerSpec]:
    # "(T,3,3)" is read as the full current time extent with valid depth:
    # the first conv collapses time to 1, later kernels are (1,3,3).
    return [
        LayerSpec("conv", "conv1", kernel=(t, 3, 3), filters=16, depth_mode="valid", activation="relu"),
        LayerSpec("max_pool", "pool1", window=(2, 2, 2)),
        LayerSpec("conv", "conv2", kernel=(1, 3, 3), filters=32, depth_mode="valid", activation="relu"),
        LayerSpec("max_pool", "pool2", window=(2, 2, 2)),
        LayerSpec("conv", "conv3", kernel=(1, 3, 3), filters=64, depth_mode="valid", activation="relu"),
        LayerSpec("max_pool", "pool3", window=(2, 2, 2)),
    ] + _classifier_head(DENSE_HIDDEN["arch3"])


def _mjnet_layers(t: int, decoder_pool: str = "channel") -> list[LayerSpec]:
    if decoder_pool not in ("channel", "depth"):
        raise ConfigError(f"decoder_pool must be 'channel' or 'depth', got {decoder_pool!r}")
    dec_pool_kind = "channel_pool" if decoder_pool == "channel" else "max_pool"
    dec_pool_kwargs = {"window": (2, 1, 1)}
    return [
        # encoder: same as Arch_1 up to the bottleneck
        LayerSpec("conv", "enc1", kernel=(t, 3, 3), filters=16, activation="relu"),
        LayerSpec("avg_pool", "avgpool", window=(t, 1, 1)),
        LayerSpec("conv", "enc2", kernel=(1, 3, 3), filters=32, activation="relu"),
        LayerSpec("conv", "enc3", kernel=(1, 3, 3), filters=64, activation="relu"),
        LayerSpec("max_pool", "pool1", window=(1, 2, 2)),
        LayerSpec("conv", "enc4", kernel=(1, 3, 3), filters=64, activation="relu"),
        LayerSpec("conv", "enc5", kernel=(1, 3, 3), filters=128, activation="relu"),
        LayerSpec("max_pool", "pool2", window=(1, 2, 2)),
        LayerSpec("conv", "bott1", kernel=(1, 3, 3), filters=128, activation="relu"),
        LayerSpec("conv", "bott2", kernel=(1, 3, 3), filters=256, activation="relu"),
        # decoder
        LayerSpec("up_concat", "up1", kernel=(1, 2, 2), filters=64, skip_from="enc5"),
        LayerSpec("conv", "dec1", kernel=(1, 3, 3), filters=128, activation="relu"),
        LayerSpec("conv", "dec2", kernel=(1, 3, 3), filters=64, activation="relu"),
        LayerSpec(dec_pool_kind, "dpool1", **dec_pool_kwargs),
        LayerSpec("up_concat", "up2", kernel=(1, 2, 2), filters=32, skip_from="enc3"),
        LayerSpec("conv", "dec3", kernel=(1, 3, 3), filters=32, activation="relu"),
        LayerSpec("conv", "dec4", kernel=(1, 3, 3), filters=32, activation="relu"),
        LayerSpec(dec_pool_kind, "dpool2", **dec_pool_kwargs),
        LayerSpec("conv", "out", kernel=(1, 3, 3), filters=1, activation="sigmoid"),
    ]


_BUILDERS = {
    "arch1": _arch1_layers,
    "arch2": _arch2_layers,
    "arch3": _arch3_layers,
}


def _he_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / max(fan_in, 1))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def build_model(
    name: str,
    n_frames: int = 30,
    seed: int = 0,
    decoder_pool: str = "channel",
    dtype=np.float32,
) -> tuple[ModelSpec, dict[str, Tensor]]:
    """Resolve a layer chain and return (spec, initialized parameters)."""
    name = name.lower().replace("-", "").replace("_", "")
    if name == "mjnet":
        layers = _mjnet_layers(n_frames, decoder_pool)
    elif name in _BUILDERS:
        layers = _BUILDERS[name](n_frames)
    else:
        raise ConfigError(f"unknown model {name!r}; expected one of {MODEL_NAMES}")

    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    shapes: dict[str, tuple] = {}
    shape = (n_frames, 16, 16, 1)  # (D, H, W, C) without batch

    for layer in layers:
        d, h, w, c = shape if len(shape) == 4 else (1, 1, 1, shape[0])
        if layer.kind == "conv":
            kd, kh, kw = layer.kernel
            if layer.depth_mode == "valid" and kd > d:
                raise ModelConstructionError(
                    f"{layer.name}: valid-depth kernel {kd} exceeds depth {d}"
                )
            kd = min(kd, d) if layer.depth_mode == "valid" else kd
            kshape = (kd, kh, kw, c, layer.filters)
            fan_in = kd * kh * kw * c
            params[f"{layer.name}/kernel"] = Tensor(
                _he_uniform(rng, kshape, fan_in, dtype), requires_grad=True, name=layer.name
            )
            params[f"{layer.name}/bias"] = Tensor(
                np.zeros(layer.filters, dtype=dtype), requires_grad=True, name=layer.name
            )
            do = d if layer.depth_mode == "same" else d - kd + 1
            shape = (do, h, w, layer.filters)
        elif layer.kind in ("max_pool", "avg_pool"):
            wd, wh, ww = (min(layer.window[0], d), layer.window[1], layer.window[2])
            shape = (-(-d // wd), -(-h // wh), -(-w // ww), c)
        elif layer.kind == "channel_pool":
            if c % layer.window[0]:
                raise ModelConstructionError(
                    f"{layer.name}: channel pool {layer.window[0]} does not divide {c} channels"
                )
            shape = (d, h, w, c // layer.window[0])
        elif layer.kind == "up_concat":
            if layer.skip_from not in shapes:
                raise ModelConstructionError(f"{layer.name}: unknown skip {layer.skip_from}")
            kd, kh, kw = layer.kernel
            kshape = (kd, kh, kw, c, layer.filters)
            params[f"{layer.name}/kernel"] = Tensor(
                _he_uniform(rng, kshape, c, dtype), requires_grad=True, name=layer.name
            )
            params[f"{layer.name}/bias"] = Tensor(
                np.zeros(layer.filters, dtype=dtype), requires_grad=True, name=layer.name
            )
            up = (d * kd, h * kh, w * kw)
            skip = shapes[layer.skip_from]
            if up != skip[:3]:
                raise ModelConstructionError(
                    f"{layer.name}: upsampled shape {up} does not match skip {skip[:3]}"
                )
            shape = (up[0], up[1], up[2], layer.filters + skip[3])
        elif layer.kind == "flatten":
            shape = (d * h * w * c,)
        elif layer.kind == "dense":
            (width,) = shape
            params[f"{layer.name}/weight"] = Tensor(
                _he_uniform(rng, (width, layer.units), width, dtype),
                requires_grad=True,
                name=layer.name,
            )
            params[f"{layer.name}/bias"] = Tensor(
                np.zeros(layer.units, dtype=dtype), requires_grad=True, name=layer.name
            )
            shape = (layer.units,)
        else:
            raise ModelConstructionError(f"{layer.name}: unknown layer kind {layer.kind!r}")
        shapes[layer.name] = shape

    if len(shape) == 1:
        output_shape = shape
    else:
        output_shape = (shape[1], shape[2])  # (16, 16) map after squeezing depth/channel
    spec = ModelSpec(
        name=name,
        layers=layers,
        input_shape=(n_frames, 16, 16, 1),
        output_shape=output_shape if len(shape) > 1 else (N_CLASSES,),
        shapes=shapes,
    )
    return spec, params


def forward(spec: ModelSpec, params: dict[str, Tensor], x: Tensor) -> Tensor:
    """Run a batched (B, T, 16, 16, 1) input through the layer chain.

    Classifiers return (B, 4) probabilities; mJ-Net returns a (B, 16, 16)
    map in [0, 1].
    """
    outputs: dict[str, Tensor] = {}
    cur = x
    for layer in spec.layers:
        if layer.kind == "conv":
            d = cur.data.shape[1]
            kd = layer.kernel[0]
            if layer.depth_mode == "valid":
                kd = min(kd, d)
            kernel = params[f"{layer.name}/kernel"]
            cur = ag.conv3d(cur, kernel, params[f"{layer.name}/bias"], layer.depth_mode)
        elif layer.kind in ("max_pool", "avg_pool"):
            kind = "max" if layer.kind == "max_pool" else "avg"
            d = cur.data.shape[1]
            window = (min(layer.window[0], d), layer.window[1], layer.window[2])
            cur = ag.pool3d(cur, kind, window, allow_partial=True)
        elif layer.kind == "channel_pool":
            cur = ag.channel_pool(cur, layer.window[0], "max")
        elif layer.kind == "up_concat":
            cur = ag.transpose_conv_concat(
                cur,
                outputs[layer.skip_from],
                params[f"{layer.name}/kernel"],
                params[f"{layer.name}/bias"],
            )
        elif layer.kind == "flatten":
            cur = ag.reshape(cur, (cur.data.shape[0], -1))
        elif layer.kind == "dense":
            cur = ag.dense(cur, params[f"{layer.name}/weight"], params[f"{layer.name}/bias"])
        if layer.activation == "relu":
            cur = ag.relu(cur)
        elif layer.activation == "sigmoid":
            cur = ag.sigmoid(cur)
        elif layer.activation == "softmax":
            cur = ag.softmax(cur, axis=-1)
        outputs[layer.name] = cur
    if not spec.is_classifier:
        b = cur.data.shape[0]
        cur = ag.reshape(cur, (b, cur.data.shape[2], cur.data.shape[3]))
    return cur


@dataclass
class LayerAudit:
    name: str
    kind: str
    detail: str
    count: int


def count_parameters(spec: ModelSpec, params: dict[str, Tensor]):
    """Per-layer parameter audit plus comparison against the declared total."""
    rows: list[LayerAudit] = []
    for layer in spec.layers:
        kkey, bkey = f"{layer.name}/kernel", f"{layer.name}/bias"
        wkey = f"{layer.name}/weight"
        if kkey in params:
            k = params[kkey].data
            count = k.size + params[bkey].data.size
            detail = "x".join(map(str, k.shape))
            rows.append(LayerAudit(layer.name, layer.kind, detail, int(count)))
        elif wkey in params:
            w = params[wkey].data
            count = w.size + params[bkey].data.size
            rows.append(LayerAudit(layer.name, layer.kind, "x".join(map(str, w.shape)), int(count)))
    total = sum(r.count for r in rows)
    declared = DECLARED_TOTALS.get(spec.name)
    return rows, total, declared


def format_audit(spec: ModelSpec, params: dict[str, Tensor]) -> str:
    rows, total, declared = count_parameters(spec, params)
    lines = [f"model {spec.name}: input {spec.input_shape} -> output {spec.output_shape}"]
    for r in rows:
        lines.append(f"  {r.name:10s} {r.kind:12s} {r.detail:18s} {r.count:>10,d}")
    lines.append(f"  {'total':10s} {'':12s} {'':18s} {total:>10,d}")
    if declared is not None:
        diff = total - declared
        lines.append(
            f"  declared total {declared:,d}; difference {diff:+,d} "
            f"({100.0 * diff / declared:+.3f}%)"
        )
    return "\n".join(lines)
