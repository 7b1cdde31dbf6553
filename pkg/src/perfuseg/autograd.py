"""Reverse-mode autodiff over numpy buffers.

Feature tensors are laid out (B, D, H, W, C): batch, depth (time), height,
width, channels.  All convolutions run at stride 1 with zero padding; the
heavy layers reduce to BLAS matmuls.  float32 is the working precision,
float64 is used by the gradient checker.

Gradients accumulate additively across backward calls; callers reset
`.grad` between steps.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, ShapeError, UsageError, ValidationError


class Tensor:
    """Node in a recorded computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, parents=(), backward=None, name=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in parents)
        self._parents = parents
        self._backward = backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={'set' if self.grad is not None else 'none'})"

    def _accumulate(self, g):
        if g.shape != self.data.shape:
            raise ShapeError(f"gradient shape {g.shape} != tensor shape {self.data.shape}")
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad = self.grad + g

    def backward(self):
        """Reverse-mode accumulation from a scalar root."""
        if self.data.size != 1:
            raise UsageError(f"backward requires a scalar loss, got shape {self.data.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is not None and node._parents:
                for parent, pg in zip(node._parents, node._backward(g)):
                    if not parent.requires_grad or pg is None:
                        continue
                    if id(parent) in grads:
                        grads[id(parent)] = grads[id(parent)] + pg
                    else:
                        grads[id(parent)] = pg
            if not node._parents or node._backward is None:
                node._accumulate(g)

    def zero_grad(self):
        self.grad = None

    # Small operator sugar for scalar/loss arithmetic.
    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    def __mul__(self, other):
        return mul(self, _as_tensor(other, self.dtype))

    def item(self) -> float:
        return float(self.data.reshape(()))


def _as_tensor(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _check_finite(data: np.ndarray, op: str) -> np.ndarray:
    if not np.isfinite(data).all():
        raise ValidationError(f"{op} produced non-finite values")
    return data


# ---------------------------------------------------------------------------
# Elementwise and shape ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add shapes differ: {a.data.shape} vs {b.data.shape}")
    return Tensor(a.data + b.data, parents=(a, b), backward=lambda g: (g, g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mul shapes differ: {a.data.shape} vs {b.data.shape}")
    return Tensor(a.data * b.data, parents=(a, b), backward=lambda g: (g * b.data, g * a.data))


def reshape(x: Tensor, shape) -> Tensor:
    old = x.data.shape
    return Tensor(
        x.data.reshape(shape), parents=(x,), backward=lambda g: (g.reshape(old),)
    )


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor(np.where(mask, x.data, 0), parents=(x,), backward=lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ez = np.exp(d[~pos])
    out[~pos] = ez / (1.0 + ez)
    return Tensor(out, parents=(x,), backward=lambda g: (g * out * (1.0 - out),))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return ((g - dot) * out,)

    return Tensor(out, parents=(x,), backward=backward)


def concat(a: Tensor, b: Tensor, axis: int = -1) -> Tensor:
    if a.data.ndim != b.data.ndim:
        raise ShapeError("concat rank mismatch")
    split = a.data.shape[axis]

    def backward(g):
        ga, gb = np.split(g, [split], axis=axis)
        return ga, gb

    return Tensor(np.concatenate([a.data, b.data], axis=axis), parents=(a, b), backward=backward)


def tensor_sum(x: Tensor) -> Tensor:
    shape = x.data.shape
    return Tensor(
        np.asarray(x.data.sum(), dtype=x.dtype),
        parents=(x,),
        backward=lambda g: (np.broadcast_to(g, shape).copy(),),
    )


# ---------------------------------------------------------------------------
# Dense
# ---------------------------------------------------------------------------

def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map on flattened features: (B, F) @ (F, O) + (O,)."""
    b = x.data.shape[0]
    flat = x.data.reshape(b, -1)
    if flat.shape[1] != weight.data.shape[0]:
        raise ShapeError(
            f"dense width mismatch: input {flat.shape[1]} vs weight {weight.data.shape[0]}"
        )
    out = flat @ weight.data + bias.data

    def backward(g):
        g2 = g.reshape(b, -1)
        return (
            (g2 @ weight.data.T).reshape(x.data.shape),
            flat.T @ g2,
            g2.sum(axis=0),
        )

    return Tensor(out, parents=(x, weight, bias), backward=backward)


# ---------------------------------------------------------------------------
# 3D convolution (stride 1)
# ---------------------------------------------------------------------------

def _pad_amounts(k: int, mode: str) -> tuple[int, int]:
    if mode == "same":
        return (k - 1) // 2, k - 1 - (k - 1) // 2
    if mode == "valid":
        return 0, 0
    raise ConfigError(f"unknown padding mode {mode!r}")


def _corr_forward(xp: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Cross-correlation of a padded (B,D,H,W,Ci) input with (kd,kh,kw,Ci,Co)."""
    kd, kh, kw, ci, co = k.shape
    if xp.shape[4] != ci:
        raise ShapeError(f"channel mismatch: input {xp.shape[4]} vs kernel {ci}")
    if kd > xp.shape[1] or kh > xp.shape[2] or kw > xp.shape[3]:
        raise ShapeError(f"kernel {k.shape[:3]} exceeds padded input {xp.shape[1:4]}")
    if kd >= 8 and xp.shape[1] > 1:
        return _corr_forward_timegemm(xp, k)
    win = sliding_window_view(xp, (kd, kh, kw), axis=(1, 2, 3))
    # win: (B, Do, Ho, Wo, Ci, kd, kh, kw)
    return np.tensordot(win, k, axes=([4, 5, 6, 7], [3, 0, 1, 2]))


def _spatial_cols(xp: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """(B*Ho*Wo, kh*kw*Ci*Dp) feature matrix: spatial windows x full depth."""
    b, dp, h, w, ci = xp.shape
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))  # (B, Dp, Ho, Wo, Ci, kh, kw)
    ho, wo = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 5, 6, 4, 1)  # (B, Ho, Wo, kh, kw, Ci, Dp)
    return np.ascontiguousarray(cols).reshape(b * ho * wo, kh * kw * ci * dp)


def _toeplitz_weights(k: np.ndarray, dp: int) -> np.ndarray:
    """Expand (kd,kh,kw,Ci,Co) into (kh*kw*Ci*Dp, Do*Co) over the depth axis."""
    kd, kh, kw, ci, co = k.shape
    do = dp - kd + 1
    w2 = np.zeros((kh, kw, ci, dp, do, co), dtype=k.dtype)
    idx = np.arange(do)
    for q in range(kd):
        # adjacent advanced indices keep the do axis in place (axis 3)
        w2[:, :, :, idx + q, idx, :] = k[q][:, :, :, None, :]
    return w2.reshape(kh * kw * ci * dp, do * co)


def _corr_forward_timegemm(xp: np.ndarray, k: np.ndarray) -> np.ndarray:
    b, dp, h, w, ci = xp.shape
    kd, kh, kw, _, co = k.shape
    do, ho, wo = dp - kd + 1, h - kh + 1, w - kw + 1
    cols = _spatial_cols(xp, kh, kw)
    w2 = _toeplitz_weights(k, dp)
    out = cols @ w2  # (B*Ho*Wo, Do*Co)
    return out.reshape(b, ho, wo, do, co).transpose(0, 3, 1, 2, 4)


def conv3d(
    x: Tensor,
    kernel: Tensor,
    bias: Tensor,
    depth_mode: str = "same",
) -> Tensor:
    """3D cross-correlation at stride 1, same padding on H and W.

    `depth_mode` selects same or valid padding on the depth (time) axis.
    Bias is added per output channel; activations are separate ops.
    """
    kd, kh, kw, ci, co = kernel.data.shape
    pd = _pad_amounts(kd, depth_mode)
    ph = _pad_amounts(kh, "same")
    pw = _pad_amounts(kw, "same")
    pads = ((0, 0), pd, ph, pw, (0, 0))
    xp = np.pad(x.data, pads)
    out = _corr_forward(xp, kernel.data) + bias.data

    def backward(g):
        gk = _conv_kernel_grad(xp, g, kernel.data.shape)
        gx_pad = _conv_input_grad(g, kernel.data, xp.shape)
        sl = tuple(slice(p[0], s - p[1]) for p, s in zip(pads, gx_pad.shape))
        return gx_pad[sl], gk, g.sum(axis=(0, 1, 2, 3))

    return Tensor(_check_finite(out, "conv3d"), parents=(x, kernel, bias), backward=backward)


def _conv_kernel_grad(xp: np.ndarray, g: np.ndarray, kshape) -> np.ndarray:
    kd, kh, kw, ci, co = kshape
    if kd >= 8 and xp.shape[1] > 1:
        b, dp, h, w, _ = xp.shape
        do, ho, wo = g.shape[1], g.shape[2], g.shape[3]
        cols = _spatial_cols(xp, kh, kw)
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1, 4)).reshape(b * ho * wo, do * co)
        dw2 = cols.T @ g2  # (kh*kw*Ci*Dp, Do*Co)
        dw2 = dw2.reshape(kh, kw, ci, dp, do, co)
        gk = np.empty(kshape, dtype=xp.dtype)
        idx = np.arange(do)
        for q in range(kd):
            # indexed result is (kh, kw, ci, do, co); sum out the do axis
            gk[q] = dw2[:, :, :, idx + q, idx, :].sum(axis=3)
        return gk
    win = sliding_window_view(xp, (kd, kh, kw), axis=(1, 2, 3))
    # sum over batch and output positions -> (Ci, kd, kh, kw, Co)
    gk = np.tensordot(win, g, axes=([0, 1, 2, 3], [0, 1, 2, 3]))
    return gk.transpose(1, 2, 3, 0, 4)


def _conv_input_grad(g: np.ndarray, k: np.ndarray, xp_shape) -> np.ndarray:
    """Gradient w.r.t. the padded input of a stride-1 correlation."""
    kd, kh, kw, ci, co = k.shape
    b, dp, hp, wp, _ = xp_shape
    if kd >= 8 and dp > 1:
        do, ho, wo = g.shape[1], g.shape[2], g.shape[3]
        w2 = _toeplitz_weights(k, dp)  # (kh*kw*Ci*Dp, Do*Co)
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1, 4)).reshape(b * ho * wo, do * co)
        dcols = g2 @ w2.T  # (B*Ho*Wo, kh*kw*Ci*Dp)
        dcols = dcols.reshape(b, ho, wo, kh, kw, ci, dp)
        gx = np.zeros(xp_shape, dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                gx[:, :, i : i + ho, j : j + wo, :] += dcols[:, :, :, i, j, :, :].transpose(
                    0, 4, 1, 2, 3
                )
        return gx
    gx = np.zeros(xp_shape, dtype=g.dtype)
    do, ho, wo = g.shape[1], g.shape[2], g.shape[3]
    for qd in range(kd):
        for qh in range(kh):
            for qw in range(kw):
                contrib = g @ k[qd, qh, qw].T  # (..., Co) @ (Co, Ci)
                gx[:, qd : qd + do, qh : qh + ho, qw : qw + wo, :] += contrib
    return gx


# ---------------------------------------------------------------------------
# Pooling
# ---------------------------------------------------------------------------

def _pool_pad(n: int, w: int, allow_partial: bool) -> int:
    if n % w == 0:
        return 0
    if not allow_partial:
        raise ShapeError(f"window {w} does not divide extent {n}")
    return w - n % w


def pool3d(
    x: Tensor,
    kind: str,
    window: tuple[int, int, int],
    allow_partial: bool = True,
) -> Tensor:
    """Non-overlapping max/avg pooling over (depth, height, width).

    A final partial window is permitted when `allow_partial`; averages are
    taken over the real elements only.
    """
    wd, wh, ww = window
    b, d, h, w, c = x.data.shape
    if wd > d or wh > h or ww > w:
        raise ShapeError(f"pool window {window} larger than input {(d, h, w)}")
    pads = (_pool_pad(d, wd, allow_partial), _pool_pad(h, wh, allow_partial), _pool_pad(w, ww, allow_partial))
    fill = -np.inf if kind == "max" else 0.0
    xp = np.pad(
        x.data,
        ((0, 0), (0, pads[0]), (0, pads[1]), (0, pads[2]), (0, 0)),
        constant_values=fill,
    )
    dp, hp, wp = xp.shape[1], xp.shape[2], xp.shape[3]
    od, oh, ow = dp // wd, hp // wh, wp // ww
    blocks = xp.reshape(b, od, wd, oh, wh, ow, ww, c)
    # window elements last: (B, od, oh, ow, C, wd*wh*ww)
    blocks = blocks.transpose(0, 1, 3, 5, 7, 2, 4, 6).reshape(b, od, oh, ow, c, wd * wh * ww)

    if kind == "max":
        arg = blocks.argmax(axis=-1)
        out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

        def backward(g):
            gb = np.zeros_like(blocks)
            np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
            gx = gb.reshape(b, od, oh, ow, c, wd, wh, ww).transpose(0, 1, 5, 2, 6, 3, 7, 4)
            gx = gx.reshape(b, dp, hp, wp, c)
            return (gx[:, :d, :h, :w, :],)

    elif kind == "avg":
        counts = np.ones((d, h, w), dtype=x.dtype)
        counts = np.pad(counts, ((0, pads[0]), (0, pads[1]), (0, pads[2])))
        counts = (
            counts.reshape(od, wd, oh, wh, ow, ww)
            .transpose(0, 2, 4, 1, 3, 5)
            .reshape(od, oh, ow, wd * wh * ww)
            .sum(axis=-1)
        )
        out = blocks.sum(axis=-1) / counts[None, :, :, :, None]

        def backward(g):
            per = g / counts[None, :, :, :, None]
            gb = np.broadcast_to(per[..., None], blocks.shape)
            gx = gb.reshape(b, od, oh, ow, c, wd, wh, ww).transpose(0, 1, 5, 2, 6, 3, 7, 4)
            gx = np.ascontiguousarray(gx).reshape(b, dp, hp, wp, c)
            return (gx[:, :d, :h, :w, :],)

    else:
        raise ConfigError(f"unknown pooling kind {kind!r}")

    return Tensor(out, parents=(x,), backward=backward)


def channel_pool(x: Tensor, window: int, kind: str = "max") -> Tensor:
    """Non-overlapping pooling along the channel axis (window must divide C)."""
    b, d, h, w, c = x.data.shape
    if c % window:
        raise ShapeError(f"channel window {window} does not divide {c} channels")
    blocks = x.data.reshape(b, d, h, w, c // window, window)
    if kind == "max":
        arg = blocks.argmax(axis=-1)
        out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

        def backward(g):
            gb = np.zeros_like(blocks)
            np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
            return (gb.reshape(b, d, h, w, c),)

    elif kind == "avg":
        out = blocks.mean(axis=-1)

        def backward(g):
            gb = np.broadcast_to((g / window)[..., None], blocks.shape)
            return (np.ascontiguousarray(gb).reshape(b, d, h, w, c),)

    else:
        raise ConfigError(f"unknown pooling kind {kind!r}")
    return Tensor(out, parents=(x,), backward=backward)


# ---------------------------------------------------------------------------
# Transpose convolution (kernel == stride, no padding)
# ---------------------------------------------------------------------------

def transpose_conv3d(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """Transpose convolution with stride equal to the kernel window.

    out[b, d*kd+a, y*kh+i, x*kw+j, co] = sum_ci in[b,d,y,x,ci] * K[a,i,j,ci,co] + bias.
    With the (1,2,2) kernel this exactly doubles H and W.
    """
    kd, kh, kw, ci, co = kernel.data.shape
    b, d, h, w, c = x.data.shape
    if c != ci:
        raise ShapeError(f"channel mismatch: input {c} vs kernel {ci}")
    t = np.tensordot(x.data, kernel.data, axes=([4], [3]))  # (B,D,H,W,kd,kh,kw,Co)
    t = t.transpose(0, 1, 4, 2, 5, 3, 6, 7)
    out = t.reshape(b, d * kd, h * kh, w * kw, co) + bias.data

    def backward(g):
        gr = g.reshape(b, d, kd, h, kh, w, kw, co).transpose(0, 1, 3, 5, 2, 4, 6, 7)
        gx = np.tensordot(gr, kernel.data, axes=([4, 5, 6, 7], [0, 1, 2, 4]))
        gk = np.tensordot(x.data, gr, axes=([0, 1, 2, 3], [0, 1, 2, 3]))
        # gk: (Ci, kd, kh, kw, Co) -> (kd, kh, kw, Ci, Co)
        return gx, gk.transpose(1, 2, 3, 0, 4), g.sum(axis=(0, 1, 2, 3))

    return Tensor(_check_finite(out, "transpose_conv3d"), parents=(x, kernel, bias), backward=backward)


def transpose_conv_concat(decoder_in: Tensor, skip: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """Upsample the decoder tensor and concatenate the skip along channels."""
    up = transpose_conv3d(decoder_in, kernel, bias)
    if up.data.shape[1:4] != skip.data.shape[1:4]:
        raise ShapeError(
            f"post-upsample shape {up.data.shape[1:4]} does not match skip "
            f"{skip.data.shape[1:4]}"
        )
    return concat(up, skip, axis=4)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def soft_dice_loss(pred: Tensor, target: Tensor, epsilon: float = 1e-6) -> Tensor:
    """1 - (2*sum|pred*target| + eps) / (sum target^2 + sum pred^2 + eps).

    Computed per sample over all but the leading batch axis (or over the
    whole array for unbatched inputs); the result for a batch is the sum of
    per-sample losses.
    """
    if epsilon <= 0:
        raise ConfigError("soft dice epsilon must be > 0")
    if pred.data.shape != target.data.shape:
        raise ShapeError(f"pred {pred.data.shape} vs target {target.data.shape}")
    p, t = pred.data, target.data
    batched = p.ndim > 2
    axes = tuple(range(1, p.ndim)) if batched else tuple(range(p.ndim))
    prod = p * t
    num = 2.0 * np.abs(prod).sum(axis=axes) + epsilon
    den = (t * t).sum(axis=axes) + (p * p).sum(axis=axes) + epsilon
    losses = 1.0 - num / den
    out = np.asarray(losses.sum(), dtype=p.dtype)

    def backward(g):
        scale = g.reshape(())
        shape = (-1,) + (1,) * (len(axes)) if batched else (1,) * p.ndim
        n = num.reshape(shape)
        d = den.reshape(shape)
        dnum = 2.0 * np.sign(prod) * t
        gp = scale * (n * 2.0 * p - dnum * d) / (d * d)
        gt = scale * (n * 2.0 * t - 2.0 * np.sign(prod) * p * d) / (d * d)
        return gp.astype(p.dtype), gt.astype(p.dtype)

    return Tensor(out, parents=(pred, target), backward=backward)


def cross_entropy_loss(pred: Tensor, target: Tensor, validate: bool = True) -> Tensor:
    """-sum target*log(pred + 1e-12) over the class axis, summed over a batch.

    `pred` must already be a probability vector (softmax output); `target`
    one-hot rows.
    """
    p, t = pred.data, target.data
    if p.shape != t.shape:
        raise ShapeError(f"pred {p.shape} vs target {t.shape}")
    if validate:
        sums = p.sum(axis=-1)
        if not np.allclose(sums, 1.0, atol=1e-6):
            raise ValidationError("cross entropy pred rows must sum to 1")
        ok = np.all(np.isin(t, (0.0, 1.0))) and np.allclose(t.sum(axis=-1), 1.0)
        if not ok:
            raise ValidationError("cross entropy target must be one-hot")
    logp = np.log(p + 1e-12)
    out = np.asarray(-(t * logp).sum(), dtype=p.dtype)

    def backward(g):
        scale = g.reshape(())
        return (scale * (-t / (p + 1e-12)), None)

    return Tensor(out, parents=(pred, target), backward=backward)
