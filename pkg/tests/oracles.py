"""Independent brute-force oracles used across the test suite.

Everything here is written for clarity, not speed: nested loops and
direct definitions only, no shared code with the package under test.
"""

from __future__ import annotations

import numpy as np


def conv3d_oracle(x: np.ndarray, k: np.ndarray, bias: np.ndarray,
                  depth_mode: str = "same") -> np.ndarray:
    """Cross-correlation, stride 1, same spatial padding, same|valid depth.

    x: (B, D, H, W, Ci); k: (kd, kh, kw, Ci, Co); bias: (Co,).
    """
    b, d, h, w, ci = x.shape
    kd, kh, kw, _, co = k.shape
    ph_lo, ph_hi = (kh - 1) // 2, kh - 1 - (kh - 1) // 2
    pw_lo, pw_hi = (kw - 1) // 2, kw - 1 - (kw - 1) // 2
    if depth_mode == "same":
        pd_lo, pd_hi = (kd - 1) // 2, kd - 1 - (kd - 1) // 2
        do = d
    else:
        pd_lo = pd_hi = 0
        do = d - kd + 1
    xp = np.zeros((b, d + pd_lo + pd_hi, h + kh - 1, w + kw - 1, ci), dtype=np.float64)
    xp[:, pd_lo : pd_lo + d, ph_lo : ph_lo + h, pw_lo : pw_lo + w, :] = x
    out = np.zeros((b, do, h, w, co), dtype=np.float64)
    for bi in range(b):
        for od in range(do):
            for oy in range(h):
                for ox in range(w):
                    for oc in range(co):
                        acc = 0.0
                        for qd in range(kd):
                            for qy in range(kh):
                                for qx in range(kw):
                                    for ic in range(ci):
                                        acc += (
                                            xp[bi, od + qd, oy + qy, ox + qx, ic]
                                            * k[qd, qy, qx, ic, oc]
                                        )
                        out[bi, od, oy, ox, oc] = acc + bias[oc]
    return out


def pool3d_oracle(x: np.ndarray, kind: str, window) -> np.ndarray:
    """Max/avg pooling with ceil-mode partial windows."""
    b, d, h, w, c = x.shape
    wd, wh, ww = window
    do, ho, wo = -(-d // wd), -(-h // wh), -(-w // ww)
    out = np.zeros((b, do, ho, wo, c), dtype=np.float64)
    for bi in range(b):
        for od in range(do):
            for oy in range(ho):
                for ox in range(wo):
                    for ci in range(c):
                        vals = []
                        for qd in range(od * wd, min((od + 1) * wd, d)):
                            for qy in range(oy * wh, min((oy + 1) * wh, h)):
                                for qx in range(ox * ww, min((ox + 1) * ww, w)):
                                    vals.append(x[bi, qd, qy, qx, ci])
                        out[bi, od, oy, ox, ci] = (
                            max(vals) if kind == "max" else sum(vals) / len(vals)
                        )
    return out


def transpose_conv3d_oracle(x: np.ndarray, k: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Stride = kernel size (non-overlapping upsampling).

    x: (B, D, H, W, Ci); k: (kd, kh, kw, Ci, Co).
    """
    b, d, h, w, ci = x.shape
    kd, kh, kw, _, co = k.shape
    out = np.zeros((b, d * kd, h * kh, w * kw, co), dtype=np.float64)
    for bi in range(b):
        for id_ in range(d):
            for iy in range(h):
                for ix in range(w):
                    for oc in range(co):
                        for qd in range(kd):
                            for qy in range(kh):
                                for qx in range(kw):
                                    acc = 0.0
                                    for ic in range(ci):
                                        acc += x[bi, id_, iy, ix, ic] * k[qd, qy, qx, ic, oc]
                                    out[bi, id_ * kd + qd, iy * kh + qy, ix * kw + qx, oc] += acc
    out += bias
    return out


def confusion_oracle(pred: np.ndarray, truth: np.ndarray, class_value: int,
                     background_value: int = 255) -> tuple[int, int, int, int]:
    """(tp, fp, tn, fn) by explicit pixel counting, excluding background truth."""
    tp = fp = tn = fn = 0
    for p, t in zip(pred.ravel().tolist(), truth.ravel().tolist()):
        if t == background_value:
            continue
        pred_pos = p == class_value
        true_pos = t == class_value
        if pred_pos and true_pos:
            tp += 1
        elif pred_pos:
            fp += 1
        elif true_pos:
            fn += 1
        else:
            tn += 1
    return tp, fp, tn, fn
