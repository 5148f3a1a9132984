"""Independent brute-force reference implementations used by the tests.

Everything here is deliberately naive (explicit loops, direct formulas)
and shares no code with the library, so a bug cannot hide on both sides
of a comparison.
"""

from __future__ import annotations

import math

import numpy as np


def conv2d_oracle(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int, pad: int) -> np.ndarray:
    """Direct six-loop convolution."""
    n, ci, h, wd = x.shape
    co, _, k, _ = w.shape
    oh = (h + 2 * pad - k) // stride + 1
    ow = (wd + 2 * pad - k) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.zeros((n, co, oh, ow), dtype=np.float64)
    for ni in range(n):
        for oc in range(co):
            for oy in range(oh):
                for ox in range(ow):
                    acc = 0.0
                    for ic in range(ci):
                        for ky in range(k):
                            for kx in range(k):
                                acc += xp[ni, ic, oy * stride + ky, ox * stride + kx] * w[oc, ic, ky, kx]
                    out[ni, oc, oy, ox] = acc + b.reshape(-1)[oc]
    return out


def deconv2d_oracle(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Transposed 3x3 convolution by explicit scatter-accumulate (stride 1, pad 1)."""
    n, ci, h, wd = x.shape
    _, co, k, _ = w.shape
    pad = 1
    full = np.zeros((n, co, h + k - 1, wd + k - 1), dtype=np.float64)
    for ni in range(n):
        for ic in range(ci):
            for iy in range(h):
                for ix in range(wd):
                    v = x[ni, ic, iy, ix]
                    for oc in range(co):
                        for ky in range(k):
                            for kx in range(k):
                                full[ni, oc, iy + ky, ix + kx] += v * w[ic, oc, ky, kx]
    out = full[:, :, pad : pad + h, pad : pad + wd]
    return out + b.reshape(1, co, 1, 1)


def gap_oracle(x: np.ndarray) -> np.ndarray:
    """(1/(W*H)) * sum_i sum_j x(i,j), by explicit double sum."""
    n, c, h, w = x.shape
    out = np.zeros((n, c, 1, 1), dtype=np.float64)
    for ni in range(n):
        for ci in range(c):
            acc = 0.0
            for i in range(h):
                for j in range(w):
                    acc += x[ni, ci, i, j]
            out[ni, ci, 0, 0] = acc / (w * h)
    return out


def fc_oracle(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Naive matrix product on flattened features."""
    n = x.shape[0]
    xf = x.reshape(n, -1)
    cout, fin = w.shape[0], w.shape[1]
    out = np.zeros((n, cout, 1, 1), dtype=np.float64)
    for ni in range(n):
        for oc in range(cout):
            acc = 0.0
            for fi in range(fin):
                acc += xf[ni, fi] * w[oc, fi, 0, 0]
            out[ni, oc, 0, 0] = acc + b.reshape(-1)[oc]
    return out


def bilinear_oracle(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Per-pixel half-pixel-center bilinear interpolation with edge clamping."""
    n, c, h, w = x.shape
    out = np.zeros((n, c, out_h, out_w), dtype=np.float64)
    for oy in range(out_h):
        sy = min(max((oy + 0.5) * h / out_h - 0.5, 0.0), h - 1)
        y0 = int(math.floor(sy))
        y1 = min(y0 + 1, h - 1)
        ty = sy - y0
        for ox in range(out_w):
            sx = min(max((ox + 0.5) * w / out_w - 0.5, 0.0), w - 1)
            x0 = int(math.floor(sx))
            x1 = min(x0 + 1, w - 1)
            tx = sx - x0
            out[:, :, oy, ox] = (
                (1 - ty) * (1 - tx) * x[:, :, y0, x0]
                + (1 - ty) * tx * x[:, :, y0, x1]
                + ty * (1 - tx) * x[:, :, y1, x0]
                + ty * tx * x[:, :, y1, x1]
            )
    return out


def xent_oracle(logits: np.ndarray, labels) -> float:
    """Mean of -log softmax via the direct log-sum-exp formula."""
    z = logits.reshape(logits.shape[0], -1).astype(np.float64)
    total = 0.0
    for i, lab in enumerate(labels):
        m = z[i].max()
        lse = m + math.log(np.exp(z[i] - m).sum())
        total += lse - z[i, lab]
    return total / len(labels)


def iou_oracle_unit_grid(a, b) -> float:
    """IoU of integer-coordinate boxes by counting covered unit cells.

    Exact for integer boxes: each unit cell of the covering lattice is
    either inside a box or not (half-open convention).
    """
    x_lo = int(min(a[0], b[0]))
    x_hi = int(max(a[2], b[2]))
    y_lo = int(min(a[1], b[1]))
    y_hi = int(max(a[3], b[3]))
    inter = union = 0
    for y in range(y_lo, y_hi):
        for x in range(x_lo, x_hi):
            cx, cy = x + 0.5, y + 0.5
            in_a = a[0] <= cx < a[2] and a[1] <= cy < a[3]
            in_b = b[0] <= cx < b[2] and b[1] <= cy < b[3]
            inter += in_a and in_b
            union += in_a or in_b
    return inter / union if union else 0.0


def nms_oracle(boxes, scores, threshold: float):
    """O(n^2) greedy suppression on (x1,y1,x2,y2) float boxes.

    Returns indices of kept boxes, processed in (score desc, y1, x1) order.
    """

    def exact_iou(p, q):
        ix = max(0.0, min(p[2], q[2]) - max(p[0], q[0]))
        iy = max(0.0, min(p[3], q[3]) - max(p[1], q[1]))
        inter = ix * iy
        if inter == 0.0:
            return 0.0
        area_p = (p[2] - p[0]) * (p[3] - p[1])
        area_q = (q[2] - q[0]) * (q[3] - q[1])
        return inter / (area_p + area_q - inter)

    order = sorted(range(len(boxes)), key=lambda i: (-scores[i], boxes[i][1], boxes[i][0]))
    kept = []
    for i in order:
        ok = True
        for j in kept:
            if exact_iou(boxes[i], boxes[j]) > threshold:
                ok = False
                break
        if ok:
            kept.append(i)
    return kept


def anchor_score_oracle(box, mask: np.ndarray, stride: int) -> float:
    """Mean attention over covered cell centers by exhaustive enumeration."""
    h, w = mask.shape
    vals = []
    for i in range(h):
        for j in range(w):
            cy = (i + 0.5) * stride
            cx = (j + 0.5) * stride
            if box[0] <= cx < box[2] and box[1] <= cy < box[3]:
                vals.append(mask[i, j])
    if vals:
        return float(np.mean(vals))
    acy = (box[1] + box[3]) / 2
    acx = (box[0] + box[2]) / 2
    best, best_d = 0.0, None
    for i in range(h):
        for j in range(w):
            d = abs((i + 0.5) * stride - acy) + abs((j + 0.5) * stride - acx)
            if best_d is None or d < best_d:
                best_d, best = d, mask[i, j]
    return float(best)


def numerical_grad(f, x: np.ndarray, h: float = 1e-3) -> np.ndarray:
    """Central finite differences of scalar f at x, elementwise, in float64."""
    x = x.astype(np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gf[i] = (fp - fm) / (2 * h)
    return g


def max_rel_err(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-4) -> float:
    """Max |a-n| / max(|a|,|n|,floor); the floor guards near-zero entries."""
    a = analytic.astype(np.float64)
    nm = numeric.astype(np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(nm)), floor)
    return float((np.abs(a - nm) / denom).max())
