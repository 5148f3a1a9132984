"""Differentiable operations over rank-4 tensors.

Everything the network needs: convolution and size-preserving transposed
convolution, global average pooling, fully-connected layers, sigmoid /
ReLU, broadcasting add and elementwise multiply, half-pixel-center
bilinear resizing, spatial cropping, batch concatenation, and softmax
cross-entropy.  Each function records its backward rule on the returned
tensor.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Parameter, Tensor, as_tensor4, make_op


def _t(x) -> Tensor:
    return x.tensor if isinstance(x, Parameter) else as_tensor4(x)


# ---------------------------------------------------------------------------
# convolution


def _im2col(xp: np.ndarray, k: int, stride: int, oh: int, ow: int) -> np.ndarray:
    n, c = xp.shape[:2]
    if k == 1 and stride == 1:
        return xp.reshape(n, c, oh * ow)
    cols = np.empty((n, c, k, k, oh, ow), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride]
    return cols.reshape(n, c * k * k, oh * ow)


def _col2im(dcols: np.ndarray, xp_shape, k: int, stride: int, oh: int, ow: int) -> np.ndarray:
    n, c = xp_shape[:2]
    if k == 1 and stride == 1:
        return dcols.reshape(xp_shape)
    dxp = np.zeros(xp_shape, dtype=dcols.dtype)
    d = dcols.reshape(n, c, k, k, oh, ow)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += d[:, :, i, j]
    return dxp


def _conv_forward(x: np.ndarray, w: np.ndarray, stride: int, pad: int):
    n, ci, h, wd = x.shape
    co, _, k, _ = w.shape
    oh = (h + 2 * pad - k) // stride + 1
    ow = (wd + 2 * pad - k) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeError(f"kernel {w.shape} does not fit input {x.shape} with stride={stride} pad={pad}")
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = _im2col(xp, k, stride, oh, ow)
    wmat = w.reshape(co, ci * k * k)
    y = np.matmul(wmat[None], cols).reshape(n, co, oh, ow)
    return y, cols, xp.shape, (oh, ow)


def _conv_backward(g: np.ndarray, cols, w: np.ndarray, xp_shape, stride: int, pad: int, need_dx: bool, need_dw: bool):
    n = g.shape[0]
    co, ci, k, _ = w.shape
    oh, ow = g.shape[2], g.shape[3]
    gmat = g.reshape(n, co, oh * ow)
    dw = dx = None
    if need_dw:
        dw = np.matmul(gmat, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
    if need_dx:
        dcols = np.matmul(w.reshape(co, ci * k * k).T[None], gmat)
        dxp = _col2im(dcols, xp_shape, k, stride, oh, ow)
        dx = dxp[:, :, pad : xp_shape[2] - pad, pad : xp_shape[3] - pad] if pad else dxp
    return dx, dw


def conv2d(x, w, b, stride: int = 1, pad: int = 0) -> Tensor:
    """2-d convolution (cross-correlation), kernel (C_out, C_in, k, k).

    Output spatial size is floor((H + 2*pad - k)/stride) + 1.
    """
    xt, wt, bt = _t(x), _t(w), _t(b)
    co, ci, k, k2 = wt.shape
    if k != k2:
        raise ShapeError(f"conv kernel must be square; got {wt.shape}")
    if xt.shape[1] != ci:
        raise ShapeError(f"conv channel mismatch: input {xt.shape} vs kernel {wt.shape}")
    y, cols, xp_shape, _ = _conv_forward(xt.data, wt.data, stride, pad)
    y = y + bt.data

    def bwd(g):
        dx, dw = _conv_backward(g, cols, wt.data, xp_shape, stride, pad, xt.requires_grad, wt.requires_grad)
        out = []
        if dx is not None:
            out.append((xt, dx))
        if dw is not None:
            out.append((wt, dw))
        if bt.requires_grad:
            out.append((bt, g.sum(axis=(0, 2, 3)).reshape(bt.shape)))
        return out

    return make_op(y, (xt, wt, bt), bwd, "conv2d")


def deconv2d(x, w, b) -> Tensor:
    """3x3 transposed convolution, stride 1, output size equal to input size.

    Kernel layout (C_in, C_out, 3, 3).  Equivalent to scattering each
    input cell through the kernel and accumulating; implemented as a
    convolution with the spatially flipped, channel-swapped kernel at
    pad 1, which preserves H x W.
    """
    xt, wt, bt = _t(x), _t(w), _t(b)
    ci, co, k, k2 = wt.shape
    if (k, k2) != (3, 3):
        raise ConfigError(f"deconv kernel must be 3x3; got {wt.shape}")
    if xt.shape[1] != ci:
        raise ShapeError(f"deconv channel mismatch: input {xt.shape} vs kernel {wt.shape}")
    wconv = np.ascontiguousarray(wt.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    y, cols, xp_shape, _ = _conv_forward(xt.data, wconv, 1, 1)
    y = y + bt.data

    def bwd(g):
        dx, dwconv = _conv_backward(g, cols, wconv, xp_shape, 1, 1, xt.requires_grad, wt.requires_grad)
        out = []
        if dx is not None:
            out.append((xt, dx))
        if dwconv is not None:
            dw = dwconv.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1]
            out.append((wt, np.ascontiguousarray(dw)))
        if bt.requires_grad:
            out.append((bt, g.sum(axis=(0, 2, 3)).reshape(bt.shape)))
        return out

    return make_op(y, (xt, wt, bt), bwd, "deconv2d")


# ---------------------------------------------------------------------------
# pooling and fully-connected


def gap(x) -> Tensor:
    """Global average pool: mean over the spatial grid, (N,C,H,W) -> (N,C,1,1)."""
    xt = _t(x)
    n, c, h, w = xt.shape
    y = xt.data.mean(axis=(2, 3), keepdims=True)

    def bwd(g):
        return ((xt, np.broadcast_to(g / (h * w), xt.shape).copy()),)

    return make_op(y, (xt,), bwd, "gap")


def fc(x, w, b) -> Tensor:
    """Affine map on the flattened features: (N,C,H,W) -> (N,C_out,1,1).

    Weight layout (C_out, F_in, 1, 1) with F_in = C*H*W.
    """
    xt, wt, bt = _t(x), _t(w), _t(b)
    n = xt.shape[0]
    fin = int(np.prod(xt.shape[1:]))
    cout, fin_w = wt.shape[0], wt.shape[1]
    if fin != fin_w or wt.shape[2:] != (1, 1):
        raise ShapeError(f"fc mismatch: input {xt.shape} (features {fin}) vs weight {wt.shape}")
    xf = xt.data.reshape(n, fin)
    wm = wt.data.reshape(cout, fin)
    y = (xf @ wm.T + bt.data.reshape(1, cout)).reshape(n, cout, 1, 1)

    def bwd(g):
        gm = g.reshape(n, cout)
        dx = (gm @ wm).reshape(xt.shape)
        dw = (gm.T @ xf).reshape(wt.shape)
        db = gm.sum(axis=0).reshape(bt.shape)
        return ((xt, dx), (wt, dw), (bt, db))

    return make_op(y, (xt, wt, bt), bwd, "fc")


# ---------------------------------------------------------------------------
# elementwise


def sigmoid(x) -> Tensor:
    """Logistic function, clamped into the open interval (0,1) per dtype."""
    xt = _t(x)
    d = xt.data
    y = np.empty_like(d)
    pos = d >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ez = np.exp(d[~pos])
    y[~pos] = ez / (1.0 + ez)
    info = np.finfo(d.dtype)
    np.clip(y, info.tiny, 1.0 - info.eps, out=y)

    def bwd(g):
        return ((xt, g * y * (1.0 - y)),)

    return make_op(y, (xt,), bwd, "sigmoid")


def relu(x) -> Tensor:
    xt = _t(x)
    y = np.maximum(xt.data, 0)

    def bwd(g):
        return ((xt, g * (xt.data > 0)),)

    return make_op(y, (xt,), bwd, "relu")


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    for da, db in zip(a.shape, b.shape):
        if da != db and da != 1 and db != 1:
            raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast")


def _reduce_to(g: np.ndarray, shape) -> np.ndarray:
    axes = tuple(i for i in range(4) if shape[i] == 1 and g.shape[i] != 1)
    return g.sum(axis=axes, keepdims=True) if axes else g


def broadcast_add(a, b) -> Tensor:
    """Elementwise sum with size-1 axis expansion over (N,C,H,W)."""
    at, bt = _t(a), _t(b)
    _check_broadcast(at, bt, "broadcast_add")
    y = at.data + bt.data

    def bwd(g):
        return ((at, _reduce_to(g, at.shape)), (bt, _reduce_to(g, bt.shape)))

    return make_op(y, (at, bt), bwd, "broadcast_add")


def ewise_mul(a, b) -> Tensor:
    """Elementwise product with size-1 axis expansion over (N,C,H,W)."""
    at, bt = _t(a), _t(b)
    _check_broadcast(at, bt, "ewise_mul")
    y = at.data * bt.data

    def bwd(g):
        return ((at, _reduce_to(g * bt.data, at.shape)), (bt, _reduce_to(g * at.data, bt.shape)))

    return make_op(y, (at, bt), bwd, "ewise_mul")


def scale(x, c: float) -> Tensor:
    """Multiply by a python constant (non-differentiated factor)."""
    xt = _t(x)

    def bwd(g):
        return ((xt, g * c),)

    return make_op(xt.data * c, (xt,), bwd, "scale")


def tsum(x) -> Tensor:
    """Sum of all entries, as a (1,1,1,1) scalar tensor."""
    xt = _t(x)
    y = xt.data.sum().reshape(1, 1, 1, 1)

    def bwd(g):
        return ((xt, np.broadcast_to(g.reshape(()), xt.shape).copy()),)

    return make_op(y, (xt,), bwd, "tsum")


# ---------------------------------------------------------------------------
# resampling and layout


def _interp_matrix(n_in: int, n_out: int, dtype) -> np.ndarray:
    """Row-stochastic (n_out, n_in) matrix of half-pixel-center bilinear weights.

    Source coordinate is (dst + 0.5) * n_in/n_out - 0.5, clamped to the
    valid range; each row holds 1-t and t on the two neighboring cells.
    """
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    np.clip(src, 0, n_in - 1, out=src)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    t = src - i0
    m = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.arange(n_out)
    m[rows, i0] += 1.0 - t
    m[rows, i1] += t
    return m.astype(dtype, copy=False)


def bilinear_resize(x, out_h: int, out_w: int) -> Tensor:
    """Bilinear resize with half-pixel-center sampling and edge clamping.

    Resizing to the input's own size is the exact identity.  Implemented
    as two separable interpolation matmuls: Ry @ X @ Rx^T.
    """
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"bilinear_resize target must be >= 1; got ({out_h},{out_w})")
    xt = _t(x)
    n, c, h, w = xt.shape
    if (out_h, out_w) == (h, w):
        return xt
    ry = _interp_matrix(h, out_h, xt.dtype)
    rxt = _interp_matrix(w, out_w, xt.dtype).T.copy()
    y = np.matmul(np.matmul(ry, xt.data), rxt)

    def bwd(g):
        return ((xt, np.matmul(np.matmul(ry.T, g), rxt.T)),)

    return make_op(y, (xt,), bwd, "bilinear_resize")


def crop(x, y1: int, y2: int, x1: int, x2: int) -> Tensor:
    """Spatial slice [y1:y2, x1:x2] (half-open cell indices)."""
    xt = _t(x)
    n, c, h, w = xt.shape
    if not (0 <= y1 < y2 <= h and 0 <= x1 < x2 <= w):
        raise ShapeError(f"crop [{y1}:{y2},{x1}:{x2}] outside grid {h}x{w}")
    y = xt.data[:, :, y1:y2, x1:x2].copy()

    def bwd(g):
        dx = np.zeros(xt.shape, dtype=g.dtype)
        dx[:, :, y1:y2, x1:x2] = g
        return ((xt, dx),)

    return make_op(y, (xt,), bwd, "crop")


def slice_batch(x, i: int, j: int) -> Tensor:
    """Batch slice [i:j]."""
    xt = _t(x)
    if not (0 <= i < j <= xt.shape[0]):
        raise ShapeError(f"slice_batch [{i}:{j}] outside batch {xt.shape[0]}")
    y = xt.data[i:j].copy()

    def bwd(g):
        dx = np.zeros(xt.shape, dtype=g.dtype)
        dx[i:j] = g
        return ((xt, dx),)

    return make_op(y, (xt,), bwd, "slice_batch")


def concat_batch(parts: Sequence) -> Tensor:
    """Concatenate tensors along the batch axis."""
    ts = [_t(p) for p in parts]
    base = ts[0].shape[1:]
    for t in ts[1:]:
        if t.shape[1:] != base:
            raise ShapeError(f"concat_batch: {t.shape} does not match {ts[0].shape}")
    y = np.concatenate([t.data for t in ts], axis=0)
    sizes = [t.shape[0] for t in ts]

    def bwd(g):
        out = []
        ofs = 0
        for t, s in zip(ts, sizes):
            out.append((t, g[ofs : ofs + s]))
            ofs += s
        return tuple(out)

    return make_op(y, tuple(ts), bwd, "concat_batch")


# ---------------------------------------------------------------------------
# loss


def softmax_xent(logits, labels) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label].

    Accepts logits of shape (N,K,1,1) (or any array coercible to it).
    """
    lt = _t(logits)
    n, k = lt.shape[0], lt.shape[1]
    if lt.shape[2] != 1 or lt.shape[3] != 1:
        raise ShapeError(f"softmax_xent logits must be (N,K,1,1); got {lt.shape}")
    lab = np.asarray(labels, dtype=np.intp).reshape(-1)
    if lab.shape[0] != n:
        raise ShapeError(f"softmax_xent: {lab.shape[0]} labels for batch of {n}")
    if lab.size and (lab.min() < 0 or lab.max() >= k):
        raise ValueError(f"label out of range [0,{k}): {lab[(lab < 0) | (lab >= k)][0]}")
    z = lt.data.reshape(n, k)
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    se = e.sum(axis=1, keepdims=True)
    logp = (z - m) - np.log(se)
    loss = (-logp[np.arange(n), lab]).mean().reshape(1, 1, 1, 1)
    probs = e / se

    def bwd(g):
        dz = probs.copy()
        dz[np.arange(n), lab] -= 1.0
        dz *= g.reshape(()) / n
        return ((lt, dz.reshape(lt.shape)),)

    return make_op(loss.astype(lt.dtype), (lt,), bwd, "softmax_xent")


def softmax_probs(logits: np.ndarray) -> np.ndarray:
    """Plain numpy softmax over axis 1 of (N,K) logits (no graph)."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)
