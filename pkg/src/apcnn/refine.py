"""ROI-guided refinement: dropblock on the low-level feature plus zoom-in.

Training: pick a pyramid level with the configured per-level
probabilities (residual mass means no drop), pick one of its ROIs
uniformly, zero that footprint on the feature map and rescale survivors
by count/count_ones.  Both modes then crop the min/max envelope of all
ROIs and bilinearly resize it back to full size.  ROI coordinates and
masks are constants for the backward pass; gradients flow through the
feature values only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import ops
from .rois import Roi
from .tensor import Rng, Tensor


@dataclass
class RefinementPlan:
    """Outcome of the refinement decisions for one image."""

    drop_roi: Optional[Roi]
    zoom_rect: tuple  # (x1, x2, y1, y2) in input pixels
    drop_probs: tuple

    def to_json(self) -> dict:
        return {
            "drop_roi": self.drop_roi.to_json() if self.drop_roi is not None else None,
            "zoom_rect": [round(float(v), 4) for v in self.zoom_rect],
            "drop_probs": list(self.drop_probs),
        }


def select_drop_roi(r_all: Sequence[Sequence[Roi]], probs: Sequence[float], rng: Rng, training: bool) -> Optional[Roi]:
    """Level s with probability p_s, then uniform within R_s; None otherwise.

    Residual probability mass 1 - sum(p) means no drop; inference never
    drops.  An empty selected level also falls back to no drop.
    """
    if not training:
        return None
    total = float(sum(probs))
    if total > 1.0 + 1e-9:
        raise ValueError(f"drop probabilities sum to {total} > 1")
    u = rng.uniform()
    acc = 0.0
    for level, p in enumerate(probs):
        acc += p
        if u < acc:
            candidates = r_all[level] if level < len(r_all) else []
            if not candidates:
                return None
            return candidates[rng.integers(len(candidates))]
    return None


def _span_to_cells(lo: float, hi: float, stride: int, n: int) -> tuple:
    """Pixel span -> half-open cell span: floor start, ceil end, >=1 cell."""
    c1 = int(math.floor(lo / stride))
    c2 = int(math.ceil(hi / stride))
    c1 = max(0, min(c1, n - 1))
    c2 = max(c1 + 1, min(c2, n))
    return c1, c2


def drop_mask(shape: tuple, roi: Roi, stride: int) -> Tensor:
    """Binary keep-mask for a feature grid: 0 inside the scaled ROI, 1 outside.

    A full-cover drop region is shrunk by one row (or column) so at least
    one cell survives; an ROI entirely outside the grid keeps everything.
    """
    h, w = shape[2], shape[3]
    if roi.x2 <= 0 or roi.y2 <= 0 or roi.x1 >= w * stride or roi.y1 >= h * stride:
        return Tensor(np.ones((1, 1, h, w), dtype=np.float32))
    y1, y2 = _span_to_cells(roi.y1, roi.y2, stride, h)
    x1, x2 = _span_to_cells(roi.x1, roi.x2, stride, w)
    if (y2 - y1) * (x2 - x1) == h * w:
        if h > 1:
            y2 -= 1
        elif w > 1:
            x2 -= 1
        else:
            return Tensor(np.ones((1, 1, 1, 1), dtype=np.float32))
    m = np.ones((1, 1, h, w), dtype=np.float32)
    m[:, :, y1:y2, x1:x2] = 0.0
    return Tensor(m)


def apply_dropblock(b: Tensor, m: Tensor) -> Tensor:
    """D = B * M * count(M)/count_ones(M); the all-ones mask is the identity."""
    count = float(m.data.size)
    ones = float(m.data.sum())
    if ones == 0.0:
        raise ValueError("dropblock mask has no surviving cells")
    if ones == count:
        return b
    return ops.ewise_mul(b, Tensor(m.data * (count / ones)))


def merge_rois(r_all: Sequence[Sequence[Roi]], image_hw: tuple) -> tuple:
    """Min/max envelope (x1, x2, y1, y2) over every ROI of every level.

    An empty pyramid falls back to the full-image rectangle.
    """
    flat = [r for level in r_all for r in level]
    if not flat:
        return (0.0, float(image_hw[1]), 0.0, float(image_hw[0]))
    return (
        min(r.x1 for r in flat),
        max(r.x2 for r in flat),
        min(r.y1 for r in flat),
        max(r.y2 for r in flat),
    )


def zoom_in(d: Tensor, zoom_rect: tuple, stride: int) -> Tensor:
    """Crop the rectangle (converted to cells) and resize back to full size."""
    h, w = d.shape[2], d.shape[3]
    x1, x2, y1, y2 = zoom_rect
    cy1, cy2 = _span_to_cells(y1, y2, stride, h)
    cx1, cx2 = _span_to_cells(x1, x2, stride, w)
    return ops.bilinear_resize(ops.crop(d, cy1, cy2, cx1, cx2), h, w)


def _random_box_like(w_box: float, h_box: float, image_hw: tuple, rng: Rng) -> tuple:
    img_h, img_w = image_hw
    w_box = min(w_box, img_w)
    h_box = min(h_box, img_h)
    x1 = rng.uniform() * (img_w - w_box)
    y1 = rng.uniform() * (img_h - h_box)
    return (x1, y1, x1 + w_box, y1 + h_box)


def refine(
    b_n: Tensor,
    r_all: Sequence[Sequence[Roi]],
    probs: Sequence[float],
    rng: Rng,
    training: bool,
    stride: int,
    image_hw: tuple,
    use_dropblock: bool = True,
    use_zoom: bool = True,
    random_drop: bool = False,
    random_zoom: bool = False,
) -> tuple:
    """Full refinement for one batch item; returns (Z_n, RefinementPlan)."""
    drop = select_drop_roi(r_all, probs, rng, training) if use_dropblock else None
    if drop is not None and random_drop:
        x1, y1, x2, y2 = _random_box_like(drop.x2 - drop.x1, drop.y2 - drop.y1, image_hw, rng)
        drop = Roi(drop.level, x1, y1, x2, y2, 0.0)
    d = b_n if drop is None else apply_dropblock(b_n, drop_mask(b_n.shape, drop, stride))
    rect = merge_rois(r_all, image_hw)
    if random_zoom:
        x1, y1, x2, y2 = _random_box_like(rect[1] - rect[0], rect[3] - rect[2], image_hw, rng)
        rect = (x1, x2, y1, y2)
    z = zoom_in(d, rect, stride) if use_zoom else d
    return z, RefinementPlan(drop_roi=drop, zoom_rect=rect, drop_probs=tuple(probs))
