"""ROI pyramid: per-level anchors, attention scoring, NMS, top-k selection.

Boxes live in input-pixel coordinates as half-open [x1,x2) x [y1,y2)
rectangles.  Each attention-map cell gets one square anchor centered at
that cell's input-space center; anchors are scored by the mean attention
over the cells whose centers they cover, pruned per level by greedy NMS,
and the top-xi survivors per level form the ROI pyramid.  Selection is
non-differentiable by construction: coordinates are constants downstream.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError

PAPER_ANCHOR_SCALES = (64.0, 128.0, 256.0)
PAPER_INPUT_SIZE = 448


@dataclass
class Roi:
    level: int
    x1: float
    y1: float
    x2: float
    y2: float
    score: float

    def box(self):
        return (self.x1, self.y1, self.x2, self.y2)

    def to_json(self) -> dict:
        return {
            "level": self.level,
            "x1": round(self.x1, 4),
            "y1": round(self.y1, 4),
            "x2": round(self.x2, 4),
            "y2": round(self.y2, 4),
            "score": round(self.score, 6),
        }


@dataclass
class RoiConfig:
    # None auto-scales the paper's 448-px scales {64,128,256} to the input size.
    anchor_scales: Optional[tuple] = None
    xi: tuple = (5, 3, 1)
    nms_iou: float = 0.05

    def validate(self, num_levels: int) -> None:
        if self.anchor_scales is not None and len(self.anchor_scales) != num_levels:
            raise ConfigError(f"{len(self.anchor_scales)} anchor scales for {num_levels} levels")
        if len(self.xi) != num_levels:
            raise ConfigError(f"{len(self.xi)} xi values for {num_levels} levels")
        if not 0.0 <= self.nms_iou <= 1.0:
            raise ConfigError(f"nms_iou must be in [0,1]; got {self.nms_iou}")

    def scales_for(self, input_size: int, num_levels: int) -> list:
        if self.anchor_scales is not None:
            return list(self.anchor_scales)
        base = [PAPER_ANCHOR_SCALES[k] if k < 3 else PAPER_ANCHOR_SCALES[-1] * 2 ** (k - 2) for k in range(num_levels)]
        return [float(round(s * input_size / PAPER_INPUT_SIZE)) for s in base]


def gen_anchors(map_h: int, map_w: int, stride: int, scale: float, image_h: int, image_w: int) -> np.ndarray:
    """One anchor per cell, centered on the cell, side ``scale``, clipped.

    Returns an (map_h*map_w, 4) float array in row-major cell order.
    """
    cy = (np.arange(map_h) + 0.5) * stride
    cx = (np.arange(map_w) + 0.5) * stride
    half = scale / 2.0
    x1 = np.clip(cx - half, 0.0, image_w)
    x2 = np.clip(cx + half, 0.0, image_w)
    y1 = np.clip(cy - half, 0.0, image_h)
    y2 = np.clip(cy + half, 0.0, image_h)
    boxes = np.empty((map_h, map_w, 4))
    boxes[:, :, 0] = x1[None, :]
    boxes[:, :, 1] = y1[:, None]
    boxes[:, :, 2] = x2[None, :]
    boxes[:, :, 3] = y2[:, None]
    return boxes.reshape(-1, 4)


def score_anchors(anchors: np.ndarray, mask: np.ndarray, stride: int) -> np.ndarray:
    """Mean attention over cells whose centers fall inside each anchor.

    Cell centers sit at ((j+0.5)*stride, (i+0.5)*stride); containment is
    half-open.  An anchor covering no cell center scores the activation
    of the cell whose center is nearest to the anchor's center.
    """
    h, w = mask.shape
    cy = (np.arange(h) + 0.5) * stride
    cx = (np.arange(w) + 0.5) * stride
    a = np.asarray(anchors, dtype=np.float64)
    lo_y = np.searchsorted(cy, a[:, 1], side="left")
    hi_y = np.searchsorted(cy, a[:, 3], side="left")
    lo_x = np.searchsorted(cx, a[:, 0], side="left")
    hi_x = np.searchsorted(cx, a[:, 2], side="left")
    integral = np.zeros((h + 1, w + 1))
    integral[1:, 1:] = np.cumsum(np.cumsum(mask.astype(np.float64), axis=0), axis=1)
    counts = np.maximum(hi_y - lo_y, 0) * np.maximum(hi_x - lo_x, 0)
    sums = (
        integral[hi_y, hi_x] - integral[lo_y, hi_x] - integral[hi_y, lo_x] + integral[lo_y, lo_x]
    )
    scores = np.divide(sums, counts, out=np.zeros(len(a)), where=counts > 0)
    for i in np.nonzero(counts == 0)[0]:
        ac_y = (a[i, 1] + a[i, 3]) / 2.0
        ac_x = (a[i, 0] + a[i, 2]) / 2.0
        scores[i] = mask[int(np.argmin(np.abs(cy - ac_y))), int(np.argmin(np.abs(cx - ac_x)))]
    return scores


def iou(a, b) -> float:
    """Intersection over union of two half-open boxes (x1, y1, x2, y2)."""
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    if inter == 0.0:
        return 0.0
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union


def nms(rois: Sequence[Roi], threshold: float) -> list:
    """Greedy descending-score suppression; drops IoU > threshold.

    Ties are broken by (score, then lower y1, then lower x1) so the kept
    set is deterministic.  Returns survivors in processing order
    (best score first).
    """
    if not rois:
        return []
    x1 = np.array([r.x1 for r in rois])
    y1 = np.array([r.y1 for r in rois])
    x2 = np.array([r.x2 for r in rois])
    y2 = np.array([r.y2 for r in rois])
    scores = np.array([r.score for r in rois])
    areas = (x2 - x1) * (y2 - y1)
    order = np.lexsort((x1, y1, -scores))
    kept = []
    while order.size:
        i = order[0]
        kept.append(i)
        rest = order[1:]
        iw = np.maximum(0.0, np.minimum(x2[i], x2[rest]) - np.maximum(x1[i], x1[rest]))
        ih = np.maximum(0.0, np.minimum(y2[i], y2[rest]) - np.maximum(y1[i], y1[rest]))
        inter = iw * ih
        overlap = inter / (areas[i] + areas[rest] - inter)
        order = rest[overlap <= threshold]
    return [rois[i] for i in kept]


def build_roi_pyramid(level_masks, strides, image_hw, cfg: RoiConfig) -> list:
    """Per level: anchors -> scores -> NMS -> top-xi.  One batch item.

    ``level_masks`` are 2-d attention maps, one per level, bottom-up.
    Returns a list of per-level ROI lists (|R_k| <= xi_k).
    """
    cfg.validate(len(level_masks))
    img_h, img_w = image_hw
    scales = cfg.scales_for(min(img_h, img_w), len(level_masks))
    pyramid = []
    for k, mask in enumerate(level_masks):
        h, w = mask.shape
        anchors = gen_anchors(h, w, strides[k], scales[k], img_h, img_w)
        scores = score_anchors(anchors, mask, strides[k])
        rois = [Roi(k, b[0], b[1], b[2], b[3], float(s)) for b, s in zip(anchors, scores)]
        kept = nms(rois, cfg.nms_iou)
        pyramid.append(kept[: cfg.xi[k]])
    return pyramid
