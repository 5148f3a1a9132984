"""ROI overlay rendering: PPM copies with level-colored rectangles.

Level colors follow the visualization convention: lowest level green,
middle blue, highest red.  Rectangles are drawn from the exported
JSON-lines trace, which stays the single source of truth for their
coordinates.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .aptn import write_aptn
from .data import Dataset, write_ppm
from .errors import DataError
from .model import APCNN
from .train import forward_trace, write_jsonl

LEVEL_COLORS = ((0, 255, 0), (0, 0, 255), (255, 0, 0))  # green, blue, red


def level_color(level: int) -> tuple:
    return LEVEL_COLORS[level % len(LEVEL_COLORS)]


def rect_to_pixels(x1: float, y1: float, x2: float, y2: float, h: int, w: int) -> tuple:
    """Round a float box to drawable pixel bounds, clipped to the image."""
    px1 = max(0, min(int(round(x1)), w - 1))
    py1 = max(0, min(int(round(y1)), h - 1))
    px2 = max(px1 + 1, min(int(round(x2)), w))
    py2 = max(py1 + 1, min(int(round(y2)), h))
    return px1, py1, px2, py2


def draw_rect(img_u8: np.ndarray, box, color) -> None:
    """1-px rectangle outline on a (3,H,W) uint8 image, in place."""
    x1, y1, x2, y2 = box
    col = np.array(color, dtype=np.uint8).reshape(3, 1)
    img_u8[:, y1, x1:x2] = col
    img_u8[:, y2 - 1, x1:x2] = col
    img_u8[:, y1:y2, x1] = col
    img_u8[:, y1:y2, x2 - 1] = col


def render_overlay(image: np.ndarray, roi_rows) -> np.ndarray:
    """Rectangles from a trace row's ``rois`` field onto a float image."""
    u8 = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    h, w = u8.shape[1:]
    for level in roi_rows:
        for r in level:
            box = rect_to_pixels(r["x1"], r["y1"], r["x2"], r["y2"], h, w)
            draw_rect(u8, box, level_color(r["level"]))
    return u8


def export_overlays(model: APCNN, ds: Dataset, out_dir, batch_size: int = 16, limit=None) -> Path:
    """Write overlay PPMs, per-level spatial-mask APTN files, and the trace.

    Returns the trace path.
    """
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write-probe"
        probe.write_text("")
        probe.unlink()
    except OSError as e:
        raise DataError(f"cannot write to {out_dir}: {e}") from e
    rows = forward_trace(model, ds, batch_size)
    if limit is not None:
        rows = rows[:limit]
    for row, item in zip(rows, ds.items):
        if row["rois"] is None:
            continue
        stem = row["image_id"].replace("/", "_")
        u8 = render_overlay(item.image, row["rois"])
        write_ppm(out_dir / f"{stem}.overlay.ppm", u8.astype(np.float32) / 255.0)
    # spatial masks for visualization, one APTN per level per image
    if model.cfg.use_fpn and model.cfg.attention.use_spatial:
        from .tensor import Rng
        from .train import EVAL_RNG_SEED

        rng = Rng(EVAL_RNG_SEED)
        done = 0
        for start in range(0, len(rows), batch_size):
            batch = list(range(start, min(start + batch_size, len(rows))))
            _, trace = model.forward(ds.stack(batch), mode="eval", rng=rng)
            for j, idx in enumerate(batch):
                stem = ds.items[idx].image_id.replace("/", "_")
                for k, m in enumerate(trace.spatial_masks):
                    write_aptn(out_dir / f"{stem}.spatial{k}.aptn", m[j, 0])
                done += 1
    trace_path = out_dir / "trace.jsonl"
    write_jsonl(trace_path, rows)
    return trace_path
