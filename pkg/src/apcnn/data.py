"""Datasets: the synthetic texture-patch benchmark and PPM folder loading.

The synthetic generator is a desk-scale stand-in for fine-grained data:
every image is low-frequency background noise plus a few checkerboard
distractor patches plus one class-discriminative oriented-grating patch.
The grating's (orientation, wavelength) pair encodes the class; the
patch rectangle is recorded as the ground-truth box.  Classifying these
images requires finding and resolving the one true texture among
similar-looking clutter.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DataError
from .ops import _interp_matrix
from .tensor import Rng

DEFAULT_PATCH_FRAC = 64.0 / 448.0  # the paper's smallest anchor scale ratio


@dataclass
class Item:
    image: np.ndarray  # (3, H, W) float32 in [0, 1]
    label: int
    box: Optional[tuple]  # (x1, y1, x2, y2) in pixels, or None
    image_id: str


@dataclass
class Dataset:
    items: list
    split: str
    class_names: list

    def __len__(self) -> int:
        return len(self.items)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def stack(self, indices) -> np.ndarray:
        return np.stack([self.items[i].image for i in indices])

    def labels(self, indices) -> list:
        return [self.items[i].label for i in indices]


def resize_image(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of a (C,H,W) float image (half-pixel centers)."""
    c, h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img
    ry = _interp_matrix(h, out_h, np.float64)
    rx = _interp_matrix(w, out_w, np.float64)
    return (ry @ img.astype(np.float64) @ rx.T).astype(np.float32)


# ---------------------------------------------------------------------------
# synthetic data


def _background(size: int, rng: Rng) -> np.ndarray:
    coarse = np.stack([rng.normal((size // 16, size // 16), dtype=np.float64) for _ in range(3)])
    smooth = resize_image(coarse, size, size).astype(np.float64)
    return 0.5 + 0.12 * smooth


def _grating(side: int, theta: float, wavelength: float, phase: float) -> np.ndarray:
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    wave = np.sin(2 * math.pi * (xx * math.cos(theta) + yy * math.sin(theta)) / wavelength + phase)
    return 0.5 + 0.45 * wave


def _checkerboard(side: int, period: float, phase_x: float, phase_y: float) -> np.ndarray:
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    sq = np.sign(np.sin(2 * math.pi * (xx + phase_x) / period)) * np.sign(
        np.sin(2 * math.pi * (yy + phase_y) / period)
    )
    return 0.5 + 0.4 * sq


DISTRACTOR_PERIODS = (5.0, 10.0)  # same band as the class gratings


def class_texture(label: int, num_classes: int, side: int, phase: float) -> np.ndarray:
    """Oriented grating whose (orientation, wavelength) encodes the class.

    Wavelengths stay above 2x the coarsest early-layer sampling so the
    textures survive a stride-2 stem.
    """
    orientations = max(1, (num_classes + 1) // 2)
    theta = math.pi * (label % orientations) / orientations
    wavelength = 5.5 if label < orientations else 9.5
    return _grating(side, theta, wavelength, phase)


def _boxes_overlap(a, b) -> bool:
    return not (a[2] <= b[0] or b[2] <= a[0] or a[3] <= b[1] or b[3] <= a[1])


def gen_synthetic(
    num_classes: int,
    images_per_class: int,
    size: int,
    rng: Rng,
    split: str = "train",
    patch_frac: float = DEFAULT_PATCH_FRAC,
    distractors: int = 3,
    patch_jitter: float = 0.0,
) -> Dataset:
    """Balanced synthetic dataset; deterministic for a given rng seed.

    ``patch_jitter`` scales the patch side per image by a uniform factor
    in [1-j, 1+j], so the discriminative region varies in scale.
    """
    if size % 32 != 0:
        raise DataError(f"synthetic image size {size} not divisible by 32")
    base_side = size * patch_frac
    items = []
    for label in range(num_classes):
        for i in range(images_per_class):
            img = _background(size, rng)
            jitter = 1.0 + patch_jitter * (2.0 * rng.uniform() - 1.0)
            side = int(round(base_side * jitter))
            side = max(4, min(side, size - 4))
            # class patch first, so distractors never occlude it
            margin = 2
            px = margin + rng.integers(size - side - 2 * margin + 1)
            py = margin + rng.integers(size - side - 2 * margin + 1)
            box = (px, py, px + side, py + side)
            for _ in range(distractors):
                dside = max(4, side + rng.integers(9) - 4)
                for _attempt in range(20):
                    dx = rng.integers(size - dside + 1)
                    dy = rng.integers(size - dside + 1)
                    if not _boxes_overlap((dx, dy, dx + dside, dy + dside), box):
                        lo, hi = DISTRACTOR_PERIODS
                        tex = _checkerboard(
                            dside, lo + (hi - lo) * rng.uniform(), rng.uniform() * 6, rng.uniform() * 6
                        )
                        img[:, dy : dy + dside, dx : dx + dside] = tex
                        break
            img[:, py : py + side, px : px + side] = class_texture(
                label, num_classes, side, rng.uniform() * 2 * math.pi
            )
            np.clip(img, 0.0, 1.0, out=img)
            items.append(
                Item(
                    image=img.astype(np.float32),
                    label=label,
                    box=box,
                    image_id=f"{split}-c{label}-{i:04d}",
                )
            )
    names = [f"class{c}" for c in range(num_classes)]
    return Dataset(items=items, split=split, class_names=names)


# ---------------------------------------------------------------------------
# PPM (P6) codec


def write_ppm(path, img: np.ndarray) -> None:
    """(3,H,W) float [0,1] -> binary P6 with maxval 255."""
    c, h, w = img.shape
    u8 = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(u8.transpose(1, 2, 0).tobytes())


def _ppm_tokens(raw: bytes, count: int, path) -> tuple:
    """First header tokens after the magic, skipping '#' comments."""
    tokens, pos = [], 2
    while len(tokens) < count:
        if pos >= len(raw):
            raise DataError(f"{path}: truncated PPM header")
        ch = raw[pos : pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            pos = raw.index(b"\n", pos) + 1
        else:
            end = pos
            while end < len(raw) and not raw[end : end + 1].isspace():
                end += 1
            tokens.append(raw[pos:end])
            pos = end
    return tokens, pos + 1  # single whitespace after maxval


def read_ppm(path) -> np.ndarray:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise DataError(f"cannot read image {path}: {e}") from e
    if raw[:2] != b"P6":
        raise DataError(f"{path}: not a binary P6 PPM")
    tokens, offset = _ppm_tokens(raw, 3, path)
    w, h, maxval = (int(t) for t in tokens)
    if maxval < 1 or maxval > 255:
        raise DataError(f"{path}: unsupported maxval {maxval} (single-byte samples only)")
    need = w * h * 3
    pixels = np.frombuffer(raw, dtype=np.uint8, count=need, offset=offset)
    if pixels.size != need:
        raise DataError(f"{path}: expected {need} pixel bytes")
    img = pixels.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float32) / maxval
    return img


def _read_box_file(path) -> tuple:
    for ln, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        try:
            vals = [int(p) for p in parts]
        except ValueError:
            raise DataError(f"{path}:{ln}: box line must be four integers") from None
        if len(vals) != 4:
            raise DataError(f"{path}:{ln}: box line must be four integers, got {len(vals)}")
        x1, y1, x2, y2 = vals
        if x2 <= x1 or y2 <= y1:
            raise DataError(f"{path}:{ln}: degenerate box {vals}")
        return (x1, y1, x2, y2)
    raise DataError(f"{path}: no box line found")


def load_image_folder(root, size: Optional[int] = None, split: str = "train") -> Dataset:
    """Directory-per-class PPM layout; optional ``<image>.txt`` box sidecars.

    Images are bilinearly resized to ``size`` x ``size`` when given;
    ground-truth boxes are scaled along.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset directory {root} does not exist")
    class_dirs = sorted(d for d in root.iterdir() if d.is_dir())
    if not class_dirs:
        raise DataError(f"no class directories under {root}")
    items = []
    for label, cdir in enumerate(class_dirs):
        ppms = sorted(cdir.glob("*.ppm"))
        if not ppms:
            raise DataError(f"class directory {cdir.name!r} contains no .ppm images")
        for p in ppms:
            img = read_ppm(p)
            box = None
            sidecar = p.with_suffix(".txt")
            if sidecar.is_file():
                box = _read_box_file(sidecar)
                h, w = img.shape[1:]
                if not (0 <= box[0] < box[2] <= w and 0 <= box[1] < box[3] <= h):
                    raise DataError(f"{sidecar}: box {box} outside {w}x{h} image")
            if size is not None and img.shape[1:] != (size, size):
                sy = size / img.shape[1]
                sx = size / img.shape[2]
                img = resize_image(img, size, size)
                if box is not None:
                    box = (box[0] * sx, box[1] * sy, box[2] * sx, box[3] * sy)
            items.append(Item(image=img, label=label, box=box, image_id=f"{cdir.name}/{p.stem}"))
    return Dataset(items=items, split=split, class_names=[d.name for d in class_dirs])


def save_image_folder(ds: Dataset, root) -> None:
    """Write a dataset in the directory-per-class PPM layout with box sidecars."""
    root = Path(root)
    for item in ds.items:
        cdir = root / ds.class_names[item.label]
        cdir.mkdir(parents=True, exist_ok=True)
        stem = item.image_id.replace("/", "_")
        write_ppm(cdir / f"{stem}.ppm", item.image)
        if item.box is not None:
            x1, y1, x2, y2 = (int(round(v)) for v in item.box)
            (cdir / f"{stem}.txt").write_text(f"{x1} {y1} {x2} {y2}\n")
