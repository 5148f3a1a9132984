"""Two-stage model: raw pass, ROI-guided refinement, refined pass.

Both stages run the same backbone/pyramid/classifier objects, so every
parameter is shared by construction.  The raw stage sees the full image
and produces per-level logits plus the ROI pyramid; refinement rewrites
the activation at the configured position (the input image or a backbone
block output) per batch item; the refined stage recomputes everything
from that position upward and adds its own per-level logits.  The final
class distribution is the mean of the per-head softmax probabilities.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import ops
from .backbone import Backbone, BackboneConfig
from .checkpoint import load_params, save_params
from .errors import ConfigError
from .layers import Linear
from .pyramid import AttentionConfig, AttentionPyramid
from .refine import RefinementPlan, refine
from .rois import RoiConfig, build_roi_pyramid
from .tensor import Parameter, Rng, Tensor, collect_ids


@dataclass
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    attention: AttentionConfig = field(default_factory=AttentionConfig)
    roi: RoiConfig = field(default_factory=RoiConfig)
    num_classes: int = 8
    drop_probs: tuple = (0.3, 0.3, 0.0)
    refinement_position: str = "tap0"
    two_stage: bool = True
    use_fpn: bool = True
    use_dropblock: bool = True
    use_zoom: bool = True
    random_drop: bool = False
    random_zoom: bool = False

    def validate(self) -> None:
        self.backbone.validate()
        self.attention.validate()
        n_levels = len(self.backbone.tap_indices)
        self.roi.validate(n_levels)
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2; got {self.num_classes}")
        if len(self.drop_probs) != n_levels:
            raise ConfigError(f"{len(self.drop_probs)} drop probabilities for {n_levels} levels")
        if any(p < 0 for p in self.drop_probs) or sum(self.drop_probs) > 1.0 + 1e-9:
            raise ConfigError(f"drop_probs must be non-negative with sum <= 1; got {self.drop_probs}")
        if self.two_stage and not self.use_fpn:
            raise ConfigError("two_stage requires use_fpn")
        if self.two_stage and not self.attention.use_spatial:
            raise ConfigError("two_stage requires use_spatial (ROIs come from the spatial masks)")
        self.resolve_position()

    def resolve_position(self) -> tuple:
        """Map refinement_position to ("input", None) or ("block", index)."""
        pos = self.refinement_position
        if pos == "input":
            return ("input", None)
        taps = self.backbone.tap_indices
        if pos.startswith("tap"):
            k = int(pos[3:])
            if not 0 <= k < len(taps):
                raise ConfigError(f"refinement position {pos!r}: no such tap")
            return ("block", taps[k])
        if pos.startswith("block"):
            b = int(pos[5:])
            if not 0 <= b <= max(taps):
                raise ConfigError(f"refinement position {pos!r}: block must be in [0,{max(taps)}]")
            return ("block", b)
        raise ConfigError(f"bad refinement position {pos!r}; use 'input', 'tapK', or 'blockB'")


@dataclass
class Prediction:
    """Per-head logits (graph-attached) and the averaged class distribution."""

    per_level_logits_raw: list
    per_level_logits_refined: Optional[list]
    final_probs: np.ndarray

    @property
    def heads(self) -> list:
        return self.per_level_logits_raw + (self.per_level_logits_refined or [])


@dataclass
class ForwardTrace:
    """Side outputs of a forward pass, for export and inspection."""

    rois: Optional[list] = None  # per item: per level: [Roi]
    plans: Optional[list] = None  # per item: RefinementPlan
    spatial_masks: Optional[list] = None  # per level: (N,1,h,w) arrays
    channel_masks: Optional[list] = None  # per level: (N,d,1,1) arrays


# Input standardization: images arrive in [0,1]; center and scale to
# roughly unit variance (1/std of U[0,1]) before the stem.
INPUT_MEAN = 0.5
INPUT_SCALE = 3.46


class APCNN:
    def __init__(self, cfg: ModelConfig, rng: Rng, dtype=np.float32):
        cfg.validate()
        self.cfg = cfg
        self.dtype = dtype
        self.backbone = Backbone(cfg.backbone, rng, dtype)
        self.pyramid = None
        self.baseline_head = None
        if cfg.use_fpn:
            self.pyramid = AttentionPyramid(
                cfg.backbone.tap_channels(), cfg.attention, cfg.num_classes, rng, dtype
            )
        else:
            c_last = cfg.backbone.blocks[-1][1]
            self.baseline_head = (
                Linear("head.fc1", c_last, c_last, rng, dtype),
                Linear("head.fc2", c_last, cfg.num_classes, rng, dtype),
            )
        collect_ids(self.parameters())

    def parameters(self) -> list:
        ps = self.backbone.parameters()
        if self.pyramid is not None:
            ps += self.pyramid.parameters()
        if self.baseline_head is not None:
            fc1, fc2 = self.baseline_head
            ps += fc1.parameters() + fc2.parameters()
        return ps

    # -- forward ---------------------------------------------------------------

    def _coerce(self, images) -> Tensor:
        arr = images.data if isinstance(images, Tensor) else np.asarray(images, dtype=self.dtype)
        if arr.ndim != 4 or arr.shape[1] != 3:
            raise ConfigError(f"expected (N,3,H,W) input; got {arr.shape}")
        if arr.shape[2] != arr.shape[3]:
            raise ConfigError(f"expected square input; got {arr.shape[2]}x{arr.shape[3]}")
        return Tensor(((arr - INPUT_MEAN) * INPUT_SCALE).astype(self.dtype, copy=False))

    def forward(self, images, mode: str = "eval", rng: Optional[Rng] = None):
        """Run one or two stages; returns (Prediction, ForwardTrace)."""
        if mode not in ("train", "eval"):
            raise ConfigError(f"mode must be 'train' or 'eval'; got {mode!r}")
        cfg = self.cfg
        x = self._coerce(images)
        n, _, img_h, img_w = x.shape

        if not cfg.use_fpn:
            outs = self.backbone.forward_all(x)
            fc1, fc2 = self.baseline_head
            logits = fc2(ops.relu(fc1(ops.gap(outs[-1]))))
            pred = Prediction([logits], None, _mean_head_probs([logits]))
            return pred, ForwardTrace()

        block_outs = self.backbone.forward_all(x)
        taps = [block_outs[i] for i in cfg.backbone.tap_indices]
        strides = cfg.backbone.tap_strides()
        levels, logits_raw = self.pyramid.forward(taps, strides)

        trace = ForwardTrace()
        if cfg.attention.use_spatial:
            trace.spatial_masks = [lvl.A_s.data for lvl in levels]
            trace.rois = [
                build_roi_pyramid(
                    [m[item, 0] for m in trace.spatial_masks], strides, (img_h, img_w), cfg.roi
                )
                for item in range(n)
            ]
        if cfg.attention.use_channel:
            trace.channel_masks = [lvl.A_c.data for lvl in levels]

        logits_ref = None
        if cfg.two_stage:
            if rng is None:
                rng = Rng(0)
            kind, b = cfg.resolve_position()
            if kind == "input":
                feature, stride_f = x, 1
            else:
                feature, stride_f = block_outs[b], cfg.backbone.block_strides()[b]
            zs, plans = [], []
            for item in range(n):
                fi = ops.slice_batch(feature, item, item + 1)
                z, plan = refine(
                    fi,
                    trace.rois[item],
                    cfg.drop_probs,
                    rng,
                    training=(mode == "train"),
                    stride=stride_f,
                    image_hw=(img_h, img_w),
                    use_dropblock=cfg.use_dropblock,
                    use_zoom=cfg.use_zoom,
                    random_drop=cfg.random_drop,
                    random_zoom=cfg.random_zoom,
                )
                zs.append(z)
                plans.append(plan)
            trace.plans = plans
            z_batch = ops.concat_batch(zs)
            if kind == "input":
                ref_outs = self.backbone.forward_all(z_batch)
                ref_taps = [ref_outs[i] for i in cfg.backbone.tap_indices]
            else:
                tail = self.backbone.forward_tail(z_batch, b)
                ref_taps = []
                for ti in cfg.backbone.tap_indices:
                    if ti < b:
                        ref_taps.append(block_outs[ti])  # below the refinement position: reuse raw
                    elif ti == b:
                        ref_taps.append(z_batch)
                    else:
                        ref_taps.append(tail[ti - b - 1])
            # Refined stage reuses the same pyramid/classifier parameters and
            # computes attentions, but no second ROI pyramid.
            _, logits_ref = self.pyramid.forward(ref_taps, strides)

        heads = logits_raw + (logits_ref or [])
        pred = Prediction(logits_raw, logits_ref, _mean_head_probs(heads))
        return pred, trace

    # -- objectives --------------------------------------------------------------

    def loss(self, prediction: Prediction, labels) -> Tensor:
        """Unweighted sum of softmax cross-entropy over all heads (batch mean each)."""
        total = None
        for head in prediction.heads:
            term = ops.softmax_xent(head, labels)
            total = term if total is None else ops.broadcast_add(total, term)
        return total

    def predict(self, prediction: Prediction) -> np.ndarray:
        """Argmax of the averaged probabilities; ties go to the lowest class."""
        return np.argmax(prediction.final_probs, axis=1)

    # -- persistence ----------------------------------------------------------------

    def save_checkpoint(self, dirpath) -> None:
        save_params(f"{dirpath}/backbone", self.backbone.parameters())
        if self.pyramid is not None:
            save_params(f"{dirpath}/pyramid", self.pyramid.parameters())
        if self.baseline_head is not None:
            fc1, fc2 = self.baseline_head
            save_params(f"{dirpath}/head", fc1.parameters() + fc2.parameters())

    def load_checkpoint(self, dirpath) -> None:
        load_params(f"{dirpath}/backbone", self.backbone.parameters())
        if self.pyramid is not None:
            load_params(f"{dirpath}/pyramid", self.pyramid.parameters())
        if self.baseline_head is not None:
            fc1, fc2 = self.baseline_head
            load_params(f"{dirpath}/head", fc1.parameters() + fc2.parameters())


def _mean_head_probs(heads) -> np.ndarray:
    n, k = heads[0].shape[0], heads[0].shape[1]
    acc = np.zeros((n, k))
    for h in heads:
        acc += ops.softmax_probs(h.data.reshape(n, k))
    return acc / len(heads)


# -- config and model persistence -------------------------------------------------


def config_to_dict(cfg: ModelConfig) -> dict:
    from dataclasses import asdict

    d = asdict(cfg)
    d["backbone"]["blocks"] = [list(b) for b in cfg.backbone.blocks]
    return d


def config_from_dict(d: dict) -> ModelConfig:
    bb = dict(d["backbone"])
    bb["blocks"] = tuple(tuple(b) for b in bb["blocks"])
    bb["tap_indices"] = tuple(bb["tap_indices"])
    roi = dict(d["roi"])
    roi["xi"] = tuple(roi["xi"])
    if roi["anchor_scales"] is not None:
        roi["anchor_scales"] = tuple(roi["anchor_scales"])
    top = {k: v for k, v in d.items() if k not in ("backbone", "attention", "roi")}
    top["drop_probs"] = tuple(top["drop_probs"])
    return ModelConfig(
        backbone=BackboneConfig(**bb),
        attention=AttentionConfig(**d["attention"]),
        roi=RoiConfig(**roi),
        **top,
    )


def save_model(model: APCNN, dirpath) -> None:
    """Checkpoint directory: per-component manifests plus config.json."""
    import json
    from pathlib import Path

    model.save_checkpoint(dirpath)
    path = Path(dirpath) / "config.json"
    path.write_text(json.dumps(config_to_dict(model.cfg), indent=2, sort_keys=True) + "\n")


def load_model(dirpath, dtype=np.float32) -> APCNN:
    import json
    from pathlib import Path

    from .errors import DataError

    path = Path(dirpath) / "config.json"
    if not path.is_file():
        raise DataError(f"no config.json in checkpoint {dirpath}")
    cfg = config_from_dict(json.loads(path.read_text()))
    model = APCNN(cfg, Rng(0), dtype=dtype)
    model.load_checkpoint(dirpath)
    return model
