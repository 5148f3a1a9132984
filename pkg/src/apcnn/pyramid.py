"""Feature pyramid, spatial/channel attention gates, and per-level classifiers.

The top-down feature pathway aligns all taps to a common channel width d
via 1x1 lateral convolutions and adds bilinearly upsampled higher levels.
Each level then gets a one-channel sigmoid spatial mask (3x3 transposed
convolution) and a d-vector sigmoid channel mask (GAP + two FC layers
with a bottleneck).  A parameter-free bottom-up pathway sums masks from
lower levels into higher ones.  Attention-weighted features
F' = F * (A_s (+) A_c) feed one independent GAP+2FC classifier per level.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import ops
from .errors import ConfigError
from .layers import Conv, Deconv, Linear
from .tensor import Rng, Tensor

PATHWAYS = ("none", "channel_bottom_up", "spatial_bottom_up")


@dataclass
class AttentionConfig:
    use_spatial: bool = True
    use_channel: bool = True
    pathway: str = "channel_bottom_up"
    fpn_channels: int = 128
    bottleneck_ratio: int = 4

    def validate(self) -> None:
        if self.pathway not in PATHWAYS:
            raise ConfigError(f"pathway must be one of {PATHWAYS}; got {self.pathway!r}")
        if self.pathway == "channel_bottom_up" and not self.use_channel:
            raise ConfigError("channel_bottom_up pathway requires use_channel")
        if self.pathway == "spatial_bottom_up" and not self.use_spatial:
            raise ConfigError("spatial_bottom_up pathway requires use_spatial")
        if self.fpn_channels % self.bottleneck_ratio != 0:
            raise ConfigError(
                f"fpn_channels {self.fpn_channels} not divisible by bottleneck ratio {self.bottleneck_ratio}"
            )


@dataclass
class PyramidLevel:
    """One pyramid level: fused feature plus its masks and ROI settings."""

    k: int
    stride: int
    F: Tensor
    A_s: Optional[Tensor]
    A_c: Optional[Tensor]
    anchor_scale: float = 0.0
    xi: int = 0


class AttentionPyramid:
    def __init__(self, tap_channels, cfg: AttentionConfig, num_classes: int, rng: Rng, dtype=np.float32):
        cfg.validate()
        self.cfg = cfg
        self.num_levels = len(tap_channels)
        d = cfg.fpn_channels
        self.laterals = [Conv(f"fpn.lateral{k}", c, d, 1, 1, 0, rng, dtype) for k, c in enumerate(tap_channels)]
        self.spatial_gates = (
            [Deconv(f"att.spatial{k}", d, rng, dtype) for k in range(self.num_levels)] if cfg.use_spatial else []
        )
        dr = d // cfg.bottleneck_ratio
        self.channel_gates = (
            [
                (Linear(f"att.channel{k}.fc1", d, dr, rng, dtype), Linear(f"att.channel{k}.fc2", dr, d, rng, dtype))
                for k in range(self.num_levels)
            ]
            if cfg.use_channel
            else []
        )
        # Gate output layers start at zero, so every mask begins at sigma(0)=0.5
        # and the weighted features F' = F * (0.5 + 0.5) equal the plain FPN;
        # attention then departs from the identity as it learns.
        for gate in self.spatial_gates:
            gate.w.data[...] = 0.0
        for _, fc2 in self.channel_gates:
            fc2.w.data[...] = 0.0
        self.classifiers = [
            (Linear(f"cls{k}.fc1", d, d, rng, dtype), Linear(f"cls{k}.fc2", d, num_classes, rng, dtype))
            for k in range(self.num_levels)
        ]

    def parameters(self):
        ps = []
        for lat in self.laterals:
            ps.extend(lat.parameters())
        for g in self.spatial_gates:
            ps.extend(g.parameters())
        for f1, f2 in self.channel_gates:
            ps.extend(f1.parameters() + f2.parameters())
        for f1, f2 in self.classifiers:
            ps.extend(f1.parameters() + f2.parameters())
        return ps

    # -- pyramid construction ------------------------------------------------

    def build_fpn(self, taps) -> list:
        """Top-down pathway: F_k = lateral(B_k) + upsample(F_{k+1})."""
        if len(taps) != self.num_levels:
            raise ConfigError(f"got {len(taps)} taps for {self.num_levels} levels")
        feats = [None] * self.num_levels
        top = self.num_levels - 1
        feats[top] = self.laterals[top](taps[top])
        for k in range(top - 1, -1, -1):
            lat = self.laterals[k](taps[k])
            up = ops.bilinear_resize(feats[k + 1], lat.shape[2], lat.shape[3])
            feats[k] = ops.broadcast_add(lat, up)
        return feats

    # -- gates ----------------------------------------------------------------

    def spatial_gate(self, k: int, f: Tensor) -> Tensor:
        return ops.sigmoid(self.spatial_gates[k](f))

    def channel_gate(self, k: int, f: Tensor) -> Tensor:
        fc1, fc2 = self.channel_gates[k]
        return ops.sigmoid(fc2(ops.relu(fc1(ops.gap(f)))))

    @staticmethod
    def channel_pathway(masks) -> list:
        """Parameter-free bottom-up sum: out_k = A_k + out_{k-1}."""
        out = [masks[0]]
        for m in masks[1:]:
            out.append(ops.broadcast_add(m, out[-1]))
        return out

    @staticmethod
    def spatial_pathway(masks) -> list:
        """Ablation arm: downsample the lower spatial mask and add upward."""
        out = [masks[0]]
        for m in masks[1:]:
            down = ops.bilinear_resize(out[-1], m.shape[2], m.shape[3])
            out.append(ops.broadcast_add(m, down))
        return out

    # -- weighting and heads ----------------------------------------------------

    def weight_features(self, f: Tensor, a_s: Optional[Tensor], a_c: Optional[Tensor]) -> Tensor:
        """F' = F * (A_s (+) A_c); a disabled gate contributes zero to the sum."""
        if a_s is None and a_c is None:
            return f
        if a_s is None:
            att = a_c
        elif a_c is None:
            att = a_s
        else:
            att = ops.broadcast_add(a_s, a_c)
        return ops.ewise_mul(f, att)

    def level_classifier(self, k: int, f: Tensor) -> Tensor:
        fc1, fc2 = self.classifiers[k]
        return fc2(ops.relu(fc1(ops.gap(f))))

    def forward(self, taps, strides) -> list:
        """Full pyramid pass over backbone taps; returns PyramidLevels with logits.

        Returns (levels, logits): levels carry the fused features and the
        final (post-pathway) masks used both for weighting and for ROIs.
        """
        feats = self.build_fpn(taps)
        a_s = [self.spatial_gate(k, f) for k, f in enumerate(feats)] if self.cfg.use_spatial else None
        a_c = [self.channel_gate(k, f) for k, f in enumerate(feats)] if self.cfg.use_channel else None
        if self.cfg.pathway == "channel_bottom_up":
            a_c = self.channel_pathway(a_c)
        elif self.cfg.pathway == "spatial_bottom_up":
            a_s = self.spatial_pathway(a_s)
        levels, logits = [], []
        for k, f in enumerate(feats):
            ms = a_s[k] if a_s is not None else None
            mc = a_c[k] if a_c is not None else None
            fp = self.weight_features(f, ms, mc)
            levels.append(PyramidLevel(k=k, stride=strides[k], F=f, A_s=ms, A_c=mc))
            logits.append(self.level_classifier(k, fp))
        return levels, logits
