"""Small configurable convolutional backbone.

A stem convolution followed by a chain of conv+ReLU blocks; selected
block outputs are emitted as the pyramid taps at strides doubling from
tap to tap (8/16/32 by default).  Stands in for the conv3..conv5 stages
of a large pretrained network at desk scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .checkpoint import load_params, save_params
from .errors import ConfigError
from .layers import Conv
from .tensor import Rng, Tensor

DEFAULT_BLOCKS = ((1, 16, True), (2, 24, True), (2, 32, True), (2, 48, True))


@dataclass
class BackboneConfig:
    input_size: int = 96
    stem_channels: int = 8
    stem_stride: int = 2
    # (num_convs, out_channels, downsample) per block
    blocks: tuple = DEFAULT_BLOCKS
    tap_indices: tuple = (1, 2, 3)
    residual: bool = False

    def validate(self) -> None:
        if self.input_size % 32 != 0:
            raise ConfigError(f"input_size {self.input_size} not divisible by 32")
        if self.stem_stride not in (1, 2):
            raise ConfigError(f"stem_stride must be 1 or 2; got {self.stem_stride}")
        if list(self.tap_indices) != sorted(set(self.tap_indices)):
            raise ConfigError(f"tap_indices must be strictly increasing; got {self.tap_indices}")
        if max(self.tap_indices) >= len(self.blocks):
            raise ConfigError(f"tap index {max(self.tap_indices)} beyond {len(self.blocks)} blocks")
        strides = self.block_strides()
        taps = [strides[i] for i in self.tap_indices]
        for lo, hi in zip(taps, taps[1:]):
            if hi != 2 * lo:
                raise ConfigError(f"tap strides must double level to level; got {taps}")

    def block_strides(self) -> list:
        strides, s = [], self.stem_stride
        for _, _, down in self.blocks:
            if down:
                s *= 2
            strides.append(s)
        return strides

    def tap_strides(self) -> list:
        strides = self.block_strides()
        return [strides[i] for i in self.tap_indices]

    def tap_channels(self) -> list:
        return [self.blocks[i][1] for i in self.tap_indices]


class Backbone:
    def __init__(self, cfg: BackboneConfig, rng: Rng, dtype=np.float32):
        cfg.validate()
        self.cfg = cfg
        self.stem = Conv("backbone.stem", 3, cfg.stem_channels, 3, cfg.stem_stride, 1, rng, dtype)
        self.blocks = []
        c_in = cfg.stem_channels
        for bi, (num_convs, c_out, down) in enumerate(cfg.blocks):
            convs = []
            for ci in range(num_convs):
                stride = 2 if (down and ci == 0) else 1
                convs.append(Conv(f"backbone.b{bi}.c{ci}", c_in, c_out, 3, stride, 1, rng, dtype))
                c_in = c_out
            self.blocks.append(convs)

    def parameters(self):
        ps = list(self.stem.parameters())
        for convs in self.blocks:
            for c in convs:
                ps.extend(c.parameters())
        return ps

    def _run_block(self, bi: int, x: Tensor) -> Tensor:
        for conv in self.blocks[bi]:
            y = conv(x)
            if self.cfg.residual and conv.stride == 1 and y.shape == x.shape:
                y = ops.broadcast_add(y, x)
            x = ops.relu(y)
        return x

    def forward_all(self, x: Tensor) -> list:
        """All block outputs for an input image batch."""
        n, c, h, w = x.shape
        if h % 32 != 0 or w % 32 != 0:
            raise ConfigError(f"input spatial size {h}x{w} not divisible by 32")
        y = ops.relu(self.stem(x))
        outs = []
        for bi in range(len(self.blocks)):
            y = self._run_block(bi, y)
            outs.append(y)
        return outs

    def forward_tail(self, feature: Tensor, after_block: int) -> list:
        """Outputs of blocks after ``after_block`` given that block's output."""
        outs = []
        y = feature
        for bi in range(after_block + 1, len(self.blocks)):
            y = self._run_block(bi, y)
            outs.append(y)
        return outs

    def forward(self, x: Tensor) -> list:
        """The pyramid taps B_n..B_{n+N-1}, bottom-up (largest spatial first)."""
        outs = self.forward_all(x)
        return [outs[i] for i in self.cfg.tap_indices]

    def save_checkpoint(self, dirpath) -> None:
        save_params(dirpath, self.parameters())

    def load_checkpoint(self, dirpath) -> None:
        load_params(dirpath, self.parameters())
