"""Parameterized layers: thin wrappers pairing ops with named Parameters.

Initialization is He-style fan-in scaled normal drawn from an explicit
Rng, with zero biases, so identical seeds give identical parameters.
"""

from __future__ import annotations

import math

import numpy as np

from . import ops
from .tensor import Parameter, Rng


class Conv:
    def __init__(self, pid: str, c_in: int, c_out: int, k: int, stride: int, pad: int, rng: Rng, dtype=np.float32):
        self.stride, self.pad = stride, pad
        std = math.sqrt(2.0 / (c_in * k * k))
        self.w = Parameter(pid + ".w", rng.normal((c_out, c_in, k, k), std, dtype))
        self.b = Parameter(pid + ".b", np.zeros((1, c_out, 1, 1), dtype))

    def __call__(self, x):
        return ops.conv2d(x, self.w, self.b, self.stride, self.pad)

    def parameters(self):
        return [self.w, self.b]


class Deconv:
    """3x3, one-output-channel transposed convolution (size preserving)."""

    def __init__(self, pid: str, c_in: int, rng: Rng, dtype=np.float32):
        std = math.sqrt(2.0 / (c_in * 9))
        self.w = Parameter(pid + ".w", rng.normal((c_in, 1, 3, 3), std, dtype))
        self.b = Parameter(pid + ".b", np.zeros((1, 1, 1, 1), dtype))

    def __call__(self, x):
        return ops.deconv2d(x, self.w, self.b)

    def parameters(self):
        return [self.w, self.b]


class Linear:
    def __init__(self, pid: str, f_in: int, f_out: int, rng: Rng, dtype=np.float32):
        std = math.sqrt(2.0 / f_in)
        self.w = Parameter(pid + ".w", rng.normal((f_out, f_in, 1, 1), std, dtype))
        self.b = Parameter(pid + ".b", np.zeros((1, f_out, 1, 1), dtype))

    def __call__(self, x):
        return ops.fc(x, self.w, self.b)

    def parameters(self):
        return [self.w, self.b]
