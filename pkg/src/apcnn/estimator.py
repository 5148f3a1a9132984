"""Scikit-learn style estimator facade over the two-stage model.

``AttentionPyramidClassifier`` follows the fit/predict/predict_proba
contract with ``get_params``/``set_params`` so it clones and composes
with the wider ecosystem (no scikit-learn import required).  Inputs are
image batches of shape (n_samples, 3, H, W) with values in [0, 1].
"""

from __future__ import annotations

import inspect

import numpy as np

from .backbone import BackboneConfig
from .data import Dataset, Item
from .errors import ConfigError
from .model import APCNN, ModelConfig
from .pyramid import AttentionConfig
from .refine import merge_rois
from .rois import RoiConfig
from .tensor import Rng
from .train import EVAL_RNG_SEED, TrainConfig, train


class NotFittedError(RuntimeError):
    """fit() has not been called yet."""


def check_image_batch(X, input_size=None) -> np.ndarray:
    """Validate (n, 3, H, W) float images in [0, 1]-ish range; returns float32."""
    X = np.asarray(X, dtype=np.float32)
    if X.ndim != 4:
        raise ValueError(f"X must be 4-d (n_samples, 3, H, W); got shape {X.shape}")
    if X.shape[1] != 3:
        raise ValueError(f"X must have 3 channels; got {X.shape[1]}")
    if X.shape[2] != X.shape[3]:
        raise ValueError(f"images must be square; got {X.shape[2]}x{X.shape[3]}")
    if input_size is not None and X.shape[2] != input_size:
        raise ValueError(f"images are {X.shape[2]} px but the estimator expects {input_size}")
    if not np.all(np.isfinite(X)):
        raise ValueError("X contains non-finite values")
    return X


def check_labels(y, n_samples: int) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1 or y.shape[0] != n_samples:
        raise ValueError(f"y must be 1-d with {n_samples} entries; got shape {y.shape}")
    return y


class AttentionPyramidClassifier:
    """Two-stage attention-pyramid image classifier with an sklearn API.

    Parameters mirror the model and training configs; all are plain
    constructor keywords so ``get_params``/``set_params``/clone work.
    """

    def __init__(
        self,
        input_size=96,
        fpn_channels=128,
        use_spatial=True,
        use_channel=True,
        pathway="channel_bottom_up",
        use_fpn=True,
        two_stage=True,
        use_dropblock=True,
        use_zoom=True,
        random_drop=False,
        random_zoom=False,
        anchor_scales=None,
        xi=(5, 3, 1),
        nms_iou=0.05,
        drop_probs=(0.3, 0.3, 0.0),
        refinement_position="tap0",
        epochs=30,
        batch_size=16,
        lr0=0.001,
        momentum=0.9,
        seed=0,
    ):
        self.input_size = input_size
        self.fpn_channels = fpn_channels
        self.use_spatial = use_spatial
        self.use_channel = use_channel
        self.pathway = pathway
        self.use_fpn = use_fpn
        self.two_stage = two_stage
        self.use_dropblock = use_dropblock
        self.use_zoom = use_zoom
        self.random_drop = random_drop
        self.random_zoom = random_zoom
        self.anchor_scales = anchor_scales
        self.xi = xi
        self.nms_iou = nms_iou
        self.drop_probs = drop_probs
        self.refinement_position = refinement_position
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr0 = lr0
        self.momentum = momentum
        self.seed = seed

    # -- sklearn plumbing ------------------------------------------------------

    @classmethod
    def _param_names(cls):
        sig = inspect.signature(cls.__init__)
        return [p for p in sig.parameters if p != "self"]

    def get_params(self, deep=True) -> dict:
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params):
        valid = set(self._param_names())
        for key, value in params.items():
            if key not in valid:
                raise ValueError(f"invalid parameter {key!r} for AttentionPyramidClassifier")
            setattr(self, key, value)
        return self

    # -- fitting -----------------------------------------------------------------

    def _build_config(self, num_classes: int) -> ModelConfig:
        return ModelConfig(
            backbone=BackboneConfig(input_size=self.input_size),
            attention=AttentionConfig(
                use_spatial=self.use_spatial,
                use_channel=self.use_channel,
                pathway=self.pathway,
                fpn_channels=self.fpn_channels,
            ),
            roi=RoiConfig(anchor_scales=self.anchor_scales, xi=tuple(self.xi), nms_iou=self.nms_iou),
            num_classes=num_classes,
            drop_probs=tuple(self.drop_probs),
            refinement_position=self.refinement_position,
            two_stage=self.two_stage,
            use_fpn=self.use_fpn,
            use_dropblock=self.use_dropblock,
            use_zoom=self.use_zoom,
            random_drop=self.random_drop,
            random_zoom=self.random_zoom,
        )

    def fit(self, X, y):
        X = check_image_batch(X, self.input_size)
        y = check_labels(y, X.shape[0])
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least 2 classes")
        items = [
            Item(image=X[i], label=int(encoded[i]), box=None, image_id=f"fit-{i:05d}")
            for i in range(X.shape[0])
        ]
        ds = Dataset(items=items, split="train", class_names=[str(c) for c in self.classes_])
        self.model_ = APCNN(self._build_config(len(self.classes_)), Rng(self.seed))
        cfg = TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr0=self.lr0,
            momentum=self.momentum,
            seed=self.seed,
            eval_every=0,
        )
        self.history_ = train(self.model_, ds, cfg)
        return self

    def _require_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("call fit(X, y) before predicting")

    def _forward_probs(self, X) -> np.ndarray:
        X = check_image_batch(X, self.input_size)
        rng = Rng(EVAL_RNG_SEED)
        probs = []
        for start in range(0, X.shape[0], self.batch_size):
            pred, _ = self.model_.forward(X[start : start + self.batch_size], mode="eval", rng=rng)
            probs.append(pred.final_probs)
        return np.concatenate(probs, axis=0)

    def predict_proba(self, X) -> np.ndarray:
        self._require_fitted()
        return self._forward_probs(X)

    def predict(self, X) -> np.ndarray:
        self._require_fitted()
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    def score(self, X, y) -> float:
        y = np.asarray(y)
        return float((self.predict(X) == y).mean())

    def localize(self, X) -> np.ndarray:
        """Merged ROI rectangles, one (x1, y1, x2, y2) row per image."""
        self._require_fitted()
        if not (self.use_fpn and self.use_spatial):
            raise ConfigError("localize needs spatial attention")
        X = check_image_batch(X, self.input_size)
        rng = Rng(EVAL_RNG_SEED)
        boxes = []
        for start in range(0, X.shape[0], self.batch_size):
            chunk = X[start : start + self.batch_size]
            _, trace = self.model_.forward(chunk, mode="eval", rng=rng)
            for rois in trace.rois:
                x1, x2, y1, y2 = merge_rois(rois, chunk.shape[2:])
                boxes.append((x1, y1, x2, y2))
        return np.asarray(boxes)
