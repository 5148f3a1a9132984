"""Attention-pyramid CNN for fine-grained classification, from scratch.

A small numpy tensor engine with reverse-mode autodiff underneath a
two-stage network: feature pyramid with spatial/channel attention gates,
an attention-driven ROI pyramid, and ROI-guided dropblock + zoom-in
refinement.  ``AttentionPyramidClassifier`` is the high-level entry
point; the submodules expose every building block.
"""

from . import ops
from .backbone import Backbone, BackboneConfig
from .data import Dataset, Item, gen_synthetic, load_image_folder, read_ppm, write_ppm
from .errors import ConfigError, DataError, NumericError, ShapeError
from .estimator import AttentionPyramidClassifier, check_image_batch, check_labels
from .model import APCNN, ForwardTrace, ModelConfig, Prediction, load_model, save_model
from .optim import cosine_lr, sgd_step, zero_grads
from .pyramid import AttentionConfig, AttentionPyramid, PyramidLevel
from .refine import RefinementPlan, apply_dropblock, drop_mask, merge_rois, refine, select_drop_roi, zoom_in
from .rois import Roi, RoiConfig, build_roi_pyramid, gen_anchors, iou, nms, score_anchors
from .tensor import Parameter, Rng, Tensor, backward
from .train import TrainConfig, eval_localization, evaluate, forward_trace, train

__version__ = "0.1.0"

__all__ = [
    "APCNN",
    "AttentionConfig",
    "AttentionPyramid",
    "AttentionPyramidClassifier",
    "Backbone",
    "BackboneConfig",
    "ConfigError",
    "DataError",
    "Dataset",
    "ForwardTrace",
    "Item",
    "ModelConfig",
    "NumericError",
    "Parameter",
    "Prediction",
    "PyramidLevel",
    "RefinementPlan",
    "Rng",
    "Roi",
    "RoiConfig",
    "ShapeError",
    "Tensor",
    "TrainConfig",
    "apply_dropblock",
    "backward",
    "build_roi_pyramid",
    "check_image_batch",
    "check_labels",
    "cosine_lr",
    "drop_mask",
    "eval_localization",
    "evaluate",
    "forward_trace",
    "gen_anchors",
    "gen_synthetic",
    "iou",
    "load_image_folder",
    "load_model",
    "merge_rois",
    "nms",
    "ops",
    "read_ppm",
    "refine",
    "save_model",
    "score_anchors",
    "select_drop_roi",
    "sgd_step",
    "train",
    "write_ppm",
    "zero_grads",
    "zoom_in",
]
