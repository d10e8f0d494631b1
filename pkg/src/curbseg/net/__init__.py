"""Sparse segmentation network: primitives, attention block, model, training."""

from .blocks import (
    AttentionConfig,
    attention_block,
    channel_attention_branch,
    multi_scale_branch,
    pool_mask,
    sparse_conv,
)
from .model import (
    DEFAULT_WIDTHS,
    N_LEVELS,
    NetworkParams,
    SegModel,
    build_params,
    load_checkpoint,
    predict_point_classes,
    predict_point_scores,
    save_checkpoint,
)
from .train import PreparedFrame, TrainResult, curb_iou, prepare_frame, train_toy

__all__ = [
    "AttentionConfig",
    "attention_block",
    "channel_attention_branch",
    "multi_scale_branch",
    "pool_mask",
    "sparse_conv",
    "DEFAULT_WIDTHS",
    "N_LEVELS",
    "NetworkParams",
    "SegModel",
    "build_params",
    "load_checkpoint",
    "predict_point_classes",
    "predict_point_scores",
    "save_checkpoint",
    "PreparedFrame",
    "TrainResult",
    "curb_iou",
    "prepare_frame",
    "train_toy",
]
