"""Full-batch SGD training for the toy segmentation network."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from ..errors import TrainingDivergedError
from ..lidar_io import CLASS_CURB, LabelSet, PointCloud
from ..losses import ClassHistogram, LossConfig, loss_group
from ..voxel import SparseVoxelTensor, VoxelGridSpec, voxelize
from .model import (
    DEFAULT_WIDTHS,
    NetworkParams,
    SegModel,
    build_params,
    conditioned_dense,
    predict_point_scores,
)


@dataclass
class PreparedFrame:
    """A voxelized frame with per-cell training targets."""

    vox: SparseVoxelTensor
    dense: np.ndarray
    mask: np.ndarray
    cell_index: tuple[np.ndarray, np.ndarray, np.ndarray]
    cell_classes: np.ndarray
    point_classes: np.ndarray


def prepare_frame(cloud: PointCloud, labels: LabelSet, spec: VoxelGridSpec) -> PreparedFrame:
    from ..voxel import cell_labels

    vox = voxelize(cloud, spec)
    point_classes = labels.pipeline_classes()
    per_cell = cell_labels(vox, point_classes)
    idx = sorted(per_cell)
    hh = np.array([i[0] for i in idx], dtype=np.int64)
    ww = np.array([i[1] for i in idx], dtype=np.int64)
    dd = np.array([i[2] for i in idx], dtype=np.int64)
    classes = np.array([per_cell[i] for i in idx], dtype=np.int64)
    return PreparedFrame(
        vox=vox,
        dense=conditioned_dense(vox),
        mask=vox.occupancy_mask(),
        cell_index=(hh, ww, dd),
        cell_classes=classes,
        point_classes=point_classes,
    )


@dataclass
class TrainResult:
    params: NetworkParams
    loss_curve: list[tuple[float, float, float]] = field(default_factory=list)

    @property
    def epochs_run(self) -> int:
        return len(self.loss_curve)


def _frame_logits(model: SegModel, frame: PreparedFrame) -> ad.Tensor:
    logits = model.forward_dense(frame.dense, frame.mask)
    hh, ww, dd = frame.cell_index
    cells = logits[(slice(None), hh, ww, dd)]  # (n_classes, n_cells)
    return ad.transpose(cells, (1, 0))


def curb_iou(params: NetworkParams, frames: list[PreparedFrame]) -> float:
    """Point-level IoU of the curb class over a list of prepared frames."""
    tp = fp = fn = 0
    for frame in frames:
        scores = predict_point_scores(params, frame.vox)
        pred = scores.argmax(axis=1)
        truth = frame.point_classes
        tp += int(np.sum((pred == CLASS_CURB) & (truth == CLASS_CURB)))
        fp += int(np.sum((pred == CLASS_CURB) & (truth != CLASS_CURB)))
        fn += int(np.sum((pred != CLASS_CURB) & (truth == CLASS_CURB)))
    union = tp + fp + fn
    return tp / union if union else 1.0


def train_toy(
    frames: list[tuple[PointCloud, LabelSet]],
    spec: VoxelGridSpec,
    *,
    epochs: int = 100,
    lr: float = 0.001,
    batch_size: int | None = None,
    widths: tuple[int, ...] = DEFAULT_WIDTHS,
    loss_cfg: LossConfig | None = None,
    seed: int = 0,
    stop_at_curb_iou: float | None = None,
    check_every: int = 10,
) -> TrainResult:
    """Mini-batch gradient descent on the combined loss group.

    Frames are visited in fixed order, ``batch_size`` at a time (default:
    one full batch per epoch), with one descent step per batch.  The run is
    deterministic under a fixed seed: initialization is the only source of
    randomness.  ``stop_at_curb_iou`` optionally ends training early once
    the point-level curb IoU over the training frames reaches the target.

    Raises:
        ValueError: no frames.
        TrainingDivergedError: the epoch loss is NaN or infinite.
    """
    if not frames:
        raise ValueError("need at least one training frame")
    loss_cfg = loss_cfg or LossConfig()

    prepared = [prepare_frame(cloud, labels, spec) for cloud, labels in frames]
    all_classes = np.concatenate([f.point_classes for f in prepared])
    hist = ClassHistogram.from_classes(all_classes)
    loss_cfg.validate_for(hist)
    if batch_size is None or batch_size > len(prepared):
        batch_size = len(prepared)

    params = build_params(spec.resolution, widths=widths, seed=seed)
    params.meta["grid"] = spec.to_dict()
    model = SegModel(params)
    result = TrainResult(params=params)

    for epoch in range(epochs):
        tot = ace_sum = iou_sum = 0.0
        for start in range(0, len(prepared), batch_size):
            batch = prepared[start : start + batch_size]
            params.zero_grad()
            scale = 1.0 / len(batch)
            for frame in batch:
                logits = _frame_logits(model, frame)
                total, ace, iou = loss_group(logits, frame.cell_classes, hist, loss_cfg)
                ad.mul(total, scale).backward(np.asarray(1.0))
                tot += float(total.data) / len(prepared)
                ace_sum += float(ace.data) / len(prepared)
                iou_sum += float(iou.data) / len(prepared)
            params.sgd_step(lr)
        if not np.isfinite(tot):
            raise TrainingDivergedError(f"loss became {tot} at epoch {epoch + 1}")
        result.loss_curve.append((tot, ace_sum, iou_sum))
        if (
            stop_at_curb_iou is not None
            and (epoch + 1) % check_every == 0
            and curb_iou(params, prepared) >= stop_at_curb_iou
        ):
            break
    return result
