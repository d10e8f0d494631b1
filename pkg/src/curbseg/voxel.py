"""Distance-aware voxelization and the inverse scatter back to points.

The default partition is cylindrical: binning (rho, phi, z) with uniform bin
widths means the physical arc width of a cell grows linearly with range, so
far sparse regions are covered by larger cells than the dense near field.
A plain cartesian mode is kept for synthetic scenes and tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import ConfigurationError, CorruptionError
from .lidar_io import CLASS_OTHER, N_CLASSES, PointCloud

N_FEATURES = 5  # mean x, mean y, mean z, mean intensity, log1p(count)
DROPPED = -1  # point_index marker for out-of-range points in drop mode


@dataclass(frozen=True)
class VoxelGridSpec:
    """Geometry of the voxel grid.

    ``bounds`` holds (low, high) per axis; for cylindrical mode the axes are
    (rho meters, phi radians, z meters), for cartesian (x, y, z) meters.
    ``resolution`` is the cell count (H, W, D) along those axes.
    """

    mode: str = "cylindrical"
    bounds: tuple[tuple[float, float], ...] = (
        (0.0, 50.0),
        (-math.pi, math.pi),
        (-4.0, 2.0),
    )
    resolution: tuple[int, int, int] = (240, 180, 16)
    out_of_range_policy: str = "drop"

    def __post_init__(self) -> None:
        if self.mode not in ("cylindrical", "cartesian"):
            raise ConfigurationError(f"unknown grid mode {self.mode!r}")
        if self.out_of_range_policy not in ("drop", "clamp"):
            raise ConfigurationError(
                f"unknown out_of_range_policy {self.out_of_range_policy!r}"
            )
        if len(self.bounds) != 3 or len(self.resolution) != 3:
            raise ConfigurationError("bounds and resolution must each have 3 entries")
        for (lo, hi), n in zip(self.bounds, self.resolution):
            if n < 1:
                raise ConfigurationError(f"resolution {self.resolution} has a cell count < 1")
            if not (lo < hi):
                raise ConfigurationError(f"degenerate range [{lo}, {hi}]")

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.resolution)

    def n_cells(self) -> int:
        h, w, d = self.resolution
        return h * w * d

    def bin_widths(self) -> tuple[float, float, float]:
        return tuple(
            (hi - lo) / n for (lo, hi), n in zip(self.bounds, self.resolution)
        )

    def bin_centers(self, axis: int) -> np.ndarray:
        lo, hi = self.bounds[axis]
        n = self.resolution[axis]
        edges = np.linspace(lo, hi, n + 1)
        return 0.5 * (edges[:-1] + edges[1:])

    def cell_arc_width(self, rho_bin: int) -> float:
        """Physical arc width (m) of a cylindrical cell at a given rho bin."""
        if self.mode != "cylindrical":
            raise ConfigurationError("arc width is defined for cylindrical grids only")
        dphi = self.bin_widths()[1]
        return float(self.bin_centers(0)[rho_bin]) * dphi

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "bounds": [[float(lo), float(hi)] for lo, hi in self.bounds],
            "resolution": list(self.resolution),
            "out_of_range_policy": self.out_of_range_policy,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "VoxelGridSpec":
        known = {"mode", "bounds", "resolution", "out_of_range_policy"}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown grid keys: {sorted(unknown)}")
        kwargs = dict(d)
        if "bounds" in kwargs:
            kwargs["bounds"] = tuple(tuple(float(v) for v in b) for b in kwargs["bounds"])
        if "resolution" in kwargs:
            kwargs["resolution"] = tuple(int(v) for v in kwargs["resolution"])
        return cls(**kwargs)


@dataclass
class SparseVoxelTensor:
    """Sparse F x H x W x D feature grid plus the point-to-voxel index map.

    ``cells`` maps (h, w, d) to a length-F feature vector; ``point_index``
    holds each source point's flattened cell index (h*W*D + w*D + d), with
    ``DROPPED`` for out-of-range points under the drop policy.
    """

    spec: VoxelGridSpec
    channels: int
    cells: dict[tuple[int, int, int], np.ndarray]
    point_index: np.ndarray

    def __post_init__(self) -> None:
        h, w, d = self.spec.resolution
        for (ih, iw, idd), feats in self.cells.items():
            if not (0 <= ih < h and 0 <= iw < w and 0 <= idd < d):
                raise CorruptionError(f"cell {(ih, iw, idd)} outside grid {self.spec.resolution}")
            if len(feats) != self.channels or not np.isfinite(feats).all():
                raise CorruptionError(f"cell {(ih, iw, idd)}: bad feature vector")

    @property
    def n_occupied(self) -> int:
        return len(self.cells)

    def flat_index(self, h: int, w: int, d: int) -> int:
        _, wres, dres = self.spec.resolution
        return (h * wres + w) * dres + d

    def occupancy_mask(self) -> np.ndarray:
        mask = np.zeros(self.spec.resolution, dtype=bool)
        for idx in self.cells:
            mask[idx] = True
        return mask

    def to_dense(self) -> np.ndarray:
        """Dense (F, H, W, D) float64 array, zero at unoccupied cells."""
        dense = np.zeros((self.channels, *self.spec.resolution), dtype=np.float64)
        for (h, w, d), feats in self.cells.items():
            dense[:, h, w, d] = feats
        return dense


def _cylindrical(xyz: np.ndarray) -> np.ndarray:
    rho = np.hypot(xyz[:, 0], xyz[:, 1])
    phi = np.arctan2(xyz[:, 1], xyz[:, 0])
    return np.column_stack([rho, phi, xyz[:, 2]])


def voxelize(cloud: PointCloud, spec: VoxelGridSpec) -> SparseVoxelTensor:
    """Bin a point cloud into the grid and pool per-cell features.

    Cell features are [mean x, mean y, mean z, mean intensity, log1p(count)]
    over the member points (original cartesian coordinates, regardless of the
    binning mode).  Out-of-range points are dropped or clamped per the grid's
    out_of_range_policy; the reduction order is fixed, so the result is
    deterministic.
    """
    xyz = cloud.xyz.astype(np.float64)
    n = len(cloud)
    h, w, d = spec.resolution

    if n == 0:
        return SparseVoxelTensor(
            spec=spec, channels=N_FEATURES, cells={}, point_index=np.empty(0, dtype=np.int64)
        )

    coords = _cylindrical(xyz) if spec.mode == "cylindrical" else xyz

    bins = np.empty((n, 3), dtype=np.int64)
    in_range = np.ones(n, dtype=bool)
    for axis, ((lo, hi), res) in enumerate(zip(spec.bounds, spec.resolution)):
        v = coords[:, axis]
        idx = np.floor((v - lo) / (hi - lo) * res).astype(np.int64)
        # values exactly at the upper edge belong to the last bin
        idx[v == hi] = res - 1
        if spec.out_of_range_policy == "clamp":
            idx = np.clip(idx, 0, res - 1)
        else:
            in_range &= (idx >= 0) & (idx < res)
        bins[:, axis] = np.clip(idx, 0, res - 1)

    flat = (bins[:, 0] * w + bins[:, 1]) * d + bins[:, 2]
    point_index = np.where(in_range, flat, DROPPED)

    kept = np.flatnonzero(in_range)
    cells: dict[tuple[int, int, int], np.ndarray] = {}
    if kept.size:
        kept_flat = flat[kept]
        uniq, inverse, counts = np.unique(kept_flat, return_inverse=True, return_counts=True)
        sums = np.zeros((uniq.size, 4), dtype=np.float64)
        np.add.at(sums, inverse, np.column_stack([xyz[kept], cloud.intensity[kept].astype(np.float64)]))
        means = sums / counts[:, None]
        feats = np.column_stack([means, np.log1p(counts.astype(np.float64))])
        for flat_idx, f in zip(uniq, feats):
            ih, rem = divmod(int(flat_idx), w * d)
            iw, idd = divmod(rem, d)
            cells[(ih, iw, idd)] = f

    return SparseVoxelTensor(
        spec=spec, channels=N_FEATURES, cells=cells, point_index=point_index
    )


def feature_scale(spec: VoxelGridSpec) -> np.ndarray:
    """Per-channel conditioning factors for network input.

    Coordinates are divided by the grid's physical extent and the log-count
    is brought to order one, so the feature vector is O(1) on every channel
    regardless of the configured ranges.
    """
    if spec.mode == "cylindrical":
        radial = abs(spec.bounds[0][1])
    else:
        radial = max(abs(v) for b in spec.bounds[:2] for v in b)
    z_extent = max(abs(v) for v in spec.bounds[2])
    return np.array([
        1.0 / max(radial, 1e-9),
        1.0 / max(radial, 1e-9),
        1.0 / max(z_extent, 1e-9),
        1.0,
        0.25,
    ])


def scores_to_tensor(dense_scores: np.ndarray, like: SparseVoxelTensor) -> SparseVoxelTensor:
    """Wrap dense per-cell scores (C, H, W, D) into a sparse tensor over the
    cells occupied in ``like``."""
    c = dense_scores.shape[0]
    if dense_scores.shape[1:] != tuple(like.spec.resolution):
        raise CorruptionError(
            f"score grid {dense_scores.shape[1:]} does not match spec {like.spec.resolution}"
        )
    cells = {idx: dense_scores[(slice(None), *idx)].astype(np.float64) for idx in like.cells}
    return SparseVoxelTensor(
        spec=like.spec, channels=c, cells=cells, point_index=like.point_index
    )


def devoxelize(tensor: SparseVoxelTensor, point_index: np.ndarray) -> np.ndarray:
    """Scatter per-cell score vectors back to points.

    In-range points receive their cell's vector; dropped points receive a
    one-hot `other` row (the tensor is expected to hold class scores when
    dropped points are present).

    Raises:
        CorruptionError: an index is out of bounds or references an
            unoccupied cell (the index map is not from the same voxelization).
    """
    point_index = np.asarray(point_index, dtype=np.int64)
    n = point_index.shape[0]
    c = tensor.channels
    out = np.zeros((n, c), dtype=np.float64)

    n_cells = tensor.spec.n_cells()
    bad = (point_index != DROPPED) & ((point_index < 0) | (point_index >= n_cells))
    if bad.any():
        raise CorruptionError(f"{int(bad.sum())} point indices out of bounds")

    dropped = point_index == DROPPED
    if dropped.any():
        onehot = np.zeros(c, dtype=np.float64)
        onehot[CLASS_OTHER] = 1.0
        out[dropped] = onehot
    if dropped.all():
        return out

    occupied = np.zeros(n_cells, dtype=bool)
    values = np.zeros((n_cells, c), dtype=np.float64)
    for idx, feats in tensor.cells.items():
        flat = tensor.flat_index(*idx)
        occupied[flat] = True
        values[flat] = feats

    in_range = np.flatnonzero(~dropped)
    targets = point_index[in_range]
    if not occupied[targets].all():
        missing = in_range[~occupied[targets]][0]
        raise CorruptionError(
            f"point {int(missing)} maps to unoccupied cell {int(point_index[missing])}"
        )
    out[in_range] = values[targets]
    return out


def cell_labels(tensor: SparseVoxelTensor, point_classes: np.ndarray) -> dict[tuple[int, int, int], int]:
    """Majority pipeline class per occupied cell (ties break to the lowest id)."""
    point_classes = np.asarray(point_classes, dtype=np.int64)
    counts = np.zeros((tensor.spec.n_cells(), N_CLASSES), dtype=np.int64)
    kept = tensor.point_index != DROPPED
    np.add.at(counts, (tensor.point_index[kept], point_classes[kept]), 1)
    majority = counts.argmax(axis=1)
    return {idx: int(majority[tensor.flat_index(*idx)]) for idx in tensor.cells}
