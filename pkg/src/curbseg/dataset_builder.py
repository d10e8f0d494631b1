"""Automated curb-label proposals from road labels.

The procedure: fit the ground plane from the lowest points, rasterize the
road-labeled points into a 0.2 m occupancy grid, take the morphological
boundary of the road region, dilate it outward by one cell, and relabel the
near-ground points inside that band (and inside the forward/lateral crop
window) as curb.  Road-labeled points are never overwritten.  The output is
meant for human review, so a CSV review file with per-proposal confidence
accompanies the relabeled set.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import InsufficientGroundError
from .lidar_io import CLASS_ROAD, RAW_CURB_ID, LabelSet, PointCloud

GRID_RES = 0.2  # m, boundary-extraction raster
HEIGHT_BAND = 0.25  # m above the fitted plane
PLANE_INLIER_DIST = 0.15  # m
MIN_GROUND_POINTS = 50


@dataclass(frozen=True)
class CropSpec:
    """Forward/lateral crop of the labeling region."""

    forward_range: float = 40.43  # m along +y
    lateral_factor: float = 1.3  # multiple of the measured road half-width

    def __post_init__(self) -> None:
        if self.forward_range <= 0 or self.lateral_factor <= 0:
            raise ValueError("crop parameters must be positive")


@dataclass(frozen=True)
class GroundPlane:
    """Plane n . p + d = 0 with a unit normal oriented upward."""

    normal: np.ndarray
    offset: float
    inlier_mask: np.ndarray

    def signed_distance(self, xyz: np.ndarray) -> np.ndarray:
        return np.asarray(xyz, dtype=np.float64) @ self.normal + self.offset


def _lsq_plane(xyz: np.ndarray) -> tuple[np.ndarray, float]:
    centroid = xyz.mean(axis=0)
    centered = xyz - centroid
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    normal = vt[-1]
    if normal[2] < 0:
        normal = -normal
    return normal, float(-normal @ centroid)


def fit_ground_plane(
    cloud: PointCloud,
    n_lowest: int = 20,
    seed_margin: float = 0.4,
    n_iter: int = 3,
    inlier_dist: float = PLANE_INLIER_DIST,
) -> GroundPlane:
    """Iterative lowest-point-seeded least-squares plane.

    Seeds are the points below (mean z of the ``n_lowest`` lowest points +
    ``seed_margin``); the plane is refit ``n_iter`` times against its
    inliers (|signed distance| <= ``inlier_dist``).

    Raises:
        InsufficientGroundError: fewer than 50 seed points.
    """
    xyz = cloud.xyz.astype(np.float64)
    if len(xyz) < MIN_GROUND_POINTS:
        raise InsufficientGroundError(f"only {len(xyz)} points in frame")
    z = xyz[:, 2]
    lowest = np.sort(z)[: min(n_lowest, len(z))]
    seed_height = lowest.mean() + seed_margin
    seeds = xyz[z < seed_height]
    if len(seeds) < MIN_GROUND_POINTS:
        raise InsufficientGroundError(
            f"{len(seeds)} points below seed height {seed_height:.2f}, need {MIN_GROUND_POINTS}"
        )

    current = seeds
    normal, offset = _lsq_plane(current)
    for _ in range(n_iter):
        dist = xyz @ normal + offset
        inliers = np.abs(dist) <= inlier_dist
        if inliers.sum() < 3:
            break
        normal, offset = _lsq_plane(xyz[inliers])
    dist = xyz @ normal + offset
    return GroundPlane(normal=normal, offset=offset, inlier_mask=np.abs(dist) <= inlier_dist)


def measure_road_half_width(
    xy: np.ndarray, road_mask: np.ndarray, forward_range: float
) -> float:
    """Median over 1 m longitudinal slices of the 95th percentile of |x|."""
    road_xy = xy[road_mask]
    road_xy = road_xy[(road_xy[:, 1] >= 0) & (road_xy[:, 1] <= forward_range)]
    if len(road_xy) == 0:
        return 0.0
    half_widths = []
    for y0 in np.arange(0.0, road_xy[:, 1].max() + 1.0, 1.0):
        in_slice = (road_xy[:, 1] >= y0) & (road_xy[:, 1] < y0 + 1.0)
        if in_slice.sum() >= 3:
            half_widths.append(np.percentile(np.abs(road_xy[in_slice, 0]), 95))
    return float(np.median(half_widths)) if half_widths else 0.0


@dataclass
class CurbProposals:
    """Result of one frame's automatic labeling pass."""

    labels: LabelSet
    proposal_indices: np.ndarray
    confidence: np.ndarray
    half_width: float


def propose_curb_labels(
    cloud: PointCloud,
    labels: LabelSet,
    plane: GroundPlane,
    crop: CropSpec | None = None,
    curb_class_id: int = RAW_CURB_ID,
) -> CurbProposals:
    """Relabel near-ground points along the road boundary as curb.

    Returns the updated label set plus the proposal indices and a confidence
    in [0, 1] per proposal (fraction of the proposal cell's 4-neighborhood
    occupied by road).  Road-labeled points are never relabeled.  With no
    road points at all, a warning is issued and the labels come back
    unchanged.
    """
    crop = crop or CropSpec()
    xy = cloud.xyz[:, :2].astype(np.float64)
    pipeline = labels.pipeline_classes()
    road = pipeline == CLASS_ROAD
    empty = CurbProposals(
        labels=LabelSet(labels.labels.copy(), labels.class_map),
        proposal_indices=np.empty(0, dtype=np.int64),
        confidence=np.empty(0),
        half_width=0.0,
    )
    if not road.any():
        warnings.warn("no road-labeled points; no curb proposals", stacklevel=2)
        return empty

    half_width = measure_road_half_width(xy, road, crop.forward_range)
    if half_width <= 0:
        warnings.warn("road width came out non-positive; no curb proposals", stacklevel=2)
        return empty
    lateral = crop.lateral_factor * half_width
    window = (
        (xy[:, 1] >= 0.0) & (xy[:, 1] <= crop.forward_range)
        & (np.abs(xy[:, 0]) <= lateral)
    )

    # rasterize road occupancy over the window extent
    x0, y0 = -lateral, 0.0
    nx = max(1, int(np.ceil(2 * lateral / GRID_RES)))
    ny = max(1, int(np.ceil(crop.forward_range / GRID_RES)))
    ix = np.clip(((xy[:, 0] - x0) / GRID_RES).astype(np.int64), 0, nx - 1)
    iy = np.clip(((xy[:, 1] - y0) / GRID_RES).astype(np.int64), 0, ny - 1)

    occupancy = np.zeros((nx, ny), dtype=bool)
    road_in_window = road & window
    occupancy[ix[road_in_window], iy[road_in_window]] = True

    four = ndimage.generate_binary_structure(2, 1)
    interior = ndimage.binary_erosion(occupancy, structure=four, border_value=0)
    boundary = occupancy & ~interior
    band = ndimage.binary_dilation(boundary, structure=np.ones((3, 3), dtype=bool))

    height = plane.signed_distance(cloud.xyz)
    candidate = (
        window
        & ~road
        & band[ix, iy]
        & (height >= 0.0)
        & (height <= HEIGHT_BAND)
    )
    proposal_indices = np.flatnonzero(candidate)

    # confidence: how much of the cell's 4-neighborhood is road
    padded = np.pad(occupancy, 1)
    neighbor_count = (
        padded[:-2, 1:-1].astype(np.int64) + padded[2:, 1:-1]
        + padded[1:-1, :-2] + padded[1:-1, 2:]
    )
    confidence = neighbor_count[ix[proposal_indices], iy[proposal_indices]] / 4.0

    new_raw = labels.labels.copy()
    new_raw[proposal_indices] = curb_class_id
    class_map = dict(labels.class_map)
    from .lidar_io import CLASS_CURB

    class_map.setdefault(curb_class_id, CLASS_CURB)
    return CurbProposals(
        labels=LabelSet(new_raw, class_map),
        proposal_indices=proposal_indices,
        confidence=confidence.astype(np.float64),
        half_width=half_width,
    )


REVIEW_HEADER = ("frame_id", "point_index", "x", "y", "z", "height_above_plane", "confidence")


def write_review_file(
    path: str | Path,
    cloud: PointCloud,
    plane: GroundPlane,
    proposals: CurbProposals,
) -> None:
    """CSV of curb proposals for manual inspection and refinement."""
    height = plane.signed_distance(cloud.xyz)
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REVIEW_HEADER)
        for idx, conf in zip(proposals.proposal_indices, proposals.confidence):
            x, y, z = cloud.xyz[idx]
            writer.writerow([
                cloud.frame_id, int(idx),
                f"{x:.6f}", f"{y:.6f}", f"{z:.6f}",
                f"{height[idx]:.6f}", f"{conf:.4f}",
            ])
