"""Synthetic street scenes for exercising the pipeline without real data.

One frame is a straight road segment ahead of the sensor: a road slab at
z ~ 0, raised curb lines along both edges, sidewalk strips beyond them, and
a sprinkle of taller clutter.  Classes also separate in intensity, which
keeps toy training runs short.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .lidar_io import (
    CLASS_CURB,
    CLASS_OTHER,
    CLASS_ROAD,
    CLASS_SIDEWALK,
    DEFAULT_INVERSE_CLASS_MAP,
    LabelSet,
    PointCloud,
    write_labels,
    write_point_cloud,
)

INTENSITY = {CLASS_ROAD: 0.2, CLASS_SIDEWALK: 0.5, CLASS_CURB: 0.8, CLASS_OTHER: 0.05}
CURB_HEIGHT = 0.15
SIDEWALK_HEIGHT = 0.18


def make_scene(
    rng: np.random.Generator,
    n_road: int = 600,
    n_curb_per_side: int = 80,
    n_sidewalk: int = 300,
    n_other: int = 40,
    half_width: float = 3.5,
    y_range: tuple[float, float] = (2.0, 28.0),
    jitter: float = 0.02,
    frame_id: str = "synthetic",
) -> tuple[PointCloud, LabelSet]:
    """Build one labeled frame; all classes sit inside the default grid."""
    y0, y1 = y_range
    rows = []
    classes = []

    def emit(n, xs, ys, zs, cls):
        inten = INTENSITY[cls] + rng.normal(0, 0.02, n)
        rows.append(np.column_stack([xs, ys, zs, np.clip(inten, 0, 1)]))
        classes.append(np.full(n, cls, dtype=np.int64))

    emit(
        n_road,
        rng.uniform(-half_width + 0.3, half_width - 0.3, n_road),
        rng.uniform(y0, y1, n_road),
        rng.normal(0.0, jitter / 2, n_road),
        CLASS_ROAD,
    )
    for side in (-1.0, 1.0):
        ys = np.linspace(y0, y1, n_curb_per_side) + rng.normal(0, jitter, n_curb_per_side)
        xs = side * half_width + rng.normal(0, jitter, n_curb_per_side)
        zs = CURB_HEIGHT + rng.normal(0, jitter / 2, n_curb_per_side)
        emit(n_curb_per_side, xs, ys, zs, CLASS_CURB)
    emit(
        n_sidewalk,
        rng.choice([-1.0, 1.0], n_sidewalk)
        * rng.uniform(half_width + 0.4, half_width + 2.5, n_sidewalk),
        rng.uniform(y0, y1, n_sidewalk),
        SIDEWALK_HEIGHT + rng.normal(0, jitter / 2, n_sidewalk),
        CLASS_SIDEWALK,
    )
    if n_other:
        emit(
            n_other,
            rng.choice([-1.0, 1.0], n_other) * rng.uniform(half_width + 3.5, half_width + 6.0, n_other),
            rng.uniform(y0, y1, n_other),
            rng.uniform(0.5, 1.8, n_other),
            CLASS_OTHER,
        )

    pts = np.concatenate(rows).astype(np.float32)
    cls = np.concatenate(classes)
    raw = np.zeros(len(cls), dtype=np.uint16)
    for pipeline_cls, raw_id in DEFAULT_INVERSE_CLASS_MAP.items():
        raw[cls == pipeline_cls] = raw_id
    return PointCloud(points=pts, frame_id=frame_id), LabelSet(labels=raw)


def write_dataset(out_dir: str | Path, n_frames: int, seed: int = 0) -> list[str]:
    """Write ``n_frames`` synthetic (.bin, .label) pairs; returns frame ids."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    ids = []
    for i in range(n_frames):
        frame_id = f"{i:06d}"
        cloud, labels = make_scene(rng, frame_id=frame_id)
        write_point_cloud(cloud, out_dir / f"{frame_id}.bin")
        write_labels(labels.labels, out_dir / f"{frame_id}.label")
        ids.append(frame_id)
    return ids


def toy_grid():
    """A compact cylindrical grid that covers the synthetic scenes."""
    from .voxel import VoxelGridSpec

    return VoxelGridSpec(
        mode="cylindrical",
        bounds=((0.0, 32.0), (-np.pi, np.pi), (-0.5, 2.0)),
        resolution=(64, 64, 10),
    )


def aligned_grid():
    """Cartesian grid whose 0.5 m columns match the aligned scene layout."""
    from .voxel import VoxelGridSpec

    return VoxelGridSpec(
        mode="cartesian",
        bounds=((-8.0, 8.0), (0.0, 30.0), (-0.5, 2.0)),
        resolution=(32, 30, 5),
    )


def make_aligned_scene(
    rng: np.random.Generator,
    n_road: int = 400,
    n_curb_per_side: int = 70,
    n_sidewalk: int = 200,
    n_other: int = 30,
    frame_id: str = "aligned",
) -> tuple[PointCloud, LabelSet]:
    """A scene whose classes occupy disjoint 0.5 m x-columns of
    :func:`aligned_grid`, so every occupied cell is class-pure.

    Useful for capacity checks: a perfect per-cell classifier reaches
    perfect per-point metrics on these frames.
    """
    rows = []
    classes = []

    def emit(n, xs, ys, zs, cls):
        inten = np.clip(INTENSITY[cls] + rng.normal(0, 0.02, n), 0, 1)
        rows.append(np.column_stack([xs, ys, zs, inten]))
        classes.append(np.full(n, cls, dtype=np.int64))

    ys = lambda n: rng.uniform(0.2, 29.8, n)
    emit(n_road, rng.uniform(-2.95, 2.95, n_road), ys(n_road),
         rng.normal(0.0, 0.01, n_road), CLASS_ROAD)
    for side in (-1.0, 1.0):
        emit(n_curb_per_side,
             side * rng.uniform(3.05, 3.45, n_curb_per_side),
             ys(n_curb_per_side),
             CURB_HEIGHT + rng.normal(0, 0.01, n_curb_per_side),
             CLASS_CURB)
    emit(n_sidewalk,
         rng.choice([-1.0, 1.0], n_sidewalk) * rng.uniform(3.55, 4.95, n_sidewalk),
         ys(n_sidewalk),
         SIDEWALK_HEIGHT + rng.normal(0, 0.01, n_sidewalk),
         CLASS_SIDEWALK)
    if n_other:
        emit(n_other,
             rng.choice([-1.0, 1.0], n_other) * rng.uniform(5.55, 7.45, n_other),
             ys(n_other),
             rng.uniform(0.6, 1.8, n_other),
             CLASS_OTHER)

    pts = np.concatenate(rows).astype(np.float32)
    cls = np.concatenate(classes)
    raw = np.zeros(len(cls), dtype=np.uint16)
    for pipeline_cls, raw_id in DEFAULT_INVERSE_CLASS_MAP.items():
        raw[cls == pipeline_cls] = raw_id
    return PointCloud(points=pts, frame_id=frame_id), LabelSet(labels=raw)
