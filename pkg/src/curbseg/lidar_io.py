"""Readers and writers for KITTI-style point cloud and label containers.

Point files (``<frame>.bin``) hold little-endian float32 quadruples
``(x, y, z, intensity)``.  Label files (``<frame>.label``) hold one
little-endian uint32 per point whose low 16 bits are the semantic class id
(high 16 bits are a per-object instance id and are discarded).  Refined curb
polylines are exported as plain CSV.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import AlignmentError, MalformedFileError, MalformedPointError

POINT_RECORD_BYTES = 16  # 4 little-endian float32 per point
LABEL_RECORD_BYTES = 4

# Pipeline class vocabulary.  Everything the network sees is one of these.
CLASS_OTHER = 0
CLASS_ROAD = 1
CLASS_SIDEWALK = 2
CLASS_CURB = 3
N_CLASSES = 4
CLASS_NAMES = ("other", "road", "sidewalk", "curb")

# Raw semantic ids: road/sidewalk follow the SemanticKITTI convention; the
# curb id is our own (the upstream vocabulary leaves 20 unused) and can be
# remapped through any ``class_map``.
RAW_ROAD_ID = 40
RAW_SIDEWALK_ID = 48
RAW_CURB_ID = 20

DEFAULT_CLASS_MAP: dict[int, int] = {
    RAW_ROAD_ID: CLASS_ROAD,
    RAW_SIDEWALK_ID: CLASS_SIDEWALK,
    RAW_CURB_ID: CLASS_CURB,
}

# Representative raw id written back out for each pipeline class.
DEFAULT_INVERSE_CLASS_MAP: dict[int, int] = {
    CLASS_OTHER: 0,
    CLASS_ROAD: RAW_ROAD_ID,
    CLASS_SIDEWALK: RAW_SIDEWALK_ID,
    CLASS_CURB: RAW_CURB_ID,
}


@dataclass(frozen=True)
class PointCloud:
    """One LiDAR frame: an ``(N, 4)`` float32 array of (x, y, z, intensity).

    Coordinates are meters; intensity is clamped into [0, 1] at load time.
    Instances are immutable and safe to share across threads.
    """

    points: np.ndarray
    frame_id: str = ""

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float32).reshape(-1, 4)
        if not np.isfinite(pts).all():
            raise MalformedPointError(
                f"frame {self.frame_id!r}: non-finite coordinate or intensity"
            )
        pts = pts.copy()
        pts[:, 3] = np.clip(pts[:, 3], 0.0, 1.0)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    @property
    def intensity(self) -> np.ndarray:
        return self.points[:, 3]


@dataclass(frozen=True)
class LabelSet:
    """Per-point semantic ids plus the map onto the four pipeline classes."""

    labels: np.ndarray  # uint16 class ids, one per point
    class_map: Mapping[int, int] = field(default_factory=lambda: dict(DEFAULT_CLASS_MAP))

    def __post_init__(self) -> None:
        lab = np.asarray(self.labels, dtype=np.uint16)
        lab.setflags(write=False)
        object.__setattr__(self, "labels", lab)
        for raw, cls in self.class_map.items():
            if cls not in (CLASS_OTHER, CLASS_ROAD, CLASS_SIDEWALK, CLASS_CURB):
                raise ValueError(f"class_map maps {raw} to unknown pipeline class {cls}")

    def __len__(self) -> int:
        return self.labels.shape[0]

    def pipeline_classes(self) -> np.ndarray:
        """Map raw ids to the pipeline vocabulary; unmapped ids become `other`."""
        out = np.full(len(self), CLASS_OTHER, dtype=np.int64)
        for raw, cls in self.class_map.items():
            out[self.labels == raw] = cls
        return out


def read_point_cloud(path: str | Path, frame_id: str | None = None) -> PointCloud:
    """Read a KITTI-style ``.bin`` point file.

    Raises:
        FileNotFoundError: the path does not exist.
        MalformedFileError: byte length is not a multiple of 16.
        MalformedPointError: a decoded float is NaN or infinite.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"point file not found: {path}")
    raw = path.read_bytes()
    if len(raw) % POINT_RECORD_BYTES != 0:
        raise MalformedFileError(
            f"{path}: {len(raw)} bytes is not a multiple of {POINT_RECORD_BYTES}"
        )
    pts = np.frombuffer(raw, dtype="<f4").reshape(-1, 4)
    return PointCloud(points=pts, frame_id=frame_id if frame_id is not None else path.stem)


def write_point_cloud(cloud: PointCloud, path: str | Path) -> None:
    """Write a frame back to the ``.bin`` container (inverse of read)."""
    Path(path).write_bytes(cloud.points.astype("<f4").tobytes())


def read_labels(
    path: str | Path,
    n_points: int,
    class_map: Mapping[int, int] | None = None,
) -> LabelSet:
    """Read a ``.label`` file and check alignment against the point count.

    The low 16 bits of each uint32 word are the semantic id; the high 16 bits
    (instance id) are dropped.

    Raises:
        AlignmentError: the file does not hold exactly ``n_points`` words.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"label file not found: {path}")
    raw = path.read_bytes()
    if len(raw) % LABEL_RECORD_BYTES != 0 or len(raw) // LABEL_RECORD_BYTES != n_points:
        raise AlignmentError(
            f"{path}: {len(raw)} bytes encode {len(raw) / LABEL_RECORD_BYTES:g} labels, "
            f"expected {n_points}"
        )
    words = np.frombuffer(raw, dtype="<u4")
    class_ids = (words & 0xFFFF).astype(np.uint16)
    if class_map is None:
        class_map = dict(DEFAULT_CLASS_MAP)
    return LabelSet(labels=class_ids, class_map=class_map)


def write_labels(labels: np.ndarray, path: str | Path) -> None:
    """Write raw class ids as a ``.label`` file (instance bits zero)."""
    words = np.asarray(labels, dtype=np.uint32) & 0xFFFF
    Path(path).write_bytes(words.astype("<u4").tobytes())


def write_pipeline_labels(
    classes: np.ndarray,
    path: str | Path,
    inverse_map: Mapping[int, int] | None = None,
) -> None:
    """Write pipeline classes (0..3) as raw ids via the inverse class map."""
    if inverse_map is None:
        inverse_map = DEFAULT_INVERSE_CLASS_MAP
    classes = np.asarray(classes, dtype=np.int64)
    raw = np.zeros(classes.shape[0], dtype=np.uint32)
    for cls, rid in inverse_map.items():
        raw[classes == cls] = rid
    write_labels(raw, path)


POLYLINE_HEADER = ("frame_id", "cluster_id", "x", "y", "z")


def write_polylines(clusters: Sequence, path: str | Path, frame_id: str = "0") -> None:
    """Write refined curb clusters as CSV rows (frame_id, cluster_id, x, y, z).

    Coordinates are formatted with 6 fractional digits.  ``clusters`` is any
    sequence of objects with ``cluster_id`` and ``points`` (``(M, 3)`` array)
    attributes, in practice :class:`curbseg.postprocess.CurbCluster`.
    """
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(POLYLINE_HEADER)
        for cluster in clusters:
            pts = np.asarray(cluster.points, dtype=np.float64)
            if not np.isfinite(pts).all():
                raise ValueError(f"cluster {cluster.cluster_id}: non-finite coordinates")
            for x, y, z in pts:
                writer.writerow(
                    [frame_id, cluster.cluster_id, f"{x:.6f}", f"{y:.6f}", f"{z:.6f}"]
                )


def frame_pairs(data_dir: str | Path) -> list[tuple[Path, Path]]:
    """Sorted (.bin, .label) pairs found in a directory.

    Raises:
        FileNotFoundError: a ``.bin`` has no sibling ``.label``.
    """
    data_dir = Path(data_dir)
    pairs = []
    for bin_path in sorted(data_dir.glob("*.bin")):
        label_path = bin_path.with_suffix(".label")
        if not label_path.exists():
            raise FileNotFoundError(f"no label file for {bin_path}")
        pairs.append((bin_path, label_path))
    return pairs


def load_frames(data_dir: str | Path) -> list[tuple[PointCloud, LabelSet]]:
    """Load every (cloud, labels) pair in a directory, sorted by frame id."""
    frames = []
    for bin_path, label_path in frame_pairs(data_dir):
        cloud = read_point_cloud(bin_path)
        labels = read_labels(label_path, len(cloud))
        frames.append((cloud, labels))
    return frames
