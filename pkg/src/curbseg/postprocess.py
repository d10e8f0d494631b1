"""Cluster-then-fit refinement of predicted curb points.

Detected curb points are clustered with DBSCAN on their ground-plane
projection (curbs arrive in several disconnected segments, so a single fit
would bridge gaps and swallow noise).  Each cluster is rotated into its
principal frame, a low-degree polynomial is fitted by least squares, and
members whose vertical residual against the fitted curve exceeds a distance
threshold are discarded as noise, along with everything DBSCAN already
called noise.  Neighborhood queries go through a KD-tree, keeping the whole
pass near O(n log n).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigurationError

NOISE = -1  # cluster id for unassigned points


@dataclass(frozen=True)
class DbscanConfig:
    """Neighborhood radius (meters) and core-point threshold."""

    eps: float = 1.0
    min_pts: int = 5

    def __post_init__(self) -> None:
        if self.eps <= 0:
            raise ConfigurationError("eps must be positive")
        if self.min_pts < 1:
            raise ConfigurationError("min_pts must be >= 1")


def epsilon_neighbors(points: np.ndarray, eps: float) -> list[np.ndarray]:
    """Indices within ``eps`` of each point (self included), via KD-tree."""
    points = np.asarray(points, dtype=np.float64)
    tree = cKDTree(points)
    return [np.sort(np.asarray(n, dtype=np.int64)) for n in
            tree.query_ball_point(points, eps)]


def dbscan(points: np.ndarray, cfg: DbscanConfig) -> np.ndarray:
    """Density-based clustering; returns a cluster id per point, NOISE = -1.

    Semantics are the textbook ones: a point is core when its closed
    eps-neighborhood holds at least ``min_pts`` points; clusters are the
    maximal density-connected sets of core points; a non-core point adjacent
    to one or more clusters joins the lowest cluster id (deterministic
    tie-break); everything else is noise.  Core/noise status does not depend
    on input order.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    labels = np.full(n, NOISE, dtype=np.int64)
    if n == 0:
        return labels

    neighbors = epsilon_neighbors(points, cfg.eps)
    core = np.array([len(nb) >= cfg.min_pts for nb in neighbors], dtype=bool)

    # grow clusters over density-connected cores, in index order
    next_id = 0
    for start in range(n):
        if not core[start] or labels[start] != NOISE:
            continue
        labels[start] = next_id
        stack = [start]
        while stack:
            i = stack.pop()
            for j in neighbors[i]:
                if core[j] and labels[j] == NOISE:
                    labels[j] = next_id
                    stack.append(j)
        next_id += 1

    # border points: lowest cluster id among adjacent core points
    for i in range(n):
        if core[i]:
            continue
        nb = neighbors[i]
        core_nb = nb[core[nb]]
        if core_nb.size:
            labels[i] = labels[core_nb].min()
    return labels


@dataclass
class CurbCluster:
    """One DBSCAN cluster of predicted curb points."""

    cluster_id: int
    points: np.ndarray  # (m, 3) member coordinates
    indices: np.ndarray  # positions within the refine() input
    principal_axis: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0]))


@dataclass
class CurveModel:
    """Polynomial fitted in a cluster's principal frame.

    ``coefficients`` are ascending-power over the principal-axis coordinate;
    residuals are measured along the orthogonal in-plane direction.  The
    default frame is the identity, so a model built by hand behaves like a
    plain y = f(x) curve.
    """

    coefficients: np.ndarray
    degree: int
    delta_dist: float = 0.3
    origin: np.ndarray = field(default_factory=lambda: np.zeros(2))
    axis_u: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0]))
    axis_v: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0]))

    def __post_init__(self) -> None:
        self.coefficients = np.asarray(self.coefficients, dtype=np.float64)
        if self.degree < 1:
            raise ConfigurationError("polynomial degree must be >= 1")
        if not np.isfinite(self.coefficients).all():
            raise ConfigurationError("non-finite polynomial coefficients")

    def evaluate(self, t: np.ndarray) -> np.ndarray:
        return np.polynomial.polynomial.polyval(t, self.coefficients)

    def frame_coords(self, points_xy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        rel = np.atleast_2d(points_xy) - self.origin
        return rel @ self.axis_u, rel @ self.axis_v


def principal_axis(points_xy: np.ndarray) -> tuple[np.ndarray, np.ndarray] | None:
    """Unit direction of maximal variance and its orthogonal, or None when
    the spread is degenerate."""
    pts = np.asarray(points_xy, dtype=np.float64)
    centered = pts - pts.mean(axis=0)
    cov = centered.T @ centered / max(len(pts), 1)
    if not np.isfinite(cov).all() or np.allclose(cov, 0.0, atol=1e-18):
        return None
    evals, evecs = np.linalg.eigh(cov)
    u = evecs[:, int(np.argmax(evals))]
    if np.max(evals) <= 1e-18:
        return None
    # deterministic sign: positive x, break ties with positive y
    if u[0] < 0 or (u[0] == 0 and u[1] < 0):
        u = -u
    v = np.array([-u[1], u[0]])
    return u, v


def fit_curve(cluster: CurbCluster, degree: int = 3, delta_dist: float = 0.3) -> CurveModel | None:
    """Least-squares polynomial over the cluster's principal-axis coordinate.

    The requested degree is capped at ``len(cluster) - 1``.  Returns None
    (skip-fit) when the cluster is too small to fit any line or its spread
    is degenerate; the caller keeps such clusters unfiltered.
    """
    pts = np.asarray(cluster.points, dtype=np.float64)
    xy = pts[:, :2]
    k = min(degree, len(xy) - 1)
    if k < 1:
        return None
    axes = principal_axis(xy)
    if axes is None:
        return None
    u, v = axes
    origin = xy.mean(axis=0)
    t = (xy - origin) @ u
    r = (xy - origin) @ v
    if np.ptp(t) <= 1e-12:
        return None
    coeffs = np.polynomial.polynomial.polyfit(t, r, k)
    return CurveModel(
        coefficients=coeffs, degree=k, delta_dist=delta_dist,
        origin=origin, axis_u=u, axis_v=v,
    )


def point_curve_distance(point, model: CurveModel) -> float:
    """Absolute residual |r - f(t)| of one point in the model's frame."""
    xy = np.asarray(point, dtype=np.float64)[:2]
    t, r = model.frame_coords(xy[None, :])
    return float(np.abs(r - model.evaluate(t))[0])


def curve_distances(points: np.ndarray, model: CurveModel) -> np.ndarray:
    xy = np.asarray(points, dtype=np.float64)[:, :2]
    t, r = model.frame_coords(xy)
    return np.abs(r - model.evaluate(t))


@dataclass
class RefineResult:
    """Partition of the input into kept curb points and removed noise."""

    kept_indices: np.ndarray
    removed_indices: np.ndarray
    clusters: list[CurbCluster]
    curves: list[CurveModel | None]
    points: np.ndarray

    @property
    def kept(self) -> np.ndarray:
        return self.points[self.kept_indices]

    @property
    def removed(self) -> np.ndarray:
        return self.points[self.removed_indices]


def refine(
    curb_points: np.ndarray,
    dbscan_cfg: DbscanConfig | None = None,
    degree: int = 3,
    delta_dist: float = 0.3,
) -> RefineResult:
    """Cluster, fit, and drop members too far from their cluster's curve.

    DBSCAN noise points are removed outright.  A cluster whose fit is
    skipped (too small or degenerate) is kept unfiltered.  The kept and
    removed index sets always partition the input.
    """
    dbscan_cfg = dbscan_cfg or DbscanConfig()
    pts = np.asarray(curb_points, dtype=np.float64).reshape(-1, 3)
    n = pts.shape[0]
    if n == 0:
        return RefineResult(
            kept_indices=np.empty(0, dtype=np.int64),
            removed_indices=np.empty(0, dtype=np.int64),
            clusters=[], curves=[], points=pts,
        )

    labels = dbscan(pts[:, :2], dbscan_cfg)
    keep = np.zeros(n, dtype=bool)

    clusters: list[CurbCluster] = []
    curves: list[CurveModel | None] = []
    for cid in np.unique(labels[labels != NOISE]):
        members = np.flatnonzero(labels == cid)
        cluster = CurbCluster(cluster_id=int(cid), points=pts[members], indices=members)
        axes = principal_axis(pts[members, :2])
        if axes is not None:
            cluster.principal_axis = axes[0]
        model = fit_curve(cluster, degree=degree, delta_dist=delta_dist)
        if model is None:
            keep[members] = True
        else:
            dist = curve_distances(cluster.points, model)
            keep[members[dist <= delta_dist]] = True
            cluster.points = pts[members[dist <= delta_dist]]
            cluster.indices = members[dist <= delta_dist]
        clusters.append(cluster)
        curves.append(model)

    return RefineResult(
        kept_indices=np.flatnonzero(keep),
        removed_indices=np.flatnonzero(~keep),
        clusters=clusters,
        curves=curves,
        points=pts,
    )
