import numpy as np
import pytest

from curbseg.dataset_builder import (
    CropSpec,
    CurbProposals,
    fit_ground_plane,
    measure_road_half_width,
    propose_curb_labels,
    write_review_file,
)
from curbseg.errors import InsufficientGroundError
from curbseg.lidar_io import (
    CLASS_CURB,
    CLASS_ROAD,
    RAW_CURB_ID,
    RAW_ROAD_ID,
    RAW_SIDEWALK_ID,
    LabelSet,
    PointCloud,
)


def cloud_of(xyz):
    xyz = np.asarray(xyz, dtype=np.float32)
    pts = np.column_stack([xyz, np.full(len(xyz), 0.5, dtype=np.float32)])
    return PointCloud(points=pts, frame_id="t")


def labels_of(raw_ids):
    return LabelSet(labels=np.asarray(raw_ids, dtype=np.uint16))


def street_scene(rng, road_half_width=3.0, y_max=20.0, curb_height=0.12):
    """Flat road slab flanked by raised sidewalk strips; no curb labels."""
    n_road, n_side = 800, 400
    road = np.column_stack([
        rng.uniform(-road_half_width, road_half_width, n_road),
        rng.uniform(0, y_max, n_road),
        rng.normal(0, 0.005, n_road),
    ])
    side_x = rng.choice([-1.0, 1.0], n_side) * rng.uniform(
        road_half_width + 0.05, road_half_width + 2.0, n_side
    )
    side = np.column_stack([
        side_x,
        rng.uniform(0, y_max, n_side),
        np.full(n_side, curb_height),
    ])
    xyz = np.concatenate([road, side])
    raw = np.concatenate([
        np.full(n_road, RAW_ROAD_ID, dtype=np.uint16),
        np.full(n_side, RAW_SIDEWALK_ID, dtype=np.uint16),
    ])
    return cloud_of(xyz), labels_of(raw), road_half_width


def test_planar_floor_exact_fit(rng):
    xy = rng.uniform(-10, 10, size=(300, 2))
    cloud = cloud_of(np.column_stack([xy, np.zeros(300)]))
    plane = fit_ground_plane(cloud)
    assert np.allclose(np.abs(plane.normal), [0, 0, 1], atol=1e-9)
    assert np.abs(plane.signed_distance(cloud.xyz)).max() < 1e-6
    assert plane.inlier_mask.all()


def test_elevated_clutter_excluded(rng):
    xy = rng.uniform(-10, 10, size=(400, 2))
    floor = np.column_stack([xy, rng.normal(0, 0.01, 400)])
    clutter = np.column_stack([
        rng.uniform(-10, 10, size=(40, 2)),
        rng.uniform(0.8, 2.5, 40),
    ])
    cloud = cloud_of(np.concatenate([floor, clutter]))
    plane = fit_ground_plane(cloud)
    dist = plane.signed_distance(cloud.xyz)
    # direct distance computation must agree with the returned mask
    assert np.array_equal(plane.inlier_mask, np.abs(dist) <= 0.15)
    assert not plane.inlier_mask[400:].any()
    assert plane.inlier_mask[:400].mean() > 0.99


def test_wall_only_insufficient_ground(rng):
    wall = np.column_stack([
        np.full(300, 2.0),
        rng.uniform(0, 10, 300),
        rng.uniform(0.0, 3.0, 300),
    ])
    with pytest.raises(InsufficientGroundError):
        fit_ground_plane(cloud_of(wall))


def test_proposals_form_bands_along_road_edges(rng):
    cloud, labels, half_width = street_scene(rng)
    plane = fit_ground_plane(cloud)
    out = propose_curb_labels(cloud, labels, plane, CropSpec(forward_range=25.0))
    assert len(out.proposal_indices) > 0
    pts = cloud.xyz[out.proposal_indices]
    # proposals hug the two road edges
    assert np.all(np.abs(np.abs(pts[:, 0]) - half_width) < 0.75)
    sides = np.sign(pts[:, 0])
    assert (sides > 0).any() and (sides < 0).any()


def test_proposals_never_overwrite_road(rng):
    cloud, labels, _ = street_scene(rng)
    plane = fit_ground_plane(cloud)
    out = propose_curb_labels(cloud, labels, plane)
    before_road = labels.pipeline_classes() == CLASS_ROAD
    after = out.labels.pipeline_classes()
    assert not np.any((after == CLASS_CURB) & before_road)
    assert np.array_equal(after == CLASS_ROAD, before_road)


def test_proposals_respect_crop_window(rng):
    cloud, labels, _ = street_scene(rng, y_max=30.0)
    plane = fit_ground_plane(cloud)
    crop = CropSpec(forward_range=15.0, lateral_factor=1.3)
    out = propose_curb_labels(cloud, labels, plane, crop)
    pts = cloud.xyz[out.proposal_indices]
    half = measure_road_half_width(cloud.xyz[:, :2].astype(np.float64),
                                   labels.pipeline_classes() == CLASS_ROAD, 15.0)
    assert np.all(pts[:, 1] >= 0.0)
    assert np.all(pts[:, 1] <= 15.0)
    assert np.all(np.abs(pts[:, 0]) <= 1.3 * half + 1e-9)


def test_far_point_never_labeled(rng):
    cloud, labels, _ = street_scene(rng)
    extra = cloud_of(np.vstack([cloud.xyz, [[0.0, 50.0, 0.1]]]))
    extra_labels = labels_of(np.append(labels.labels, RAW_SIDEWALK_ID))
    plane = fit_ground_plane(extra)
    out = propose_curb_labels(extra, extra_labels, plane, CropSpec(forward_range=40.43))
    assert (len(extra) - 1) not in set(out.proposal_indices.tolist())


def test_road_everywhere_gives_no_interior_proposals(rng):
    n = 900
    xyz = np.column_stack([
        rng.uniform(-6, 6, n),
        rng.uniform(0, 20, n),
        rng.normal(0, 0.005, n),
    ])
    cloud = cloud_of(xyz)
    labels = labels_of(np.full(n, RAW_ROAD_ID))
    plane = fit_ground_plane(cloud)
    out = propose_curb_labels(cloud, labels, plane)
    # every point is road, so nothing may be relabeled
    assert len(out.proposal_indices) == 0


def test_no_road_points_warns_and_returns_unchanged(rng):
    xyz = np.column_stack([rng.uniform(-5, 5, 200), rng.uniform(0, 10, 200), np.zeros(200)])
    cloud = cloud_of(xyz)
    labels = labels_of(np.full(200, RAW_SIDEWALK_ID))
    plane = fit_ground_plane(cloud)
    with pytest.warns(UserWarning):
        out = propose_curb_labels(cloud, labels, plane)
    assert len(out.proposal_indices) == 0
    assert np.array_equal(out.labels.labels, labels.labels)


def test_determinism(rng):
    cloud, labels, _ = street_scene(rng)
    plane = fit_ground_plane(cloud)
    a = propose_curb_labels(cloud, labels, plane)
    b = propose_curb_labels(cloud, labels, plane)
    assert np.array_equal(a.proposal_indices, b.proposal_indices)
    assert np.array_equal(a.labels.labels, b.labels.labels)


def test_proposals_use_requested_class_id(rng):
    cloud, labels, _ = street_scene(rng)
    plane = fit_ground_plane(cloud)
    out = propose_curb_labels(cloud, labels, plane)
    assert np.all(out.labels.labels[out.proposal_indices] == RAW_CURB_ID)
    assert np.all(out.labels.pipeline_classes()[out.proposal_indices] == CLASS_CURB)


def test_review_file(tmp_path, rng):
    cloud, labels, _ = street_scene(rng)
    plane = fit_ground_plane(cloud)
    out = propose_curb_labels(cloud, labels, plane)
    path = tmp_path / "review.csv"
    write_review_file(path, cloud, plane, out)
    lines = path.read_text().strip().splitlines()
    assert len(lines) == len(out.proposal_indices) + 1
    assert lines[0].startswith("frame_id,point_index")
    conf = np.array([float(l.split(",")[-1]) for l in lines[1:]])
    assert np.all((conf >= 0.0) & (conf <= 1.0))
