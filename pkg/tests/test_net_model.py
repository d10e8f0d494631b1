import numpy as np
import pytest

from curbseg.errors import ConfigurationError, MalformedFileError, StateError, TrainingDivergedError
from curbseg.lidar_io import PointCloud
from curbseg.net import (
    SegModel,
    build_params,
    load_checkpoint,
    save_checkpoint,
    train_toy,
)
from curbseg.net import train as train_mod
from curbseg.synthetic import make_scene
from curbseg.voxel import VoxelGridSpec, voxelize

TOY_WIDTHS = (2, 2, 2, 2, 2)


def small_grid(res=(8, 8, 4)):
    return VoxelGridSpec(
        mode="cartesian",
        bounds=((-8.0, 8.0), (0.0, 30.0), (-0.5, 1.0)),
        resolution=res,
    )


def toy_frames(rng, n=2):
    return [make_scene(rng, n_road=150, n_curb_per_side=30, n_sidewalk=60, n_other=10,
                       frame_id=f"f{i}") for i in range(n)]


def test_forward_shape_and_softmax(rng):
    params = build_params((8, 8, 4), in_channels=5, widths=TOY_WIDTHS, seed=0)
    cloud, _ = toy_frames(rng, 1)[0]
    vox = voxelize(cloud, small_grid())
    logits = SegModel(params).forward(vox).data
    assert logits.shape == (4, 8, 8, 4)
    e = np.exp(logits - logits.max(axis=0, keepdims=True))
    probs = e / e.sum(axis=0, keepdims=True)
    assert np.allclose(probs.sum(axis=0), 1.0)


def test_forward_works_on_non_divisible_dims(rng):
    # 5 levels want /16 divisibility; ceil-mode padding must cope with anything
    params = build_params((7, 5, 3), in_channels=2, widths=TOY_WIDTHS, seed=0)
    x = rng.normal(size=(2, 7, 5, 3))
    logits = SegModel(params).forward_dense(x)
    assert logits.data.shape == (4, 7, 5, 3)


def test_channel_mismatch_raises(rng):
    params = build_params((4, 4, 4), in_channels=5, widths=TOY_WIDTHS, seed=0)
    with pytest.raises(ConfigurationError):
        SegModel(params).forward_dense(rng.normal(size=(3, 4, 4, 4)))


def test_permutation_equivariance(rng):
    spec = small_grid()
    cloud, _ = toy_frames(rng, 1)[0]
    params = build_params(spec.resolution, in_channels=5, widths=TOY_WIDTHS, seed=0)

    perm = rng.permutation(len(cloud))
    shuffled = PointCloud(points=cloud.points[perm], frame_id=cloud.frame_id)

    logits_a = SegModel(params).forward(voxelize(cloud, spec)).data
    logits_b = SegModel(params).forward(voxelize(shuffled, spec)).data
    assert np.allclose(logits_a, logits_b, atol=1e-9)


def test_backward_before_forward_raises(rng):
    params = build_params((4, 4, 4), in_channels=1, widths=TOY_WIDTHS, seed=0)
    with pytest.raises(StateError):
        SegModel(params).backward(np.zeros((4, 4, 4, 4)))


def test_zero_seed_gives_zero_gradients(rng):
    params = build_params((4, 4, 4), in_channels=1, widths=TOY_WIDTHS, seed=0)
    model = SegModel(params)
    model.forward_dense(rng.normal(size=(1, 4, 4, 4)))
    grads = model.backward(np.zeros((4, 4, 4, 4)))
    assert all(np.array_equal(g, np.zeros_like(g)) for g in grads.values())


def test_gradient_linearity(rng):
    params = build_params((4, 4, 4), in_channels=1, widths=TOY_WIDTHS, seed=0)
    x = rng.normal(size=(1, 4, 4, 4))
    s1 = rng.normal(size=(4, 4, 4, 4))
    s2 = rng.normal(size=(4, 4, 4, 4))

    def grads(seed):
        model = SegModel(params)
        model.forward_dense(x)
        return model.backward(seed)

    g1 = grads(s1)
    g2 = grads(s2)
    g = grads(2.0 * s1 - 0.5 * s2)
    for name in g:
        assert np.allclose(g[name], 2.0 * g1[name] - 0.5 * g2[name], atol=1e-9)


def test_spot_finite_difference(rng):
    """Light version of the full acceptance FD run: a handful of entries in
    every layer family."""
    params = build_params((4, 4, 4), in_channels=1, widths=TOY_WIDTHS, seed=3)
    x = rng.normal(size=(1, 4, 4, 4))
    proj = rng.normal(size=(4, 4, 4, 4))

    model = SegModel(params)
    model.forward_dense(x)
    grads = model.backward(proj)

    def loss():
        return float(np.sum(SegModel(params).forward_dense(x).data * proj))

    eps = 1e-4
    for name in ["stem.w", "enc0.att.branch1.conv0.w", "enc2.att.chan.enc.w",
                 "enc1.down.w", "dec0.up.w", "head.b", "enc4.att.fuse.w"]:
        t = params[name]
        flat = t.data.reshape(-1)
        i = int(rng.integers(flat.size))
        orig = flat[i]
        flat[i] = orig + eps
        lp = loss()
        flat[i] = orig - eps
        lm = loss()
        flat[i] = orig
        fd = (lp - lm) / (2 * eps)
        g = grads[name].reshape(-1)[i]
        assert abs(fd - g) / max(abs(fd), abs(g), 1e-6) < 1e-3, name


def test_checkpoint_roundtrip_and_determinism(tmp_path, rng):
    params = build_params((4, 4, 4), in_channels=5, widths=TOY_WIDTHS, seed=9)
    p1 = tmp_path / "a.ckpt"
    p2 = tmp_path / "b.ckpt"
    save_checkpoint(params, p1)
    save_checkpoint(params, p2)
    assert p1.read_bytes() == p2.read_bytes()

    loaded = load_checkpoint(p1)
    assert loaded.meta == params.meta
    assert list(loaded.tensors) == list(params.tensors)
    for name, t in params:
        assert np.array_equal(loaded[name].data, t.data)


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"not a checkpoint at all")
    with pytest.raises(MalformedFileError):
        load_checkpoint(path)


def test_train_requires_frames():
    with pytest.raises(ValueError):
        train_toy([], small_grid(), epochs=1, lr=0.1)


def test_train_zero_lr_keeps_params(rng):
    frames = toy_frames(rng, 1)
    spec = small_grid()
    before = build_params(spec.resolution, widths=TOY_WIDTHS, seed=5)
    result = train_toy(frames, spec, epochs=2, lr=0.0, widths=TOY_WIDTHS, seed=5)
    for name, t in result.params:
        assert np.array_equal(t.data, before[name].data)


def test_train_seed_determinism(rng):
    frames = toy_frames(rng, 2)
    spec = small_grid()
    r1 = train_toy(frames, spec, epochs=3, lr=0.05, widths=TOY_WIDTHS, seed=11)
    r2 = train_toy(frames, spec, epochs=3, lr=0.05, widths=TOY_WIDTHS, seed=11)
    assert r1.loss_curve == r2.loss_curve
    for name, t in r1.params:
        assert np.array_equal(t.data, r2.params[name].data)


def test_train_minibatch_deterministic(rng):
    frames = toy_frames(rng, 3)
    spec = small_grid()
    a = train_toy(frames, spec, epochs=2, lr=0.05, batch_size=2, widths=TOY_WIDTHS, seed=4)
    b = train_toy(frames, spec, epochs=2, lr=0.05, batch_size=2, widths=TOY_WIDTHS, seed=4)
    assert a.loss_curve == b.loss_curve
    # one step per batch: two batches per epoch moves differently than one
    full = train_toy(frames, spec, epochs=2, lr=0.05, widths=TOY_WIDTHS, seed=4)
    assert a.loss_curve != full.loss_curve


def test_train_loss_decreases_on_separable_set(rng):
    frames = toy_frames(rng, 2)
    spec = small_grid()
    result = train_toy(frames, spec, epochs=12, lr=0.05, widths=TOY_WIDTHS, seed=2)
    assert result.loss_curve[-1][0] <= result.loss_curve[0][0]


def test_train_aborts_on_nan_loss(rng, monkeypatch):
    from curbseg.autodiff import Tensor

    real = train_mod.loss_group

    def poisoned(*args, **kwargs):
        total, ace, iou = real(*args, **kwargs)
        return Tensor(np.nan, requires_grad=False), ace, iou

    monkeypatch.setattr(train_mod, "loss_group", poisoned)
    with pytest.raises(TrainingDivergedError):
        train_toy(toy_frames(rng, 1), small_grid(), epochs=1, lr=0.1, widths=TOY_WIDTHS)
