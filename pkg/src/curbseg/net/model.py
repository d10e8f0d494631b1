"""The 5-level encoder-decoder segmentation network and its checkpoint format.

The encoder applies an attention block at every level and halves each
spatial dimension four times with stride-2 sparse convolutions; the decoder
mirrors the pyramid with nearest-neighbor unpooling, 1x1x1 convolutions and
skip additions; a final 1x1x1 convolution produces the 4 class logits.
All arithmetic is float64 and fully differentiable through the autodiff
engine, so every parameter can be checked against finite differences.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..errors import ConfigurationError, MalformedFileError, StateError
from ..lidar_io import N_CLASSES
from ..voxel import (
    SparseVoxelTensor,
    VoxelGridSpec,
    devoxelize,
    feature_scale,
    scores_to_tensor,
    voxelize,
)
from . import blocks
from .blocks import AttentionConfig

N_LEVELS = 5
DEFAULT_WIDTHS = (4, 8, 8, 8, 8)

CHECKPOINT_MAGIC = b"CSEG0001"


def _level_shapes(base_shape: tuple[int, int, int]) -> list[tuple[int, int, int]]:
    shapes = [tuple(base_shape)]
    for _ in range(N_LEVELS - 1):
        shapes.append(tuple(-(-s // 2) for s in shapes[-1]))
    return shapes


class NetworkParams:
    """Ordered, named float64 parameter tensors plus build metadata."""

    def __init__(self, tensors: dict[str, Tensor], meta: dict):
        self.tensors = tensors
        self.meta = meta

    def __iter__(self):
        return iter(self.tensors.items())

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def n_parameters(self) -> int:
        return sum(t.data.size for t in self.tensors.values())

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def gradients(self) -> dict[str, np.ndarray]:
        return {
            name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
            for name, t in self.tensors.items()
        }

    def sgd_step(self, lr: float) -> None:
        for t in self.tensors.values():
            if t.grad is not None:
                t.data -= lr * t.grad


def build_params(
    base_shape: tuple[int, int, int],
    in_channels: int = 5,
    widths: tuple[int, ...] = DEFAULT_WIDTHS,
    n_classes: int = N_CLASSES,
    attention: AttentionConfig | None = None,
    seed: int = 0,
) -> NetworkParams:
    """Initialize all parameters for a grid whose base resolution is known.

    The channel-attention kernels span the full vertical extent of each
    level, so the base depth is baked into the parameter shapes.
    """
    if len(widths) != N_LEVELS:
        raise ConfigurationError(f"expected {N_LEVELS} level widths, got {len(widths)}")
    attention = attention or AttentionConfig()
    rng = np.random.default_rng(seed)
    shapes = _level_shapes(base_shape)

    arrays: dict[str, np.ndarray] = {}

    def conv(name: str, c_out: int, c_in: int, kernel: tuple[int, int, int]) -> None:
        w, b = blocks.init_conv(rng, c_out, c_in, kernel, attention.zero_init_bias)
        arrays[f"{name}.w"] = w
        arrays[f"{name}.b"] = b

    conv("stem", widths[0], in_channels, (1, 1, 1))
    for lvl in range(N_LEVELS):
        depth = shapes[lvl][2]
        for key, arr in blocks.init_attention_params(rng, widths[lvl], depth, attention).items():
            arrays[f"enc{lvl}.att.{key}"] = arr
        if lvl < N_LEVELS - 1:
            conv(f"enc{lvl}.down", widths[lvl + 1], widths[lvl], (2, 2, 2))
    for lvl in range(N_LEVELS - 2, -1, -1):
        conv(f"dec{lvl}.up", widths[lvl], widths[lvl + 1], (1, 1, 1))
    conv("head", n_classes, widths[0], (1, 1, 1))

    tensors = {name: Tensor(arr, requires_grad=True) for name, arr in arrays.items()}
    meta = {
        "format": 1,
        "base_shape": list(base_shape),
        "in_channels": in_channels,
        "widths": list(widths),
        "n_classes": n_classes,
        "bottleneck_divisor": attention.bottleneck_divisor,
        "seed": seed,
    }
    return NetworkParams(tensors, meta)


class SegModel:
    """Forward/backward wrapper around a parameter set.

    ``forward`` records the computation graph; ``backward`` seeds the logits
    gradient and returns per-parameter gradients.  Calling ``backward``
    before any forward raises :class:`StateError`.
    """

    def __init__(self, params: NetworkParams):
        self.params = params
        self.attention = AttentionConfig(
            bottleneck_divisor=params.meta.get("bottleneck_divisor", 2)
        )
        self._logits: Tensor | None = None

    def forward_dense(self, x: np.ndarray | Tensor, mask: np.ndarray | None = None) -> Tensor:
        """Run the network on a dense (C, H, W, D) block; returns logits with
        the same spatial shape and ``n_classes`` channels."""
        p = self.params
        x = ad.as_tensor(x)
        if x.data.shape[0] != p.meta["in_channels"]:
            raise ConfigurationError(
                f"input has {x.data.shape[0]} channels, params were built for "
                f"{p.meta['in_channels']}"
            )

        y, m = blocks.sparse_conv(x, p["stem.w"], p["stem.b"], stride=1, mask=mask)
        y = ad.tanh(y)

        skips: list[tuple[Tensor, np.ndarray | None]] = []
        for lvl in range(N_LEVELS):
            att = {k.removeprefix(f"enc{lvl}.att."): t
                   for k, t in p.tensors.items() if k.startswith(f"enc{lvl}.att.")}
            # residual around the block keeps the net near-identity at init,
            # which plain SGD needs; the block itself is the pure two-branch sum
            y = ad.add(y, blocks.attention_block(y, att, self.attention, m))
            skips.append((y, m))
            if lvl < N_LEVELS - 1:
                y, m = blocks.sparse_conv(y, p[f"enc{lvl}.down.w"], p[f"enc{lvl}.down.b"],
                                          stride=2, mask=m)
                y = ad.tanh(y)

        for lvl in range(N_LEVELS - 2, -1, -1):
            skip, skip_mask = skips[lvl]
            y = ad.upsample_nearest(y, 2, skip.data.shape[1:])
            y = blocks.apply_mask(y, skip_mask)
            y, m = blocks.sparse_conv(y, p[f"dec{lvl}.up.w"], p[f"dec{lvl}.up.b"],
                                      stride=1, mask=skip_mask)
            y = ad.tanh(y)
            y = ad.add(y, skip)

        logits, _ = blocks.sparse_conv(y, p["head.w"], p["head.b"], stride=1, mask=m)
        self._logits = logits
        return logits

    def forward(self, vox: SparseVoxelTensor) -> Tensor:
        return self.forward_dense(conditioned_dense(vox), vox.occupancy_mask())

    def backward(self, logits_grad: np.ndarray) -> dict[str, np.ndarray]:
        """Reverse sweep seeded with d(loss)/d(logits); returns gradients."""
        if self._logits is None:
            raise StateError("backward called before forward")
        self.params.zero_grad()
        self._logits.backward(np.asarray(logits_grad, dtype=np.float64))
        return self.params.gradients()


def conditioned_dense(vox: SparseVoxelTensor) -> np.ndarray:
    """Dense features scaled to O(1) per channel (network input form)."""
    return vox.to_dense() * feature_scale(vox.spec)[:, None, None, None]


def predict_point_scores(
    params: NetworkParams, vox: SparseVoxelTensor
) -> np.ndarray:
    """Per-point class probabilities for one voxelized frame."""
    logits = SegModel(params).forward(vox).data
    shifted = logits - logits.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    probs = e / e.sum(axis=0, keepdims=True)
    return devoxelize(scores_to_tensor(probs, vox), vox.point_index)


def predict_point_classes(params: NetworkParams, cloud, spec: VoxelGridSpec) -> np.ndarray:
    """Voxelize, run the network, scatter back, argmax: one call per frame."""
    vox = voxelize(cloud, spec)
    scores = predict_point_scores(params, vox)
    return scores.argmax(axis=1)


# -- checkpoint container -----------------------------------------------------


def save_checkpoint(params: NetworkParams, path: str | Path) -> None:
    """Versioned binary blob: magic, JSON metadata, ordered named tensors.

    The byte stream is a pure function of the parameter values, so two
    identical training runs produce identical files.
    """
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    meta_bytes = json.dumps(params.meta, sort_keys=True).encode()
    buf.write(struct.pack("<I", len(meta_bytes)))
    buf.write(meta_bytes)
    buf.write(struct.pack("<I", len(params.tensors)))
    for name, t in params.tensors.items():
        name_b = name.encode()
        buf.write(struct.pack("<H", len(name_b)))
        buf.write(name_b)
        buf.write(struct.pack("<B", t.data.ndim))
        for dim in t.data.shape:
            buf.write(struct.pack("<I", dim))
        buf.write(t.data.astype("<f8").tobytes(order="C"))
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path: str | Path) -> NetworkParams:
    raw = Path(path).read_bytes()
    view = io.BytesIO(raw)
    if view.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise MalformedFileError(f"{path}: not a checkpoint (bad magic)")
    try:
        (meta_len,) = struct.unpack("<I", view.read(4))
        meta = json.loads(view.read(meta_len).decode())
        (count,) = struct.unpack("<I", view.read(4))
        tensors: dict[str, Tensor] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", view.read(2))
            name = view.read(name_len).decode()
            (ndim,) = struct.unpack("<B", view.read(1))
            shape = tuple(struct.unpack("<I", view.read(4))[0] for _ in range(ndim))
            n_bytes = int(np.prod(shape, dtype=np.int64)) * 8
            data = np.frombuffer(view.read(n_bytes), dtype="<f8").reshape(shape)
            tensors[name] = Tensor(data.copy(), requires_grad=True)
    except (struct.error, json.JSONDecodeError, ValueError) as exc:
        raise MalformedFileError(f"{path}: truncated or corrupt checkpoint") from exc
    return NetworkParams(tensors, meta)
