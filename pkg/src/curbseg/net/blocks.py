"""Sparse convolution primitives and the multi-scale channel-attention block.

Activations are dense (C, H, W, D) float64 arrays that are kept exactly zero
at unoccupied cells; a boolean occupancy mask travels alongside them.  A
stride-1 convolution writes only to occupied cells (submanifold behaviour),
so occupancy never dilates through the network.  ``mask=None`` means fully
occupied and skips the masking work.

The attention block has two parallel branches added at the end:

* multi-scale fusion: convolution groups at strides 1, 3 and 5 build a
  pyramid; each group chains three asymmetric kernels (3x3x1, 3x1x3, 1x3x3)
  covering the xy, xz and yz planes; the strided outputs are upsampled back
  (nearest) and fused by concatenation plus a 1x1x1 convolution;
* channel attention: a 1x1xD convolution along the vertical axis, a
  bottleneck MLP, then softmax channel weights multiplied onto a second
  1x1xD convolution of the same MLP output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..errors import ConfigurationError

ASYMMETRIC_KERNELS = ((3, 3, 1), (3, 1, 3), (1, 3, 3))
PYRAMID_STRIDES = (1, 3, 5)


@dataclass(frozen=True)
class AttentionConfig:
    """Shape of one multi-scale channel-attention block."""

    strides: tuple[int, ...] = PYRAMID_STRIDES
    kernels: tuple[tuple[int, int, int], ...] = ASYMMETRIC_KERNELS
    bottleneck_divisor: int = 2
    zero_init_bias: bool = True

    def __post_init__(self) -> None:
        if set(self.strides) != set(PYRAMID_STRIDES):
            raise ConfigurationError(f"pyramid strides must be {PYRAMID_STRIDES}, got {self.strides}")
        if self.bottleneck_divisor < 1:
            raise ConfigurationError("bottleneck divisor must be >= 1")

    def bottleneck(self, channels: int) -> int:
        return max(1, channels // self.bottleneck_divisor)


def pool_mask(mask: np.ndarray | None, stride: int) -> np.ndarray | None:
    """Downsampled occupancy: an output cell is occupied when any cell of its
    stride-sized block is."""
    if mask is None or stride == 1:
        return mask
    h, w, d = mask.shape
    ph, pw, pd = (-h) % stride, (-w) % stride, (-d) % stride
    m = np.pad(mask, ((0, ph), (0, pw), (0, pd)))
    m = m.reshape(m.shape[0] // stride, stride, m.shape[1] // stride, stride,
                  m.shape[2] // stride, stride)
    return m.any(axis=(1, 3, 5))


def apply_mask(x: Tensor, mask: np.ndarray | None) -> Tensor:
    if mask is None:
        return x
    return ad.mul(x, Tensor(mask.astype(np.float64)[None]))


def sparse_conv(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    mask: np.ndarray | None = None,
) -> tuple[Tensor, np.ndarray | None]:
    """Masked strided convolution; returns (output, output occupancy).

    At stride 1 the output occupancy equals the input occupancy; at larger
    strides occupancy is pooled blockwise.  Raises ValueError on a channel
    mismatch between input and kernel.
    """
    y = ad.conv3d(x, weight, bias, stride=stride)
    out_mask = pool_mask(mask, stride)
    return apply_mask(y, out_mask), out_mask


def init_conv(
    rng: np.random.Generator,
    c_out: int,
    c_in: int,
    kernel: tuple[int, int, int],
    zero_bias: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """He-style initialization; biases default to zero."""
    fan_in = c_in * int(np.prod(kernel))
    w = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(c_out, c_in, *kernel))
    b = np.zeros(c_out) if zero_bias else rng.normal(0.0, 0.01, size=c_out)
    return w, b


def init_attention_params(
    rng: np.random.Generator,
    channels: int,
    depth: int,
    cfg: AttentionConfig | None = None,
) -> dict[str, np.ndarray]:
    """Parameter arrays for one attention block over (channels, ., ., depth)."""
    cfg = cfg or AttentionConfig()
    params: dict[str, np.ndarray] = {}
    for s in cfg.strides:
        for i, kernel in enumerate(cfg.kernels):
            w, b = init_conv(rng, channels, channels, kernel, cfg.zero_init_bias)
            params[f"branch{s}.conv{i}.w"] = w
            params[f"branch{s}.conv{i}.b"] = b
    w, b = init_conv(rng, channels, channels * len(cfg.strides), (1, 1, 1), cfg.zero_init_bias)
    params["fuse.w"], params["fuse.b"] = w, b

    depth_kernel = (1, 1, max(1, depth))
    w, b = init_conv(rng, channels, channels, depth_kernel, cfg.zero_init_bias)
    params["chan.in.w"], params["chan.in.b"] = w, b
    mid = cfg.bottleneck(channels)
    w, b = init_conv(rng, mid, channels, (1, 1, 1), cfg.zero_init_bias)
    params["chan.enc.w"], params["chan.enc.b"] = w, b
    w, b = init_conv(rng, channels, mid, (1, 1, 1), cfg.zero_init_bias)
    params["chan.dec.w"], params["chan.dec.b"] = w, b
    w, b = init_conv(rng, channels, channels, depth_kernel, cfg.zero_init_bias)
    params["chan.out.w"], params["chan.out.b"] = w, b
    return params


def _branch(
    x: Tensor,
    params: dict[str, Tensor],
    stride: int,
    mask: np.ndarray | None,
) -> Tensor:
    """One pyramid group: stride on the first asymmetric conv, then two more
    at stride 1, then nearest upsampling back to the base resolution."""
    base_shape = x.data.shape[1:]
    y, m = sparse_conv(x, params[f"branch{stride}.conv0.w"], params[f"branch{stride}.conv0.b"],
                       stride=stride, mask=mask)
    for i in (1, 2):
        y, m = sparse_conv(y, params[f"branch{stride}.conv{i}.w"],
                           params[f"branch{stride}.conv{i}.b"], stride=1, mask=m)
    if stride > 1:
        y = ad.upsample_nearest(y, stride, base_shape)
        y = apply_mask(y, mask)
    return y


def multi_scale_branch(
    x: Tensor,
    params: dict[str, Tensor],
    cfg: AttentionConfig,
    mask: np.ndarray | None = None,
) -> Tensor:
    """Pyramid over strides (1, 3, 5), fused by concat + 1x1x1 convolution."""
    outs = [_branch(x, params, s, mask) for s in cfg.strides]
    fused = ad.concat(outs, axis=0)
    y, _ = sparse_conv(fused, params["fuse.w"], params["fuse.b"], stride=1, mask=mask)
    return y


def channel_attention_branch(
    x: Tensor,
    params: dict[str, Tensor],
    cfg: AttentionConfig,
    mask: np.ndarray | None = None,
) -> Tensor:
    """Vertical-axis feature extraction gated by softmax channel weights."""
    c, _ = sparse_conv(x, params["chan.in.w"], params["chan.in.b"], stride=1, mask=mask)
    enc, _ = sparse_conv(c, params["chan.enc.w"], params["chan.enc.b"], stride=1, mask=mask)
    enc = ad.tanh(enc)
    dec, _ = sparse_conv(enc, params["chan.dec.w"], params["chan.dec.b"], stride=1, mask=mask)
    weights = ad.softmax(dec, axis=0)
    conv, _ = sparse_conv(dec, params["chan.out.w"], params["chan.out.b"], stride=1, mask=mask)
    return apply_mask(ad.mul(weights, conv), mask)


def attention_block(
    x: Tensor,
    params: dict[str, Tensor],
    cfg: AttentionConfig | None = None,
    mask: np.ndarray | None = None,
) -> Tensor:
    """Sum of the multi-scale fusion branch and the channel-attention branch.

    Shape preserving: output is (C, H, W, D) like the input, with the same
    occupancy.
    """
    cfg = cfg or AttentionConfig()
    ms = multi_scale_branch(x, params, cfg, mask)
    ch = channel_attention_branch(x, params, cfg, mask)
    return ad.add(ms, ch)
