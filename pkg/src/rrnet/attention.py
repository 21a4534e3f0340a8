"""Parallel multi-scale attention: two complementary 2-D attention branches.

The left branch computes multi-scale attention maps directly from the
two-channel pooling descriptor of the input; the right branch first extracts
multi-scale features and then applies spatial attention to each. Both
branches average their three scales and a 1x1 fusion conv combines them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .init import as_rng, constant_init, xavier_uniform
from .tensor import Tensor, channel_avg, channel_max, concat, conv2d, relu, reshape, sigmoid

__all__ = [
    "SCALES",
    "ConvParams",
    "PmaParams",
    "descriptor",
    "spatial_attention",
    "left_branch",
    "right_branch",
    "fuse_maps",
    "pma",
    "init_pma_params",
]

SCALES = (3, 5, 7)


@dataclass
class ConvParams:
    w: Tensor
    b: Tensor

    def named_parameters(self, prefix: str = ""):
        yield prefix + "w", self.w
        yield prefix + "b", self.b


@dataclass
class PmaParams:
    """Kernels for both branches, keyed by scale (kernel size).

    Scale dictionaries are always iterated in sorted key order, so the
    result is independent of construction order.
    """

    left: dict[int, ConvParams]
    right: dict[int, ConvParams]
    right_att: dict[int, ConvParams]
    fuse: ConvParams
    feature_activation: str = "relu"

    def named_parameters(self, prefix: str = ""):
        for k in sorted(self.left):
            yield from self.left[k].named_parameters(f"{prefix}left.k{k}.")
        for k in sorted(self.right):
            yield from self.right[k].named_parameters(f"{prefix}right.k{k}.")
        for k in sorted(self.right_att):
            yield from self.right_att[k].named_parameters(f"{prefix}att.k{k}.")
        yield from self.fuse.named_parameters(prefix + "fuse.")


def init_pma_params(
    channels: int,
    seed,
    dtype=np.float32,
    att_kernel: int = 7,
    feature_activation: str = "relu",
) -> PmaParams:
    rng = as_rng(seed)
    c = int(channels)

    def conv(k, cin, cout):
        return ConvParams(
            w=xavier_uniform((k, k, cin, cout), rng, dtype=dtype),
            b=constant_init((cout,), 0.0, dtype=dtype),
        )

    return PmaParams(
        left={k: conv(k, 2, 1) for k in SCALES},
        right={k: conv(k, c, c) for k in SCALES},
        right_att={k: conv(att_kernel, 2, 1) for k in SCALES},
        fuse=conv(1, 2, 1),
        feature_activation=feature_activation,
    )


def descriptor(x: Tensor) -> Tensor:
    """Two-channel pooling descriptor: per-pixel channel average and max."""
    if x.ndim != 3:
        raise ValueError(f"descriptor needs a rank-3 HxWxC input, got shape {x.shape}")
    return concat([channel_avg(x), channel_max(x)], axis=2)


def spatial_attention(x: Tensor, conv: ConvParams) -> Tensor:
    """sigmoid(conv(descriptor(x))), an H x W x 1 map in (0, 1)."""
    return sigmoid(conv2d(descriptor(x), conv.w, conv.b))


def left_branch(x: Tensor, p: PmaParams) -> Tensor:
    """Multi-scale attention on the single-scale descriptor, H x W map."""
    d = descriptor(x)
    maps = [sigmoid(conv2d(d, p.left[k].w, p.left[k].b)) for k in sorted(p.left)]
    avg = (maps[0] + maps[1] + maps[2]) * (1.0 / 3.0)
    return reshape(avg, x.shape[:2])


def right_branch(x: Tensor, p: PmaParams) -> Tensor:
    """Spatial attention on multi-scale features, averaged into one H x W map."""
    if p.feature_activation == "relu":
        act = relu
    elif p.feature_activation == "sigmoid":
        act = sigmoid
    else:
        raise ValueError(f"unknown feature activation '{p.feature_activation}'")
    maps = []
    for k in sorted(p.right):
        feat = act(conv2d(x, p.right[k].w, p.right[k].b))
        maps.append(spatial_attention(feat, p.right_att[k]))
    avg = (maps[0] + maps[1] + maps[2]) * (1.0 / 3.0)
    return reshape(avg, x.shape[:2])


def fuse_maps(a_l: Tensor, a_r: Tensor, p: PmaParams) -> Tensor:
    """sigmoid(conv1x1(concat(A_l, A_r))), the final H x W attention map."""
    if a_l.shape != a_r.shape:
        raise ValueError(f"attention maps must share a shape, got {a_l.shape} and {a_r.shape}")
    h, w = a_l.shape
    stacked = concat([reshape(a_l, (h, w, 1)), reshape(a_r, (h, w, 1))], axis=2)
    return reshape(sigmoid(conv2d(stacked, p.fuse.w, p.fuse.b)), (h, w))


def pma(x: Tensor, p: PmaParams, branch: str = "both") -> Tensor:
    """The full module; 'left'/'right' feed a duplicated single branch to fuse."""
    if branch == "both":
        return fuse_maps(left_branch(x, p), right_branch(x, p), p)
    if branch == "left":
        a = left_branch(x, p)
        return fuse_maps(a, a, p)
    if branch == "right":
        a = right_branch(x, p)
        return fuse_maps(a, a, p)
    raise ValueError(f"unknown pma branch '{branch}'")
