"""Spatial and channel relational reasoning on data-dependent graphs.

A feature map becomes a vertex-feature matrix (pixels or channels as
vertexes), a learned non-negative adjacency is built from projected
features, and the features are propagated through the symmetric normalized
Laplacian followed by a trainable square weight matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .init import as_rng, constant_init, xavier_uniform
from .tensor import (
    NumericalError,
    Tensor,
    clip,
    global_vertex_avg,
    power,
    relu,
    reshape,
    softmax,
    take_rows,
    tensor_sum,
    transpose,
)

__all__ = [
    "GraphFeatures",
    "ReasoningParams",
    "NonLocalParams",
    "build_graph",
    "invert_graph",
    "canonical_vertex_order",
    "adjacency",
    "normalized_laplacian",
    "graph_reason",
    "srr",
    "crr",
    "non_local_block",
    "init_reasoning_params",
    "init_nonlocal_params",
]

DEGREE_EPS = 1e-6


@dataclass
class GraphFeatures:
    """A vertex-feature matrix plus the reshape provenance to invert it.

    spatial mode: a1 = H*W vertexes, a2 = C features (vertex k is pixel
    (k // W, k % W)); channel mode: a1 = C vertexes, a2 = H*W features.
    """

    matrix: Tensor
    origin_shape: tuple[int, int, int]
    mode: str

    @property
    def num_vertexes(self) -> int:
        return self.matrix.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.matrix.shape[1]


@dataclass
class ReasoningParams:
    """1x1 projection, diagonal-metric conv and the square mixing matrix.

    With a shared projection (the default) the i- and j-sides of the
    similarity use the same weights, which makes the adjacency symmetric and
    the symmetric normalization well-posed.
    """

    proj_w: Tensor
    proj_b: Tensor
    lambda_w: Tensor
    lambda_b: Tensor
    theta: Tensor
    proj_w_j: Tensor | None = None
    proj_b_j: Tensor | None = None

    @property
    def shared_projection(self) -> bool:
        return self.proj_w_j is None

    def named_parameters(self, prefix: str = ""):
        yield prefix + "proj_w", self.proj_w
        yield prefix + "proj_b", self.proj_b
        if self.proj_w_j is not None:
            yield prefix + "proj_w_j", self.proj_w_j
            yield prefix + "proj_b_j", self.proj_b_j
        yield prefix + "lambda_w", self.lambda_w
        yield prefix + "lambda_b", self.lambda_b
        yield prefix + "theta", self.theta


def init_reasoning_params(
    feature_dim: int, seed, dtype=np.float32, shared_projection: bool = True
) -> ReasoningParams:
    rng = as_rng(seed)
    a2 = int(feature_dim)
    p = ReasoningParams(
        proj_w=xavier_uniform((a2, a2), rng, dtype=dtype),
        proj_b=constant_init((a2,), 0.0, dtype=dtype),
        lambda_w=xavier_uniform((a2, a2), rng, dtype=dtype),
        lambda_b=constant_init((a2,), 0.0, dtype=dtype),
        theta=xavier_uniform((a2, a2), rng, dtype=dtype),
    )
    if not shared_projection:
        p.proj_w_j = xavier_uniform((a2, a2), rng, dtype=dtype)
        p.proj_b_j = constant_init((a2,), 0.0, dtype=dtype)
    return p


def build_graph(x: Tensor, mode: str) -> GraphFeatures:
    """Reshape an H x W x C feature map into a vertex-feature matrix."""
    if x.ndim != 3:
        raise ValueError(f"build_graph needs a rank-3 HxWxC input, got shape {x.shape}")
    if mode not in ("spatial", "channel"):
        raise ValueError(f"unknown graph mode '{mode}'")
    h, w, c = x.shape
    flat = reshape(x, (h * w, c))
    matrix = flat if mode == "spatial" else transpose(flat)
    return GraphFeatures(matrix=matrix, origin_shape=(h, w, c), mode=mode)


def invert_graph(g: GraphFeatures, matrix: Tensor | None = None) -> Tensor:
    """Round-trip a vertex-feature matrix back to the original H x W x C layout."""
    m = g.matrix if matrix is None else matrix
    h, w, c = g.origin_shape
    if g.mode == "spatial":
        if m.shape != (h * w, c):
            raise ValueError(f"matrix shape {m.shape} does not match spatial graph ({h * w}, {c})")
        return reshape(m, (h, w, c))
    if m.shape != (c, h * w):
        raise ValueError(f"matrix shape {m.shape} does not match channel graph ({c}, {h * w})")
    return reshape(transpose(m), (h, w, c))


def canonical_vertex_order(matrix: np.ndarray) -> np.ndarray:
    """A vertex ordering that depends only on vertex content, not layout.

    Sorting vertexes into this order before reasoning makes srr/crr
    bit-stable under any relabeling of the input vertexes (pixel or channel
    permutations); vertexes with identical feature rows are interchangeable.
    """
    sums = matrix.sum(axis=1)
    order = np.argsort(sums, kind="stable")
    if np.unique(sums).size == sums.size:
        return order
    cols = tuple(matrix[:, j] for j in reversed(range(matrix.shape[1])))
    return np.lexsort(cols)


def adjacency(g: GraphFeatures, p: ReasoningParams) -> Tensor:
    """Non-negative pairwise vertex similarity with a learned diagonal metric."""
    m = g.matrix
    a2 = g.feature_dim
    if p.proj_w.shape != (a2, a2) or p.theta.shape != (a2, a2):
        raise ValueError(
            f"reasoning params sized for feature dim {p.proj_w.shape[0]}, graph has {a2}"
        )
    proj_i = relu(m @ p.proj_w + p.proj_b)
    if p.shared_projection:
        proj_j = proj_i
    else:
        proj_j = relu(m @ p.proj_w_j + p.proj_b_j)
    lam = relu(global_vertex_avg(m) @ p.lambda_w + p.lambda_b)  # 1 x a2 diagonal
    adj = (proj_i * lam) @ transpose(proj_j)
    if p.shared_projection:
        # exact symmetry: elementwise (M + M^T) / 2 commutes with rounding
        adj = (adj + transpose(adj)) * 0.5
    if not np.isfinite(adj.data).all():
        raise NumericalError("adjacency produced non-finite entries")
    return adj


def normalized_laplacian(adj: Tensor, eps: float = DEGREE_EPS) -> Tensor:
    """I - D^{-1/2} A D^{-1/2} with degrees clamped away from zero."""
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise ValueError(f"adjacency must be square, got shape {adj.shape}")
    if (adj.data < 0).any():
        raise ValueError("adjacency entries must be non-negative")
    n = adj.shape[0]
    deg = clip(tensor_sum(adj, axis=1), lo=eps)
    inv_sqrt = power(deg, -0.5)
    scale = reshape(inv_sqrt, (n, 1)) * reshape(inv_sqrt, (1, n))
    eye = Tensor(np.eye(n, dtype=adj.dtype))
    return eye + adj * scale * -1.0


def graph_reason(g: GraphFeatures, p: ReasoningParams, laplacian: Tensor | None = None) -> Tensor:
    """relu(L G Theta) mapped back to the original feature-map layout.

    Without an explicit Laplacian the full pipeline runs in canonical vertex
    order (see canonical_vertex_order), so results do not depend on how the
    caller happened to label the vertexes.
    """
    if laplacian is not None:
        out = relu(laplacian @ g.matrix @ p.theta)
        return invert_graph(g, out)
    order = canonical_vertex_order(g.matrix.data)
    m = take_rows(g.matrix, order)
    gc = GraphFeatures(matrix=m, origin_shape=g.origin_shape, mode=g.mode)
    lap = normalized_laplacian(adjacency(gc, p))
    out = relu(lap @ m @ p.theta)
    out = take_rows(out, np.argsort(order))
    return invert_graph(g, out)


def srr(x: Tensor, p: ReasoningParams, residual: bool = False) -> Tensor:
    """Spatial relational reasoning: graph over the H*W pixel positions."""
    out = graph_reason(build_graph(x, "spatial"), p)
    return x + out if residual else out


def crr(x: Tensor, p: ReasoningParams, residual: bool = False) -> Tensor:
    """Channel relational reasoning: graph over the C channels."""
    out = graph_reason(build_graph(x, "channel"), p)
    return x + out if residual else out


# -- non-local block (ablation alternative to relational reasoning) ----------


@dataclass
class NonLocalParams:
    theta_w: Tensor
    theta_b: Tensor
    phi_w: Tensor
    phi_b: Tensor
    g_w: Tensor
    g_b: Tensor
    out_w: Tensor
    out_b: Tensor

    def named_parameters(self, prefix: str = ""):
        for name in ("theta_w", "theta_b", "phi_w", "phi_b", "g_w", "g_b", "out_w", "out_b"):
            yield prefix + name, getattr(self, name)


def init_nonlocal_params(channels: int, seed, dtype=np.float32) -> NonLocalParams:
    rng = as_rng(seed)
    c = int(channels)
    ci = max(c // 2, 1)
    return NonLocalParams(
        theta_w=xavier_uniform((c, ci), rng, dtype=dtype),
        theta_b=constant_init((ci,), 0.0, dtype=dtype),
        phi_w=xavier_uniform((c, ci), rng, dtype=dtype),
        phi_b=constant_init((ci,), 0.0, dtype=dtype),
        g_w=xavier_uniform((c, ci), rng, dtype=dtype),
        g_b=constant_init((ci,), 0.0, dtype=dtype),
        out_w=xavier_uniform((ci, c), rng, dtype=dtype),
        out_b=constant_init((c,), 0.0, dtype=dtype),
    )


def non_local_block(x: Tensor, p: NonLocalParams) -> Tensor:
    """Embedded-Gaussian non-local attention with a residual connection."""
    if x.ndim != 3:
        raise ValueError(f"non_local_block needs a rank-3 HxWxC input, got shape {x.shape}")
    h, w, c = x.shape
    if p.theta_w.shape[0] != c:
        raise ValueError(
            f"non-local params sized for {p.theta_w.shape[0]} channels, input has {c}"
        )
    m = reshape(x, (h * w, c))
    q = m @ p.theta_w + p.theta_b
    k = m @ p.phi_w + p.phi_b
    v = m @ p.g_w + p.g_b
    attn = softmax(q @ transpose(k), axis=-1)
    z = (attn @ v) @ p.out_w + p.out_b
    return x + reshape(z, (h, w, c))
