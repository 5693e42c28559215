"""Differentiable point-set embedding networks.

Two permutation-invariant backbones: a pointwise shared-MLP network with
channel-wise max pooling, and a dynamic-graph network that rebuilds a kNN
graph in feature space before each edge-convolution layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import PointCloud

LEAKY_SLOPE = 0.2


@dataclass
class BackboneConfig:
    kind: str = "dgcnn"
    layer_widths: tuple = (64, 64, 128, 256)
    k_neighbors: int = 20
    embed_dim: int = 256
    normalize: bool = True

    def __post_init__(self):
        if self.kind not in ("pointnet", "dgcnn"):
            raise ValueError(f"unknown backbone kind {self.kind!r}")
        self.layer_widths = tuple(int(w) for w in self.layer_widths)
        if not self.layer_widths or any(w < 1 for w in self.layer_widths):
            raise ValueError("layer_widths must be non-empty positive ints")
        if self.embed_dim < 1:
            raise ValueError("embed_dim must be >= 1")
        if self.kind == "dgcnn" and self.k_neighbors < 1:
            raise ValueError("k_neighbors must be >= 1")


class FeatureNorm:
    """Per-channel standardization with tracked statistics for evaluation."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.mean = np.zeros(channels)
        self.var = np.ones(channels)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        # channels sit on the last axis; statistics pool every other axis
        axes = tuple(range(x.ndim - 1))
        if training:
            out, mu, var = ad.standardize(x, axes, self.eps)
            self.mean = (1 - self.momentum) * self.mean + self.momentum * mu.reshape(-1)
            self.var = (1 - self.momentum) * self.var + self.momentum * var.reshape(-1)
            return out
        return ad.div(ad.sub(x, Tensor(self.mean)),
                      Tensor(np.sqrt(self.var + self.eps)))


@dataclass
class BackboneParameters:
    tensors: dict
    norms: dict = field(default_factory=dict)
    seed: int = 0


def _uniform_init(rng, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_backbone(config: BackboneConfig, seed: int) -> BackboneParameters:
    """Fan-in-scaled uniform weights, zero biases; deterministic given seed."""
    rng = np.random.default_rng(seed)
    tensors = {}
    norms = {}
    c_in = 3
    for i, width in enumerate(config.layer_widths):
        fan_in = 2 * c_in if config.kind == "dgcnn" else c_in
        tensors[f"backbone.layer{i}.w"] = ad.parameter(_uniform_init(rng, fan_in, (fan_in, width)))
        tensors[f"backbone.layer{i}.b"] = ad.parameter(np.zeros(width))
        norms[f"layer{i}"] = FeatureNorm(width)
        c_in = width
    head_in = sum(config.layer_widths) if config.kind == "dgcnn" else config.layer_widths[-1]
    tensors["backbone.head.w"] = ad.parameter(_uniform_init(rng, head_in, (head_in, config.embed_dim)))
    tensors["backbone.head.b"] = ad.parameter(np.zeros(config.embed_dim))
    norms["head"] = FeatureNorm(config.embed_dim)
    return BackboneParameters(tensors=tensors, norms=norms, seed=seed)


# ---------------------------------------------------------------------------
# kNN graph


def knn_graph(points: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k nearest rows per row, self excluded.

    Ties break toward the lowest index (stable sort on exact distances).
    """
    pts = np.asarray(points, dtype=np.float64)
    n = pts.shape[0]
    if k < 1 or k >= n:
        raise ValueError(f"k must satisfy 1 <= k < n, got k={k}, n={n}")
    if not np.isfinite(pts).all():
        raise ValueError("points contain non-finite values")
    d = ((pts[:, None, :] - pts[None, :, :])**2).sum(axis=2)
    np.fill_diagonal(d, np.inf)
    return np.argsort(d, axis=1, kind="stable")[:, :k]


def _knn_batch(x: np.ndarray, k: int) -> np.ndarray:
    # squared-distance expansion; argpartition then a small per-row sort
    sq = (x**2).sum(axis=2)
    d = sq[:, :, None] + sq[:, None, :] - 2.0 * np.matmul(x, np.swapaxes(x, 1, 2))
    idx = np.arange(x.shape[1])
    d[:, idx, idx] = np.inf
    part = np.argpartition(d, k, axis=2)[:, :, :k]
    order = np.argsort(np.take_along_axis(d, part, axis=2), axis=2, kind="stable")
    return np.take_along_axis(part, order, axis=2)


# ---------------------------------------------------------------------------
# Layers


def _gather_neighbors(features: Tensor, neighbors: np.ndarray) -> Tensor:
    """(B, n, c) features + (B, n, k) indices -> (B, n, k, c) neighbor features."""
    b, n, c = features.shape
    flat = neighbors + (np.arange(b) * n)[:, None, None]
    return ad.reshape(ad.take_rows(ad.reshape(features, (b * n, c)), flat),
                      (b, n, neighbors.shape[2], c))


def _edgeconv_batch(features: Tensor, neighbors: np.ndarray, w: Tensor, b: Tensor,
                    norm=None, training=False) -> Tensor:
    """activation(W . concat(x_i, x_j - x_i) + b), max-pooled over the k edges.

    Two equivalences keep the hot path cheap: W splits into its center and
    difference halves (the center term is computed once per point, not per
    edge), and the strictly monotone activation commutes with the edge max,
    so pooling happens first. Normalization statistics pool the max-reduced
    point features.
    """
    c = features.shape[2]
    if w.shape[0] != 2 * c:
        raise ValueError(f"edgeconv weight expects {w.shape[0]} input channels, "
                         f"features have 2*{c}")
    nbr = _gather_neighbors(features, neighbors)
    diff = ad.sub(nbr, ad.reshape(features, (features.shape[0], features.shape[1], 1, c)))
    w_center = ad.take_rows(w, np.arange(c))
    w_diff = ad.take_rows(w, np.arange(c, 2 * c))
    # bias folds into the per-point center term; one broadcast add per edge
    center = ad.add(ad.matmul(ad.reshape(features, (*features.shape[:2], 1, c)),
                              w_center), b)
    edges = ad.add(center, ad.matmul(diff, w_diff))
    pooled = ad.reduce_max(edges, axis=2)
    if norm is not None:
        pooled = norm(pooled, training)
    return ad.leaky_relu(pooled, LEAKY_SLOPE)


def edgeconv_layer(features, neighbors, w, b) -> Tensor:
    """Single-cloud edge convolution: (n, c_in) -> (n, c_out)."""
    features = ad.as_tensor(features)
    if features.ndim != 2:
        raise ValueError("features must be n x c_in")
    neighbors = np.asarray(neighbors)
    if neighbors.shape[0] != features.shape[0]:
        raise ValueError("neighbors must have one row per point")
    out = _edgeconv_batch(ad.reshape(features, (1, *features.shape)),
                          neighbors[None], ad.as_tensor(w), ad.as_tensor(b))
    return ad.reshape(out, (features.shape[0], -1))


def _as_batch(clouds) -> np.ndarray:
    if isinstance(clouds, np.ndarray):
        batch = clouds
    else:
        rows = [c.points if isinstance(c, PointCloud) else np.asarray(c) for c in clouds]
        ns = {r.shape[0] for r in rows}
        if len(ns) != 1:
            raise ValueError(f"heterogeneous point counts in batch: {sorted(ns)}")
        batch = np.stack(rows)
    if batch.ndim != 3 or batch.shape[2] != 3:
        raise ValueError(f"batch must be B x n x 3, got {batch.shape}")
    return np.asarray(batch, dtype=np.float64)


def embed(clouds, config: BackboneConfig, params: BackboneParameters,
          training: bool = False) -> Tensor:
    """Map a batch of point clouds to embedding vectors, (B, d)."""
    x = _as_batch(clouds)
    b, n, _ = x.shape
    t = params.tensors
    norms = params.norms if config.normalize else {}

    def norm_for(name):
        return norms.get(name)

    if config.kind == "pointnet":
        h = Tensor(x)
        for i in range(len(config.layer_widths)):
            h = ad.add(ad.matmul(h, t[f"backbone.layer{i}.w"]), t[f"backbone.layer{i}.b"])
            nrm = norm_for(f"layer{i}")
            if nrm is not None:
                h = nrm(h, training)
            h = ad.leaky_relu(h, LEAKY_SLOPE)
        pooled = ad.reduce_max(h, axis=1)
        return ad.add(ad.matmul(pooled, t["backbone.head.w"]), t["backbone.head.b"])

    k = min(config.k_neighbors, n - 1)
    if k < 1:
        raise ValueError("dgcnn needs clouds with at least 2 points")
    h = Tensor(x)
    layer_outputs = []
    for i in range(len(config.layer_widths)):
        neighbors = _knn_batch(h.data, k)
        h = _edgeconv_batch(h, neighbors, t[f"backbone.layer{i}.w"],
                            t[f"backbone.layer{i}.b"], norm_for(f"layer{i}"), training)
        layer_outputs.append(h)
    merged = ad.concat(layer_outputs, axis=2) if len(layer_outputs) > 1 else layer_outputs[0]
    head = ad.add(ad.matmul(merged, t["backbone.head.w"]), t["backbone.head.b"])
    nrm = norm_for("head")
    if nrm is not None:
        head = nrm(head, training)
    return ad.reduce_max(ad.leaky_relu(head, LEAKY_SLOPE), axis=1)
