"""Embedding backbones: kNN graph, edge convolution, and invariances."""

import numpy as np
import pytest

import fspc.autodiff as ad
from fspc.backbones import (BackboneConfig, FeatureNorm, edgeconv_layer, embed,
                            init_backbone, knn_graph)

from conftest import check_gradients

LEAKY = 0.2


def _leaky(x):
    return np.where(x > 0, x, LEAKY * x)


# ---------------------------------------------------------------------------
# init


def test_init_is_deterministic():
    cfg = BackboneConfig(kind="dgcnn", layer_widths=(8, 8), k_neighbors=4, embed_dim=8)
    a = init_backbone(cfg, seed=3)
    b = init_backbone(cfg, seed=3)
    for name in a.tensors:
        assert np.array_equal(a.tensors[name].data, b.tensors[name].data)


def test_dgcnn_parameter_shapes_match_layer_plan():
    cfg = BackboneConfig(kind="dgcnn", layer_widths=(64, 64, 128, 256),
                         k_neighbors=20, embed_dim=256)
    params = init_backbone(cfg, seed=0)
    shapes = {name: t.data.shape for name, t in params.tensors.items()}
    assert shapes["backbone.layer0.w"] == (6, 64)
    assert shapes["backbone.layer1.w"] == (128, 64)
    assert shapes["backbone.layer2.w"] == (128, 128)
    assert shapes["backbone.layer3.w"] == (256, 256)
    assert shapes["backbone.head.w"] == (64 + 64 + 128 + 256, 256)
    assert shapes["backbone.head.b"] == (256,)
    for i, width in enumerate((64, 64, 128, 256)):
        assert np.array_equal(params.tensors[f"backbone.layer{i}.b"].data,
                              np.zeros(width))


def test_invalid_configs_rejected():
    with pytest.raises(ValueError):
        BackboneConfig(kind="dgcnn", embed_dim=0)
    with pytest.raises(ValueError):
        BackboneConfig(kind="voxnet")
    with pytest.raises(ValueError):
        BackboneConfig(kind="pointnet", layer_widths=())


# ---------------------------------------------------------------------------
# knn graph


def test_knn_collinear_points():
    pts = np.array([[0.0, 0, 0], [1.0, 0, 0], [3.0, 0, 0]])
    np.testing.assert_array_equal(knn_graph(pts, 1), [[1], [0], [1]])


def test_knn_exhaustive_neighborhood():
    rng = np.random.default_rng(0)
    pts = rng.standard_normal((7, 3))
    nbrs = knn_graph(pts, 6)
    for i in range(7):
        assert set(nbrs[i]) == set(range(7)) - {i}


def test_knn_matches_bruteforce_oracle():
    # oracle: all-pairs distances sorted by (distance, index) per row
    rng = np.random.default_rng(1)
    pts = rng.standard_normal((64, 3))
    k = 20
    got = knn_graph(pts, k)
    for i in range(64):
        dist = [(float(((pts[i] - pts[j])**2).sum()), j)
                for j in range(64) if j != i]
        expect = [j for _, j in sorted(dist)[:k]]
        assert got[i].tolist() == expect


def test_knn_tie_breaks_to_lowest_index():
    pts = np.array([[0.0, 0, 0], [1.0, 0, 0], [-1.0, 0, 0], [0.0, 1.0, 0]])
    # for point 0, points 1, 2, 3 are all at distance 1; ties -> 1 then 2
    np.testing.assert_array_equal(knn_graph(pts, 2)[0], [1, 2])


def test_knn_excludes_self_and_validates_k():
    rng = np.random.default_rng(2)
    pts = rng.standard_normal((10, 3))
    nbrs = knn_graph(pts, 4)
    assert all(i not in nbrs[i] for i in range(10))
    with pytest.raises(ValueError):
        knn_graph(pts, 10)


# ---------------------------------------------------------------------------
# edge convolution


def test_edgeconv_identical_rows_give_identical_outputs():
    feats = np.ones((5, 3)) * 0.7
    nbrs = np.array([[1, 2], [0, 2], [3, 4], [0, 1], [2, 3]])
    rng = np.random.default_rng(3)
    w = rng.standard_normal((6, 4))
    b = rng.standard_normal(4)
    out = edgeconv_layer(feats, nbrs, w, b).data
    assert np.allclose(out, out[0])


def test_edgeconv_k1_equals_single_edge():
    rng = np.random.default_rng(4)
    feats = rng.standard_normal((3, 2))
    nbrs = np.array([[1], [2], [0]])
    w = rng.standard_normal((4, 3))
    b = rng.standard_normal(3)
    out = edgeconv_layer(feats, nbrs, w, b).data
    for i in range(3):
        j = nbrs[i, 0]
        edge = np.concatenate([feats[i], feats[j] - feats[i]])
        np.testing.assert_allclose(out[i], _leaky(edge @ w + b), atol=1e-12)


def test_edgeconv_matches_scalar_oracle():
    # oracle: evaluate every edge with plain scalar arithmetic, then max
    rng = np.random.default_rng(5)
    n, k, c_in, c_out = 4, 2, 2, 3
    feats = rng.standard_normal((n, c_in))
    nbrs = np.array([[1, 2], [0, 3], [3, 0], [2, 1]])
    w = rng.standard_normal((2 * c_in, c_out)) * 0.5
    b = rng.standard_normal(c_out) * 0.1
    expect = np.empty((n, c_out))
    for i in range(n):
        edges = []
        for j in nbrs[i]:
            e = [0.0] * c_out
            for o in range(c_out):
                s = b[o]
                for c in range(c_in):
                    s += feats[i][c] * w[c][o]
                    s += (feats[j][c] - feats[i][c]) * w[c_in + c][o]
                e[o] = s if s > 0 else LEAKY * s
            edges.append(e)
        for o in range(c_out):
            expect[i][o] = max(e[o] for e in edges)
    got = edgeconv_layer(feats, nbrs, w, b).data
    np.testing.assert_allclose(got, expect, atol=1e-9)


# ---------------------------------------------------------------------------
# embed


@pytest.mark.parametrize("kind", ["pointnet", "dgcnn"])
@pytest.mark.parametrize("normalize", [False, True])
def test_embedding_is_permutation_invariant(kind, normalize):
    cfg = BackboneConfig(kind=kind, layer_widths=(8, 8), k_neighbors=5,
                         embed_dim=8, normalize=normalize)
    params = init_backbone(cfg, seed=1)
    rng = np.random.default_rng(6)
    for trial in range(10):
        cloud = rng.standard_normal((32, 3))
        base = embed(cloud[None], cfg, params).data
        for _ in range(5):
            perm = rng.permutation(32)
            out = embed(cloud[perm][None], cfg, params).data
            np.testing.assert_allclose(out, base, atol=1e-6)


@pytest.mark.parametrize("kind", ["pointnet", "dgcnn"])
def test_embedding_batch_shape_and_finiteness(kind):
    cfg = BackboneConfig(kind=kind, layer_widths=(8, 4), k_neighbors=4, embed_dim=6)
    params = init_backbone(cfg, seed=2)
    rng = np.random.default_rng(7)
    out = embed(rng.standard_normal((5, 20, 3)), cfg, params, training=True)
    assert out.shape == (5, 6)
    assert np.isfinite(out.data).all()


def test_embed_rejects_heterogeneous_point_counts():
    cfg = BackboneConfig(kind="pointnet", layer_widths=(4,), embed_dim=4)
    params = init_backbone(cfg, seed=0)
    rng = np.random.default_rng(8)
    clouds = [rng.standard_normal((10, 3)), rng.standard_normal((12, 3))]
    with pytest.raises(ValueError, match="heterogeneous"):
        embed(clouds, cfg, params)


def test_pointnet_two_point_manual_forward():
    # hand-set weights, widths (2,), d=2: check against scalar arithmetic
    cfg = BackboneConfig(kind="pointnet", layer_widths=(2,), embed_dim=2,
                         normalize=False)
    params = init_backbone(cfg, seed=0)
    w0 = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, -1.0]])
    b0 = np.array([0.1, -0.2])
    wh = np.array([[2.0, 0.5], [-1.0, 1.0]])
    bh = np.array([0.0, 0.3])
    params.tensors["backbone.layer0.w"].data = w0
    params.tensors["backbone.layer0.b"].data = b0
    params.tensors["backbone.head.w"].data = wh
    params.tensors["backbone.head.b"].data = bh
    cloud = np.array([[1.0, 2.0, 3.0], [-1.0, 0.5, 0.0]])
    h = _leaky(cloud @ w0 + b0)
    pooled = h.max(axis=0)
    expect = pooled @ wh + bh
    got = embed(cloud[None], cfg, params).data[0]
    np.testing.assert_allclose(got, expect, atol=1e-12)


@pytest.mark.parametrize("kind,param_seed", [("pointnet", 0), ("dgcnn", 0)])
def test_embedding_gradients_match_finite_differences(kind, param_seed):
    # tiny config: n=8 points, widths (4,4), d=4; scalar probe of the embedding
    cfg = BackboneConfig(kind=kind, layer_widths=(4, 4), k_neighbors=3,
                         embed_dim=4, normalize=False)
    params = init_backbone(cfg, seed=0)
    rng = np.random.default_rng(param_seed)
    for name in sorted(params.tensors):
        t = params.tensors[name]
        t.data = rng.uniform(-0.8, 0.8, size=t.data.shape)
    clouds = np.random.default_rng(99).standard_normal((3, 8, 3))
    probe = ad.Tensor(np.random.default_rng(1234).standard_normal((3, 4)))

    def loss():
        return ad.reduce_sum(ad.mul(embed(clouds, cfg, params), probe))

    check_gradients(loss, params.tensors, step=1e-5, tol=1e-4)


def test_feature_norm_tracks_running_statistics():
    norm = FeatureNorm(3)
    rng = np.random.default_rng(9)
    x = rng.standard_normal((40, 3)) * 2.0 + 1.0
    out = norm(ad.Tensor(x), training=True)
    np.testing.assert_allclose(out.data.mean(axis=0), np.zeros(3), atol=1e-9)
    assert norm.mean.max() > 0.05  # moved toward the batch mean
    frozen_mean = norm.mean.copy()
    eval_out = norm(ad.Tensor(x), training=False)
    np.testing.assert_allclose(norm.mean, frozen_mean)  # eval leaves stats alone
    expect = (x - norm.mean) / np.sqrt(norm.var + norm.eps)
    np.testing.assert_allclose(eval_out.data, expect, atol=1e-12)
