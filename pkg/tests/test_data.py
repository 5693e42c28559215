"""Dataset core: synthetic surfaces, point ops, splits, and file I/O."""

import math

import numpy as np
import pytest

from fspc.data import (SYNTHETIC_CLASS_SPECS, AugmentationConfig, LabeledExample,
                       PointCloud, augment, build_synthetic_pool, bundled_manifest,
                       chamfer_distance, generate_synthetic_class, load_examples,
                       load_manifest, make_manifest, normalize_cloud, sample_points,
                       sample_surface, save_manifest, validate_split, write_examples)
from fspc.errors import DataError

TWO_PI = 2 * math.pi


# ---------------------------------------------------------------------------
# Synthetic generation


def test_sphere_points_lie_on_surface():
    rng = np.random.default_rng(7)
    pts = sample_surface("sphere", [1.0], 512, rng)
    np.testing.assert_allclose(np.linalg.norm(pts, axis=1), np.ones(512), atol=1e-6)


def test_generated_class_labels_and_instance_ids():
    examples = generate_synthetic_class("cube", [2.0], count=3, n_points=512, seed=0,
                                        class_id=4, start_instance_id=10)
    assert [ex.instance_id for ex in examples] == [10, 11, 12]
    assert all(ex.class_id == 4 for ex in examples)
    assert all(ex.cloud.n == 512 for ex in examples)


def test_generation_is_deterministic():
    a = generate_synthetic_class("torus", [1.0, 0.3], 2, 256, seed=42)
    b = generate_synthetic_class("torus", [1.0, 0.3], 2, 256, seed=42)
    for ea, eb in zip(a, b):
        assert np.array_equal(ea.cloud.points, eb.cloud.points)


def test_generation_errors():
    with pytest.raises(ValueError, match="unknown shape family"):
        generate_synthetic_class("dodecahedron", [1.0], 1, 64, seed=0)
    with pytest.raises(ValueError, match="positive"):
        generate_synthetic_class("cone", [0.5, -1.0], 1, 64, seed=0)
    with pytest.raises(ValueError):
        generate_synthetic_class("sphere", [1.0], 1, 4, seed=0)


def test_every_family_samples_on_its_surface():
    rng = np.random.default_rng(0)
    for name, family, params in SYNTHETIC_CLASS_SPECS[:8]:
        pts = sample_surface(family, params, 200, rng)
        assert pts.shape == (200, 3) and np.isfinite(pts).all(), name


def test_cylinder_surface_geometry():
    rng = np.random.default_rng(1)
    pts = sample_surface("cylinder", [0.5, 2.0], 2000, rng)
    r = np.linalg.norm(pts[:, :2], axis=1)
    on_caps = np.isclose(np.abs(pts[:, 2]), 1.0)
    assert (r[on_caps] <= 0.5 + 1e-9).all()
    np.testing.assert_allclose(r[~on_caps], 0.5, atol=1e-9)
    assert (np.abs(pts[:, 2]) <= 1.0 + 1e-9).all()


def test_torus_surface_geometry():
    rng = np.random.default_rng(2)
    pts = sample_surface("torus", [1.0, 0.3], 1000, rng)
    ring = np.linalg.norm(pts[:, :2], axis=1)
    tube = np.sqrt((ring - 1.0)**2 + pts[:, 2]**2)
    np.testing.assert_allclose(tube, 0.3, atol=1e-9)


def test_ellipsoid_surface_geometry():
    rng = np.random.default_rng(3)
    a, b, c = 1.0, 0.65, 0.4
    pts = sample_surface("ellipsoid", [a, b, c], 1000, rng)
    val = (pts[:, 0] / a)**2 + (pts[:, 1] / b)**2 + (pts[:, 2] / c)**2
    np.testing.assert_allclose(val, np.ones(1000), atol=1e-9)


# ---------------------------------------------------------------------------
# sample_points


def test_sample_points_without_replacement():
    rng = np.random.default_rng(0)
    cloud = PointCloud(rng.standard_normal((2048, 3)))
    out = sample_points(cloud, 512, seed=1)
    assert out.n == 512
    assert len(np.unique(out.points, axis=0)) == 512  # distinct rows


def test_sample_points_exhaustive_is_permutation():
    rng = np.random.default_rng(1)
    cloud = PointCloud(rng.standard_normal((512, 3)))
    out = sample_points(cloud, 512, seed=9)
    assert np.array_equal(np.sort(out.points, axis=0), np.sort(cloud.points, axis=0))


def test_sample_points_with_replacement_membership():
    # oracle: every sampled row must be present in the input set
    rng = np.random.default_rng(2)
    cloud = PointCloud(rng.standard_normal((100, 3)))
    out = sample_points(cloud, 512, seed=3)
    assert out.n == 512
    rows = {tuple(p) for p in cloud.points}
    assert all(tuple(p) in rows for p in out.points)


def test_sample_points_deterministic():
    cloud = PointCloud(np.random.default_rng(0).standard_normal((64, 3)))
    a = sample_points(cloud, 32, seed=5)
    b = sample_points(cloud, 32, seed=5)
    assert np.array_equal(a.points, b.points)


# ---------------------------------------------------------------------------
# augment


def test_identity_augmentation_returns_input_exactly():
    cloud = PointCloud(np.random.default_rng(1).standard_normal((50, 3)))
    cfg = AugmentationConfig(jitter_sigma=0.0, angle_range=(0.0, 0.0))
    out = augment(cloud, cfg, seed=0)
    assert np.array_equal(out.points, cloud.points)


def test_rotation_about_z_quarter_turn():
    cloud = PointCloud(np.array([[1.0, 0.0, 0.0]]))
    cfg = AugmentationConfig(jitter_sigma=0.0,
                             angle_range=(math.pi / 2, math.pi / 2))
    out = augment(cloud, cfg, seed=0)
    np.testing.assert_allclose(out.points, [[0.0, 1.0, 0.0]], atol=1e-9)


def test_jitter_is_clipped():
    # empirical bound over 1e5 points: |output - rotated| <= clip everywhere
    cloud = PointCloud(np.random.default_rng(2).standard_normal((100_000, 3)))
    cfg = AugmentationConfig(jitter_sigma=0.02, jitter_clip=0.05,
                             angle_range=(0.0, 0.0))
    out = augment(cloud, cfg, seed=7)
    delta = np.abs(out.points - cloud.points)
    assert delta.max() <= 0.05 + 1e-12
    assert delta.max() > 0.04  # jitter actually reaches near the clip


def test_rotation_preserves_pairwise_distances():
    rng = np.random.default_rng(3)
    cloud = PointCloud(rng.standard_normal((40, 3)))
    cfg = AugmentationConfig(jitter_sigma=0.0, angle_range=(0.0, TWO_PI))
    out = augment(cloud, cfg, seed=11)
    d_in = np.linalg.norm(cloud.points[:, None] - cloud.points[None], axis=2)
    d_out = np.linalg.norm(out.points[:, None] - out.points[None], axis=2)
    np.testing.assert_allclose(d_in, d_out, atol=1e-6)


def test_augment_config_validation():
    with pytest.raises(ValueError):
        AugmentationConfig(jitter_sigma=-0.1)
    with pytest.raises(ValueError):
        AugmentationConfig(jitter_clip=0.0)
    with pytest.raises(ValueError):
        AugmentationConfig(angle_range=(1.0, 10.0))


# ---------------------------------------------------------------------------
# normalize_cloud


def test_normalize_symmetric_pair():
    out = normalize_cloud(PointCloud(np.array([[2.0, 0, 0], [-2.0, 0, 0]])))
    np.testing.assert_allclose(out.points, [[1, 0, 0], [-1, 0, 0]], atol=1e-12)


def test_normalize_single_point_degenerates_to_origin():
    out = normalize_cloud(PointCloud(np.array([[5.0, 5.0, 5.0]])))
    np.testing.assert_allclose(out.points, [[0.0, 0.0, 0.0]])


def test_normalize_shifted_cube_corners():
    corners = np.array([[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)],
                       dtype=float) + 10.0
    out = normalize_cloud(PointCloud(corners))
    np.testing.assert_allclose(out.points.mean(axis=0), np.zeros(3), atol=1e-9)
    assert abs(np.linalg.norm(out.points, axis=1).max() - 1.0) < 1e-9


# ---------------------------------------------------------------------------
# separability sanity


def test_distinct_families_have_positive_chamfer_distance():
    rng = np.random.default_rng(5)
    clouds = {}
    for name, family, params in SYNTHETIC_CLASS_SPECS[:8]:
        pts = sample_surface(family, params, 256, np.random.default_rng(5))
        clouds[name] = normalize_cloud(PointCloud(pts)).points
    names = list(clouds)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            assert chamfer_distance(clouds[a], clouds[b]) > 1e-3, (a, b)


# ---------------------------------------------------------------------------
# split manifests


def test_bundled_modelnet40_fs_counts():
    report = validate_split(bundled_manifest("modelnet40_fs"))
    assert report.n_base_classes == 30 and report.base_examples == 9240
    assert report.n_novel_classes == 10 and report.novel_examples == 3104
    assert report.disjoint


def test_bundled_shapenet70_fs_counts():
    report = validate_split(bundled_manifest("shapenet70_fs"))
    assert report.n_base_classes == 50 and report.base_examples == 21722
    assert report.n_novel_classes == 20 and report.novel_examples == 8351
    assert report.disjoint


def test_overlapping_split_is_rejected():
    manifest = make_manifest({7: 5, 1: 5}, {2: 5})
    manifest = manifest.__class__(
        base_classes=frozenset({7, 1}), novel_classes=frozenset({7, 2}),
        class_counts={7: 5, 1: 5, 2: 5},
        totals={"base_examples": 10, "novel_examples": 10})
    with pytest.raises(DataError, match="overlap"):
        validate_split(manifest)


def test_count_mismatch_is_rejected():
    manifest = make_manifest({0: 5}, {1: 5})
    manifest.totals["base_examples"] = 6
    with pytest.raises(DataError, match="mismatch"):
        validate_split(manifest)


def test_manifest_roundtrip(tmp_path):
    manifest = make_manifest({0: 3, 1: 4}, {2: 5})
    save_manifest(manifest, tmp_path / "m.json")
    loaded = load_manifest(tmp_path / "m.json")
    assert loaded.base_classes == manifest.base_classes
    assert loaded.class_counts == manifest.class_counts
    assert loaded.totals == manifest.totals


# ---------------------------------------------------------------------------
# xyz container I/O


def _tiny_examples():
    rng = np.random.default_rng(0)
    return [LabeledExample(PointCloud(rng.standard_normal((16, 3))), class_id=c, instance_id=i)
            for i, c in enumerate([0] * 5 + [1] * 5)]


def test_write_load_roundtrip(tmp_path):
    examples = _tiny_examples()
    write_examples(tmp_path, examples)
    manifest = make_manifest({0: 5, 1: 5}, {9: 0})
    loaded = load_examples(tmp_path, manifest, "base")
    assert len(loaded) == 10
    by_id = {ex.instance_id: ex for ex in loaded}
    for ex in examples:
        np.testing.assert_allclose(by_id[ex.instance_id].cloud.points,
                                   ex.cloud.points, rtol=0, atol=0)
        assert by_id[ex.instance_id].class_id == ex.class_id


def test_load_novel_side_of_base_only_file_is_empty(tmp_path):
    write_examples(tmp_path, _tiny_examples())
    manifest = make_manifest({0: 5, 1: 5}, {9: 0})
    assert load_examples(tmp_path, manifest, "novel") == []


def test_zero_point_record_is_malformed(tmp_path):
    write_examples(tmp_path, _tiny_examples())
    (tmp_path / "3.xyz").write_text("", encoding="utf-8")
    manifest = make_manifest({0: 5, 1: 5}, {9: 0})
    with pytest.raises(DataError, match="malformed record"):
        load_examples(tmp_path, manifest, "base")


def test_undeclared_class_is_rejected(tmp_path):
    write_examples(tmp_path, _tiny_examples())
    manifest = make_manifest({0: 5}, {9: 0})  # class 1 missing
    with pytest.raises(DataError, match="class 1"):
        load_examples(tmp_path, manifest, "base")


def test_pool_builder_counts(tiny_pool):
    assert len(tiny_pool) == 60
    ids = [ex.instance_id for ex in tiny_pool]
    assert len(set(ids)) == len(ids)
    per_class = {}
    for ex in tiny_pool:
        per_class[ex.class_id] = per_class.get(ex.class_id, 0) + 1
    assert per_class == {c: 10 for c in range(6)}


def test_point_cloud_invariants():
    with pytest.raises(ValueError):
        PointCloud(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        PointCloud(np.array([[1.0, np.inf, 0.0]]))
    with pytest.raises(ValueError):
        PointCloud(np.zeros((4, 2)))
