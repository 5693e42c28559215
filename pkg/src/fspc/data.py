"""Point cloud data model, synthetic shape generation, file I/O and splits.

Synthetic parametric surfaces stand in for CAD model classes at desk scale.
All randomized operations are pure functions of (inputs, seed).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

TWO_PI = 2.0 * math.pi

SHAPE_FAMILIES = ("sphere", "cube", "cylinder", "cone", "torus", "plane",
                  "helix", "ellipsoid")

DEFAULT_FAMILY_PARAMS = {
    "sphere": [1.0],
    "cube": [2.0],
    "cylinder": [0.5, 2.0],
    "cone": [0.8, 1.6],
    "torus": [1.0, 0.3],
    "plane": [2.0],
    "helix": [0.7, 0.5, 2.5, 0.08],
    "ellipsoid": [1.0, 0.65, 0.4],
}

# Canonical class list for synthetic pools: the eight families at default
# parameters first, then re-parameterized variants so pools larger than
# eight classes stay mutually distinguishable.
SYNTHETIC_CLASS_SPECS = [
    ("sphere", "sphere", [1.0]),
    ("cube", "cube", [2.0]),
    ("cylinder", "cylinder", [0.5, 2.0]),
    ("cone", "cone", [0.8, 1.6]),
    ("torus", "torus", [1.0, 0.3]),
    ("plane", "plane", [2.0]),
    ("helix", "helix", [0.7, 0.5, 2.5, 0.08]),
    ("ellipsoid", "ellipsoid", [1.0, 0.65, 0.4]),
    ("torus_thin", "torus", [1.0, 0.08]),
    ("cylinder_disk", "cylinder", [1.0, 0.15]),
    ("box_slab", "cube", [2.0, 1.0, 0.4]),
    ("cone_spike", "cone", [0.35, 2.2]),
    ("ellipsoid_flat", "ellipsoid", [1.0, 0.95, 0.22]),
    ("helix_tight", "helix", [0.5, 0.25, 4.0, 0.06]),
    ("plane_strip", "plane", [2.4, 0.5]),
    ("sphere_shell_pair", "torus", [0.55, 0.45]),
]


@dataclass
class PointCloud:
    """An unordered set of n 3D points. Point order carries no semantics."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
            raise ValueError(f"point cloud must be n x 3 with n >= 1, got {pts.shape}")
        if not np.isfinite(pts).all():
            raise ValueError("point cloud contains non-finite coordinates")
        self.points = pts

    @property
    def n(self) -> int:
        return self.points.shape[0]


@dataclass
class LabeledExample:
    cloud: PointCloud
    class_id: int
    instance_id: int


@dataclass
class AugmentationConfig:
    """Jitter-and-rotate augmentation, PointNet convention."""

    jitter_sigma: float = 0.02
    jitter_clip: float = 0.05
    rotation_axis: str = "z"
    angle_range: tuple = (0.0, TWO_PI)

    def __post_init__(self):
        if self.jitter_sigma < 0:
            raise ValueError("jitter_sigma must be >= 0")
        if self.jitter_clip <= 0:
            raise ValueError("jitter_clip must be > 0")
        if self.rotation_axis not in ("x", "y", "z"):
            raise ValueError(f"unknown rotation axis {self.rotation_axis!r}")
        lo, hi = self.angle_range
        if not (0.0 <= lo <= hi <= TWO_PI):
            raise ValueError("angle range must lie within [0, 2*pi]")


@dataclass
class SplitManifest:
    base_classes: frozenset
    novel_classes: frozenset
    class_counts: dict
    totals: dict

    def side_of(self, class_id: int) -> str:
        if class_id in self.base_classes:
            return "base"
        if class_id in self.novel_classes:
            return "novel"
        raise DataError(f"class {class_id} not declared in manifest")


@dataclass
class SplitReport:
    n_base_classes: int
    n_novel_classes: int
    base_examples: int
    novel_examples: int
    disjoint: bool
    problems: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.problems


# ---------------------------------------------------------------------------
# Parametric surface sampling


def _positive(params, count, family):
    if len(params) != count:
        raise ValueError(f"{family} expects {count} parameters, got {len(params)}")
    if any(p <= 0 for p in params):
        raise ValueError(f"{family} parameters must be positive: {params}")
    return params


def _unit_sphere(rng, n):
    v = rng.standard_normal((n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v


def _disk(rng, n, radius):
    r = radius * np.sqrt(rng.uniform(size=n))
    t = rng.uniform(0.0, TWO_PI, size=n)
    return np.stack([r * np.cos(t), r * np.sin(t)], axis=1)


def _sample_sphere(rng, n, params):
    (radius,) = _positive(params, 1, "sphere")
    return radius * _unit_sphere(rng, n)


def _sample_cube(rng, n, params):
    # one edge length, or three extents for a box variant
    if len(params) == 1:
        ex = ey = ez = _positive(params, 1, "cube")[0]
    else:
        ex, ey, ez = _positive(params, 3, "cube")
    half = np.array([ex, ey, ez]) / 2.0
    areas = np.array([ey * ez, ey * ez, ex * ez, ex * ez, ex * ey, ex * ey])
    face = rng.choice(6, size=n, p=areas / areas.sum())
    uv = rng.uniform(-1.0, 1.0, size=(n, 2))
    pts = np.empty((n, 3))
    axis = face // 2
    sign = np.where(face % 2 == 0, 1.0, -1.0)
    for a in range(3):
        m = axis == a
        others = [i for i in range(3) if i != a]
        pts[m, a] = sign[m] * half[a]
        pts[m, others[0]] = uv[m, 0] * half[others[0]]
        pts[m, others[1]] = uv[m, 1] * half[others[1]]
    return pts


def _sample_cylinder(rng, n, params):
    radius, height = _positive(params, 2, "cylinder")
    lateral = TWO_PI * radius * height
    cap = math.pi * radius**2
    which = rng.choice(3, size=n, p=np.array([lateral, cap, cap]) / (lateral + 2 * cap))
    t = rng.uniform(0.0, TWO_PI, size=n)
    pts = np.empty((n, 3))
    side = which == 0
    pts[side, 0] = radius * np.cos(t[side])
    pts[side, 1] = radius * np.sin(t[side])
    pts[side, 2] = rng.uniform(-height / 2, height / 2, size=side.sum())
    for w, z in ((1, height / 2), (2, -height / 2)):
        m = which == w
        xy = _disk(rng, int(m.sum()), radius)
        pts[m, 0], pts[m, 1], pts[m, 2] = xy[:, 0], xy[:, 1], z
    return pts


def _sample_cone(rng, n, params):
    # apex at (0, 0, height), base disk in the z=0 plane
    radius, height = _positive(params, 2, "cone")
    slant = math.hypot(radius, height)
    lateral = math.pi * radius * slant
    base = math.pi * radius**2
    on_side = rng.uniform(size=n) < lateral / (lateral + base)
    pts = np.empty((n, 3))
    ns = int(on_side.sum())
    frac = np.sqrt(rng.uniform(size=ns))  # area-uniform along the slant
    t = rng.uniform(0.0, TWO_PI, size=ns)
    pts[on_side, 0] = radius * frac * np.cos(t)
    pts[on_side, 1] = radius * frac * np.sin(t)
    pts[on_side, 2] = height * (1.0 - frac)
    nb = n - ns
    xy = _disk(rng, nb, radius)
    pts[~on_side, 0], pts[~on_side, 1], pts[~on_side, 2] = xy[:, 0], xy[:, 1], 0.0
    return pts


def _sample_torus(rng, n, params):
    major, minor = _positive(params, 2, "torus")
    out = np.empty((n, 3))
    got = 0
    while got < n:
        m = max(n - got, 32) * 2
        theta = rng.uniform(0.0, TWO_PI, size=m)
        phi = rng.uniform(0.0, TWO_PI, size=m)
        accept = rng.uniform(size=m) < (major + minor * np.cos(phi)) / (major + minor)
        theta, phi = theta[accept], phi[accept]
        take = min(len(theta), n - got)
        r = major + minor * np.cos(phi[:take])
        out[got:got + take, 0] = r * np.cos(theta[:take])
        out[got:got + take, 1] = r * np.sin(theta[:take])
        out[got:got + take, 2] = minor * np.sin(phi[:take])
        got += take
    return out


def _sample_plane(rng, n, params):
    if len(params) == 1:
        ax = ay = _positive(params, 1, "plane")[0]
    else:
        ax, ay = _positive(params, 2, "plane")
    pts = np.zeros((n, 3))
    pts[:, 0] = rng.uniform(-ax / 2, ax / 2, size=n)
    pts[:, 1] = rng.uniform(-ay / 2, ay / 2, size=n)
    return pts


def _sample_helix(rng, n, params):
    # tube of the given radius around a circular helix; rejection corrects
    # for the curvature term in the tube's area element
    radius, pitch, turns, tube = _positive(params, 4, "helix")
    b = pitch / TWO_PI
    kappa = radius / (radius**2 + b**2)
    out = np.empty((n, 3))
    got = 0
    while got < n:
        m = max(n - got, 32) * 2
        t = rng.uniform(0.0, turns * TWO_PI, size=m)
        psi = rng.uniform(0.0, TWO_PI, size=m)
        accept = rng.uniform(size=m) < (1.0 - kappa * tube * np.cos(psi)) / (1.0 + kappa * tube)
        t, psi = t[accept], psi[accept]
        take = min(len(t), n - got)
        t, psi = t[:take], psi[:take]
        center = np.stack([radius * np.cos(t), radius * np.sin(t),
                           b * t - b * turns * math.pi], axis=1)
        normal = np.stack([-np.cos(t), -np.sin(t), np.zeros_like(t)], axis=1)
        tangent = np.stack([-radius * np.sin(t), radius * np.cos(t),
                            np.full_like(t, b)], axis=1)
        tangent /= np.linalg.norm(tangent, axis=1, keepdims=True)
        binormal = np.cross(tangent, normal)
        out[got:got + take] = center + tube * (np.cos(psi)[:, None] * normal
                                               + np.sin(psi)[:, None] * binormal)
        got += take
    return out


def _sample_ellipsoid(rng, n, params):
    a, b, c = _positive(params, 3, "ellipsoid")
    m_max = max(a * b, b * c, a * c)
    out = np.empty((n, 3))
    got = 0
    while got < n:
        m = max(n - got, 32) * 2
        u = _unit_sphere(rng, m)
        factor = np.sqrt((b * c * u[:, 0])**2 + (a * c * u[:, 1])**2
                         + (a * b * u[:, 2])**2)
        u = u[rng.uniform(size=m) < factor / m_max]
        take = min(len(u), n - got)
        out[got:got + take] = u[:take] * np.array([a, b, c])
        got += take
    return out


_SAMPLERS = {
    "sphere": _sample_sphere,
    "cube": _sample_cube,
    "cylinder": _sample_cylinder,
    "cone": _sample_cone,
    "torus": _sample_torus,
    "plane": _sample_plane,
    "helix": _sample_helix,
    "ellipsoid": _sample_ellipsoid,
}


def sample_surface(family: str, params, n: int, rng) -> np.ndarray:
    """Draw n points uniformly from the analytic surface of a family."""
    if family not in _SAMPLERS:
        raise ValueError(f"unknown shape family {family!r}")
    if n < 1:
        raise ValueError("n must be >= 1")
    return _SAMPLERS[family](rng, n, list(params))


def _rotation(axis: str, angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    if axis == "x":
        return np.array([[1, 0, 0], [0, c, -s], [0, s, c]], dtype=np.float64)
    if axis == "y":
        return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]], dtype=np.float64)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=np.float64)


def generate_synthetic_class(shape_family: str, family_params, count: int,
                             n_points: int, seed: int, class_id: int = 0,
                             start_instance_id: int = 0):
    """Generate `count` distinct instances of one synthetic class.

    Each instance is an exact surface sample followed by a random
    scale/pose perturbation (uniform scale, yaw about z, small tilt).
    Deterministic given the seed.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if n_points < 8:
        raise ValueError("n_points must be >= 8")
    rng = np.random.default_rng(seed)
    examples = []
    for i in range(count):
        pts = sample_surface(shape_family, family_params, n_points, rng)
        scale = rng.uniform(0.8, 1.2)
        yaw = rng.uniform(0.0, TWO_PI)
        tilt_x, tilt_y = rng.uniform(-0.2, 0.2, size=2)
        rot = _rotation("z", yaw) @ _rotation("y", tilt_y) @ _rotation("x", tilt_x)
        pts = scale * (pts @ rot.T)
        examples.append(LabeledExample(cloud=PointCloud(pts), class_id=class_id,
                                       instance_id=start_instance_id + i))
    return examples


def build_synthetic_pool(n_classes: int, examples_per_class: int, n_points: int,
                         seed: int, class_specs=None):
    """Labeled pool over the canonical synthetic class list."""
    specs = SYNTHETIC_CLASS_SPECS if class_specs is None else class_specs
    if n_classes < 1 or n_classes > len(specs):
        raise ValueError(f"n_classes must be in 1..{len(specs)}")
    pool = []
    for cid in range(n_classes):
        _, family, params = specs[cid]
        pool.extend(generate_synthetic_class(
            family, params, examples_per_class, n_points,
            seed=np.random.SeedSequence((seed, cid)).generate_state(1)[0],
            class_id=cid, start_instance_id=cid * examples_per_class))
    return pool


# Class list for the desk benchmark pool: six base families plus five novel
# classes (the two held-out families and three mutually distinct variants,
# chosen so 5-way novel episodes are well posed).
DESK_POOL_SPEC_INDICES = (0, 1, 2, 3, 4, 5, 6, 7, 8, 11, 14)
DESK_POOL_N_BASE = 6


def build_desk_pool(examples_per_class: int = 40, n_points: int = 128,
                    seed: int = 3):
    """(base, novel) example pools for desk-scale training runs."""
    specs = [SYNTHETIC_CLASS_SPECS[i] for i in DESK_POOL_SPEC_INDICES]
    pool = build_synthetic_pool(len(specs), examples_per_class, n_points,
                                seed=seed, class_specs=specs)
    base = [ex for ex in pool if ex.class_id < DESK_POOL_N_BASE]
    novel = [ex for ex in pool if ex.class_id >= DESK_POOL_N_BASE]
    return base, novel


# ---------------------------------------------------------------------------
# Point-level operations


def sample_points(cloud: PointCloud, n: int, seed: int) -> PointCloud:
    """Uniform sample of n points; without replacement when possible."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    idx = rng.choice(cloud.n, size=n, replace=cloud.n < n)
    return PointCloud(cloud.points[idx].copy())


def augment(cloud: PointCloud, cfg: AugmentationConfig, seed: int) -> PointCloud:
    """One uniform rotation about the configured axis, then clipped jitter."""
    rng = np.random.default_rng(seed)
    lo, hi = cfg.angle_range
    angle = lo if hi == lo else rng.uniform(lo, hi)
    pts = cloud.points
    if angle != 0.0:
        pts = pts @ _rotation(cfg.rotation_axis, angle).T
    if cfg.jitter_sigma > 0.0:
        jitter = np.clip(cfg.jitter_sigma * rng.standard_normal(pts.shape),
                         -cfg.jitter_clip, cfg.jitter_clip)
        pts = pts + jitter
    elif angle == 0.0:
        pts = pts.copy()
    return PointCloud(pts)


def normalize_cloud(cloud: PointCloud) -> PointCloud:
    """Center at the centroid and scale the farthest point to radius 1."""
    pts = cloud.points - cloud.points.mean(axis=0)
    radius = np.linalg.norm(pts, axis=1).max()
    if radius == 0.0:
        return PointCloud(np.zeros_like(pts))
    return PointCloud(pts / radius)


def chamfer_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric squared-distance Chamfer divergence between point sets."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    d = ((a[:, None, :] - b[None, :, :])**2).sum(axis=2)
    return float(d.min(axis=1).mean() + d.min(axis=0).mean())


# ---------------------------------------------------------------------------
# Split manifests


def make_manifest(base_counts: dict, novel_counts: dict) -> SplitManifest:
    return SplitManifest(
        base_classes=frozenset(base_counts),
        novel_classes=frozenset(novel_counts),
        class_counts={**base_counts, **novel_counts},
        totals={"base_examples": sum(base_counts.values()),
                "novel_examples": sum(novel_counts.values())},
    )


def save_manifest(manifest: SplitManifest, path):
    payload = {
        "base_classes": sorted(manifest.base_classes),
        "novel_classes": sorted(manifest.novel_classes),
        "class_counts": {str(k): int(v) for k, v in sorted(manifest.class_counts.items())},
        "totals": {k: int(v) for k, v in manifest.totals.items()},
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def load_manifest(path) -> SplitManifest:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as err:
        raise DataError(f"cannot read manifest {path}: {err}") from err
    try:
        return SplitManifest(
            base_classes=frozenset(payload["base_classes"]),
            novel_classes=frozenset(payload["novel_classes"]),
            class_counts={int(k): int(v) for k, v in payload["class_counts"].items()},
            totals={k: int(v) for k, v in payload["totals"].items()},
        )
    except (KeyError, TypeError, ValueError) as err:
        raise DataError(f"malformed manifest {path}: {err}") from err


def bundled_manifest(name: str) -> SplitManifest:
    """Load one of the packaged split manifests (modelnet40_fs, shapenet70_fs)."""
    path = Path(__file__).parent / "manifests" / f"{name}.json"
    if not path.exists():
        raise DataError(f"no bundled manifest named {name!r}")
    return load_manifest(path)


def validate_split(manifest: SplitManifest, examples=None) -> SplitReport:
    """Check disjointness and count consistency; raise DataError on failure."""
    overlap = manifest.base_classes & manifest.novel_classes
    problems = []
    if overlap:
        problems.append(f"overlap between base and novel classes: {sorted(overlap)}")
    declared = set(manifest.class_counts)
    missing = (manifest.base_classes | manifest.novel_classes) - declared
    if missing:
        problems.append(f"classes without declared counts: {sorted(missing)}")
    base_total = sum(manifest.class_counts.get(c, 0) for c in manifest.base_classes)
    novel_total = sum(manifest.class_counts.get(c, 0) for c in manifest.novel_classes)
    if base_total != manifest.totals.get("base_examples"):
        problems.append(f"base example count mismatch: per-class sum {base_total} "
                        f"!= declared total {manifest.totals.get('base_examples')}")
    if novel_total != manifest.totals.get("novel_examples"):
        problems.append(f"novel example count mismatch: per-class sum {novel_total} "
                        f"!= declared total {manifest.totals.get('novel_examples')}")
    if examples is not None:
        actual = {}
        for ex in examples:
            actual[ex.class_id] = actual.get(ex.class_id, 0) + 1
        for cid, cnt in actual.items():
            if manifest.class_counts.get(cid) != cnt:
                problems.append(f"class {cid}: manifest declares "
                                f"{manifest.class_counts.get(cid)}, found {cnt}")
    report = SplitReport(
        n_base_classes=len(manifest.base_classes),
        n_novel_classes=len(manifest.novel_classes),
        base_examples=base_total,
        novel_examples=novel_total,
        disjoint=not overlap,
        problems=problems,
    )
    if problems:
        raise DataError("; ".join(problems))
    return report


# ---------------------------------------------------------------------------
# On-disk container: <instance_id>.xyz records plus a labels.csv sidecar


def write_examples(directory, examples):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rows = sorted(examples, key=lambda ex: ex.instance_id)
    ids = [ex.instance_id for ex in rows]
    if len(set(ids)) != len(ids):
        raise DataError("duplicate instance_id in example set")
    with open(directory / "labels.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["instance_id", "class_id"])
        for ex in rows:
            writer.writerow([ex.instance_id, ex.class_id])
    for ex in rows:
        lines = [" ".join(f"{v:.17g}" for v in p) for p in ex.cloud.points]
        (directory / f"{ex.instance_id}.xyz").write_text("\n".join(lines) + "\n",
                                                         encoding="utf-8")


def _read_xyz(path) -> PointCloud:
    rows = []
    for ln, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split(" ")
        if len(parts) != 3:
            raise DataError(f"malformed record {path} line {ln}: expected 3 floats")
        try:
            rows.append([float(v) for v in parts])
        except ValueError as err:
            raise DataError(f"malformed record {path} line {ln}: {err}") from err
    if not rows:
        raise DataError(f"malformed record {path}: empty point cloud")
    try:
        return PointCloud(np.array(rows, dtype=np.float64))
    except ValueError as err:
        raise DataError(f"malformed record {path}: {err}") from err


def load_examples(path, manifest: SplitManifest, side: str):
    """Load every example whose class sits on the requested split side."""
    if side not in ("base", "novel"):
        raise ValueError(f"side must be 'base' or 'novel', got {side!r}")
    directory = Path(path)
    labels_path = directory / "labels.csv"
    if not labels_path.exists():
        raise DataError(f"missing labels.csv under {directory}")
    wanted = manifest.base_classes if side == "base" else manifest.novel_classes
    examples = []
    seen = set()
    with open(labels_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["instance_id", "class_id"]:
            raise DataError(f"labels.csv must have header instance_id,class_id, "
                            f"got {reader.fieldnames}")
        for row in reader:
            try:
                instance_id = int(row["instance_id"])
                class_id = int(row["class_id"])
            except (TypeError, ValueError) as err:
                raise DataError(f"malformed labels.csv row {row}: {err}") from err
            if instance_id in seen:
                raise DataError(f"duplicate instance_id {instance_id}")
            seen.add(instance_id)
            if class_id not in manifest.base_classes | manifest.novel_classes:
                raise DataError(f"class {class_id} not in manifest")
            if class_id not in wanted:
                continue
            cloud = _read_xyz(directory / f"{instance_id}.xyz")
            examples.append(LabeledExample(cloud=cloud, class_id=class_id,
                                           instance_id=instance_id))
    return examples
