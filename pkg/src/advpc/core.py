"""Point-cloud data model, synthetic shapes, augmentation and text I/O."""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SHAPE_KINDS = ("sphere", "cube", "cylinder", "torus")
CLASS_NAMES = {i: k for i, k in enumerate(SHAPE_KINDS)}

TORUS_MAJOR = 0.35
TORUS_MINOR = 0.15

# Already-normalized clouds are returned untouched so the map is an exact fixed point.
_NORMALIZED_TOL = 1e-12


class CloudFormatError(ValueError):
    """Raised when a cloud file cannot be parsed."""


def _key_to_int(key) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    return int(key) & 0xFFFFFFFFFFFFFFFF


def make_rng(seed: int, *keys) -> np.random.Generator:
    """Counter-based (Philox) generator for ``seed`` split along ``keys``.

    Keys may be ints or strings; the same (seed, keys) always yields the same stream
    and distinct key paths yield independent streams.
    """
    entropy = [_key_to_int(seed)] + [_key_to_int(k) for k in keys]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def derive_seed(seed: int, *keys) -> int:
    """A 63-bit child seed for ``seed`` split along ``keys``."""
    return int(make_rng(seed, *keys).integers(0, 2**63 - 1))


@dataclass(frozen=True, eq=False)
class PointCloud:
    """An ordered set of 3D points with an optional class label."""

    points: np.ndarray
    label: int | None = None
    id: str | None = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64, copy=True)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must have shape (n, 3), got {pts.shape}")
        if pts.shape[0] < 1:
            raise ValueError("point cloud must contain at least one point")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite coordinates")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.label is not None:
            object.__setattr__(self, "label", int(self.label))

    def __len__(self) -> int:
        return self.points.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, PointCloud):
            return NotImplemented
        # id is provenance only and does not take part in equality
        return (
            self.label == other.label
            and self.points.shape == other.points.shape
            and np.array_equal(self.points, other.points)
        )

    __hash__ = None

    def with_points(self, points) -> "PointCloud":
        return PointCloud(points, label=self.label, id=self.id)

    def bbox_sides(self) -> np.ndarray:
        return self.points.max(axis=0) - self.points.min(axis=0)


@dataclass(frozen=True)
class ShapeSpec:
    kind: str
    n_points: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.n_points < 8:
            raise ValueError(f"n_points must be >= 8, got {self.n_points}")


def normalize_unit_cube(cloud: PointCloud) -> PointCloud:
    """Center the bounding box at the origin and scale its longest side to 1."""
    pts = cloud.points
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    side = float(np.max(hi - lo))
    if side == 0.0:
        raise ValueError("zero extent: cannot normalize a cloud whose points all coincide")
    center = (lo + hi) / 2.0
    if abs(side - 1.0) <= _NORMALIZED_TOL and np.all(np.abs(center) <= _NORMALIZED_TOL):
        return cloud
    return cloud.with_points((pts - center) / side)


def jitter(cloud: PointCloud, sigma: float = 0.01, clip: float = 0.02, seed: int = 0) -> PointCloud:
    """Add clipped Gaussian noise to every coordinate."""
    if sigma < 0 or clip < 0:
        raise ValueError("sigma and clip must be non-negative")
    if sigma == 0:
        return cloud
    noise = make_rng(seed, "jitter").normal(0.0, sigma, size=cloud.points.shape)
    return cloud.with_points(cloud.points + np.clip(noise, -clip, clip))


def random_scale(cloud: PointCloud, lo: float = 0.9, hi: float = 1.1, seed: int = 0) -> PointCloud:
    """Multiply all points by one factor drawn uniformly from [lo, hi]."""
    if lo <= 0:
        raise ValueError(f"lo must be positive, got {lo}")
    if hi < lo:
        raise ValueError(f"hi ({hi}) must be >= lo ({lo})")
    factor = lo if lo == hi else float(make_rng(seed, "scale").uniform(lo, hi))
    return cloud.with_points(cloud.points * factor)


def _unit_vectors(rng: np.random.Generator, n: int) -> np.ndarray:
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _sample_sphere(rng, n):
    # six poles pin the bounding box to the analytic one
    anchors = np.vstack([np.eye(3), -np.eye(3)])
    return np.vstack([anchors, _unit_vectors(rng, n - 6)])


def _sample_cube(rng, n):
    anchors = np.vstack([np.eye(3), -np.eye(3)])
    m = n - 6
    axis = rng.integers(0, 3, size=m)
    sign = rng.choice([-1.0, 1.0], size=m)
    pts = rng.uniform(-1.0, 1.0, size=(m, 3))
    pts[np.arange(m), axis] = sign
    return np.vstack([anchors, pts])


def _sample_cylinder(rng, n):
    # radius 1, height 2: lateral area 4*pi, caps 2*pi in total
    anchors = np.array(
        [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], dtype=np.float64
    )
    m = n - 6
    lateral = rng.uniform(size=m) < 2.0 / 3.0
    phi = rng.uniform(0.0, 2 * math.pi, size=m)
    z = rng.uniform(-1.0, 1.0, size=m)
    r = np.sqrt(rng.uniform(size=m))
    cap_z = rng.choice([-1.0, 1.0], size=m)
    rad = np.where(lateral, 1.0, r)
    pts = np.stack([rad * np.cos(phi), rad * np.sin(phi), np.where(lateral, z, cap_z)], axis=1)
    return np.vstack([anchors, pts])


def _sample_torus(rng, n):
    big, small = TORUS_MAJOR, TORUS_MINOR
    anchors = np.array(
        [
            [big + small, 0, 0],
            [-(big + small), 0, 0],
            [0, big + small, 0],
            [0, -(big + small), 0],
            [big, 0, small],
            [big, 0, -small],
        ]
    )
    m = n - 6
    thetas = []
    have = 0
    # area element is proportional to (R + r cos(theta)); rejection sample theta
    while have < m:
        cand = rng.uniform(0.0, 2 * math.pi, size=2 * (m - have) + 8)
        keep = rng.uniform(size=cand.shape[0]) * (big + small) <= big + small * np.cos(cand)
        thetas.append(cand[keep])
        have += int(keep.sum())
    theta = np.concatenate(thetas)[:m]
    phi = rng.uniform(0.0, 2 * math.pi, size=m)
    ring = big + small * np.cos(theta)
    pts = np.stack([ring * np.cos(phi), ring * np.sin(phi), small * np.sin(theta)], axis=1)
    return np.vstack([anchors, pts])


_SAMPLERS = {
    "sphere": _sample_sphere,
    "cube": _sample_cube,
    "cylinder": _sample_cylinder,
    "torus": _sample_torus,
}


def generate_shape(spec: ShapeSpec) -> PointCloud:
    """Sample ``spec.n_points`` from a primitive surface, normalized to the unit cube.

    The first six points are fixed extremal points of the surface, so the
    normalized cloud's bounding box coincides with the primitive's.
    """
    if spec.kind not in _SAMPLERS:
        raise ValueError(f"unknown shape kind {spec.kind!r}; expected one of {SHAPE_KINDS}")
    rng = make_rng(spec.seed, "shape", spec.kind)
    pts = _SAMPLERS[spec.kind](rng, spec.n_points)
    cloud = PointCloud(pts, label=SHAPE_KINDS.index(spec.kind), id=f"{spec.kind}-{spec.seed}")
    return normalize_unit_cube(cloud)


def format_cloud(cloud: PointCloud) -> str:
    label = "-" if cloud.label is None else str(cloud.label)
    lines = [f"pcd {len(cloud)} {label}"]
    lines.extend(" ".join(repr(float(v)) for v in row) for row in cloud.points)
    return "\n".join(lines) + "\n"


def parse_cloud(text: str, id: str | None = None) -> PointCloud:
    lines = text.splitlines()
    if not lines:
        raise CloudFormatError("line 1: empty file")
    header = lines[0].split()
    if len(header) != 3 or header[0] != "pcd":
        raise CloudFormatError(f"line 1: expected 'pcd <n> <label-or-dash>', got {lines[0]!r}")
    try:
        n = int(header[1])
        label = None if header[2] == "-" else int(header[2])
    except ValueError as exc:
        raise CloudFormatError(f"line 1: {exc}") from None
    body = [(i + 2, ln) for i, ln in enumerate(lines[1:]) if ln.strip()]
    if len(body) != n:
        raise CloudFormatError(f"header declares {n} points but body has {len(body)}")
    pts = np.empty((n, 3), dtype=np.float64)
    for row, (lineno, ln) in enumerate(body):
        toks = ln.split()
        if len(toks) != 3:
            raise CloudFormatError(f"line {lineno}: expected 3 coordinates, got {len(toks)}")
        try:
            vals = [float(t) for t in toks]
        except ValueError:
            raise CloudFormatError(f"line {lineno}: invalid number in {ln!r}") from None
        if not all(math.isfinite(v) for v in vals):
            raise CloudFormatError(f"line {lineno}: non-finite coordinate in {ln!r}")
        pts[row] = vals
    return PointCloud(pts, label=label, id=id)


def save_cloud(path, cloud: PointCloud) -> Path:
    path = Path(path)
    path.write_text(format_cloud(cloud))
    return path


def load_cloud(path) -> PointCloud:
    path = Path(path)
    name = path.name
    ident = name[: -len(".pcd.txt")] if name.endswith(".pcd.txt") else path.stem
    return parse_cloud(path.read_text(), id=ident)


def make_dataset(
    n_per_class: int, n_points: int = 256, seed: int = 0, kinds=SHAPE_KINDS, split: str = "train"
) -> list[PointCloud]:
    """Balanced synthetic dataset, interleaved by class."""
    clouds = []
    for i in range(n_per_class):
        for kind in kinds:
            s = derive_seed(seed, "dataset", split, kind, i)
            c = generate_shape(ShapeSpec(kind, n_points, s))
            clouds.append(PointCloud(c.points, label=c.label, id=f"{split}-{kind}-{i:04d}"))
    return clouds
