"""
Point clouds, normalization, rotation and the corruption generators used to
probe classifier robustness (noise, scattered outliers, clustered outliers,
random dropout).

Every random operation takes an explicit ``seed``.  Seeds are turned into
independent PCG64 streams through :class:`numpy.random.SeedSequence`, so the
same (input, seed) pair gives the same output on every platform, and streams
for different calls never overlap.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

SeedLike = Union[int, Sequence[int], np.random.SeedSequence]

AUGMENTATIONS = ("none", "gaussian_noise", "uniform_outliers",
                 "clustered_outliers", "dropout")

_SPC_MAGIC = b"SPC1"


class DegenerateCloudError(ValueError):
    pass


@dataclass
class PointCloud:
    """Ordered set of 3D points with an optional class label.

    ``points`` is stored as a float64 array of shape (N, 3).
    """

    points: np.ndarray
    label: Optional[int] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must have shape (N, 3), got {pts.shape}")
        if pts.shape[0] < 1:
            raise ValueError("a point cloud needs at least one point")
        self.points = pts

    def __len__(self):
        return self.points.shape[0]

    @property
    def radii(self) -> np.ndarray:
        return np.sqrt(np.einsum("ij,ij->i", self.points, self.points))

    def copy(self) -> "PointCloud":
        return PointCloud(self.points.copy(), self.label)

    def _with(self, points) -> "PointCloud":
        return PointCloud(points, self.label)


@dataclass(frozen=True)
class AugmentationConfig:
    kind: str = "none"
    sigma: float = 0.0
    fraction: float = 0.0
    cluster_size: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.kind not in AUGMENTATIONS:
            raise ValueError(f"unknown augmentation {self.kind!r}")
        if not 0.0 <= self.fraction <= 1.0:
            raise ValueError("fraction must lie in [0, 1]")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.cluster_size < 1:
            raise ValueError("cluster_size must be >= 1")


def make_rng(seed: SeedLike, *keys: int) -> np.random.Generator:
    """PCG64 generator for ``seed``, optionally split by integer ``keys``.

    ``make_rng(s, 3)`` and ``make_rng(s, 4)`` are statistically independent
    streams; both are reproducible from ``s`` alone.
    """
    if isinstance(seed, np.random.SeedSequence):
        ss = seed
        if keys:
            ss = np.random.SeedSequence(ss.entropy,
                                        spawn_key=tuple(ss.spawn_key) + tuple(keys))
    else:
        ss = np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


def normalize_unit_ball(pc: PointCloud) -> PointCloud:
    """Center on the centroid and scale so the farthest point has radius 1."""
    pts = pc.points - pc.points.mean(axis=0)
    rmax = np.sqrt(np.max(np.einsum("ij,ij->i", pts, pts)))
    if rmax <= 1e-15 * max(1.0, np.abs(pc.points).max()):
        raise DegenerateCloudError("degenerate cloud: all points coincide")
    pts /= rmax
    return pc._with(pts)


def rotate_z(pc: PointCloud, angle: float) -> PointCloud:
    c, s = np.cos(angle), np.sin(angle)
    x, y, z = pc.points.T
    return pc._with(np.column_stack([c * x - s * y, s * x + c * y, z]))


def add_gaussian_noise(pc: PointCloud, sigma: float, seed: SeedLike) -> PointCloud:
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return pc.copy()
    rng = make_rng(seed)
    return pc._with(pc.points + rng.normal(0.0, sigma, size=pc.points.shape))


def _replace_indices(n: int, count: int, rng: np.random.Generator) -> np.ndarray:
    return np.sort(rng.choice(n, size=count, replace=False))


def add_uniform_outliers(pc: PointCloud, fraction: float, seed: SeedLike) -> PointCloud:
    """Replace ``round(fraction * N)`` random points by uniform draws in [-1, 1]^3."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    n = len(pc)
    count = int(round(fraction * n))
    if count == 0:
        return pc.copy()
    rng = make_rng(seed)
    idx = _replace_indices(n, count, rng)
    pts = pc.points.copy()
    pts[idx] = rng.uniform(-1.0, 1.0, size=(count, 3))
    return pc._with(pts)


def add_clustered_outliers(pc: PointCloud, fraction: float, cluster_size: int,
                           cluster_sigma: float, seed: SeedLike) -> PointCloud:
    """Replace points by ``floor(fraction * N / cluster_size)`` Gaussian clusters.

    Cluster centres are uniform in [-1, 1]^3 and members are normal around
    their centre with standard deviation ``cluster_sigma`` (absolute units).
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    if cluster_size < 1 or cluster_sigma < 0:
        raise ValueError("cluster_size must be >= 1 and cluster_sigma >= 0")
    n = len(pc)
    budget = fraction * n
    if cluster_size > budget:
        raise ValueError("no full cluster fits in the outlier budget")
    n_clusters = int(np.floor(budget / cluster_size + 1e-9))
    count = n_clusters * cluster_size
    rng = make_rng(seed)
    idx = _replace_indices(n, count, rng)
    centers = rng.uniform(-1.0, 1.0, size=(n_clusters, 3))
    members = np.repeat(centers, cluster_size, axis=0)
    if cluster_sigma > 0:
        members = members + rng.normal(0.0, cluster_sigma, size=members.shape)
    pts = pc.points.copy()
    pts[idx] = members
    return pc._with(pts)


def random_dropout(pc: PointCloud, fraction: float, seed: SeedLike) -> PointCloud:
    if not 0.0 <= fraction < 1.0:
        raise ValueError("dropout fraction must lie in [0, 1)")
    n = len(pc)
    count = int(round(fraction * n))
    if count == 0:
        return pc.copy()
    if count >= n:
        raise ValueError("dropout would remove every point")
    rng = make_rng(seed)
    keep = np.ones(n, dtype=bool)
    keep[rng.choice(n, size=count, replace=False)] = False
    return pc._with(pc.points[keep])


def augment(pc: PointCloud, config: AugmentationConfig) -> PointCloud:
    """Dispatch on ``config.kind``; the input cloud is never modified."""
    kind = config.kind
    if kind == "none":
        return pc.copy()
    if kind == "gaussian_noise":
        return add_gaussian_noise(pc, config.sigma, config.seed)
    if kind == "uniform_outliers":
        return add_uniform_outliers(pc, config.fraction, config.seed)
    if kind == "clustered_outliers":
        return add_clustered_outliers(pc, config.fraction, config.cluster_size,
                                      config.sigma, config.seed)
    return random_dropout(pc, config.fraction, config.seed)


# -- file formats ------------------------------------------------------------

def save_cloud(pc: PointCloud, path, binary: bool = True) -> None:
    """Write ``pc`` as SPC1 binary (float32) or as "x y z" text lines."""
    path = Path(path)
    if binary:
        with open(path, "wb") as fh:
            fh.write(_SPC_MAGIC)
            fh.write(struct.pack("<I", len(pc)))
            fh.write(pc.points.astype("<f4").tobytes())
    else:
        np.savetxt(path, pc.points, fmt="%.9g")


def load_cloud(path, label: Optional[int] = None) -> PointCloud:
    """Read a cloud, detecting the binary format by its magic bytes."""
    data = Path(path).read_bytes()
    if data[:4] == _SPC_MAGIC:
        if len(data) < 8:
            raise ValueError(f"{path}: truncated SPC1 header")
        (count,) = struct.unpack("<I", data[4:8])
        if len(data) != 8 + 12 * count:
            raise ValueError(f"{path}: expected {count} points, file size mismatch")
        pts = np.frombuffer(data, dtype="<f4", offset=8).reshape(count, 3)
        return PointCloud(pts.astype(np.float64), label)
    rows = [line.split() for line in data.decode("utf-8").splitlines()]
    rows = [r for r in rows if r and not r[0].startswith("#")]
    if not rows:
        raise ValueError(f"{path}: no points")
    try:
        pts = np.array(rows, dtype=np.float64)
    except ValueError as exc:
        raise ValueError(f"{path}: malformed point line") from exc
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"{path}: expected three coordinates per line")
    return PointCloud(pts, label)
