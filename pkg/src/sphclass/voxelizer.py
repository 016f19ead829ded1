"""
Concentric-shell spherical voxel grids.

The unit ball is cut into ``shells`` equal-width radial layers; each layer
is an ``n x n`` equiangular (theta, phi) grid.  A voxel holds the number of
points falling in it (``density``) or a presence flag (``binary``).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .geometry import PointCloud
from .sht import SphericalSignal

GRID_MODES = ("density", "binary")
OUTSIDE_POLICIES = ("error", "drop", "clamp")

_SVG_MAGIC = b"SVG1"
_RADIUS_TOL = 1e-9


@dataclass(frozen=True)
class GridSpec:
    shells: int = 7
    resolution: int = 64
    mode: str = "density"

    def __post_init__(self):
        if self.shells < 1:
            raise ValueError("shells must be >= 1")
        if self.resolution < 2 or self.resolution % 2:
            raise ValueError("resolution must be a positive even integer")
        if self.mode not in GRID_MODES:
            raise ValueError(f"mode must be one of {GRID_MODES}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.shells, self.resolution, self.resolution)


@dataclass
class SphericalVoxelGrid:
    values: np.ndarray   # (shells, n, n)
    spec: GridSpec

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != self.spec.shape:
            raise ValueError(f"grid shape {self.values.shape} does not match {self.spec.shape}")
        v = self.values
        if v.size and (v.min() < 0 or np.any(v != np.floor(v))):
            raise ValueError("voxel values must be non-negative counts")
        if self.spec.mode == "binary" and v.size and v.max() > 1:
            raise ValueError("binary grid values must be 0 or 1")


def voxel_indices(points: np.ndarray, spec: GridSpec, outside: str = "error") -> np.ndarray:
    """Flat voxel index ``(shell * n + theta_idx) * n + phi_idx`` per point.

    ``outside`` decides what happens to points beyond radius 1: ``"error"``
    raises, ``"drop"`` discards them, ``"clamp"`` puts them in the outer
    shell along their own direction.  Dropped points get index -1.
    """
    if outside not in OUTSIDE_POLICIES:
        raise ValueError(f"outside must be one of {OUTSIDE_POLICIES}")
    pts = np.asarray(points, dtype=np.float64)
    c, n = spec.shells, spec.resolution
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    r = np.sqrt(x * x + y * y + z * z)
    beyond = r > 1.0 + _RADIUS_TOL
    if outside == "error" and beyond.any():
        raise ValueError(f"cloud is not normalized to the unit ball "
                         f"(max radius {r.max():.6g})")
    at_origin = r == 0.0
    with np.errstate(invalid="ignore", divide="ignore"):
        theta = np.arccos(np.clip(z / r, -1.0, 1.0))
    phi = np.mod(np.arctan2(y, x), 2.0 * np.pi)
    shell = np.minimum(np.floor(r * c), c - 1).astype(np.int64)
    ti = np.minimum(np.floor(theta * n / np.pi), n - 1)
    pi_ = np.mod(np.floor(phi * n / (2.0 * np.pi)), n)
    ti = np.where(at_origin, 0, ti).astype(np.int64)
    pi_ = np.where(at_origin, 0, pi_).astype(np.int64)
    flat = (shell * n + ti) * n + pi_
    if outside == "drop":
        flat = np.where(beyond, -1, flat)
    return flat


def voxelize(pc: Union[PointCloud, np.ndarray], spec: GridSpec,
             outside: str = "error") -> SphericalVoxelGrid:
    pts = pc.points if isinstance(pc, PointCloud) else np.asarray(pc)
    values = voxelize_batch([pts], spec, outside)[0]
    return SphericalVoxelGrid(values, spec)


def voxelize_batch(clouds: Sequence, spec: GridSpec, outside: str = "error",
                   dtype=np.float64) -> np.ndarray:
    """Voxelize several clouds at once into an array ``(B, shells, n, n)``."""
    size = spec.shells * spec.resolution ** 2
    flats = []
    for b, pc in enumerate(clouds):
        pts = pc.points if isinstance(pc, PointCloud) else np.asarray(pc)
        idx = voxel_indices(pts, spec, outside)
        idx = idx[idx >= 0]
        flats.append(idx + b * size)
    flat = np.concatenate(flats) if flats else np.zeros(0, dtype=np.int64)
    counts = np.bincount(flat, minlength=len(flats) * size).astype(dtype)
    if spec.mode == "binary":
        np.minimum(counts, 1, out=counts)
    return counts.reshape((len(flats),) + spec.shape)


def shell_signal(grid: SphericalVoxelGrid, shell_index: int) -> SphericalSignal:
    """One shell as a spherical signal on the cell-centre grid."""
    if not 0 <= shell_index < grid.spec.shells:
        raise IndexError(f"shell index {shell_index} out of range "
                         f"[0, {grid.spec.shells})")
    return SphericalSignal(grid.values[shell_index].copy())


def save_grid(grid: SphericalVoxelGrid, path) -> None:
    """SVG1 dump: magic, u32 shells, u32 n, float32 values (shell, theta, phi)."""
    with open(path, "wb") as fh:
        fh.write(_SVG_MAGIC)
        fh.write(struct.pack("<II", grid.spec.shells, grid.spec.resolution))
        fh.write(grid.values.astype("<f4").tobytes())


def load_grid(path, mode: str = "density") -> SphericalVoxelGrid:
    data = Path(path).read_bytes()
    if data[:4] != _SVG_MAGIC:
        raise ValueError(f"{path}: not an SVG1 grid file")
    c, n = struct.unpack("<II", data[4:12])
    if len(data) != 12 + 4 * c * n * n:
        raise ValueError(f"{path}: size does not match header")
    vals = np.frombuffer(data, dtype="<f4", offset=12).reshape(c, n, n)
    return SphericalVoxelGrid(vals.astype(np.float64), GridSpec(c, n, mode))
