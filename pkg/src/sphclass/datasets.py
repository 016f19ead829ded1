"""
Labeled point-cloud corpora.

Two sources: a reader for ModelNet-style trees (``root/<class>/<split>/*``)
and a procedural generator of eight primitive solids for desk-scale runs.
Generated surfaces are sampled area-uniformly *after* the random per-axis
stretch, so point density carries no class information.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import PointCloud, load_cloud, make_rng, normalize_unit_ball, rotate_z, save_cloud

PRIMITIVES = ("sphere", "cube", "cylinder", "cone", "torus", "pyramid", "ellipsoid", "capsule")
SPLITS = ("train", "test")


@dataclass
class LabeledDataset:
    samples: list                     # [(PointCloud, class index), ...]
    class_names: list
    split: str = "train"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        C = len(self.class_names)
        for pc, y in self.samples:
            if not 0 <= y < C:
                raise ValueError(f"class index {y} outside [0, {C})")
            if len(pc) == 0:
                raise ValueError("empty sample")

    def __len__(self):
        return len(self.samples)

    @property
    def labels(self) -> np.ndarray:
        return np.array([y for _, y in self.samples], dtype=np.int64)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=len(self.class_names))

    def map(self, fn) -> "LabeledDataset":
        """New dataset with ``fn(index, cloud)`` applied to every cloud."""
        out = [(fn(i, pc), y) for i, (pc, y) in enumerate(self.samples)]
        return LabeledDataset(out, list(self.class_names), self.split, dict(self.meta))

    def digest(self) -> str:
        h = hashlib.sha256(json.dumps(self.class_names).encode())
        for pc, y in self.samples:
            h.update(np.int64(y).tobytes())
            h.update(np.ascontiguousarray(pc.points).tobytes())
        return h.hexdigest()[:16]


# -- primitive surfaces ---------------------------------------------------------
# Each sampler returns area-uniform points and unit outward normals on the
# unstretched solid, centred on its bounding box.

def _sphere(count, rng, radius=1.0, center_z=0.0):
    v = rng.normal(size=(count, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    pts = radius * v
    pts[:, 2] += center_z
    return pts, v


def _mixture(parts, count, rng):
    """Draw from several surface patches in proportion to their areas."""
    areas = np.array([a for a, _ in parts])
    which = rng.choice(len(parts), size=count, p=areas / areas.sum())
    pts, nrm = np.empty((count, 3)), np.empty((count, 3))
    for i, (_, sampler) in enumerate(parts):
        sel = np.flatnonzero(which == i)
        if sel.size:
            pts[sel], nrm[sel] = sampler(sel.size, rng)
    return pts, nrm


def _disk(z, normal_z, radius=1.0):
    def sample(count, rng):
        r = radius * np.sqrt(rng.uniform(size=count))
        t = rng.uniform(0, 2 * np.pi, size=count)
        pts = np.column_stack([r * np.cos(t), r * np.sin(t), np.full(count, z)])
        nrm = np.zeros((count, 3))
        nrm[:, 2] = normal_z
        return pts, nrm
    return sample


def _cube(count, rng):
    axis = rng.integers(3, size=count)
    sign = rng.choice([-1.0, 1.0], size=count)
    pts = rng.uniform(-1, 1, size=(count, 3))
    pts[np.arange(count), axis] = sign
    nrm = np.zeros((count, 3))
    nrm[np.arange(count), axis] = sign
    return pts, nrm


def _cylinder_side(radius, z0, z1):
    def sample(count, rng):
        t = rng.uniform(0, 2 * np.pi, size=count)
        z = rng.uniform(z0, z1, size=count)
        nrm = np.column_stack([np.cos(t), np.sin(t), np.zeros(count)])
        pts = np.column_stack([radius * nrm[:, 0], radius * nrm[:, 1], z])
        return pts, nrm
    return sample


def _cylinder(count, rng):
    parts = [(4 * np.pi, _cylinder_side(1.0, -1.0, 1.0)),
             (np.pi, _disk(1.0, 1.0)), (np.pi, _disk(-1.0, -1.0))]
    return _mixture(parts, count, rng)


def _cone_side(count, rng):
    # apex at z=1, unit radius at z=-1; area density grows linearly from apex
    s = np.sqrt(rng.uniform(size=count))
    t = rng.uniform(0, 2 * np.pi, size=count)
    pts = np.column_stack([s * np.cos(t), s * np.sin(t), 1.0 - 2.0 * s])
    nrm = np.column_stack([2 * np.cos(t), 2 * np.sin(t), np.ones(count)]) / np.sqrt(5.0)
    return pts, nrm


def _cone(count, rng):
    return _mixture([(np.pi * np.sqrt(5.0), _cone_side), (np.pi, _disk(-1.0, -1.0))],
                    count, rng)


def _triangle(a, b, c):
    a, b, c = map(np.asarray, (a, b, c))
    nrm = np.cross(b - a, c - a)
    area = 0.5 * np.linalg.norm(nrm)
    nrm = nrm / np.linalg.norm(nrm)

    def sample(count, rng):
        u, v = rng.uniform(size=(2, count))
        flip = u + v > 1
        u[flip], v[flip] = 1 - u[flip], 1 - v[flip]
        pts = a + u[:, None] * (b - a) + v[:, None] * (c - a)
        return pts, np.broadcast_to(nrm, pts.shape).copy()
    return area, sample


def _pyramid(count, rng):
    apex = (0.0, 0.0, 1.0)
    base = [(-1.0, -1.0, -1.0), (1.0, -1.0, -1.0), (1.0, 1.0, -1.0), (-1.0, 1.0, -1.0)]
    parts = [_triangle(base[i], base[(i + 1) % 4], apex) for i in range(4)]
    parts += [_triangle(base[0], base[2], base[1]), _triangle(base[0], base[3], base[2])]
    return _mixture(parts, count, rng)


def _torus(count, rng, major=0.7, minor=0.3):
    out_u, out_v = [], []
    need = count
    while need > 0:
        v = rng.uniform(0, 2 * np.pi, size=2 * need)
        keep = rng.uniform(size=v.size) * (major + minor) < major + minor * np.cos(v)
        out_v.append(v[keep])
        need -= int(keep.sum())
    v = np.concatenate(out_v)[:count]
    u = rng.uniform(0, 2 * np.pi, size=count)
    nrm = np.column_stack([np.cos(v) * np.cos(u), np.cos(v) * np.sin(u), np.sin(v)])
    pts = np.column_stack([(major + minor * np.cos(v)) * np.cos(u),
                           (major + minor * np.cos(v)) * np.sin(u), minor * np.sin(v)])
    return pts, nrm


def _capsule(count, rng, radius=0.5, half=0.5):
    def cap(sign):
        def sample(n, rng):
            pts, nrm = _sphere(n, rng, radius)
            flip = np.sign(nrm[:, 2]) != sign
            pts[flip, 2] *= -1
            nrm[flip, 2] *= -1
            pts[:, 2] += sign * half
            return pts, nrm
        return sample
    side_area = 2 * np.pi * radius * 2 * half
    cap_area = 2 * np.pi * radius ** 2
    return _mixture([(side_area, _cylinder_side(radius, -half, half)),
                     (cap_area, cap(1.0)), (cap_area, cap(-1.0))], count, rng)


_SAMPLERS = {
    "sphere": (_sphere, (1.0, 1.0, 1.0)),
    "ellipsoid": (_sphere, (1.0, 0.55, 0.3)),
    "cube": (_cube, (1.0, 1.0, 1.0)),
    "cylinder": (_cylinder, (1.0, 1.0, 1.0)),
    "cone": (_cone, (1.0, 1.0, 1.0)),
    "pyramid": (_pyramid, (1.0, 1.0, 1.0)),
    "torus": (_torus, (1.0, 1.0, 1.0)),
    "capsule": (_capsule, (1.0, 1.0, 1.0)),
}


def sample_primitive(name: str, points: int, scale, rng: np.random.Generator) -> np.ndarray:
    """Area-uniform samples on primitive ``name`` stretched by ``scale`` per axis.

    A linear stretch ``S`` scales the area element at a point with unit
    normal ``n`` by ``det(S) |S^-1 n|``; candidates drawn uniformly on the
    unstretched surface are accepted with probability proportional to it.
    """
    if name not in _SAMPLERS:
        raise ValueError(f"unknown primitive {name!r}; choose from {PRIMITIVES}")
    sampler, base = _SAMPLERS[name]
    stretch = np.asarray(base, dtype=np.float64) * np.asarray(scale, dtype=np.float64)
    bound = 1.0 / stretch.min()
    chunks, need = [], points
    while need > 0:
        pts, nrm = sampler(2 * need + 16, rng)
        weight = np.linalg.norm(nrm / stretch, axis=1)
        keep = rng.uniform(size=weight.size) * bound < weight
        chunks.append(pts[keep] * stretch)
        need -= int(keep.sum())
    return np.concatenate(chunks)[:points]


def generate_primitives(classes: Sequence[str] = PRIMITIVES, per_class: int = 250,
                        points: int = 2048, seed: int = 0, scale_range=(0.6, 1.0),
                        rotate: bool = True) -> LabeledDataset:
    """Random stretched, z-rotated primitives scaled into the unit ball.

    Samples are centred on the solid's bounding box (not re-centred on the
    point centroid), so an unstretched sphere has every radius equal to 1.
    """
    classes = list(classes)
    for name in classes:
        if name not in _SAMPLERS:
            raise ValueError(f"unknown primitive {name!r}; choose from {PRIMITIVES}")
    if per_class < 1 or points < 64:
        raise ValueError("need per_class >= 1 and points >= 64")
    lo, hi = scale_range
    samples = []
    for ci, name in enumerate(classes):
        for j in range(per_class):
            rng = make_rng(seed, ci, j)
            scale = rng.uniform(lo, hi, size=3)
            pts = sample_primitive(name, points, scale, rng)
            pc = PointCloud(pts, ci)
            if rotate:
                pc = rotate_z(pc, rng.uniform(0, 2 * np.pi))
            pc.points /= pc.radii.max()
            samples.append((pc, ci))
    meta = {"source": "primitives", "classes": classes, "per_class": per_class,
            "points": points, "seed": seed, "scale_range": list(scale_range),
            "rotate": rotate}
    return LabeledDataset(samples, classes, "train", meta)


def split(dataset: LabeledDataset, test_fraction: float, seed: int = 0):
    """Stratified train/test split; each class contributes round(f * count) tests."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie strictly between 0 and 1")
    labels = dataset.labels
    test_idx = []
    for c in range(len(dataset.class_names)):
        members = np.flatnonzero(labels == c)
        n_test = int(round(test_fraction * members.size))
        test_idx.extend(make_rng(seed, 7, c).permutation(members)[:n_test])
    is_test = np.zeros(len(dataset), dtype=bool)
    is_test[test_idx] = True
    meta = dict(dataset.meta, test_fraction=test_fraction, split_seed=seed)
    pick = lambda mask, name: LabeledDataset(
        [s for s, t in zip(dataset.samples, mask) if t], list(dataset.class_names), name,
        dict(meta))
    return pick(~is_test, "train"), pick(is_test, "test")


# -- on-disk trees ----------------------------------------------------------------

def load_dataset(root, split: str) -> LabeledDataset:
    """Read ``root/<class>/<split>/*.{txt,bin}``; classes sorted alphabetically."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"{root}: no such directory")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise ValueError(f"{root}: no classes")
    samples, names = [], []
    for ci, cdir in enumerate(class_dirs):
        sdir = cdir / split
        if not sdir.is_dir():
            raise FileNotFoundError(f"{sdir}: missing split {split!r}")
        files = sorted(f for f in sdir.iterdir() if f.suffix in (".txt", ".bin"))
        if not files:
            raise ValueError(f"{sdir}: class {cdir.name!r} has no samples")
        names.append(cdir.name)
        for f in files:
            samples.append((normalize_unit_ball(load_cloud(f, ci)), ci))
    return LabeledDataset(samples, names, split, {"source": str(root)})


def save_dataset(dataset: LabeledDataset, root, binary: bool = True) -> None:
    """Write clouds under ``root/<class>/<split>/`` plus a JSON manifest."""
    root = Path(root)
    ext = ".bin" if binary else ".txt"
    counters = {}
    for pc, y in dataset.samples:
        name = dataset.class_names[y]
        d = root / name / dataset.split
        d.mkdir(parents=True, exist_ok=True)
        i = counters.get(name, 0)
        counters[name] = i + 1
        save_cloud(pc, d / f"{name}_{i:04d}{ext}", binary=binary)
    write_manifest(dataset, root / f"manifest_{dataset.split}.json")


def write_manifest(dataset: LabeledDataset, path) -> dict:
    manifest = {
        "class_names": list(dataset.class_names),
        "counts": [int(c) for c in dataset.class_counts()],
        "split": dataset.split,
        "digest": dataset.digest(),
        "generation": dataset.meta,
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")
    return manifest
