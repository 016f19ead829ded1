import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sphclass.datasets import (PRIMITIVES, LabeledDataset, generate_primitives, load_dataset,
                               sample_primitive, save_dataset, split, write_manifest)
from sphclass.geometry import PointCloud, save_cloud


def test_unscaled_sphere_has_unit_radii():
    ds = generate_primitives(["sphere"], per_class=3, points=500, seed=1, scale_range=(1, 1))
    for pc, _ in ds.samples:
        np.testing.assert_allclose(pc.radii, 1.0, atol=1e-9)


def test_full_size_counts():
    ds = generate_primitives(per_class=250, points=64, seed=0)
    assert len(ds) == 2000
    np.testing.assert_array_equal(ds.class_counts(), [250] * 8)
    pc, _ = generate_primitives(["torus"], per_class=1, points=2048).samples[0]
    assert len(pc) == 2048


def test_generation_is_deterministic_per_seed():
    a = generate_primitives(["cube", "cone"], per_class=3, points=128, seed=5)
    b = generate_primitives(["cube", "cone"], per_class=3, points=128, seed=5)
    c = generate_primitives(["cube", "cone"], per_class=3, points=128, seed=6)
    assert a.digest() == b.digest()
    assert a.digest() != c.digest()


def test_every_primitive_is_in_unit_ball():
    ds = generate_primitives(per_class=4, points=256, seed=3)
    for pc, y in ds.samples:
        assert abs(pc.radii.max() - 1.0) <= 1e-12
        assert np.all(np.isfinite(pc.points))
    assert sorted(set(ds.labels.tolist())) == list(range(8))


def test_generation_errors():
    with pytest.raises(ValueError, match="unknown primitive"):
        generate_primitives(["dodecahedron"])
    with pytest.raises(ValueError):
        generate_primitives(["cube"], per_class=0)
    with pytest.raises(ValueError):
        generate_primitives(["cube"], points=32)


@pytest.mark.parametrize("scale", [(1.0, 1.0, 1.0), (1.0, 0.6, 0.8)])
def test_cube_faces_are_area_uniform(scale):
    rng = np.random.default_rng(0)
    N = 60_000
    pts = sample_primitive("cube", N, scale, rng)
    half = np.abs(pts).max(axis=0)
    on_face = np.isclose(np.abs(pts), half, atol=1e-9)
    axis = on_face.argmax(axis=1)
    sx, sy, sz = scale
    areas = np.array([sy * sz, sx * sz, sx * sy])     # each axis has two faces
    p = areas / areas.sum()
    counts = np.bincount(axis, minlength=3)
    assert np.all(np.abs(counts - N * p) <= 4 * np.sqrt(N * p * (1 - p)))


def test_sphere_is_uniform_in_z():
    # Archimedes: z is uniform on [-1, 1] for area-uniform sphere samples
    pts = sample_primitive("sphere", 40_000, (1, 1, 1), np.random.default_rng(1))
    counts, _ = np.histogram(pts[:, 2] / np.abs(pts[:, 2]).max(), bins=10, range=(-1, 1))
    expected = 4000
    assert np.all(np.abs(counts - expected) <= 4 * np.sqrt(expected * 0.9))


def test_stretched_sphere_area_weighting():
    # oblate ellipsoid (1, 1, 0.3): most of the area is near the equator plane
    # in terms of |normal_z|; compare against a fine-grid area integral
    a, c = 1.0, 0.3
    pts = sample_primitive("sphere", 50_000, (a, a, c), np.random.default_rng(2))
    zfrac = np.abs(pts[:, 2]) / c
    t = np.linspace(0, np.pi / 2, 200_001)
    # surface of revolution: r = a sin t, z = c cos t, dA ~ r * |d(r,z)/dt|
    dA = a * np.sin(t) * np.hypot(a * np.cos(t), c * np.sin(t))
    below = np.cos(t) < 0.5
    expected = np.trapezoid(dA * below, t) / np.trapezoid(dA, t)
    observed = np.mean(zfrac < 0.5)
    assert abs(observed - expected) <= 4 * np.sqrt(expected * (1 - expected) / 50_000)


# -- split ------------------------------------------------------------------------

def test_split_counts_and_union():
    ds = generate_primitives(["sphere", "cube", "cone"], per_class=250, points=64, seed=0)
    train, test = split(ds, 0.2, seed=1)
    np.testing.assert_array_equal(train.class_counts(), [200] * 3)
    np.testing.assert_array_equal(test.class_counts(), [50] * 3)
    assert train.split == "train" and test.split == "test"
    key = lambda s: (s[1], s[0].points.tobytes())
    assert sorted(map(key, train.samples + test.samples)) == sorted(map(key, ds.samples))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 30), min_size=2, max_size=5), st.floats(0.05, 0.95),
       st.integers(0, 1000))
def test_split_is_stratified_and_deterministic(sizes, fraction, seed):
    samples = [(PointCloud(np.full((1, 3), 0.1 * i)), c)
               for c, size in enumerate(sizes) for i in range(size)]
    ds = LabeledDataset(samples, [f"c{i}" for i in range(len(sizes))])
    train, test = split(ds, fraction, seed)
    again = split(ds, fraction, seed)
    assert train.digest() == again[0].digest() and test.digest() == again[1].digest()
    for c, size in enumerate(sizes):
        assert abs(test.class_counts()[c] - fraction * size) <= 1
        assert train.class_counts()[c] + test.class_counts()[c] == size


def test_split_fraction_bounds():
    ds = generate_primitives(["sphere", "cube"], per_class=2, points=64)
    for bad in (0.0, 1.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            split(ds, bad)


# -- on-disk trees ------------------------------------------------------------------

def write_tree(root, classes, files_per_class, split_name="train", binary=False):
    rng = np.random.default_rng(0)
    for name in classes:
        d = root / name / split_name
        d.mkdir(parents=True)
        for i in range(files_per_class):
            save_cloud(PointCloud(rng.normal(size=(20, 3)) * 3), d / f"s{i}.{'bin' if binary else 'txt'}",
                       binary=binary)


def test_load_empty_root(tmp_path):
    with pytest.raises(ValueError, match="no classes"):
        load_dataset(tmp_path, "train")


def test_load_two_classes(tmp_path):
    write_tree(tmp_path, ["chair", "airplane"], 3)
    ds = load_dataset(tmp_path, "train")
    assert len(ds) == 6
    assert ds.class_names == ["airplane", "chair"]
    assert set(ds.labels.tolist()) == {0, 1}
    for pc, _ in ds.samples:
        assert abs(pc.radii.max() - 1) <= 1e-12
    again = load_dataset(tmp_path, "train")
    assert again.digest() == ds.digest()


def test_load_binary_files(tmp_path):
    write_tree(tmp_path, ["a", "b"], 2, binary=True)
    assert len(load_dataset(tmp_path, "train")) == 4


def test_load_errors(tmp_path):
    write_tree(tmp_path, ["a", "b"], 2)
    with pytest.raises(FileNotFoundError, match="missing split"):
        load_dataset(tmp_path, "test")
    (tmp_path / "c" / "train").mkdir(parents=True)
    with pytest.raises(ValueError, match="no samples"):
        load_dataset(tmp_path, "train")
    (tmp_path / "c" / "train" / "x.txt").write_text("1 2 oops\n")
    with pytest.raises(ValueError):
        load_dataset(tmp_path, "train")
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path / "absent", "train")


def test_save_load_round_trip_and_manifest(tmp_path):
    ds = generate_primitives(["sphere", "cube"], per_class=5, points=128, seed=2)
    train, test = split(ds, 0.4, seed=0)
    for part in (train, test):
        save_dataset(part, tmp_path)
    back = load_dataset(tmp_path, "test")
    assert back.class_names == ["cube", "sphere"]
    np.testing.assert_array_equal(back.class_counts(), [2, 2])
    manifest = json.loads((tmp_path / "manifest_train.json").read_text())
    assert manifest["class_names"] == ["sphere", "cube"]
    assert manifest["counts"] == [3, 3]
    assert manifest["generation"]["seed"] == 2
    assert manifest["digest"] == train.digest()


def test_dataset_invariants():
    with pytest.raises(ValueError):
        LabeledDataset([(PointCloud(np.zeros((1, 3))), 2)], ["a", "b"])


def test_write_manifest_returns_dict(tmp_path):
    ds = generate_primitives(["cone", "torus"], per_class=1, points=64, seed=0)
    m = write_manifest(ds, tmp_path / "m.json")
    assert m["counts"] == [1, 1] and (tmp_path / "m.json").exists()


def test_primitive_catalogue():
    assert set(PRIMITIVES) == {"sphere", "cube", "cylinder", "cone", "torus", "pyramid",
                               "ellipsoid", "capsule"}
