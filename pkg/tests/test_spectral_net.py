import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sphclass import sht
from sphclass import spectral_net as sn
from sphclass.datasets import generate_primitives
from sphclass.geometry import PointCloud, add_uniform_outliers
from sphclass.sht import SHSpectrum, forward, inverse, n_coeffs

from _oracles import (grid_angles, random_spectrum, spatial_zonal_convolution, synthesize_at,
                      tiny_net_gradient_errors)

TINY = dict(classes=3, filters=2, shells=2, degree=2, resolution=8, hidden=5)


def identity_kernel(k, c, L):
    l = np.arange(L + 1)
    return np.broadcast_to(np.sqrt((2 * l + 1) / (4 * np.pi)), (k, c, L + 1)).copy()


# -- config ---------------------------------------------------------------------

def test_config_defaults_and_validation():
    cfg = sn.NetConfig(classes=8)
    assert (cfg.filters, cfg.shells, cfg.degree, cfg.resolution, cfg.hidden) == (16, 7, 9, 64, 1024)
    assert cfg.feature_dim == 6160
    assert sn.NetConfig(classes=8, features="f1").feature_dim == 385
    assert sn.NetConfig(classes=8, features="f2").feature_dim == 70
    for bad in (dict(classes=1), dict(classes=3, layers=5), dict(classes=3, resolution=16),
                dict(classes=3, features="f3"), dict(classes=3, ift=True, features="f1"),
                dict(classes=3, input_policy="ignore")):
        with pytest.raises(ValueError):
            sn.NetConfig(**bad)


def test_train_config_defaults():
    t = sn.TrainConfig()
    assert (t.batch_size, t.epochs, t.lr_start, t.lr_end) == (16, 48, 1e-3, 4e-5)
    with pytest.raises(ValueError):
        sn.TrainConfig(lr_start=1e-5, lr_end=1e-3)
    with pytest.raises(ValueError):
        sn.TrainConfig(lr_end=0.0)


def test_learning_rate_endpoints():
    t = sn.TrainConfig()
    assert sn.learning_rate(0, t) == pytest.approx(0.001, abs=1e-15)
    assert abs(sn.learning_rate(47, t) - 0.00004) <= 1e-9
    rates = [sn.learning_rate(e, t) for e in range(48)]
    ratios = np.array(rates[1:]) / np.array(rates[:-1])
    np.testing.assert_allclose(ratios, ratios[0], rtol=1e-12)


def test_param_shapes_and_init():
    cfg = sn.NetConfig(classes=5, layers=2)
    shapes = sn.param_shapes(cfg)
    assert list(shapes) == ["kernel0", "conv_slope0", "kernel1", "conv_slope1",
                            "fc_w", "fc_b", "fc_slope", "cls_w", "cls_b"]
    assert shapes["kernel0"] == (16, 1, 7, 10) and shapes["kernel1"] == (16, 16, 7, 10)
    assert shapes["fc_w"] == (6160, 1024) and shapes["cls_w"] == (1024, 5)
    p = sn.init_params(cfg, seed=3)
    assert np.all(p.tensors["conv_slope0"] == 0.25)
    assert abs(p.tensors["kernel0"].std() - 1 / np.sqrt(10)) < 0.02
    assert np.abs(p.tensors["fc_w"]).max() <= 1 / np.sqrt(6160)
    assert not p.tensors["fc_b"].any()
    assert "fc_w" not in sn.param_shapes(sn.NetConfig(classes=5, hidden=0))


# -- zonal convolution ----------------------------------------------------------

def test_identity_kernel_returns_input():
    rng = np.random.default_rng(0)
    s = random_spectrum(9, rng, batch=(7,))
    out = sn.zonal_conv(s, identity_kernel(3, 7, 9))
    assert out.shape == (3, 7, 55)
    for o in out:
        np.testing.assert_allclose(o, s, rtol=1e-15, atol=1e-15)


def test_l0_term():
    rng = np.random.default_rng(1)
    s = random_spectrum(4, rng, batch=(2,))
    h = rng.normal(size=(1, 2, 5))
    out = sn.zonal_conv(s, h)
    np.testing.assert_allclose(out[0, :, 0], np.sqrt(4 * np.pi) * s[:, 0] * h[0, :, 0])


def test_zonal_conv_shape_mismatch():
    with pytest.raises(ValueError):
        sn.zonal_conv(np.zeros((7, 55), complex), np.zeros((2, 7, 9)))
    with pytest.raises(ValueError):
        sn.zonal_conv(np.zeros((6, 55), complex), np.zeros((2, 7, 10)))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-5, 5), st.floats(-5, 5))
def test_zonal_conv_linearity(seed, a, b):
    rng = np.random.default_rng(seed)
    s1, s2 = random_spectrum(3, rng, batch=(2,)), random_spectrum(3, rng, batch=(2,))
    h = rng.normal(size=(4, 2, 4))
    lhs = sn.zonal_conv(a * s1 + b * s2, h)
    rhs = a * sn.zonal_conv(s1, h) + b * sn.zonal_conv(s2, h)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("seed", range(4))
def test_convolution_theorem_small_grid(seed):
    rng = np.random.default_rng(seed)
    n, L = 16, 4
    c = random_spectrum(L, rng)
    h = rng.normal(size=L + 1)
    TH, PH = grid_angles(n)
    f = synthesize_at(c, L, TH, PH)
    spectral = sn.inverse_after_conv(sn.zonal_conv(forward(f, L).coeffs[None], h[None, None]),
                                     n)[0, 0]
    brute = spatial_zonal_convolution(f, h, n, L).reshape(n, n)
    assert np.abs(spectral - brute).max() <= 1e-5


def test_inverse_after_conv_identity_and_zero():
    rng = np.random.default_rng(2)
    L, n = 9, 20
    c = random_spectrum(L, rng, batch=(3,))
    signals = inverse(SHSpectrum(c, L), n).values
    maps = sn.inverse_after_conv(sn.zonal_conv(c, identity_kernel(2, 3, L)), n)
    assert maps.shape == (2, 3, n, n)
    assert np.abs(maps - signals[None]).max() <= 1e-10
    zero = sn.inverse_after_conv(sn.zonal_conv(c, np.zeros((2, 3, L + 1))), n)
    assert not zero.any()


# -- magnitude features -----------------------------------------------------------

def test_magnitude_features():
    assert not sn.magnitude_features(np.zeros((16, 7, 55), complex)).any()
    assert sn.magnitude_features(np.zeros((16, 7, 55), complex)).shape == (6160,)
    rng = np.random.default_rng(0)
    x = random_spectrum(3, rng, batch=(2, 3))
    np.testing.assert_allclose(sn.magnitude_features(x * np.exp(0.7j)), sn.magnitude_features(x),
                               rtol=1e-14)


def test_logits_invariant_to_grid_rotation_without_prelu():
    cfg = sn.NetConfig(classes=3, filters=3, shells=2, degree=4, resolution=16, hidden=0)
    p = sn.init_params(cfg, 1, dtype=np.float64)
    p.tensors["conv_slope0"][:] = 1.0
    grid = np.random.default_rng(0).poisson(1.0, size=(1, 2, 16, 16)).astype(float)
    a = sn.forward_pass(grid, p)
    b = sn.forward_pass(np.roll(grid, 5, axis=-1), p)
    np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)


# -- forward pass / loss ----------------------------------------------------------

def small_clouds(count=4, seed=0):
    ds = generate_primitives(["sphere", "cube"], per_class=count // 2, points=256, seed=seed)
    return [pc for pc, _ in ds.samples], np.array([y for _, y in ds.samples])


def test_forward_pass_shapes_softmax_and_determinism():
    cfg = sn.NetConfig(classes=4, filters=2, shells=3, degree=4, resolution=16, hidden=8)
    p = sn.init_params(cfg, 0)
    clouds, _ = small_clouds()
    logits = sn.forward_pass(clouds, p)
    assert logits.shape == (4, 4)
    np.testing.assert_allclose(sn.softmax(logits).sum(axis=1), 1.0, atol=1e-12)
    assert sn.forward_pass(clouds, p).tobytes() == logits.tobytes()
    single = sn.forward_pass(clouds[0], p)
    np.testing.assert_allclose(single[0], logits[0], rtol=1e-5, atol=1e-6)


def test_encode_accepts_every_input_kind():
    cfg = sn.NetConfig(classes=2, filters=2, shells=3, degree=4, resolution=16, hidden=4)
    clouds, _ = small_clouds()
    spectra = sn.encode(clouds, cfg)
    assert spectra.shape == (4, 3, n_coeffs(4))
    from sphclass.voxelizer import voxelize_batch
    grids = voxelize_batch(clouds, cfg.grid)
    np.testing.assert_allclose(sn.encode(grids, cfg), spectra)
    assert sn.encode(spectra, cfg) is spectra
    with pytest.raises(ValueError):
        sn.encode(np.zeros((1, 2, 16, 16)), cfg)


def test_input_policies_handle_outliers():
    from sphclass.geometry import normalize_unit_ball
    from sphclass.voxelizer import voxelize
    pc = add_uniform_outliers(small_clouds()[0][0], 0.5, 1)
    assert pc.radii.max() > 1
    kw = dict(classes=2, filters=2, shells=3, degree=4, resolution=16, hidden=4)
    for policy, expected in (("drop", voxelize(pc, sn.NetConfig(**kw).grid, outside="drop")),
                             ("clamp", voxelize(pc, sn.NetConfig(**kw).grid, outside="clamp")),
                             ("renormalize", voxelize(normalize_unit_ball(pc),
                                                      sn.NetConfig(**kw).grid))):
        cfg = sn.NetConfig(**kw, input_policy=policy)
        np.testing.assert_allclose(sn.encode([pc], cfg)[0], forward(expected.values, 4).coeffs,
                                   atol=1e-12)
    assert sn.prepare_cloud(pc, "drop") is pc


def test_uniform_logits_loss_is_log_c():
    cfg = sn.NetConfig(**TINY)
    p = sn.init_params(cfg, 0, dtype=np.float64)
    p.tensors["cls_w"][:] = 0.0
    grids = np.ones((2, 2, 8, 8))
    loss, _ = sn.loss_and_gradients((grids, [0, 2]), p)
    assert loss == pytest.approx(np.log(3), abs=1e-12)
    with pytest.raises(ValueError):
        sn.loss_and_gradients((grids[:0], []), p)


@pytest.mark.parametrize("overrides", [
    {}, {"layers": 2}, {"ift": True}, {"ift": True, "layers": 2}, {"hidden": 0},
    {"features": "f1"}, {"features": "f2"}, {"ift": True, "ift_resolution": 8},
])
def test_gradients_match_finite_differences(overrides):
    errors = tiny_net_gradient_errors(**overrides)
    assert max(errors.values()) <= 1e-4, errors


@pytest.mark.parametrize("layers", [1, 2])
def test_zero_kernel_model_still_learns_kernels(layers):
    cfg = sn.NetConfig(**{**TINY, "layers": layers})
    p = sn.init_params(cfg, 0, dtype=np.float64)
    last = f"kernel{layers - 1}"
    p.tensors[last][:] = 0.0
    # keep the hidden PReLU off its kink so only the magnitude is non-smooth
    p.tensors["fc_b"][:] = np.random.default_rng(1).normal(size=p.tensors["fc_b"].shape)
    grids = np.random.default_rng(0).poisson(2.0, size=(4, 2, 8, 8)).astype(float)
    _, g = sn.loss_and_gradients((grids, [0, 1, 2, 0]), p)
    assert np.abs(g[last]).max() > 1e-6
    # it is the one-sided derivative for kernels growing from zero
    direction = np.ones_like(p.tensors[last])
    t = 1e-7
    up = p.copy()
    up.tensors[last][:] = t * direction
    base_loss = sn.loss_and_gradients((grids, [0, 1, 2, 0]), p)[0]
    slope = (sn.loss_and_gradients((grids, [0, 1, 2, 0]), up)[0] - base_loss) / t
    assert np.sum(g[last] * direction) == pytest.approx(slope, rel=1e-4)


# -- training / optimizer ---------------------------------------------------------

def test_adam_step_matches_reference():
    cfg = sn.NetConfig(**TINY)
    p = sn.init_params(cfg, 0, dtype=np.float64)
    ref = p.copy()
    tcfg = sn.TrainConfig()
    rng = np.random.default_rng(0)
    grads = {k: rng.normal(size=v.shape) for k, v in p.tensors.items()}
    for step in (1, 2):
        sn.adam_step(p, grads, 1e-3, tcfg)
        for k in ref.tensors:
            m = ref.moment1[k] = 0.9 * ref.moment1[k] + 0.1 * grads[k]
            v = ref.moment2[k] = 0.999 * ref.moment2[k] + 0.001 * grads[k] ** 2
            ref.tensors[k] = ref.tensors[k] - 1e-3 * (m / (1 - 0.9 ** step)) / (
                np.sqrt(v / (1 - 0.999 ** step)) + 1e-8)
    for k in ref.tensors:
        np.testing.assert_allclose(p.tensors[k], ref.tensors[k], rtol=1e-10, atol=1e-14)
    assert p.step == 2


def test_toy_problem_reaches_full_train_accuracy():
    ds = generate_primitives(["sphere", "cube"], per_class=10, points=512, seed=4)
    cfg = sn.NetConfig(classes=2, filters=4, shells=4, degree=6, resolution=16, hidden=32)
    _, history = sn.train(ds, cfg, sn.TrainConfig(epochs=20, batch_size=4, seed=1))
    assert max(h["train_acc"] for h in history) == 1.0
    assert len(history) == 20 and history[0]["lr"] == pytest.approx(1e-3)


def test_training_is_deterministic(tmp_path):
    ds = generate_primitives(["sphere", "cone"], per_class=4, points=256, seed=2)
    cfg = sn.NetConfig(classes=2, filters=2, shells=3, degree=4, resolution=16, hidden=8)
    tcfg = sn.TrainConfig(epochs=2, batch_size=3, seed=9)
    for i in range(2):
        params, history = sn.train(ds, cfg, tcfg)
        sn.save_checkpoint(params, tmp_path / f"m{i}.shnn")
        sn.write_history(history, tmp_path / f"h{i}.csv")
    assert (tmp_path / "m0.shnn").read_bytes() == (tmp_path / "m1.shnn").read_bytes()
    assert (tmp_path / "h0.csv").read_text() == (tmp_path / "h1.csv").read_text()
    assert (tmp_path / "h0.csv").read_text().splitlines()[0] == "epoch,lr,loss,train_acc"


def test_train_rejects_empty_and_mismatched():
    cfg = sn.NetConfig(**TINY)
    empty = generate_primitives(["sphere"], per_class=1, points=64, seed=0)
    empty.samples = []
    with pytest.raises(ValueError):
        sn.train(empty, cfg)
    ds = generate_primitives(["sphere", "cube", "cone"], per_class=1, points=64, seed=0)
    other = sn.init_params(sn.NetConfig(**{**TINY, "filters": 3}))
    with pytest.raises(ValueError):
        sn.train(ds, cfg, params=other)


# -- evaluation -------------------------------------------------------------------

class _Fixed:
    """Dataset stand-in whose labels a model is rigged to predict."""

    def __init__(self, samples):
        self.samples = samples


def test_evaluate_perfect_and_confusion():
    clouds, labels = small_clouds(6, seed=3)
    cfg = sn.NetConfig(classes=2, filters=2, shells=3, degree=4, resolution=16, hidden=0)
    p = sn.init_params(cfg, 0)
    pred = sn.predict(p, clouds)
    res = sn.evaluate(p, _Fixed(list(zip(clouds, pred))))
    assert res.accuracy == 1.0
    res = sn.evaluate(p, _Fixed(list(zip(clouds, labels))))
    np.testing.assert_array_equal(res.confusion.sum(axis=1), np.bincount(labels, minlength=2))
    assert res.accuracy == pytest.approx(np.mean(pred == labels))
    with pytest.raises(ValueError):
        sn.evaluate(p, _Fixed([]))


def test_random_predictor_is_near_chance():
    rng = np.random.default_rng(0)
    cfg = sn.NetConfig(classes=40, filters=2, shells=2, degree=2, resolution=8, hidden=0)
    p = sn.init_params(cfg, 0)
    p.tensors["cls_w"][:] = 0
    p.tensors["cls_b"][:] = rng.normal(size=40)       # constant prediction
    pts = rng.uniform(-0.5, 0.5, size=(800, 64, 3))
    samples = [(PointCloud(x), int(y)) for x, y in zip(pts, rng.integers(0, 40, 800))]
    acc = sn.evaluate(p, _Fixed(samples)).accuracy
    assert abs(acc - 0.025) <= 4 * np.sqrt(0.025 * 0.975 / 800)


# -- checkpoints ------------------------------------------------------------------

@pytest.mark.parametrize("overrides", [{}, {"ift": True, "layers": 2}, {"hidden": 0},
                                       {"features": "f2", "grid_mode": "binary"}])
def test_checkpoint_round_trip(tmp_path, overrides):
    cfg = sn.NetConfig(**{**TINY, **overrides})
    p = sn.init_params(cfg, 5)
    rng = np.random.default_rng(0)
    sn.adam_step(p, {k: rng.normal(size=v.shape) for k, v in p.tensors.items()}, 1e-3,
                 sn.TrainConfig())
    sn.save_checkpoint(p, tmp_path / "m.shnn")
    back = sn.load_checkpoint(tmp_path / "m.shnn", expect=cfg)
    assert back.config == cfg and back.step == 1
    for group in ("tensors", "moment1", "moment2"):
        for k, v in getattr(p, group).items():
            assert getattr(back, group)[k].tobytes() == v.tobytes()
    assert (tmp_path / "m.shnn").read_bytes()[:4] == b"SHNN"


def test_checkpoint_errors(tmp_path):
    cfg = sn.NetConfig(**TINY)
    sn.save_checkpoint(sn.init_params(cfg), tmp_path / "m.shnn")
    data = (tmp_path / "m.shnn").read_bytes()
    (tmp_path / "t.shnn").write_bytes(data[:-3])
    with pytest.raises(ValueError, match="truncated"):
        sn.load_checkpoint(tmp_path / "t.shnn")
    (tmp_path / "h.shnn").write_bytes(data[:10])
    with pytest.raises(ValueError, match="truncated"):
        sn.load_checkpoint(tmp_path / "h.shnn")
    (tmp_path / "b.shnn").write_bytes(b"XXXX" + data[4:])
    with pytest.raises(ValueError, match="magic"):
        sn.load_checkpoint(tmp_path / "b.shnn")
    (tmp_path / "v.shnn").write_bytes(data[:4] + b"\x09\x00" + data[6:])
    with pytest.raises(ValueError, match="version"):
        sn.load_checkpoint(tmp_path / "v.shnn")
    with pytest.raises(ValueError, match="shape mismatch"):
        sn.load_checkpoint(tmp_path / "m.shnn", expect=sn.NetConfig(**{**TINY, "degree": 3}))


def test_model_params_shape_validation():
    cfg = sn.NetConfig(**TINY)
    p = sn.init_params(cfg)
    bad = dict(p.tensors)
    bad["cls_b"] = np.zeros(4, np.float32)
    with pytest.raises(ValueError):
        sn.ModelParams(cfg, bad)
