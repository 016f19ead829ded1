"""
Spectral classifier over concentric-shell harmonic spectra.

Pipeline for one cloud::

    voxelize -> per-shell SHT -> zonal spectral conv (per shell kernels)
             -> PReLU on real and imaginary parts -> |coefficient| features
             -> dense(hidden) -> PReLU -> dense(classes)

A convolution layer multiplies every coefficient ``f_lm`` of every shell by
``sqrt(4 pi / (2l + 1)) * h_l`` with a learned zonal kernel ``h``; layers
after the first mix input channels.  With ``ift=True`` every convolution is
followed by a synthesis back to an ``ift_resolution``-sized grid, the PReLU
acts on the spatial maps and the flattened maps of the last layer are the
features.  ``features="f1"`` / ``"f2"`` skip the convolution and feed plain
magnitude / per-degree energy descriptors to the dense head.

Complex values are carried as separate real and imaginary arrays so that
every gradient is an ordinary real derivative.
"""
from __future__ import annotations

import csv
import hashlib
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numba
import numpy as np

from . import sht
from .geometry import PointCloud, add_gaussian_noise, make_rng, normalize_unit_ball, rotate_z
from .voxelizer import GridSpec, SphericalVoxelGrid, voxelize_batch

log = logging.getLogger(__name__)

FEATURE_KINDS = ("conv", "f1", "f2")
INPUT_POLICIES = ("drop", "renormalize", "clamp")

_CKPT_MAGIC = b"SHNN"
_CKPT_VERSION = 1


@dataclass(frozen=True)
class NetConfig:
    """Architecture of the classifier.

    ``hidden=0`` removes the fully connected layer so the features feed the
    classification layer directly.  ``ift_resolution=0`` means the smallest
    alias-free grid, ``2 * (degree + 1)``.
    """

    classes: int
    filters: int = 16
    shells: int = 7
    degree: int = 9
    resolution: int = 64
    hidden: int = 1024
    layers: int = 1
    ift: bool = False
    ift_resolution: int = 0
    features: str = "conv"
    grid_mode: str = "density"
    input_policy: str = "drop"

    def __post_init__(self):
        if self.classes < 2:
            raise ValueError("need at least two classes")
        if self.features not in FEATURE_KINDS:
            raise ValueError(f"features must be one of {FEATURE_KINDS}")
        if self.input_policy not in INPUT_POLICIES:
            raise ValueError(f"input_policy must be one of {INPUT_POLICIES}")
        if not 1 <= self.layers <= 4:
            raise ValueError("layers must be between 1 and 4")
        if self.resolution < 2 * (self.degree + 1):
            raise ValueError(f"resolution {self.resolution} too small for degree "
                             f"{self.degree}")
        if self.ift and self.features != "conv":
            raise ValueError("the inverse-transform path needs features='conv'")
        GridSpec(self.shells, self.resolution, self.grid_mode)

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.shells, self.resolution, self.grid_mode)

    @property
    def n_coeffs(self) -> int:
        return sht.n_coeffs(self.degree)

    @property
    def map_resolution(self) -> int:
        return self.ift_resolution or 2 * (self.degree + 1)

    @property
    def feature_dim(self) -> int:
        if self.features == "f1":
            return self.shells * self.n_coeffs
        if self.features == "f2":
            return self.shells * (self.degree + 1)
        per_map = self.map_resolution ** 2 if self.ift else self.n_coeffs
        return self.filters * self.shells * per_map


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    epochs: int = 48
    lr_start: float = 1e-3
    lr_end: float = 4e-5
    rotate: bool = True
    noise_sigma: float = 0.02
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.lr_start >= self.lr_end > 0:
            raise ValueError("need lr_start >= lr_end > 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")


@dataclass
class ModelParams:
    """Parameters plus Adam moments, keyed by tensor name in checkpoint order."""

    config: NetConfig
    tensors: dict
    moment1: dict = field(default_factory=dict)
    moment2: dict = field(default_factory=dict)
    step: int = 0

    def __post_init__(self):
        expected = param_shapes(self.config)
        if list(self.tensors) != list(expected):
            raise ValueError(f"tensor names {list(self.tensors)} do not match "
                             f"{list(expected)}")
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise ValueError(f"{name}: shape {self.tensors[name].shape} != {shape}")
        for moments in (self.moment1, self.moment2):
            if not moments:
                moments.update({k: np.zeros_like(v) for k, v in self.tensors.items()})

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype

    def copy(self) -> "ModelParams":
        dup = lambda d: {k: v.copy() for k, v in d.items()}
        return ModelParams(self.config, dup(self.tensors), dup(self.moment1),
                           dup(self.moment2), self.step)

    def digest(self) -> str:
        h = hashlib.sha256(repr(asdict(self.config)).encode())
        for v in self.tensors.values():
            h.update(np.ascontiguousarray(v).tobytes())
        return h.hexdigest()[:16]


def param_shapes(cfg: NetConfig) -> dict:
    shapes = {}
    if cfg.features == "conv":
        k_in = 1
        for i in range(cfg.layers):
            shapes[f"kernel{i}"] = (cfg.filters, k_in, cfg.shells, cfg.degree + 1)
            shapes[f"conv_slope{i}"] = (cfg.filters,)
            k_in = cfg.filters
    width = cfg.feature_dim
    if cfg.hidden:
        shapes["fc_w"] = (width, cfg.hidden)
        shapes["fc_b"] = (cfg.hidden,)
        shapes["fc_slope"] = (cfg.hidden,)
        width = cfg.hidden
    shapes["cls_w"] = (width, cfg.classes)
    shapes["cls_b"] = (cfg.classes,)
    return shapes


def init_params(cfg: NetConfig, seed: int = 0, dtype=np.float32) -> ModelParams:
    """Kernels ~ N(0, 1/(L+1)); dense weights ~ U(+-1/sqrt(fan_in)); PReLU 0.25."""
    rng = make_rng(seed, 0x1F)
    tensors = {}
    for name, shape in param_shapes(cfg).items():
        if name.startswith("kernel"):
            val = rng.normal(0.0, 1.0 / np.sqrt(cfg.degree + 1), size=shape)
        elif "slope" in name:
            val = np.full(shape, 0.25)
        elif name.endswith("_w"):
            bound = 1.0 / np.sqrt(shape[0])
            val = rng.uniform(-bound, bound, size=shape)
        else:
            val = np.zeros(shape)
        tensors[name] = val.astype(dtype)
    return ModelParams(cfg, tensors)


# -- input encoding -----------------------------------------------------------

def prepare_cloud(pc: PointCloud, policy: str = "drop") -> PointCloud:
    """Bring an (augmented) cloud into the unit ball before voxelization.

    ``"renormalize"`` re-centres and re-scales the whole cloud, which lets a
    handful of far outliers shrink the object; ``"drop"`` (default) and
    ``"clamp"`` keep the frame and let the voxelizer discard, or pin to the
    outer shell, whatever lies beyond radius 1.
    """
    if policy == "renormalize":
        return normalize_unit_ball(pc)
    return pc


def encode(inputs, cfg: NetConfig) -> np.ndarray:
    """Per-shell spectra ``(B, shells, n_coeffs)`` for a batch of inputs.

    Accepts a sequence of point clouds, a single cloud, a voxel grid, a real
    grid array ``(B, shells, n, n)`` or an already-computed complex spectrum
    array.
    """
    if isinstance(inputs, PointCloud):
        inputs = [inputs]
    if isinstance(inputs, SphericalVoxelGrid):
        inputs = inputs.values[None]
    if isinstance(inputs, np.ndarray):
        if np.iscomplexobj(inputs):
            if inputs.shape[1:] != (cfg.shells, cfg.n_coeffs):
                raise ValueError(f"spectra shape {inputs.shape[1:]} does not match config")
            return inputs
        if inputs.shape[1:] != cfg.grid.shape:
            raise ValueError(f"grid shape {inputs.shape[1:]} does not match {cfg.grid.shape}")
        return sht.forward(inputs, cfg.degree).coeffs
    outside = "error" if cfg.input_policy == "renormalize" else cfg.input_policy
    clouds = [prepare_cloud(pc, cfg.input_policy) for pc in inputs]
    grids = voxelize_batch(clouds, cfg.grid, outside=outside)
    return sht.forward(grids, cfg.degree).coeffs



# -- layers ---------------------------------------------------------------------

_MATRIX_CACHE: dict = {}


def _cached(key, build):
    if key not in _MATRIX_CACHE:
        arr = build()
        arr.flags.writeable = False
        _MATRIX_CACHE[key] = arr
    return _MATRIX_CACHE[key]


def _degree_expander(L: int, dtype) -> np.ndarray:
    """(L+1, ncoef) map taking a zonal kernel to per-coefficient multipliers."""
    def build():
        ls, _ = sht.degree_order(L)
        E = np.zeros((L + 1, len(ls)))
        E[ls, np.arange(len(ls))] = np.sqrt(4.0 * np.pi / (2 * ls + 1))
        return E.astype(dtype)
    return _cached(("expand", L, np.dtype(dtype).str), build)


def _synthesis(L: int, n: int, dtype) -> np.ndarray:
    return _cached(("syn", L, n, np.dtype(dtype).str),
                   lambda: sht.synthesis_matrix(L, n).astype(dtype))


def _analysis(L: int, n: int, dtype) -> np.ndarray:
    return _cached(("ana", L, n, np.dtype(dtype).str),
                   lambda: sht.analysis_matrix(L, n).astype(dtype))


def zonal_conv(spectra, kernels) -> np.ndarray:
    """Zonal spherical convolution in the harmonic domain.

    Parameters
    ----------
    spectra : complex array, shape ``(..., shells, ncoef)`` or
        ``(..., k_in, shells, ncoef)``
    kernels : real array, shape ``(k, shells, L+1)`` or ``(k, k_in, shells, L+1)``
        Zonal coefficients ``h_l`` per filter and shell.

    Returns
    -------
    complex array ``(..., k, shells, ncoef)`` with entries
    ``sum_i sqrt(4 pi / (2l+1)) f_{i,lm} h_{o,i,l}``.
    """
    spectra = np.asarray(spectra)
    kernels = np.asarray(kernels, dtype=np.float64)
    if kernels.ndim == 3:
        kernels = kernels[:, None]
        spectra = spectra[..., None, :, :]
    k, k_in, shells, Lp1 = kernels.shape
    if spectra.shape[-3:] != (k_in, shells, sht.n_coeffs(Lp1 - 1)):
        raise ValueError(f"spectra {spectra.shape} incompatible with kernels {kernels.shape}")
    mult = kernels @ _degree_expander(Lp1 - 1, np.float64)
    return np.einsum("...isp,oisp->...osp", spectra, mult)


def inverse_after_conv(convolved, n: int) -> np.ndarray:
    """Synthesize every convolved (filter, shell) spectrum on an n x n grid."""
    convolved = np.asarray(convolved)
    P = convolved.shape[-1]
    L = int(round((np.sqrt(8 * P + 1) - 3) / 2))
    return sht.inverse(sht.SHSpectrum(convolved, L), n).values


def magnitude_features(convolved) -> np.ndarray:
    """``|coefficient|`` flattened in (filter, shell, l, m) order per sample.

    A ``(k, shells, ncoef)`` input gives a vector; extra leading axes are
    kept as batch axes.
    """
    mag = np.abs(np.asarray(convolved))
    return mag.reshape(mag.shape[:-3] + (-1,))


def _prelu(x, a):
    return np.where(x > 0, x, a * x)


def _prelu_back(dy, x, a, channel_axes):
    neg = x <= 0
    dx = np.where(neg, a * dy, dy)
    da = np.where(neg, x * dy, 0).sum(axis=channel_axes)
    return dx, da


def _forward(params: ModelParams, spectra: np.ndarray, keep: bool = False):
    cfg, T, dt = params.config, params.tensors, params.dtype
    B = spectra.shape[0]
    cache = {}
    xr = np.ascontiguousarray(spectra.real, dtype=dt)
    xi = np.ascontiguousarray(spectra.imag, dtype=dt)

    if cfg.features == "f1":
        feats = np.sqrt(xr * xr + xi * xi).reshape(B, -1)
    elif cfg.features == "f2":
        feats = sht.descriptor_f2(sht.SHSpectrum(spectra, cfg.degree)).astype(dt)
    else:
        E = _degree_expander(cfg.degree, dt)
        xr, xi = xr[:, None], xi[:, None]
        conv_cache = []
        for i in range(cfg.layers):
            mult = T[f"kernel{i}"] @ E
            a = T[f"conv_slope{i}"][None, :, None, None]
            yr = np.einsum("bisp,oisp->bosp", xr, mult)
            yi = np.einsum("bisp,oisp->bosp", xi, mult)
            if cfg.ift:
                S = _synthesis(cfg.degree, cfg.map_resolution, dt)
                P = cfg.n_coeffs
                s = yr @ S[:P] + yi @ S[P:]
                z = _prelu(s, a)
                conv_cache.append((xr, xi, mult, s))
                if i < cfg.layers - 1:
                    back = z @ _analysis(cfg.degree, cfg.map_resolution, dt)
                    xr, xi = back[..., :P], back[..., P:]
                else:
                    feats = z.reshape(B, -1)
            else:
                conv_cache.append((xr, xi, mult, (yr, yi)))
                xr, xi = _prelu(yr, a), _prelu(yi, a)
        if not cfg.ift:
            mag = np.sqrt(xr * xr + xi * xi)
            cache["mag"] = (xr, xi, mag)
            feats = mag.reshape(B, -1)
        cache["conv"] = conv_cache

    cache["feats"] = feats
    if cfg.hidden:
        h = feats @ T["fc_w"] + T["fc_b"]
        act = _prelu(h, T["fc_slope"])
        cache["fc"] = h
    else:
        act = feats
    cache["act"] = act
    logits = act @ T["cls_w"] + T["cls_b"]
    return (logits, cache) if keep else logits


def _backward(params: ModelParams, cache: dict, dlogits: np.ndarray) -> dict:
    cfg, T, dt = params.config, params.tensors, params.dtype
    grads = {}
    act = cache["act"]
    grads["cls_w"] = act.T @ dlogits
    grads["cls_b"] = dlogits.sum(axis=0)
    dact = dlogits @ T["cls_w"].T
    if cfg.hidden:
        dh, grads["fc_slope"] = _prelu_back(dact, cache["fc"], T["fc_slope"], 0)
        grads["fc_w"] = cache["feats"].T @ dh
        grads["fc_b"] = dh.sum(axis=0)
        if cfg.features != "conv":
            return {name: grads[name].astype(dt) for name in T}
        dfeats = dh @ T["fc_w"].T
    else:
        if cfg.features != "conv":
            return {name: grads[name].astype(dt) for name in T}
        dfeats = dact

    E = _degree_expander(cfg.degree, dt)
    B = dfeats.shape[0]
    conv_cache = cache["conv"]
    if cfg.ift:
        P = cfg.n_coeffs
        S = _synthesis(cfg.degree, cfg.map_resolution, dt)
        A = _analysis(cfg.degree, cfg.map_resolution, dt)
        dz = dfeats.reshape(B, cfg.filters, cfg.shells, -1)
        for i in reversed(range(cfg.layers)):
            xr, xi, mult, s = conv_cache[i]
            a = T[f"conv_slope{i}"][None, :, None, None]
            ds, grads[f"conv_slope{i}"] = _prelu_back(dz, s, a, (0, 2, 3))
            dyr, dyi = ds @ S[:P].T, ds @ S[P:].T
            dmult = (np.einsum("bosp,bisp->oisp", dyr, xr)
                     + np.einsum("bosp,bisp->oisp", dyi, xi))
            grads[f"kernel{i}"] = dmult @ E.T
            if i > 0:
                dxr = np.einsum("bosp,oisp->bisp", dyr, mult)
                dxi = np.einsum("bosp,oisp->bisp", dyi, mult)
                dz = np.concatenate([dxr, dxi], axis=-1) @ A.T
    else:
        xr, xi, mag = cache["mag"]
        dmag = dfeats.reshape(mag.shape)
        with np.errstate(invalid="ignore", divide="ignore"):
            inv = np.where(mag > 0, dmag / mag, 0)
        dzr, dzi = inv * xr, inv * xi
        dead = mag == 0
        if dead.any():
            # |z| has no gradient at z = 0.  Linearize along the last layer's
            # kernels growing from zero instead: PReLU is positively
            # homogeneous, so z then points along PReLU(v), v = sum_i x_i,
            # and PReLU's branch is picked by the sign of v.
            vr, vi = (t.sum(axis=1, keepdims=True) for t in conv_cache[-1][:2])
            a = T[f"conv_slope{cfg.layers - 1}"][None, :, None, None]
            ur, ui = _prelu(vr, a), _prelu(vi, a)
            norm = np.sqrt(ur * ur + ui * ui)
            with np.errstate(invalid="ignore", divide="ignore"):
                scale = np.where(dead & (norm > 0), dmag / norm, 0)
            dzr = np.where(dead, scale * ur, dzr)
            dzi = np.where(dead, scale * ui, dzi)
            xr_last, xi_last, mult_last, (yr_last, yi_last) = conv_cache[-1]
            conv_cache = conv_cache[:-1] + [(xr_last, xi_last, mult_last,
                                             (np.where(dead, vr, yr_last),
                                              np.where(dead, vi, yi_last)))]
        for i in reversed(range(cfg.layers)):
            xr, xi, mult, (yr, yi) = conv_cache[i]
            a = T[f"conv_slope{i}"][None, :, None, None]
            dyr, da_r = _prelu_back(dzr, yr, a, (0, 2, 3))
            dyi, da_i = _prelu_back(dzi, yi, a, (0, 2, 3))
            grads[f"conv_slope{i}"] = da_r + da_i
            dmult = (np.einsum("bosp,bisp->oisp", dyr, xr)
                     + np.einsum("bosp,bisp->oisp", dyi, xi))
            grads[f"kernel{i}"] = dmult @ E.T
            if i > 0:
                dzr = np.einsum("bosp,oisp->bisp", dyr, mult)
                dzi = np.einsum("bosp,oisp->bisp", dyi, mult)
    return {name: grads[name].astype(dt) for name in T}


def forward_pass(inputs, params: ModelParams) -> np.ndarray:
    """Class logits ``(B, classes)`` for clouds, grids or spectra."""
    return _forward(params, encode(inputs, params.config))


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def loss_and_gradients(batch, params: ModelParams, return_logits: bool = False):
    """Mean softmax cross-entropy over ``batch = (inputs, labels)`` and its gradient.

    Returns ``(loss, grads)`` where ``grads`` maps every tensor name of
    ``params`` to an array of the same shape.
    """
    inputs, labels = batch
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise ValueError("empty batch")
    spectra = encode(inputs, params.config)
    logits, cache = _forward(params, spectra, keep=True)
    probs = softmax(logits)
    B = len(labels)
    loss = -np.mean(np.log(probs[np.arange(B), labels] + 1e-300))
    dlogits = probs
    dlogits[np.arange(B), labels] -= 1.0
    dlogits = (dlogits / B).astype(params.dtype)
    grads = _backward(params, cache, dlogits)
    if return_logits:
        return float(loss), grads, logits
    return float(loss), grads


# -- optimisation -----------------------------------------------------------------

@numba.njit(fastmath=True, cache=True)
def _adam_kernel(p, g, m, v, lr, b1, b2, eps, inv_c1, inv_c2):
    one = b1 - b1 + 1
    for i in range(p.size):
        gi = g[i]
        mi = b1 * m[i] + (one - b1) * gi
        vi = b2 * v[i] + (one - b2) * gi * gi
        m[i] = mi
        v[i] = vi
        p[i] -= lr * (mi * inv_c1) / (np.sqrt(vi * inv_c2) + eps)


def adam_step(params: ModelParams, grads: dict, lr: float, tcfg: TrainConfig) -> None:
    """One in-place Adam update (bias-corrected first and second moments)."""
    params.step += 1
    t = params.step
    for name, p in params.tensors.items():
        cast = p.dtype.type
        _adam_kernel(p.reshape(-1), np.ascontiguousarray(grads[name], dtype=p.dtype).reshape(-1),
                     params.moment1[name].reshape(-1), params.moment2[name].reshape(-1),
                     cast(lr), cast(tcfg.beta1), cast(tcfg.beta2), cast(tcfg.eps),
                     cast(1.0 / (1.0 - tcfg.beta1 ** t)), cast(1.0 / (1.0 - tcfg.beta2 ** t)))


def learning_rate(epoch: int, tcfg: TrainConfig) -> float:
    """Exponential decay from ``lr_start`` (first epoch) to ``lr_end`` (last)."""
    if tcfg.epochs == 1:
        return tcfg.lr_start
    frac = epoch / (tcfg.epochs - 1)
    return float(tcfg.lr_start * (tcfg.lr_end / tcfg.lr_start) ** frac)


def _training_view(pc: PointCloud, rng: np.random.Generator, tcfg: TrainConfig) -> PointCloud:
    if tcfg.rotate:
        pc = rotate_z(pc, rng.uniform(0.0, 2.0 * np.pi))
    if tcfg.noise_sigma > 0:
        pc = add_gaussian_noise(pc, tcfg.noise_sigma, int(rng.integers(2 ** 63)))
    return pc


def train(dataset, cfg: NetConfig, tcfg: TrainConfig = TrainConfig(),
          params: Optional[ModelParams] = None, dtype=np.float32):
    """Fit the classifier with mini-batch Adam and per-epoch lr decay.

    Every sample is randomly rotated about z and jittered on the fly.  The
    run is a deterministic function of ``tcfg.seed``.

    Returns
    -------
    params : ModelParams
    history : list of dict with keys ``epoch, lr, loss, train_acc``
    """
    samples = list(dataset.samples)
    if not samples:
        raise ValueError("cannot train on an empty dataset")
    if params is None:
        params = init_params(cfg, tcfg.seed, dtype)
    elif params.config != cfg:
        raise ValueError("initial parameters were built for a different config")
    n = len(samples)
    history = []
    for epoch in range(tcfg.epochs):
        lr = learning_rate(epoch, tcfg)
        order = make_rng(tcfg.seed, 1, epoch).permutation(n)
        total_loss, correct = 0.0, 0
        for b, start in enumerate(range(0, n, tcfg.batch_size)):
            idx = order[start:start + tcfg.batch_size]
            rng = make_rng(tcfg.seed, 2, epoch, b)
            clouds = [_training_view(samples[i][0], rng, tcfg) for i in idx]
            labels = np.array([samples[i][1] for i in idx])
            loss, grads, logits = loss_and_gradients((clouds, labels), params,
                                                     return_logits=True)
            adam_step(params, grads, lr, tcfg)
            total_loss += loss * len(idx)
            correct += int((logits.argmax(axis=1) == labels).sum())
        row = {"epoch": epoch, "lr": lr, "loss": total_loss / n, "train_acc": correct / n}
        log.info("epoch %d lr %.6g loss %.4f acc %.4f", epoch, lr, row["loss"], row["train_acc"])
        history.append(row)
    return params, history


def write_history(history, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "lr", "loss", "train_acc"])
        for row in history:
            writer.writerow([row["epoch"], f"{row['lr']:.8g}", f"{row['loss']:.6f}",
                             f"{row['train_acc']:.4f}"])


@dataclass
class EvalResult:
    accuracy: float
    confusion: np.ndarray    # rows: true class, columns: predicted class
    predictions: np.ndarray


def predict(params: ModelParams, clouds, batch_size: int = 64) -> np.ndarray:
    out = []
    for start in range(0, len(clouds), batch_size):
        out.append(forward_pass(clouds[start:start + batch_size], params).argmax(axis=1))
    return np.concatenate(out)


def evaluate(params: ModelParams, dataset, batch_size: int = 64) -> EvalResult:
    samples = list(dataset.samples)
    if not samples:
        raise ValueError("cannot evaluate on an empty dataset")
    clouds = [pc for pc, _ in samples]
    labels = np.array([y for _, y in samples])
    pred = predict(params, clouds, batch_size)
    C = params.config.classes
    confusion = np.zeros((C, C), dtype=np.int64)
    np.add.at(confusion, (labels, pred), 1)
    return EvalResult(float(np.mean(pred == labels)), confusion, pred)


# -- checkpoints ------------------------------------------------------------------
#
# Layout (little endian):
#   "SHNN", u16 version,
#   u32 filters, shells, degree, resolution, hidden, classes,
#   u32 layers, ift, ift_resolution, features code, grid-mode code,
#   u32 input-policy code, adam step,
#   float32 tensors in param_shapes() order, then first moments, then
#   second moments (same order).

_HEADER = struct.Struct("<4sH13I")


def _config_fields(cfg: NetConfig) -> tuple:
    return (cfg.filters, cfg.shells, cfg.degree, cfg.resolution, cfg.hidden, cfg.classes,
            cfg.layers, int(cfg.ift), cfg.ift_resolution, FEATURE_KINDS.index(cfg.features),
            ("density", "binary").index(cfg.grid_mode),
            INPUT_POLICIES.index(cfg.input_policy))


def save_checkpoint(params: ModelParams, path) -> None:
    """Write parameters and optimizer state; tensors are stored as float32."""
    parts = [_HEADER.pack(_CKPT_MAGIC, _CKPT_VERSION, *_config_fields(params.config),
                          params.step)]
    for group in (params.tensors, params.moment1, params.moment2):
        for name in param_shapes(params.config):
            parts.append(np.ascontiguousarray(group[name], dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path, expect: Optional[NetConfig] = None) -> ModelParams:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: truncated checkpoint header")
    magic, version, *fields = _HEADER.unpack_from(data)
    if magic != _CKPT_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}, not a checkpoint")
    if version != _CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    (k, c, L, n, hidden, classes, layers, ift, ift_res, feat, grid, policy, step) = fields
    try:
        cfg = NetConfig(classes=classes, filters=k, shells=c, degree=L, resolution=n,
                        hidden=hidden, layers=layers, ift=bool(ift), ift_resolution=ift_res,
                        features=FEATURE_KINDS[feat], grid_mode=("density", "binary")[grid],
                        input_policy=INPUT_POLICIES[policy])
    except (IndexError, ValueError) as exc:
        raise ValueError(f"{path}: corrupt checkpoint header ({exc})") from exc
    if expect is not None and expect != cfg:
        diff = {key: (getattr(cfg, key), getattr(expect, key))
                for key in asdict(cfg) if getattr(cfg, key) != getattr(expect, key)}
        raise ValueError(f"{path}: checkpoint shape mismatch (stored, expected): {diff}")
    shapes = param_shapes(cfg)
    sizes = [int(np.prod(s)) for s in shapes.values()]
    expected = _HEADER.size + 3 * 4 * sum(sizes)
    if len(data) != expected:
        raise ValueError(f"{path}: checkpoint has {len(data)} bytes, expected {expected} "
                         f"(truncated or corrupt)")
    flat = np.frombuffer(data, dtype="<f4", offset=_HEADER.size)
    groups, pos = [], 0
    for _ in range(3):
        group = {}
        for (name, shape), size in zip(shapes.items(), sizes):
            group[name] = flat[pos:pos + size].reshape(shape).astype(np.float32)
            pos += size
        groups.append(group)
    return ModelParams(cfg, groups[0], groups[1], groups[2], step)
