"""
Robustness experiments at desk scale.

* :func:`run_sweep` -- accuracy of one trained model as a corruption level
  grows (scattered outliers, noise, dropout, clustered outliers).
* :func:`run_descriptor_comparison` -- plain dense classifiers on binary+F1,
  density+F1 and density+F2 descriptors under the four standard conditions.
* :func:`run_ablations` -- architecture variants (inverse transform after the
  convolution, no hidden layer, shell count, layer count).
* :func:`run_ift_signal_analysis` -- how far one corrupted cloud moves the
  convolution output in the harmonic domain versus on the grid.

Every corrupted test set is a fresh copy; clouds are passed through the
model's input policy before voxelization (by default, points that the
corruption pushed outside the unit ball are discarded).
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import geometry as geo
from . import spectral_net as sn
from .datasets import LabeledDataset

SWEEP_AXES = ("outlier_fraction", "noise_sigma", "dropout_fraction", "clustered_outliers")

# (name, axis, level) in the order used by every comparison table
STANDARD_CONDITIONS = (
    ("clean", "outlier_fraction", 0.0),
    ("dropout_80", "dropout_fraction", 0.8),
    ("noise_0.10", "noise_sigma", 0.10),
    ("outliers_50", "outlier_fraction", 0.5),
)

# accuracies reported on ModelNet40, kept in CSV metadata for comparison
MODELNET40_DESCRIPTORS = {  # clean / 80% dropout / noise 0.10 / 50% outliers
    "binary+F1": (0.79, 0.34, 0.24, 0.14),
    "density+F1": (0.78, 0.75, 0.37, 0.50),
    "density+F2": (0.68, 0.68, 0.30, 0.24),
}
MODELNET40_CLUSTERED = {"spectral": {"10%/10p/N(0.04)": 0.81, "10%/10p/N(0.06)": 0.81,
                                     "20%/20p/N(0.04)": 0.75}}
MODELNET40_ABLATIONS = {
    "spectral": (0.82, 0.72, 0.62, 0.74),
    "ift": (0.78, 0.71, 0.45, 0.58),
    "no_fc": (0.75, 0.65, 0.54, 0.46),
}
CLUSTERED_LEVELS = ((0.10, 10, 0.04), (0.10, 10, 0.06), (0.20, 20, 0.04))


@dataclass
class SweepSpec:
    axis: str
    levels: list
    trials: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.axis not in SWEEP_AXES:
            raise ValueError(f"axis must be one of {SWEEP_AXES}")
        if not self.levels:
            raise ValueError("levels must not be empty")
        keys = [tuple(lv) if isinstance(lv, (tuple, list)) else (lv,) for lv in self.levels]
        if keys != sorted(keys):
            raise ValueError("levels must be sorted ascending")
        if self.axis == "clustered_outliers" and any(len(k) != 3 for k in keys):
            raise ValueError("clustered levels are (fraction, cluster_size, sigma) triples")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")


@dataclass
class ResultTable:
    columns: list
    rows: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def column(self, name) -> list:
        return [row[name] for row in self.rows]

    def lookup(self, **match) -> dict:
        hits = [r for r in self.rows if all(r.get(k) == v for k, v in match.items())]
        if len(hits) != 1:
            raise KeyError(f"{len(hits)} rows match {match}")
        return hits[0]


def _fmt(name, value):
    if isinstance(value, float):
        if name.startswith("accuracy"):
            return f"{value:.4f}"
        return f"{value:.6g}"
    return str(value)


def emit_csv(table: ResultTable, path) -> None:
    """UTF-8 CSV: ``# key: json`` metadata lines, header, rows."""
    buf = io.StringIO()
    for key in sorted(table.meta):
        buf.write(f"# {key}: {json.dumps(table.meta[key], sort_keys=True)}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(table.columns)
    for row in table.rows:
        writer.writerow([_fmt(c, row[c]) for c in table.columns])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_csv(path) -> ResultTable:
    meta, body = {}, []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("# "):
            key, _, val = line[2:].partition(": ")
            meta[key] = json.loads(val)
        else:
            body.append(line)
    reader = csv.reader(body)
    columns = next(reader)
    rows = []
    for rec in reader:
        row = {}
        for c, v in zip(columns, rec):
            try:
                row[c] = int(v)
            except ValueError:
                try:
                    row[c] = float(v)
                except ValueError:
                    row[c] = v
        rows.append(row)
    return ResultTable(columns, rows, meta)


# -- corruption ---------------------------------------------------------------------

def _corruptor(axis: str, level):
    if axis == "outlier_fraction":
        return lambda pc, seed: geo.add_uniform_outliers(pc, level, seed)
    if axis == "noise_sigma":
        return lambda pc, seed: geo.add_gaussian_noise(pc, level, seed)
    if axis == "dropout_fraction":
        return lambda pc, seed: geo.random_dropout(pc, level, seed)
    frac, size, sigma = level
    return lambda pc, seed: geo.add_clustered_outliers(pc, frac, int(size), sigma, seed)


def corrupt(dataset: LabeledDataset, axis: str, level, seed: int, key=()) -> LabeledDataset:
    """Corrupted copy of ``dataset``; sample ``i`` uses stream (seed, *key, i)."""
    fn = _corruptor(axis, level)
    return dataset.map(lambda i, pc: fn(pc, np.random.SeedSequence(seed, spawn_key=(*key, i))))


def _level_label(level) -> str:
    if isinstance(level, (tuple, list)):
        frac, size, sigma = level
        return f"{frac:g}/{int(size)}p/N({sigma:g})"
    return f"{level:g}"


def _accuracy_stats(params, test_set, axis, level, trials, seed, key):
    accs = [sn.evaluate(params, corrupt(test_set, axis, level, seed, (*key, t))).accuracy
            for t in range(trials)]
    return float(np.mean(accs)), float(np.std(accs)), accs


def run_sweep(params: sn.ModelParams, test_set: LabeledDataset, spec: SweepSpec) -> ResultTable:
    """Accuracy mean/std over ``spec.trials`` corruption draws per level."""
    table = ResultTable(["axis", "level", "accuracy_mean", "accuracy_std", "trials"])
    for li, level in enumerate(spec.levels):
        mean, std, _ = _accuracy_stats(params, test_set, spec.axis, level, spec.trials,
                                       spec.seed, (li,))
        table.rows.append({"axis": spec.axis, "level": _level_label(level),
                           "accuracy_mean": mean, "accuracy_std": std,
                           "trials": spec.trials})
    table.meta = {"experiment": f"sweep_{spec.axis}", "model": params.digest(),
                  "model_config": asdict(params.config), "dataset": test_set.digest(),
                  "seed": spec.seed, "levels": [list(l) if isinstance(l, (tuple, list)) else l
                                                for l in spec.levels]}
    if spec.axis == "clustered_outliers":
        table.meta["modelnet40_reference"] = MODELNET40_CLUSTERED
    return table


def _condition_rows(name, params, test_set, trials, seed, table):
    for ci, (cond, axis, level) in enumerate(STANDARD_CONDITIONS):
        mean, std, _ = _accuracy_stats(params, test_set, axis, level, trials, seed, (ci,))
        table.rows.append({"method": name, "condition": cond, "accuracy_mean": mean,
                           "accuracy_std": std, "trials": trials})


def _config_digest(cfg: sn.NetConfig, tcfg: sn.TrainConfig) -> str:
    blob = json.dumps([asdict(cfg), asdict(tcfg)], sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


DESCRIPTOR_METHODS = {
    "binary+F1": {"features": "f1", "grid_mode": "binary"},
    "density+F1": {"features": "f1", "grid_mode": "density"},
    "density+F2": {"features": "f2", "grid_mode": "density"},
}


def run_descriptor_comparison(train_set: LabeledDataset, test_set: LabeledDataset,
                              base: Optional[sn.NetConfig] = None,
                              tcfg: sn.TrainConfig = sn.TrainConfig(),
                              trials: int = 3, seed: int = 0,
                              return_models: bool = False):
    """Dense classifiers on raw descriptors (no spectral convolution)."""
    base = base or sn.NetConfig(classes=len(train_set.class_names))
    table = ResultTable(["method", "condition", "accuracy_mean", "accuracy_std", "trials"])
    models, configs = {}, {}
    for name, overrides in DESCRIPTOR_METHODS.items():
        cfg = replace(base, ift=False, layers=1, **overrides)
        params, _ = sn.train(train_set, cfg, tcfg)
        _condition_rows(name, params, test_set, trials, seed, table)
        models[name] = params
        configs[name] = _config_digest(cfg, tcfg)
    table.meta = {"experiment": "descriptor_comparison", "train_dataset": train_set.digest(),
                  "test_dataset": test_set.digest(), "configs": configs, "seed": seed,
                  "conditions": [c for c, _, _ in STANDARD_CONDITIONS],
                  "modelnet40_reference": MODELNET40_DESCRIPTORS,
                  "note": "binary occupancy is paired with the F1 descriptor"}
    return (table, models) if return_models else table


ABLATIONS = ("ift", "no_fc", "shell_count", "layer_count")


def ablation_variants(which: Sequence[str], base: sn.NetConfig) -> dict:
    variants = {"spectral": base}
    for w in which:
        if w not in ABLATIONS:
            raise ValueError(f"unknown ablation {w!r}; choose from {ABLATIONS}")
        if w == "ift":
            variants["ift"] = replace(base, ift=True)
        elif w == "no_fc":
            variants["no_fc"] = replace(base, hidden=0)
        elif w == "shell_count":
            for c in (4, 5, 7, 10):
                variants[f"shells_{c}"] = replace(base, shells=c)
        else:
            for n_layers in (1, 2, 3, 4):
                variants[f"layers_{n_layers}"] = replace(base, layers=n_layers)
    return variants


def run_ablations(train_set: LabeledDataset, test_set: LabeledDataset, which: Sequence[str],
                  base: Optional[sn.NetConfig] = None,
                  tcfg: sn.TrainConfig = sn.TrainConfig(), trials: int = 3, seed: int = 0,
                  return_models: bool = False):
    """Train every variant with the same seeds and evaluate the standard conditions.

    Variants with identical configurations (for example ``spectral`` and
    ``shells_7``) are trained once.
    """
    base = base or sn.NetConfig(classes=len(train_set.class_names))
    table = ResultTable(["method", "condition", "accuracy_mean", "accuracy_std", "trials"])
    trained, models, configs = {}, {}, {}
    for name, cfg in ablation_variants(which, base).items():
        if cfg not in trained:
            trained[cfg] = sn.train(train_set, cfg, tcfg)[0]
        params = trained[cfg]
        _condition_rows(name, params, test_set, trials, seed, table)
        models[name] = params
        configs[name] = _config_digest(cfg, tcfg)
    table.meta = {"experiment": "ablations", "which": list(which),
                  "train_dataset": train_set.digest(), "test_dataset": test_set.digest(),
                  "configs": configs, "seed": seed,
                  "conditions": [c for c, _, _ in STANDARD_CONDITIONS],
                  "modelnet40_reference": MODELNET40_ABLATIONS}
    return (table, models) if return_models else table


# -- inverse-transform error analysis ---------------------------------------------------

@dataclass
class SignalDifferenceReport:
    spectral_diff: np.ndarray    # |conv(clean) - conv(outlier)| per coefficient
    ift_diff: np.ndarray         # |synthesised difference| per grid cell
    bin_edges: np.ndarray
    spectral_hist: np.ndarray
    ift_hist: np.ndarray

    @staticmethod
    def _stats(d):
        return float(d.max(initial=0.0)), float(np.sqrt(np.mean(d ** 2)))

    @property
    def spectral_max(self):
        return self._stats(self.spectral_diff)[0]

    @property
    def spectral_rms(self):
        return self._stats(self.spectral_diff)[1]

    @property
    def ift_max(self):
        return self._stats(self.ift_diff)[0]

    @property
    def ift_rms(self):
        return self._stats(self.ift_diff)[1]

    def summary_table(self, meta=None) -> ResultTable:
        rows = [{"path": "spectral", "max": self.spectral_max, "rms": self.spectral_rms},
                {"path": "ift", "max": self.ift_max, "rms": self.ift_rms}]
        return ResultTable(["path", "max", "rms"], rows, dict(meta or {}))

    def histogram_table(self, meta=None) -> ResultTable:
        rows = [{"bin_lo": float(lo), "bin_hi": float(hi), "count_spectral": int(a),
                 "count_ift": int(b)}
                for lo, hi, a, b in zip(self.bin_edges[:-1], self.bin_edges[1:],
                                        self.spectral_hist, self.ift_hist)]
        return ResultTable(["bin_lo", "bin_hi", "count_spectral", "count_ift"], rows,
                           dict(meta or {}))


def run_ift_signal_analysis(pc: geo.PointCloud, params: sn.ModelParams,
                            outlier_fraction: float = 0.5, seed: int = 0,
                            bin_width: Optional[float] = None, bins: int = 40,
                            twin: Optional[geo.PointCloud] = None) -> SignalDifferenceReport:
    """Clean-versus-corrupted change of the first convolution layer's output.

    The spectral path compares coefficients directly; the IFT path first
    synthesises every (filter, shell) output on the model's voxel grid.
    Both histograms use the same bin edges (width ``bin_width``, or the
    common range split into ``bins`` bins).
    """
    cfg = params.config
    if cfg.features != "conv":
        raise ValueError("signal analysis needs a convolutional model")
    if twin is None:
        twin = geo.add_uniform_outliers(pc, outlier_fraction, seed)
    spectra = sn.encode([pc, twin], cfg)
    kernels = params.tensors["kernel0"].astype(np.float64)
    conv = sn.zonal_conv(spectra[:, None], kernels)          # (2, k, c, ncoef)
    spectral_diff = np.abs(conv[0] - conv[1]).ravel()
    maps = sn.inverse_after_conv(conv, cfg.resolution)
    ift_diff = np.abs(maps[0] - maps[1]).ravel()
    top = max(spectral_diff.max(initial=0.0), ift_diff.max(initial=0.0))
    if bin_width is not None:
        edges = np.arange(0.0, top + bin_width, bin_width)
        if edges.size < 2:
            edges = np.array([0.0, bin_width])
    else:
        edges = np.linspace(0.0, top if top > 0 else 1.0, bins + 1)
    return SignalDifferenceReport(spectral_diff, ift_diff, edges,
                                  np.histogram(spectral_diff, edges)[0],
                                  np.histogram(ift_diff, edges)[0])
