"""Command-line entry point: ``sphclass <command> [flags]``.

Settings resolve as: command-line flag, then ``--config`` file
(``key = value`` lines, keys spelled like the long flags), then built-in
defaults.  The seed falls back to ``$SPHCLASS_SEED``.  Every command prints
its effective configuration as ``# key = value`` lines before working.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path


from . import bench, datasets, sht
from . import spectral_net as sn
from .geometry import load_cloud, normalize_unit_ball
from .voxelizer import GridSpec, load_grid, save_grid, voxelize

# flag -> (type, default); None-typed entries are plain strings
_DEFAULTS = {
    "common": {"seed": (int, 0), "threads": (int, 0)},
    "generate": {"out": (str, None), "classes": (str, ",".join(datasets.PRIMITIVES)),
                 "per_class": (int, 250), "points": (int, 2048),
                 "test_fraction": (float, 0.2), "format": (str, "bin")},
    "voxelize": {"input": (str, None), "out": (str, None), "normalize": (str, "on"), "shells": (int, 7),
                 "resolution": (int, 64), "mode": (str, "density"),
                 "outside": (str, "error")},
    "transform": {"input": (str, None), "out": (str, None), "normalize": (str, "on"), "degree": (int, 9),
                  "shells": (int, 7), "resolution": (int, 64), "mode": (str, "density"),
                  "outside": (str, "error")},
    "train": {"data": (str, None), "out": (str, None), "history": (str, ""),
              "filters": (int, 16), "epochs": (int, 48), "batch": (int, 16),
              "lr_start": (float, 1e-3), "lr_end": (float, 4e-5), "ift": (str, "off"),
              "fc": (str, "on"), "layers": (int, 1), "shells": (int, 7),
              "resolution": (int, 64), "degree": (int, 9), "hidden": (int, 1024),
              "mode": (str, "density"), "features": (str, "conv"),
              "input_policy": (str, "drop"), "noise": (float, 0.02)},
    "eval": {"data": (str, None), "checkpoint": (str, None), "split": (str, "test")},
    "bench": {"data": (str, None), "checkpoint": (str, ""), "experiment": (str, "sweep"),
              "axis": (str, "outlier_fraction"), "levels": (str, "0,0.1,0.2,0.3,0.4,0.5"),
              "trials": (int, 3), "which": (str, "ift,no_fc"), "out": (str, "."),
              "name": (str, ""), "sample": (int, 0), "epochs": (int, 48),
              "batch": (int, 16), "filters": (int, 16), "noise": (float, 0.02)},
}


class CLIError(Exception):
    pass


def read_config_file(path) -> dict:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise CLIError(f"{path}:{lineno}: expected 'key = value'")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def resolve(command: str, args: argparse.Namespace) -> dict:
    """Merge defaults, config file and explicit flags into one dict."""
    table = dict(_DEFAULTS["common"], **_DEFAULTS[command])
    file_values = read_config_file(args.config) if args.config else {}
    unknown = set(file_values) - set(table)
    if unknown:
        raise CLIError(f"unknown config keys: {', '.join(sorted(unknown))}")
    env_seed = os.environ.get("SPHCLASS_SEED")
    out = {}
    for key, (typ, default) in table.items():
        value = default
        if key == "seed" and env_seed is not None:
            value = env_seed
        if key in file_values:
            value = file_values[key]
        flag = getattr(args, key, None)
        if flag is not None:
            value = flag
        if value is None:
            raise CLIError(f"missing required setting --{key.replace('_', '-')}")
        try:
            out[key] = typ(value)
        except ValueError as exc:
            raise CLIError(f"bad value for {key}: {value!r}") from exc
    return out


def _echo(settings: dict) -> None:
    for key in sorted(settings):
        print(f"# {key} = {settings[key]}")


def _onoff(value: str, name: str) -> bool:
    if value not in ("on", "off"):
        raise CLIError(f"--{name} takes 'on' or 'off'")
    return value == "on"


def _net_config(s: dict, classes: int) -> sn.NetConfig:
    return sn.NetConfig(classes=classes, filters=s["filters"], shells=s["shells"],
                        degree=s["degree"], resolution=s["resolution"],
                        hidden=s["hidden"] if _onoff(s["fc"], "fc") else 0,
                        layers=s["layers"], ift=_onoff(s["ift"], "ift"),
                        features=s["features"], grid_mode=s["mode"],
                        input_policy=s["input_policy"])


def cmd_generate(s):
    names = [c.strip() for c in s["classes"].split(",") if c.strip()]
    ds = datasets.generate_primitives(names, s["per_class"], s["points"], s["seed"])
    train, test = datasets.split(ds, s["test_fraction"], s["seed"])
    for part in (train, test):
        datasets.save_dataset(part, s["out"], binary=s["format"] == "bin")
    print(f"wrote {len(train)} train and {len(test)} test clouds to {s['out']}")


def _read_cloud(s):
    pc = load_cloud(s["input"])
    return normalize_unit_ball(pc) if _onoff(s["normalize"], "normalize") else pc


def cmd_voxelize(s):
    spec = GridSpec(s["shells"], s["resolution"], s["mode"])
    grid = voxelize(_read_cloud(s), spec, outside=s["outside"])
    save_grid(grid, s["out"])
    print(f"wrote {spec.shells}x{spec.resolution}x{spec.resolution} grid "
          f"({int(grid.values.sum())} counts) to {s['out']}")


def cmd_transform(s):
    head = Path(s["input"]).read_bytes()[:4]
    if head == b"SVG1":
        grid = load_grid(s["input"])
    else:
        spec = GridSpec(s["shells"], s["resolution"], s["mode"])
        grid = voxelize(_read_cloud(s), spec, outside=s["outside"])
    spectrum = sht.forward(grid.values, s["degree"])
    sht.save_spectra(spectrum, s["out"])
    print(f"wrote {grid.spec.shells} shell spectra (L={s['degree']}) to {s['out']}")


def cmd_train(s):
    train_set = datasets.load_dataset(s["data"], "train")
    cfg = _net_config(s, len(train_set.class_names))
    tcfg = sn.TrainConfig(batch_size=s["batch"], epochs=s["epochs"], lr_start=s["lr_start"],
                          lr_end=s["lr_end"], noise_sigma=s["noise"], seed=s["seed"])
    params, history = sn.train(train_set, cfg, tcfg)
    sn.save_checkpoint(params, s["out"])
    if s["history"]:
        sn.write_history(history, s["history"])
    last = history[-1]
    print(f"trained {len(history)} epochs: loss {last['loss']:.4f} "
          f"train_acc {last['train_acc']:.4f}; checkpoint {s['out']}")


def cmd_eval(s):
    params = sn.load_checkpoint(s["checkpoint"])
    ds = datasets.load_dataset(s["data"], s["split"])
    res = sn.evaluate(params, ds)
    print(f"accuracy: {res.accuracy:.4f}")
    print("confusion (rows=true, cols=predicted):")
    for name, row in zip(ds.class_names, res.confusion):
        print(f"  {name:>10s} " + " ".join(f"{v:4d}" for v in row))


def _parse_levels(text: str, axis: str):
    if axis == "clustered_outliers":
        if text == _DEFAULTS["bench"]["levels"][1]:
            return [tuple(lv) for lv in bench.CLUSTERED_LEVELS]
        return [tuple(float(x) for x in part.split(":")) for part in text.split(",")]
    return [float(x) for x in text.split(",")]


def cmd_bench(s):
    exp = s["experiment"]
    out_dir = Path(s["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    stamp = s["name"] or time.strftime("%Y%m%d-%H%M%S")
    test_set = datasets.load_dataset(s["data"], "test")
    tcfg = sn.TrainConfig(epochs=s["epochs"], batch_size=s["batch"], noise_sigma=s["noise"],
                          seed=s["seed"])
    written = []
    if exp in ("sweep", "ift-analysis"):
        if not s["checkpoint"]:
            raise CLIError(f"--checkpoint is required for experiment {exp!r}")
        params = sn.load_checkpoint(s["checkpoint"])
    if exp == "sweep":
        spec = bench.SweepSpec(s["axis"], _parse_levels(s["levels"], s["axis"]),
                               s["trials"], s["seed"])
        tables = {f"sweep_{s['axis']}": bench.run_sweep(params, test_set, spec)}
    elif exp in ("descriptors", "ablations"):
        train_set = datasets.load_dataset(s["data"], "train")
        base = sn.NetConfig(classes=len(train_set.class_names), filters=s["filters"])
        if exp == "descriptors":
            table = bench.run_descriptor_comparison(train_set, test_set, base, tcfg,
                                                    s["trials"], s["seed"])
        else:
            which = [w.strip() for w in s["which"].split(",") if w.strip()]
            table = bench.run_ablations(train_set, test_set, which, base, tcfg,
                                        s["trials"], s["seed"])
        tables = {exp: table}
    elif exp == "ift-analysis":
        pc = test_set.samples[s["sample"]][0]
        report = bench.run_ift_signal_analysis(pc, params, seed=s["seed"])
        meta = {"experiment": "ift_analysis", "model": params.digest(), "sample": s["sample"],
                "seed": s["seed"]}
        tables = {"ift_summary": report.summary_table(meta),
                  "ift_histogram": report.histogram_table(meta)}
    else:
        raise CLIError(f"unknown experiment {exp!r}")
    for name, table in tables.items():
        path = out_dir / f"{name}_{stamp}.csv"
        bench.emit_csv(table, path)
        written.append(str(path))
    for path in written:
        print(f"wrote {path}")


_COMMANDS = {"generate": cmd_generate, "voxelize": cmd_voxelize, "transform": cmd_transform,
             "train": cmd_train, "eval": cmd_eval, "bench": cmd_bench}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sphclass", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="key = value settings file")
        p.add_argument("-v", "--verbose", action="store_true")
        for key, (typ, _) in dict(_DEFAULTS["common"], **_DEFAULTS[name]).items():
            p.add_argument("--" + key.replace("_", "-"), dest=key, type=typ, default=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        settings = resolve(args.command, args)
        _echo(settings)
        if settings["threads"] > 0:
            from threadpoolctl import threadpool_limits
            with threadpool_limits(limits=settings["threads"]):
                _COMMANDS[args.command](settings)
        else:
            _COMMANDS[args.command](settings)
    except (CLIError, ValueError, OSError, KeyError) as exc:
        print(f"error: {type(exc).__name__}: {exc}".replace("\n", " "), file=sys.stderr)
        return 1
    return 0


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
