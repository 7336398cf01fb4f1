"""``split-inr`` command line: training runs, analysis reports and their artifacts.

Usage::

    split-inr <command> [--config file.json] [--key value ...]
    split-inr analyze <dim|optimal-split|ntk|features|expand|sweep> [...]

Config files are flat JSON objects with kebab-case keys; any key can be
overridden on the command line with ``--key value``. Unknown keys are errors.
Randomness derives from ``seed``: network weights use ``seed`` and batch
sampling ``seed + 1``; multi-seed analyses use ``seed, seed + 1, ...``.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import __version__, plotting
from .analysis import (
    dump_first_layer_features, expand_split_layer, feature_space_dim, ntk_on_signal, optimal_split,
    spectral_peak_count, split_sweep,
)
from .core_math import Prng, binomial
from .io import (
    FormatError, read_image, read_volume, write_image, write_json, write_pfm, write_spectrum_csv, write_volume,
)
from .network import ActivationSpec, EncodingSpec, NetworkSpec, init_network, param_count
from .tasks import (
    CtGeometry, CtTask, EmptyBoundaryError, ImageFitTask, OccupancyField, OccupancyTask, RadonOperator, Sinogram,
    extract_boundary_points, radon_forward, shepp_logan, synthetic_image,
)
from .training import TrainConfig, TrainingDiverged, train, write_history_csv


class ConfigError(ValueError):
    pass


BACKBONES = {
    "relu": ("relu", "none"),
    "pemlp": ("relu", "positional"),
    "sine": ("sine", "none"),
    "gauss": ("gauss", "none"),
    "variable-periodic": ("variable_periodic", "none"),
    "gabor-real": ("gabor_real", "none"),
    "identity": ("identity", "none"),
}

NETWORK_KEYS = {
    "seed": 0,
    "backbone": "relu",
    "encoding": "auto",  # auto follows the backbone; none | positional override it
    "num-frequencies": 10,
    "width": 64,
    "hidden-layers": 2,
    "splits": 2,  # 0 = plain dense baseline
    "split-input": True,
    "split-bias": True,
    "omega": 30.0,
    "scale": 0.0,  # 0 = activation default
}

TRAIN_KEYS = {
    "iterations": 2000,
    "learning-rate": 0.0,  # 0 = task default
    "lr-schedule": "exponential",
    "final-ratio": 0.1,
    "batch-size": 0,
    "log-every": 100,
}

COMMON_KEYS = {"output-dir": "out", "compare": False, "plots": True}

DEFAULTS = {
    "fit-image": {**NETWORK_KEYS, **TRAIN_KEYS, **COMMON_KEYS, "input": "builtin:synthetic64", "clip": False},
    "recon-ct": {**NETWORK_KEYS, **TRAIN_KEYS, **COMMON_KEYS, "phantom": "builtin:shepp-logan",
                 "size": 64, "sinogram": "", "num-angles": 40, "num-detectors": 96, "clip": False},
    "fit-occupancy": {**NETWORK_KEYS, **TRAIN_KEYS, **COMMON_KEYS, "iterations": 1000, "shape": "sphere",
                      "volume": "", "points-per-iter": 10000, "resolution": 64, "threshold": 0.5,
                      "chamfer-root": False},
    "analyze dim": {"width": 256, "splits": 2, "output-dir": "out"},
    "analyze optimal-split": {"width": 256, "output-dir": "out"},
    "analyze ntk": {**NETWORK_KEYS, "width": 32, "splits": 2, "points": 64,
                    "seeds": 1, "train-iterations": 0, "learning-rate": 1e-3, "output-dir": "out",
                    "plots": True},
    "analyze features": {**NETWORK_KEYS, "backbone": "sine", "width": 9, "hidden-layers": 1, "size": 64,
                         "output-dir": "out"},
    "analyze expand": {"inputs": 3, "splits": 2, "seed": 0, "output-dir": "out"},
    "analyze sweep": {**NETWORK_KEYS, **TRAIN_KEYS, "widths": "16,32", "split-values": "1,2,3,4",
                      "iterations": 300, "input": "builtin:synthetic32", "output-dir": "out", "plots": True},
}

ANALYSES = ("dim", "optimal-split", "ntk", "features", "expand", "sweep")
TASK_COMMANDS = ("fit-image", "recon-ct", "fit-occupancy")


# ---------------------------------------------------------------- config

def _coerce(key: str, value, default):
    """Convert ``value`` to the type of ``default``; strings from argv are parsed."""
    try:
        if isinstance(default, bool):
            if isinstance(value, bool):
                return value
            if isinstance(value, str) and value.lower() in ("true", "1", "yes"):
                return True
            if isinstance(value, str) and value.lower() in ("false", "0", "no"):
                return False
            raise ValueError
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(value, list):
            return ",".join(str(v) for v in value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"--{key}: cannot read {value!r} as {type(default).__name__}") from None


def resolve_config(command: str, file_cfg: dict | None, overrides: dict) -> dict:
    defaults = DEFAULTS[command]
    cfg = dict(defaults)
    for source in (file_cfg or {}, overrides):
        for key, value in source.items():
            if key not in defaults:
                raise ConfigError(f"unknown key {key!r} for {command}")
            cfg[key] = _coerce(key, value, defaults[key])
    return cfg


def _int_list(cfg, key) -> list[int]:
    try:
        vals = [int(v) for v in str(cfg[key]).split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--{key}: expected comma-separated integers") from None
    if not vals:
        raise ConfigError(f"--{key}: empty list")
    return vals


def network_spec(cfg: dict, d_in: int, d_out: int, final_sigmoid: bool = False) -> NetworkSpec:
    if cfg["backbone"] not in BACKBONES:
        raise ConfigError(f"unknown backbone {cfg['backbone']!r}; choose from {', '.join(BACKBONES)}")
    kind, enc = BACKBONES[cfg["backbone"]]
    if cfg["encoding"] != "auto":
        enc = cfg["encoding"]
    if enc not in ("none", "positional"):
        raise ConfigError(f"unknown encoding {enc!r}")
    if cfg["num-frequencies"] < 1:
        raise ConfigError("num-frequencies must be >= 1")
    n = cfg["splits"]
    try:
        return NetworkSpec(
            d_in, d_out, cfg["width"], cfg["hidden-layers"],
            encoding=EncodingSpec(enc, cfg["num-frequencies"]),
            activation=ActivationSpec(kind, cfg["omega"], cfg["scale"] or None),
            num_splits=n, final_sigmoid=final_sigmoid, split_bias=cfg["split-bias"],
            split_input=cfg["split-input"] and n > 0,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def default_learning_rate(task: str, backbone: str) -> float:
    if task == "recon-ct" and backbone in ("sine", "variable-periodic"):
        return 5e-4
    return 1e-3


def train_config(cfg: dict, task: str) -> TrainConfig:
    lr = cfg["learning-rate"] or default_learning_rate(task, cfg["backbone"])
    cfg["learning-rate"] = lr  # echo the value actually used
    try:
        return TrainConfig(cfg["iterations"], lr, cfg["batch-size"], cfg["seed"], cfg["lr-schedule"],
                           cfg["final-ratio"], cfg["log-every"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# ---------------------------------------------------------------- inputs

def load_image(ref: str) -> np.ndarray:
    if ref.startswith("builtin:"):
        name = ref[len("builtin:"):]
        if name.startswith("synthetic") and name[len("synthetic"):].isdigit():
            return synthetic_image(int(name[len("synthetic"):]))
        if name == "shepp-logan":
            return shepp_logan(64)
        raise ConfigError(f"unknown builtin image {ref!r}")
    try:
        return read_image(ref)
    except (OSError, FormatError) as exc:
        raise ConfigError(f"cannot read image {ref!r}: {exc}") from None


# ---------------------------------------------------------------- runs

def _variants(cfg: dict):
    """``(label, cfg)`` pairs: just the configured net, or baseline plus split when comparing."""
    if not cfg["compare"]:
        return [("split" if cfg["splits"] else "baseline", cfg)]
    if cfg["splits"] == 0:
        raise ConfigError("compare needs splits >= 2")
    return [("baseline", {**cfg, "splits": 0}), ("split", cfg)]


def _run_report(command, cfg, metrics, history_paths, artifacts, start, status="ok", diagnostic=None):
    rep = {
        "command": command,
        "config": cfg,
        "status": status,
        "metrics": metrics,
        "history": history_paths,
        "artifacts": artifacts,
        "version": __version__,
        "wall_time_s": time.perf_counter() - start,
    }
    if diagnostic:
        rep["diagnostic"] = diagnostic
    return rep


def _train_variants(command, cfg, task, d_in, d_out, out, metric_name, final_sigmoid=False):
    tcfg = train_config(cfg, command)
    specs = [(label, network_spec(vcfg, d_in, d_out, final_sigmoid)) for label, vcfg in _variants(cfg)]
    results = {}
    for label, spec in specs:
        try:
            params, hist = train(task, spec, tcfg)
        except TrainingDiverged as exc:
            raise RuntimeError(f"{label}: {exc}") from None
        path = out / f"history_{label}.csv"
        write_history_csv(path, hist, include_wall=False)
        results[label] = {"spec": spec, "params": params, "history": hist, "history_path": str(path),
                          metric_name: hist[-1].metric, "param_count": param_count(spec)}
    return results


def _metrics_block(results, metric_name, higher_is_better=True) -> dict:
    m = {label: {metric_name: r[metric_name], "param_count": r["param_count"]} for label, r in results.items()}
    if "baseline" in results and "split" in results:
        b, s = results["baseline"][metric_name], results["split"][metric_name]
        m["split_minus_baseline"] = s - b
        m["split_better"] = bool(s > b) if higher_is_better else bool(s < b)
        if b and math.isfinite(b) and math.isfinite(s):
            gain = (s - b) / abs(b) if higher_is_better else (b - s) / abs(b)
            m["relative_gain"] = gain
    return m


def cmd_fit_image(cfg: dict, out: Path) -> dict:
    start = time.perf_counter()
    img = load_image(cfg["input"])
    task = ImageFitTask(img, batch_size=cfg["batch-size"], clip=cfg["clip"])
    results = _train_variants("fit-image", cfg, task, 2, task.channels, out, "psnr")
    artifacts = {}
    panels = {"target": task.image}
    for label, r in results.items():
        pred = task.predict(r["spec"], r["params"])
        ext = "pgm" if pred.shape[2] == 1 else "ppm"
        p = out / f"recon_{label}.{ext}"
        write_image(p, pred[:, :, 0] if pred.shape[2] == 1 else pred)
        write_pfm(out / f"recon_{label}.pfm", pred[:, :, 0] if pred.shape[2] == 1 else pred)
        artifacts[f"recon_{label}"] = str(p)
        artifacts[f"recon_{label}_pfm"] = str(out / f"recon_{label}.pfm")
        panels[f"{label} {r['psnr']:.2f} dB"] = pred
    if cfg["plots"]:
        artifacts["figure_recon"] = str(plotting.plot_images(out / "recon.png", panels))
        artifacts["figure_history"] = str(plotting.plot_history(
            out / "history.png", {k: r["history"] for k, r in results.items()}, "PSNR (dB)"))
    metrics = _metrics_block(results, "psnr")
    return _run_report("fit-image", cfg, metrics, {k: r["history_path"] for k, r in results.items()},
                       artifacts, start)


def cmd_recon_ct(cfg: dict, out: Path) -> dict:
    start = time.perf_counter()
    if cfg["num-angles"] < 1 or cfg["num-detectors"] < 1:
        raise ConfigError("num-angles and num-detectors must be >= 1")
    if cfg["sinogram"]:
        try:
            values = read_image(cfg["sinogram"])
        except (OSError, FormatError) as exc:
            raise ConfigError(f"cannot read sinogram {cfg['sinogram']!r}: {exc}") from None
        if values.ndim != 2 or values.shape != (cfg["num-angles"], cfg["num-detectors"]):
            raise ConfigError(f"sinogram shape {values.shape} does not match "
                              f"({cfg['num-angles']}, {cfg['num-detectors']})")
        phantom = None if cfg["phantom"] == "" else _ct_phantom(cfg)
        size = cfg["size"] if phantom is None else phantom.shape[0]
        geom = CtGeometry(size, size, cfg["num-angles"], cfg["num-detectors"])
        op = RadonOperator(geom)
        sino = Sinogram(geom.angles, values)
    else:
        phantom = _ct_phantom(cfg)
        geom = CtGeometry(phantom.shape[0], phantom.shape[1], cfg["num-angles"], cfg["num-detectors"])
        op = RadonOperator(geom)
        sino = radon_forward(phantom, cfg["num-angles"], cfg["num-detectors"], op)
    task = CtTask(phantom, sino, op, clip=cfg["clip"])
    results = _train_variants("recon-ct", cfg, task, 2, 1, out, "psnr")
    artifacts = {"sinogram": str(out / "sinogram.pfm")}
    write_pfm(out / "sinogram.pfm", sino.values)
    panels = {} if phantom is None else {"phantom": phantom}
    for label, r in results.items():
        pred = task.predict(r["spec"], r["params"])
        write_image(out / f"recon_{label}.pgm", pred)
        write_pfm(out / f"recon_{label}.pfm", pred)
        artifacts[f"recon_{label}"] = str(out / f"recon_{label}.pgm")
        artifacts[f"recon_{label}_pfm"] = str(out / f"recon_{label}.pfm")
        panels[f"{label} {r['psnr']:.2f} dB"] = pred
        if phantom is not None:
            err = np.abs(pred - phantom)
            write_pfm(out / f"error_{label}.pfm", err)
            peak = float(err.max()) or 1.0
            write_image(out / f"error_{label}.pgm", err / peak)
            artifacts[f"error_{label}"] = str(out / f"error_{label}.pgm")
            artifacts[f"error_{label}_pfm"] = str(out / f"error_{label}.pfm")
    if cfg["plots"]:
        artifacts["figure_recon"] = str(plotting.plot_images(out / "recon.png", panels))
        artifacts["figure_history"] = str(plotting.plot_history(
            out / "history.png", {k: r["history"] for k, r in results.items()}, "PSNR (dB)"))
    metrics = _metrics_block(results, "psnr")
    return _run_report("recon-ct", cfg, metrics, {k: r["history_path"] for k, r in results.items()},
                       artifacts, start)


def _ct_phantom(cfg) -> np.ndarray:
    if cfg["phantom"] == "builtin:shepp-logan":
        return shepp_logan(cfg["size"])
    img = load_image(cfg["phantom"])
    if img.ndim != 2:
        raise ConfigError("CT phantom must be single-channel")
    if img.shape[0] != img.shape[1]:
        raise ConfigError("CT phantom must be square")
    return img


def _occupancy_field(cfg) -> OccupancyField:
    if cfg["volume"]:
        try:
            values, meta = read_volume(cfg["volume"])
        except (OSError, FormatError, KeyError, ValueError) as exc:
            raise ConfigError(f"cannot read volume {cfg['volume']!r}: {exc}") from None
        return OccupancyField.from_voxels(values >= meta["threshold"])
    shape = cfg["shape"].replace("-", "_")
    if shape not in OccupancyField.SHAPES:
        raise ConfigError(f"unknown shape {cfg['shape']!r}")
    return OccupancyField.analytic(shape)


def cmd_fit_occupancy(cfg: dict, out: Path) -> dict:
    start = time.perf_counter()
    if cfg["resolution"] < 8:
        raise ConfigError("resolution must be >= 8")
    if not 0.0 < cfg["threshold"] < 1.0:
        raise ConfigError("threshold must lie in (0, 1)")
    if cfg["points-per-iter"] < 1:
        raise ConfigError("points-per-iter must be >= 1")
    field = _occupancy_field(cfg)
    task = OccupancyTask(field, cfg["points-per-iter"], cfg["resolution"], cfg["threshold"], cfg["chamfer-root"])
    gt = task.gt_points
    results = _train_variants("fit-occupancy", cfg, task, 3, 1, out, "chamfer", final_sigmoid=True)
    artifacts = {}
    boundaries = {"ground truth": gt}
    failed = []
    for label, r in results.items():
        grid = task.predict_grid(r["spec"], r["params"])
        write_volume(out / f"occupancy_{label}.raw", grid, threshold=cfg["threshold"])
        artifacts[f"occupancy_{label}"] = str(out / f"occupancy_{label}.raw")
        artifacts[f"occupancy_{label}_meta"] = str(out / f"occupancy_{label}.json")
        try:
            boundaries[label] = extract_boundary_points(grid, cfg["threshold"])
        except EmptyBoundaryError:
            failed.append(label)
    if cfg["plots"]:
        artifacts["figure_boundary"] = str(plotting.plot_boundary(out / "boundary.png", boundaries))
        artifacts["figure_history"] = str(plotting.plot_history(
            out / "history.png", {k: r["history"] for k, r in results.items()}, "chamfer", log_metric=True))
    metrics = _metrics_block(results, "chamfer", higher_is_better=False)
    metrics["gt_boundary_points"] = len(gt)
    hist = {k: r["history_path"] for k, r in results.items()}
    if failed:
        return _run_report("fit-occupancy", cfg, metrics, hist, artifacts, start, status="failed",
                           diagnostic=f"empty predicted boundary at threshold {cfg['threshold']}: "
                                      + ", ".join(failed))
    return _run_report("fit-occupancy", cfg, metrics, hist, artifacts, start)


# ---------------------------------------------------------------- analyses

def analyze_dim(cfg, out):
    c, n = cfg["width"], cfg["splits"]
    if c < 1 or n < 1 or (n > 1 and n > c * c):
        raise ConfigError(f"splits must be in [1, width^2] (1 = baseline), got {n} for width {c}")
    dim = feature_space_dim(c, n)
    _, rec = optimal_split(c)
    body = {"width": c, "splits": n, "log10_dimension": dim.log10,
            "dimension": str(dim.exact) if dim.exact is not None else None,
            "baseline_dimension": c}
    write_json(out / "dim.json", body)
    print(dim.exact if dim.exact is not None else f"10^{dim.log10:.6f}")
    return {"dim": str(out / "dim.json")}, body


def analyze_optimal_split(cfg, out):
    c = cfg["width"]
    if c < 1:
        raise ConfigError("width must be >= 1")
    n_star, rec = optimal_split(c)
    body = {"width": c, "n_star": n_star, "recommended": rec}
    write_json(out / "optimal_split.json", body)
    print(f"{rec} (n_star = {n_star:.4f})")
    return {"optimal_split": str(out / "optimal_split.json")}, body


def analyze_ntk(cfg, out):
    if cfg["splits"] < 2:
        raise ConfigError("ntk compares a baseline with a split net; splits must be >= 2")
    if not 1 <= cfg["points"] <= 512:
        raise ConfigError("points must be in [1, 512]")
    if cfg["seeds"] < 1 or cfg["train-iterations"] < 0:
        raise ConfigError("seeds must be >= 1 and train-iterations >= 0")
    split_spec = network_spec(cfg, 1, 1)
    base_spec = network_spec({**cfg, "splits": 0}, 1, 1)
    artifacts, rows, spectra = {}, [], {}
    for k in range(cfg["seeds"]):
        seed = cfg["seed"] + k
        row = {"seed": seed}
        for label, spec in (("baseline", base_spec), ("split", split_spec)):
            rep = ntk_on_signal(spec, seed, cfg["points"], cfg["train-iterations"], cfg["learning-rate"])
            path = out / f"spectrum_{label}_seed{seed}.csv"
            write_spectrum_csv(path, rep.eigenvalues)
            artifacts[f"spectrum_{label}_seed{seed}"] = str(path)
            row[label] = rep.summary()
            row[label]["param_count"] = param_count(spec)
            spectra.setdefault(label, rep.eigenvalues)
        row["split_max_larger"] = row["split"]["max"] > row["baseline"]["max"]
        rows.append(row)
    body = {"runs": rows, "split_max_larger_count": sum(r["split_max_larger"] for r in rows),
            "seeds": cfg["seeds"], "train_iterations": cfg["train-iterations"]}
    write_json(out / "ntk_comparison.json", body)
    artifacts["comparison"] = str(out / "ntk_comparison.json")
    if cfg["plots"]:
        artifacts["figure_spectra"] = str(plotting.plot_spectra(out / "ntk_spectra.png", spectra))
    print(f"split max eigenvalue larger in {body['split_max_larger_count']} of {cfg['seeds']} seeds")
    return artifacts, body


def analyze_features(cfg, out):
    size = cfg["size"]
    if size < 4:
        raise ConfigError("size must be >= 4")
    artifacts, body = {}, {}
    variants = [("baseline", {**cfg, "splits": 0})]
    if cfg["splits"]:
        variants.append(("split", cfg))
    for label, vcfg in variants:
        spec = network_spec(vcfg, 2, 1)
        if spec.hidden_layers < 1:
            raise ConfigError("features need hidden-layers >= 1")
        mosaic, tiles = dump_first_layer_features(spec, init_network(spec, cfg["seed"]), size, size)
        write_image(out / f"features_{label}.pgm", mosaic)
        artifacts[f"features_{label}"] = str(out / f"features_{label}.pgm")
        counts = [spectral_peak_count(t) for t in tiles]
        body[label] = {"peak_counts": counts, "mean_peaks": float(np.mean(counts))}
    write_json(out / "features.json", body)
    artifacts["summary"] = str(out / "features.json")
    print(" ".join(f"{k}={v['mean_peaks']:.3f}" for k, v in body.items()))
    return artifacts, body


def analyze_expand(cfg, out):
    w, n = cfg["inputs"], cfg["splits"]
    if w < 1 or n < 2:
        raise ConfigError("expand needs inputs >= 1 and splits >= 2")
    rows = Prng(cfg["seed"]).uniform_array(-1.0, 1.0, (n, w))
    try:
        poly = expand_split_layer(rows)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    body = {"inputs": w, "splits": n, "rows": rows, "terms": poly.to_dict(),
            "term_count": len(poly.terms), "max_terms": int(binomial(w + n - 1, n))}
    write_json(out / "expansion.json", body)
    print(f"{len(poly.terms)} monomials")
    return {"expansion": str(out / "expansion.json")}, body


def analyze_sweep(cfg, out):
    widths, splits = _int_list(cfg, "widths"), _int_list(cfg, "split-values")
    img = load_image(cfg["input"])
    task = ImageFitTask(img, batch_size=cfg["batch-size"])
    tcfg = train_config(cfg, "fit-image")

    def run(c, n):
        spec = network_spec({**cfg, "width": c, "splits": 0 if n == 1 else n}, 2, task.channels)
        return train(task, spec, tcfg)[1][-1].metric

    try:
        report = split_sweep(widths, splits, run)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    write_json(out / "sweep.json", report)
    artifacts = {"sweep": str(out / "sweep.json")}
    if cfg["plots"]:
        artifacts["figure_sweep"] = str(plotting.plot_sweep(out / "sweep.png", report))
    for b in report["best"]:
        print(f"width {b['width']}: best splits {b['best_splits']}, predicted {b['n_star']:.2f}")
    return artifacts, report


ANALYZERS = {
    "dim": analyze_dim, "optimal-split": analyze_optimal_split, "ntk": analyze_ntk,
    "features": analyze_features, "expand": analyze_expand, "sweep": analyze_sweep,
}
RUNNERS = {"fit-image": cmd_fit_image, "recon-ct": cmd_recon_ct, "fit-occupancy": cmd_fit_occupancy}


# ---------------------------------------------------------------- entry point

def _parse_overrides(tokens: list[str]) -> dict:
    out = {}
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--") or len(tok) == 2:
            raise ConfigError(f"expected --key, got {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        elif i + 1 < len(tokens) and not tokens[i + 1].startswith("--"):
            value = tokens[i + 1]
            i += 2
        else:
            value = "true"  # bare flag
            i += 1
        out[key] = value
    return out


def _thread_limit():
    raw = os.environ.get("SPLIT_INR_THREADS", "")
    if not raw:
        return nullcontext()
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"SPLIT_INR_THREADS must be an integer, got {raw!r}") from None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=max(n, 1))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="split-inr",
        description="Coordinate networks with split-layers: training runs and analyses.",
        epilog="Any config key may be given as --key value. See README for the key list.")
    p.add_argument("command", choices=TASK_COMMANDS + ("analyze",))
    p.add_argument("analysis", nargs="?", choices=ANALYSES)
    p.add_argument("--config", help="flat JSON config with kebab-case keys")
    p.add_argument("--version", action="version", version=__version__)
    return p


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args, rest = parser.parse_known_args(argv)
    if args.command == "analyze":
        if args.analysis is None:
            parser.error("analyze needs one of: " + ", ".join(ANALYSES))
        command = f"analyze {args.analysis}"
    else:
        if args.analysis is not None:
            parser.error(f"{args.command} takes no subcommand")
        command = args.command
    try:
        file_cfg = None
        if args.config:
            try:
                file_cfg = json.loads(Path(args.config).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config {args.config!r}: {exc}") from None
            if not isinstance(file_cfg, dict):
                raise ConfigError("config file must hold a JSON object")
        cfg = resolve_config(command, file_cfg, _parse_overrides(rest))
        out = Path(cfg["output-dir"])
        with _thread_limit():
            if command in RUNNERS:
                # validate everything cheap before any training starts
                network_spec(cfg, 2, 1)
                train_config(dict(cfg), command)
                out.mkdir(parents=True, exist_ok=True)
                report = RUNNERS[command](cfg, out)
                report_path = out / "report.json"
                report["artifacts"]["report"] = str(report_path)
                write_json(report_path, report)
                _print_metrics(report)
                if report["status"] != "ok":
                    print(f"error: {report['diagnostic']}", file=sys.stderr)
                    return 1
            else:
                out.mkdir(parents=True, exist_ok=True)
                start = time.perf_counter()
                artifacts, body = ANALYZERS[args.analysis](cfg, out)
                report = _run_report(command, cfg, body, {}, artifacts, start)
                report["artifacts"]["report"] = str(out / "report.json")
                write_json(out / "report.json", report)
        missing = [p for p in report["artifacts"].values() if not Path(p).exists()]
        if missing:
            print(f"error: artifacts not written: {', '.join(missing)}", file=sys.stderr)
            return 1
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (RuntimeError, FloatingPointError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _print_metrics(report: dict) -> None:
    for label, m in report["metrics"].items():
        if isinstance(m, dict):
            print(label + ": " + ", ".join(f"{k}={v:.6g}" for k, v in m.items()))
        else:
            print(f"{label}: {m}")


if __name__ == "__main__":
    sys.exit(main())
