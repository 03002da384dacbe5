"""Command-line entry point: ``beamix <command> [--config file.json] [flags]``.

Every command has a table of defaults. A JSON config file may override any of
them (unknown keys are rejected) and explicit flags override the file.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import shutil
import sys
from pathlib import Path

import numpy as np

from . import beamspace, oracle, sim, tensorfile
from .array import ArrayGeometry, default_array
from .dictionary import build_fixed_dictionary, load_dictionary
from .errors import BeamixError, FormatError, InvalidParameterError
from .stft import StftConfig, analyze, synthesize_array

log = logging.getLogger("beamix")

TAYLOR_KEYS = {"Q": int, "P": int, "hidden_width": int, "hidden_layers": int, "frames_context": int,
               "regime": str, "lr": float, "epochs": int, "batch_size": int}

DEFAULTS = {
    "simulate": {"out": None, "n": 20, "bucket": "45-90", "seed": 0, "duration": 2.0, "snr": "-5,10",
                 "noises": "1-3", "target_kind": "speechlike", "noise_kinds": "white,pink,tonal",
                 "geometry": None},
    "beampattern": {"out": None, "dictionary": None, "weights": None, "regime": None, "beams": None,
                    "freq": None, "band": None, "grid_step": 1.0, "n_beams": 36, "geometry": None},
    "oracle-eval": {"data": None, "out": None, "weights_out": None, "loading": oracle.ORACLE_LOADING},
    "train": {"out": None, "train_data": None, "val_data": None, "n_train": 200, "n_val": 40,
              "bucket": "set-B", "duration": 0.5, "seed": 0, "geometry": None,
              "Q": 3, "P": 36, "hidden_width": 32, "hidden_layers": 2, "frames_context": 3,
              "regime": "full-raw", "lr": 5e-4, "epochs": 25, "batch_size": 4},
    "evaluate": {"data": None, "out": None, "model": None, "geometry": None,
                 "Q": 3, "P": 36, "hidden_width": 32, "hidden_layers": 2, "frames_context": 3,
                 "regime": "ds", "seed": 0},
    "gradcheck": {"out": None, "seed": 0},
}

REQUIRED = {"simulate": ["out"], "beampattern": ["out"], "oracle-eval": ["data", "out"],
            "train": ["out"], "evaluate": ["data", "out"], "gradcheck": []}


# ---- config resolution ---------------------------------------------------------

def resolve_config(command: str, flags: dict, config_path=None) -> dict:
    cfg = dict(DEFAULTS[command])
    if config_path is not None:
        try:
            doc = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise FormatError(f"cannot read config {config_path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise FormatError("config file must hold a JSON object")
        unknown = sorted(set(doc) - set(cfg))
        if unknown:
            raise InvalidParameterError(f"unknown config keys for {command}: {', '.join(unknown)}")
        cfg.update(doc)
    cfg.update({k: v for k, v in flags.items() if v is not None})
    missing = [k for k in REQUIRED[command] if cfg.get(k) is None]
    if missing:
        raise InvalidParameterError(f"{command}: missing required setting(s) {', '.join(missing)}")
    return cfg


def _range(value, name: str) -> tuple[float, float]:
    if isinstance(value, (list, tuple)):
        parts = list(value)
    else:
        text = str(value)
        parts = text.split(",") if "," in text else [text, text]
    try:
        lo, hi = float(parts[0]), float(parts[1])
    except (ValueError, IndexError) as exc:
        raise InvalidParameterError(f"bad {name} range {value!r}") from exc
    if len(parts) != 2 or lo > hi:
        raise InvalidParameterError(f"bad {name} range {value!r}")
    return lo, hi


def _max_noises(value) -> int:
    text = str(value)
    lo, _, hi = text.partition("-")
    try:
        lo_i, hi_i = int(lo), int(hi or lo)
    except ValueError as exc:
        raise InvalidParameterError(f"bad noise count {value!r}") from exc
    if lo_i != 1 or not 1 <= hi_i <= 3:
        raise InvalidParameterError("noise counts are drawn from 1..n with n in 1..3")
    return hi_i


def _geometry(cfg: dict) -> ArrayGeometry:
    if cfg.get("geometry") is None:
        return default_array()
    try:
        return ArrayGeometry.from_json(Path(cfg["geometry"]).read_text())
    except OSError as exc:
        raise FormatError(f"cannot read geometry {cfg['geometry']}: {exc}") from exc


def _taylor_config(cfg: dict):
    from .taylor import TaylorConfig

    fields = {k: TAYLOR_KEYS[k](cfg[k]) for k in TAYLOR_KEYS if k in cfg}
    return TaylorConfig(seed=int(cfg.get("seed", 0)), **fields)


class _Output:
    """Tracks files and directories a command creates so a failure can remove them."""

    def __init__(self):
        self.paths: list[Path] = []

    def file(self, path) -> Path:
        path = Path(path)
        if path.parent and not path.parent.exists():
            self.directory(path.parent)
        self.paths.append(path)
        return path

    def directory(self, path) -> Path:
        path = Path(path)
        if not path.exists():
            path.mkdir(parents=True)
            self.paths.append(path)
        return path

    def cleanup(self) -> None:
        for p in reversed(self.paths):
            if p.is_dir():
                shutil.rmtree(p, ignore_errors=True)
            elif p.exists():
                p.unlink()


# ---- commands ------------------------------------------------------------------

def cmd_simulate(cfg: dict, out: _Output) -> int:
    geom = _geometry(cfg)
    sim.parse_bucket(cfg["bucket"])
    kinds = [k.strip() for k in str(cfg["noise_kinds"]).split(",")] if isinstance(
        cfg["noise_kinds"], str) else list(cfg["noise_kinds"])
    specs = sim.make_specs(int(cfg["n"]), cfg["bucket"], int(cfg["seed"]), float(cfg["duration"]),
                           _range(cfg["snr"], "snr"), cfg["target_kind"], kinds,
                           _max_noises(cfg["noises"]))
    directory = Path(cfg["out"])
    if directory.exists() and any(directory.iterdir()):
        if not (directory / "manifest.json").is_file():
            raise InvalidParameterError(f"{directory} exists and is not a dataset directory")
    else:
        out.directory(directory)
    scenes = [sim.render_scene(geom, s) for s in specs]
    sim.save_dataset(directory, scenes, geom.sample_rate, geom,
                     {"bucket": str(cfg["bucket"]), "seed": int(cfg["seed"])})
    print(f"wrote {len(scenes)} scenes to {directory}")
    return 0


def _load_weights(path) -> tuple[np.ndarray, np.ndarray, ArrayGeometry | None]:
    """Weight files share the dictionary layout with a single beam: ``beams`` (K, M, 1)."""
    arrays, meta = tensorfile.load(path)
    beams = arrays.get("beams")
    if beams is None or beams.ndim != 3 or beams.shape[2] != 1 or "stft" not in meta:
        raise FormatError(f"{path}: not a single-beam weight file")
    geom = ArrayGeometry.from_json(meta["geometry"]) if meta.get("geometry") else None
    return beams[:, :, 0], StftConfig(**meta["stft"]).bin_freqs(), geom


def save_weights(path, weights: np.ndarray, stft_cfg: StftConfig, geom: ArrayGeometry,
                 doa_deg: float, regime: str, extra=None) -> None:
    k, m = weights.shape
    meta = {"K": k, "M": m, "P": 1, "regime": regime, "doa_grid": [float(doa_deg)],
            "geometry": json.loads(geom.to_json()), "stft": stft_cfg.to_dict(), **(extra or {})}
    tensorfile.save(path, {"beams": weights[:, :, None]}, meta)


def _select_bins(freqs: np.ndarray, freq) -> list[int]:
    if freq is None:
        return list(range(len(freqs)))
    return [int(np.argmin(np.abs(freqs - float(freq))))]


def cmd_beampattern(cfg: dict, out: _Output) -> int:
    step = float(cfg["grid_step"])
    sources = [cfg[k] is not None for k in ("dictionary", "weights", "regime")]
    if sum(sources) != 1:
        raise InvalidParameterError("give exactly one of dictionary, weights or regime")
    if cfg["weights"] is not None:
        W, freqs, geom = _load_weights(cfg["weights"])
        geom = geom or _geometry(cfg)
        if cfg["band"] is not None:
            lo, hi = _range(cfg["band"], "band")
            bp = beamspace.broadband_beampattern(W, geom, freqs, (lo, hi), step)
            rows = ((0, f"{lo:g}-{hi:g}", d, g) for d, g in zip(bp.doas_deg, bp.gains_db()))
        else:
            bins = _select_bins(freqs, cfg["freq"])
            rows = ((0, freqs[k], d, g) for k in bins
                    for bp in [beamspace.beampattern(W[k], geom, freqs[k], step)]
                    for d, g in zip(bp.doas_deg, bp.gains_db()))
    else:
        if cfg["dictionary"] is not None:
            d = load_dictionary(cfg["dictionary"])
            if d.geometry is None:
                d.geometry = _geometry(cfg)
        else:
            d = build_fixed_dictionary(_geometry(cfg), StftConfig(), cfg["regime"], int(cfg["n_beams"]))
        freqs = d.config.bin_freqs()
        beams = cfg["beams"]
        if isinstance(beams, str):
            beams = [int(b) for b in beams.split(",")]
        if beams is not None and any(not 0 <= b < d.n_beams for b in beams):
            raise InvalidParameterError(f"beam index out of range 0..{d.n_beams - 1}")
        rows = ((p, bp.freq_hz, doa, g)
                for p, _, bp in beamspace.dictionary_beampatterns(d, step, beams, _select_bins(freqs, cfg["freq"]))
                for doa, g in zip(bp.doas_deg, bp.gains_db()))
    n = beamspace.write_beampattern_csv(out.file(cfg["out"]), rows)
    print(f"wrote {n} rows to {cfg['out']}")
    return 0


def cmd_oracle_eval(cfg: dict, out: _Output) -> int:
    scenes, manifest = sim.load_dataset(cfg["data"])
    geom = ArrayGeometry.from_json(manifest["geometry"]) if "geometry" in manifest else _geometry(cfg)
    stft_cfg = StftConfig(sample_rate=geom.sample_rate)
    wdir = out.directory(cfg["weights_out"]) if cfg["weights_out"] is not None else None
    results = []
    for entry, scene in zip(manifest["scenes"], scenes):
        r = oracle.evaluate_scene(scene, geom, stft_cfg, float(cfg["loading"]))
        results.append((entry["name"], r["noisy"], r["mvdr"], r["mwf"]))
        if wdir is not None:
            save_weights(wdir / f"{entry['name']}_mvdr.bmxt", r["w_mvdr"], stft_cfg, geom,
                         scene.spec.target_doa, "oracle-mvdr", {"scene": entry["name"]})
    arr = np.array([r[1:] for r in results])
    means = arr.mean(axis=0)
    with open(out.file(cfg["out"]), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scene", "noisy_si_snr", "mvdr_si_snr", "mwf_si_snr"])
        for name, *vals in results:
            w.writerow([name] + [f"{v:.4f}" for v in vals])
        w.writerow(["mean"] + [f"{v:.4f}" for v in means])
    print(f"noisy {means[0]:.2f} dB, TI-MVDR {means[1]:.2f} dB (+{means[1] - means[0]:.2f}), "
          f"TI-MWF {means[2]:.2f} dB (+{means[2] - means[0]:.2f})")
    return 0


def _dataset_or_synth(path, n: int, bucket, seed: int, duration: float, geom: ArrayGeometry):
    if path is not None:
        return sim.load_dataset(path)[0]
    return sim.make_dataset(geom, n, bucket, seed, duration_s=duration)


def cmd_train(cfg: dict, out: _Output) -> int:
    from . import taylor

    geom = _geometry(cfg)
    tcfg = _taylor_config(cfg)
    seed = int(cfg["seed"])
    train_set = _dataset_or_synth(cfg["train_data"], int(cfg["n_train"]), cfg["bucket"], seed,
                                  float(cfg["duration"]), geom)
    val_set = _dataset_or_synth(cfg["val_data"], int(cfg["n_val"]), cfg["bucket"], seed + 1,
                                float(cfg["duration"]), geom)
    directory = Path(cfg["out"])
    if not directory.exists():
        out.directory(directory)
    stft_cfg = StftConfig(sample_rate=geom.sample_rate)
    model = taylor.build_model(geom, tcfg, stft_cfg)
    taylor.write_config(out.file(directory / "config.json"), tcfg,
                        {"geometry": json.loads(geom.to_json()), "n_train": len(train_set)})
    state = taylor.train(model, train_set, val_set, stft_cfg, out.file(directory / "log.csv"),
                         out.file(directory / "model.bmxt"))
    print(f"trained {state.epoch} epochs, best validation loss {state.best_val_loss:.5f}")
    return 0


def bucket_label(spec: sim.SceneSpec) -> str:
    """Smallest target-to-noise azimuth separation, binned."""
    sep = float(np.min(sim.circular_difference(spec.target_doa, np.asarray(spec.noise_doas))))
    for lo, hi in ((0, 45), (45, 90), (90, 180)):
        if sep <= hi:
            return f"{lo}-{hi}"
    return "90-180"


def cmd_evaluate(cfg: dict, out: _Output) -> int:
    from . import taylor

    scenes, manifest = sim.load_dataset(cfg["data"])
    geom = ArrayGeometry.from_json(manifest["geometry"]) if "geometry" in manifest else _geometry(cfg)
    stft_cfg = StftConfig(sample_rate=geom.sample_rate)
    if cfg["model"] is not None:
        model = taylor.load_model(cfg["model"], geom, stft_cfg)
    else:
        model = taylor.build_model(geom, _taylor_config(cfg), stft_cfg)
    res = taylor.si_snr_improvement(model, scenes, stft_cfg)
    by_bucket: dict[str, list] = {}
    with open(out.file(cfg["out"]), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scene", "bucket", "noisy_si_snr", "enhanced_si_snr"])
        for entry, scene, (noisy, enh) in zip(manifest["scenes"], scenes, res["per_scene"]):
            label = bucket_label(scene.spec)
            by_bucket.setdefault(label, []).append((noisy, enh))
            w.writerow([entry["name"], label, f"{noisy:.4f}", f"{enh:.4f}"])
        for label, vals in sorted(by_bucket.items()):
            m = np.mean(vals, axis=0)
            w.writerow([f"mean[{label}]", label, f"{m[0]:.4f}", f"{m[1]:.4f}"])
        w.writerow(["mean", "all", f"{res['noisy']:.4f}", f"{res['enhanced']:.4f}"])
    print(f"noisy {res['noisy']:.2f} dB, enhanced {res['enhanced']:.2f} dB (+{res['improvement']:.2f})")
    return 0


def cmd_gradcheck(cfg: dict, out: _Output) -> int:
    from .checks import all_checks

    results = all_checks(int(cfg["seed"]))
    rows = [(r.name, r.error, r.tolerance, r.passed) for r in results]
    for name, err, tol, ok in rows:
        print(f"{'PASS' if ok else 'FAIL'} {name:28s} {err:.3e} (tol {tol:g})")
    if cfg["out"] is not None:
        with open(out.file(cfg["out"]), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["check", "rel_error", "tolerance", "passed"])
            w.writerows([[n, f"{e:.6e}", f"{t:g}", int(ok)] for n, e, t, ok in rows])
    return 0 if all(r[3] for r in rows) else 1


COMMANDS = {"simulate": cmd_simulate, "beampattern": cmd_beampattern, "oracle-eval": cmd_oracle_eval,
            "train": cmd_train, "evaluate": cmd_evaluate, "gradcheck": cmd_gradcheck}


# ---- argument parsing ------------------------------------------------------------

def _add_taylor_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--Q", type=int, help="Taylor order")
    p.add_argument("--P", type=int, help="number of dictionary beams")
    p.add_argument("--hidden-width", type=int)
    p.add_argument("--hidden-layers", type=int)
    p.add_argument("--frames-context", type=int, help="causal context frames fed to the activation network")
    p.add_argument("--regime", choices=["ds", "sd", "semi", "full-physics", "full-raw"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="beamix", description="Beam-space dictionary speech enhancement")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="synthesize a dataset of anechoic array scenes")
    p.add_argument("--out")
    p.add_argument("--n", type=int, help="number of scenes")
    p.add_argument("--bucket", help="noise DOA offset range like 45-90, or set-B")
    p.add_argument("--seed", type=int)
    p.add_argument("--duration", type=float, help="seconds per scene")
    p.add_argument("--snr", help="SNR in dB, a value or lo,hi range")
    p.add_argument("--noises", help="noise count range for set-B, e.g. 1-3")
    p.add_argument("--target-kind", choices=list(sim.SOURCE_KINDS))
    p.add_argument("--noise-kinds", help="comma-separated subset of white,pink,tonal")
    p.add_argument("--geometry", help="array geometry JSON")

    p = sub.add_parser("beampattern", help="export beampatterns as CSV")
    p.add_argument("--out")
    p.add_argument("--dictionary", help="dictionary tensor file")
    p.add_argument("--weights", help="beamformer weight file, e.g. from oracle-eval")
    p.add_argument("--regime", choices=["ds", "sd"], help="build a fixed dictionary instead of loading one")
    p.add_argument("--beams", help="comma-separated beam indices (default all)")
    p.add_argument("--freq", type=float, help="single frequency in Hz (nearest bin); default full band")
    p.add_argument("--band", help="lo,hi in Hz: one band-averaged pattern (weight files only)")
    p.add_argument("--grid-step", type=float, help="azimuth step in degrees")
    p.add_argument("--n-beams", type=int)
    p.add_argument("--geometry")

    p = sub.add_parser("oracle-eval", help="evaluate TI-MVDR and TI-MWF oracles on a dataset")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--weights-out", help="directory for per-scene MVDR weight files")
    p.add_argument("--loading", type=float)

    p = sub.add_parser("train", help="train a Taylor beam-space model")
    p.add_argument("--out", help="output directory for log.csv, model.bmxt, config.json")
    p.add_argument("--train-data")
    p.add_argument("--val-data")
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-val", type=int)
    p.add_argument("--bucket")
    p.add_argument("--duration", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--geometry")
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    _add_taylor_flags(p)

    p = sub.add_parser("evaluate", help="report SI-SNR per bucket for a trained or fresh model")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--model", help="checkpoint from train; omitted means an untrained model")
    p.add_argument("--seed", type=int)
    p.add_argument("--geometry")
    _add_taylor_flags(p)

    p = sub.add_parser("gradcheck", help="run the registered gradient checks")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)

    for action in sub.choices.values():
        action.add_argument("--config", help="JSON file of settings; flags take precedence")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}
    out = _Output()
    try:
        cfg = resolve_config(args.command, flags, args.config)
        return COMMANDS[args.command](cfg, out)
    except (BeamixError, ValueError, OSError) as exc:
        out.cleanup()
        print(f"beamix {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except BaseException:
        out.cleanup()
        raise


if __name__ == "__main__":
    sys.exit(main())
