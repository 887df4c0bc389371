"""``xcpd`` command line: synth, train, eval, inspect-spectrum, verify.

Every command reads an optional INI file (one section per command, keys in
kebab-case) and command-line flags with the same names. A flag beats the
file, and the file beats the built-in default. Relative output directories
are placed under ``$XCPD_OUTPUT_ROOT`` when that variable is set.

Exit codes: 0 success, 1 verification or numerical failure, 2 configuration
error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import logging
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import (
    RidgeBackbone,
    SynthSpec,
    load_csv,
    planted_groups,
    synth_generate,
    write_csv,
    write_json,
    write_predictions,
)
from .errors import (
    ConfigurationError,
    ConvergenceError,
    DimensionError,
    IngestionError,
    UsageError,
)
from .model import PluginConfig, forward, load_checkpoint, save_checkpoint
from .pipeline import evaluate_split, predict, prepare, relative_improvement, run
from .spectral import BAND_NAMES, SharedBasis, band_energies, eigengap
from .train import TrainSettings
from .verify import KNOWN_FAULTS, run_suite

log = logging.getLogger("xcpd.cli")

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3
OUTPUT_ROOT_ENV = "XCPD_OUTPUT_ROOT"
SUPPORTED_TAUS = (0.0, 0.5)


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text):
    if text is None or str(text).strip().lower() in ("", "none"):
        return None
    return float(text)


def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


@dataclass(frozen=True)
class Key:
    parse: object
    default: object
    help: str


DATA_KEYS = {
    "data": Key(str, "synthetic", "CSV path, or 'synthetic' for the built-in generator"),
    "data-seed": Key(int, 0, "seed of the synthetic dataset"),
    "channels": Key(int, 8, "synthetic channel count"),
    "length": Key(int, 8000, "synthetic series length"),
    "date-column": Key(_bool, True, "CSV has a leading timestamp column"),
    "sampling": Key(str, "hourly", "sampling frequency label (hourly => season 24)"),
    "train-frac": Key(float, 0.7, "fraction of steps in the train split"),
    "val-frac": Key(float, 0.1, "fraction of steps in the validation split"),
}

SYNTH_KEYS = {
    "channels": DATA_KEYS["channels"],
    "length": DATA_KEYS["length"],
    "seed": Key(int, 0, "generator seed"),
    "low-amplitude": Key(float, SynthSpec.low_amplitude, "amplitude of shared slow sinusoids"),
    "mid-period": Key(float, SynthSpec.mid_period, "period of the coupled carrier"),
    "mid-amplitude": Key(float, SynthSpec.mid_amplitude, "amplitude of the coupled carrier"),
    "mid-lag": Key(int, SynthSpec.mid_lag, "steps by which each group's leader runs ahead"),
    "envelope-memory": Key(float, SynthSpec.envelope_memory, "AR(1) coefficient of the carrier envelope"),
    "noise-std": Key(float, SynthSpec.noise_std, "std of independent noise"),
    "sampling": DATA_KEYS["sampling"],
    "train-frac": DATA_KEYS["train-frac"],
    "val-frac": DATA_KEYS["val-frac"],
    "out": Key(str, "synthetic.csv", "file name of the generated CSV"),
    "output-dir": Key(str, "xcpd-out", "output directory"),
}

PLUGIN_KEYS = {
    "lookback": Key(int, 96, "lookback length T"),
    "horizon": Key(int, 24, "forecast horizon T'"),
    "stride": Key(int, 1, "step between consecutive windows"),
    "backbone": Key(str, "ridge", "frozen forecaster: ridge or naive"),
    "ridge-lambda": Key(float, 1.0, "ridge strength of the backbone"),
    "patch-len": Key(int, 6, "patch length P"),
    "embed-dim": Key(int, PluginConfig.embed_dim, "embedding width d"),
    "gnn-layers": Key(int, 1, "message-passing layers L"),
    "knn-ratio": Key(float, 0.5, "neighbor ratio alpha; k = floor(alpha n)"),
    "tau": Key(float, 0.5, "expert selection threshold"),
    "allow-extended": Key(_bool, False, "allow tau outside {0.0, 0.5}"),
    "noise-scale": Key(float, 1.0, "routing noise scale during training"),
    "temperature": Key(float, 5.0, "band membership sharpness m"),
    "tau1": Key(_opt_float, None, "low/mid boundary (none = n/3)"),
    "tau2": Key(_opt_float, None, "mid/high boundary (none = 2n/3)"),
    "mu": Key(float, 0.01, "weight of the routing entropy loss"),
    "beta": Key(float, 0.01, "weight of the load-balance loss"),
}

TRAIN_KEYS = {
    **DATA_KEYS,
    **PLUGIN_KEYS,
    "epochs": Key(int, 10, "maximum training epochs"),
    "lr": Key(float, 1e-4, "Adam learning rate"),
    "batch-size": Key(int, 32, "windows per optimizer step"),
    "patience": Key(int, 3, "early-stopping patience in epochs"),
    "seed": Key(int, 0, "training seed"),
    "basis-windows": Key(int, 256, "training windows used to fit the shared basis"),
    "output-dir": SYNTH_KEYS["output-dir"],
}

EVAL_KEYS = {
    **DATA_KEYS,
    "checkpoint": Key(str, "", "checkpoint path (default: <output-dir>/checkpoint.json)"),
    "output-dir": SYNTH_KEYS["output-dir"],
}

INSPECT_KEYS = {
    **EVAL_KEYS,
    "split": Key(str, "test", "split holding the window"),
    "window": Key(int, 0, "window index within the split"),
    "out": Key(str, "spectrum.csv", "file name of the spectrum dump"),
}

VERIFY_KEYS = {
    "seed": Key(int, 0, "seed of the randomized checks"),
    "quick": Key(_bool, False, "fewer gradient-check seeds"),
    "fault": Key(str, "none", f"test hook: inject a fault ({', '.join(KNOWN_FAULTS)})"),
    "output-dir": SYNTH_KEYS["output-dir"],
}

SCHEMAS = {
    "synth": SYNTH_KEYS,
    "train": TRAIN_KEYS,
    "eval": EVAL_KEYS,
    "inspect-spectrum": INSPECT_KEYS,
    "verify": VERIFY_KEYS,
}


def _attr(key: str) -> str:
    return key.replace("-", "_")


def read_config_file(path, command: str) -> dict:
    """Raw string values of ``[command]``; unknown sections or keys are errors."""
    parser = configparser.ConfigParser(default_section="__none__", interpolation=None)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed config {path}: {exc}") from exc
    unknown = set(parser.sections()) - set(SCHEMAS)
    if unknown:
        raise ConfigurationError(f"unknown config sections: {sorted(unknown)}")
    if not parser.has_section(command):
        return {}
    values = dict(parser.items(command))
    bad = set(values) - set(SCHEMAS[command])
    if bad:
        raise ConfigurationError(f"unknown keys in [{command}]: {sorted(bad)}")
    return values


def resolve(command: str, file_values: dict, cli_values: dict) -> dict:
    """Merge default < config file < CLI flag and parse every value."""
    out = {}
    for key, spec in SCHEMAS[command].items():
        raw = spec.default
        if key in file_values:
            raw = file_values[key]
        if cli_values.get(key) is not None:
            raw = cli_values[key]
        try:
            out[key] = spec.parse(raw) if raw is not None else None
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"invalid value for {key}: {raw!r} ({exc})") from None
    return out


def format_config(command: str, cfg: dict) -> str:
    lines = [f"[{command}]"] + [f"{k} = {_fmt(v)}" for k, v in cfg.items()]
    return "\n".join(lines) + "\n"


def output_dir(cfg: dict) -> Path:
    path = Path(cfg["output-dir"])
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not path.is_absolute():
        path = Path(root) / path
    path.mkdir(parents=True, exist_ok=True)
    return path


# -- data -----------------------------------------------------------------


def synth_spec(cfg: dict) -> SynthSpec:
    channels = cfg["channels"]
    if channels < 2:
        raise ConfigurationError("synthetic data needs at least 2 channels")
    kwargs = {k: cfg[k] for k in ("channels", "length", "sampling") if k in cfg}
    kwargs.update(train_frac=cfg["train-frac"], val_frac=cfg["val-frac"],
                  mid_groups=planted_groups(channels))
    for key in ("low-amplitude", "mid-period", "mid-amplitude", "mid-lag",
                "envelope-memory", "noise-std"):
        if key in cfg:
            kwargs[_attr(key)] = cfg[key]
    return SynthSpec(**kwargs)


def load_dataset(cfg: dict):
    if cfg["data"] == "synthetic":
        return synth_generate(synth_spec(cfg), cfg["data-seed"])
    return load_csv(cfg["data"], cfg["date-column"], cfg["sampling"],
                    cfg["train-frac"], cfg["val-frac"])


def plugin_config(cfg: dict, channels: int) -> PluginConfig:
    if cfg["tau"] not in SUPPORTED_TAUS and not cfg["allow-extended"]:
        raise ConfigurationError(
            f"tau {cfg['tau']} is outside {{0.0, 0.5}}; pass --allow-extended to permit it"
        )
    return PluginConfig(
        channels=channels, horizon=cfg["horizon"], patch_len=cfg["patch-len"],
        embed_dim=cfg["embed-dim"], gnn_layers=cfg["gnn-layers"],
        knn_ratio=cfg["knn-ratio"], tau=cfg["tau"], noise_scale=cfg["noise-scale"],
        temperature=cfg["temperature"], tau1=cfg["tau1"], tau2=cfg["tau2"],
        mu=cfg["mu"], beta=cfg["beta"],
    )


# -- commands ---------------------------------------------------------------


def cmd_synth(cfg: dict) -> int:
    spec = synth_spec(cfg)
    ds = synth_generate(spec, cfg["seed"])
    out = output_dir(cfg)
    path = out / cfg["out"]
    write_csv(path, ds)
    write_json(path.with_suffix(".json"), {"config": cfg, "generator": ds.meta})
    log.info("wrote %s", path)
    return EXIT_OK


def basis_extras(basis: SharedBasis) -> dict:
    return {"basis.vectors": basis.basis, "basis.eigenvalues": basis.eigenvalues,
            "basis.mean_laplacian": basis.mean_laplacian}


def basis_from_extras(extras: dict) -> SharedBasis:
    vals = extras["basis.eigenvalues"]
    return SharedBasis(extras["basis.vectors"], vals, extras["basis.mean_laplacian"], eigengap(vals))


def cmd_train(cfg: dict) -> int:
    ds = load_dataset(cfg)
    config = plugin_config(cfg, ds.channels)
    settings = TrainSettings(epochs=cfg["epochs"], lr=cfg["lr"], batch_size=cfg["batch-size"],
                             patience=cfg["patience"], seed=cfg["seed"])
    start = time.perf_counter()
    res = run(ds, config, settings, lookback=cfg["lookback"], stride=cfg["stride"],
              backbone=cfg["backbone"], ridge_lambda=cfg["ridge-lambda"],
              basis_windows=cfg["basis-windows"])
    elapsed = time.perf_counter() - start

    extras = basis_extras(res.basis)
    extras["norm.mean"], extras["norm.std"] = ds.mean, ds.std
    if res.prepared.backbone is not None:
        extras["ridge.weights"] = res.prepared.backbone.weights
        extras["ridge.intercept"] = res.prepared.backbone.intercept
    meta = {"lookback": cfg["lookback"], "stride": cfg["stride"], "backbone": cfg["backbone"],
            "ridge_lambda": cfg["ridge-lambda"], "seed": cfg["seed"]}
    out = output_dir(cfg)
    save_checkpoint(out / "checkpoint.json", config, res.params, extras, meta)
    report = {
        "config": cfg,
        "plugin": config.to_dict(),
        "train": res.report.to_dict(),
        "val_mse": {"backbone": res.val_backbone_mse, "plugin": res.val_plugin_mse},
        "test_mse": {"backbone": res.test_backbone_mse, "plugin": res.test_plugin_mse},
        "basis_eigengap": res.basis.eigengap,
    }
    write_json(out / "report.json", report)
    # wall-clock lives apart from the report so reruns give identical report bytes
    write_json(out / "timing.json", {"train_seconds": elapsed})
    log.info("best epoch %d, val %.6f -> %.6f", res.report.best_epoch,
             res.report.initial_val_loss, res.report.best_val_loss)
    return EXIT_OK


def _checkpoint_path(cfg: dict, out: Path) -> Path:
    return Path(cfg["checkpoint"]) if cfg["checkpoint"] else out / "checkpoint.json"


def _restore(cfg: dict):
    out = output_dir(cfg)
    path = _checkpoint_path(cfg, out)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    config, params, extras, meta = load_checkpoint(path)
    ds = load_dataset(cfg)
    if ds.channels != config.channels:
        raise ConfigurationError(
            f"dataset has shape ({ds.channels}, {ds.length}) but the checkpoint expects "
            f"{config.channels} channels"
        )
    if not np.allclose(ds.mean, extras["norm.mean"]) or not np.allclose(ds.std, extras["norm.std"]):
        log.warning("normalization statistics differ from the training data")
    ridge = None
    if meta["backbone"] == "ridge":
        ridge = RidgeBackbone(extras["ridge.weights"], extras["ridge.intercept"])
    prep = prepare(ds, meta["lookback"], config.horizon, meta["stride"], meta["backbone"],
                   meta["ridge_lambda"], ridge=ridge)
    return out, ds, config, params, basis_from_extras(extras), prep


def cmd_eval(cfg: dict) -> int:
    out, ds, config, params, basis, prep = _restore(cfg)
    report = {"backbone": {}, "plugin": {}, "relative_improvement": {}}
    for name in ("val", "test"):
        split = prep.splits[name]
        plug_pred = predict(params, config, basis, split.backbone)
        base, plug = evaluate_split(split, plug_pred, ds.season())
        report["backbone"][name] = base.to_dict()
        report["plugin"][name] = plug.to_dict()
        report["relative_improvement"][name] = {
            "mse": relative_improvement(base.mse, plug.mse),
            "mae": relative_improvement(base.mae, plug.mae),
        }
        write_predictions(out / f"predictions_{name}.csv", plug_pred, split.starts, ds.channel_names)
        write_predictions(out / f"backbone_{name}.csv", split.backbone, split.starts,
                          ds.channel_names)
    write_json(out / "metrics.json", report)
    log.info("test MSE %.6f -> %.6f", report["backbone"]["test"]["mse"],
             report["plugin"]["test"]["mse"])
    return EXIT_OK


def spectrum_rows(trace, config: PluginConfig):
    """One row per node: id, channel, patch, group, band energies, selected experts."""
    bands = config.bands()
    energy = band_energies(trace.energy, bands)
    labels = trace.structure.labels.reshape(-1)
    selected = trace.structure.selected.reshape(-1, 3)
    grid = config.grid
    rows = []
    for i in range(config.n):
        ch, p = grid.node_position(i)
        experts = ";".join(BAND_NAMES[b] for b in range(3) if selected[i, b])
        rows.append([i, ch, p, BAND_NAMES[labels[i]]] + [repr(float(e)) for e in energy[i]] + [experts])
    return rows


def cmd_inspect_spectrum(cfg: dict) -> int:
    out, ds, config, params, basis, prep = _restore(cfg)
    if cfg["split"] not in prep.splits:
        raise ConfigurationError(f"unknown split {cfg['split']!r}")
    split = prep.splits[cfg["split"]]
    idx = cfg["window"]
    if not 0 <= idx < len(split.starts):
        raise UsageError(f"window {idx} out of range [0, {len(split.starts)}) for {cfg['split']}")
    trace = forward(split.backbone[idx], params, config, basis, training=False)
    path = out / cfg["out"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_id", "channel", "patch", "group",
                    "energy_low", "energy_mid", "energy_high", "experts"])
        w.writerows(spectrum_rows(trace, config))
    log.info("wrote %s", path)
    return EXIT_OK


def cmd_verify(cfg: dict) -> int:
    fault = None if cfg["fault"].lower() == "none" else cfg["fault"]
    summary = run_suite(seed=cfg["seed"], fault=fault, quick=cfg["quick"])
    out = output_dir(cfg)
    write_json(out / "verify.json", summary)
    for check in summary["checks"]:
        print(f"{'PASS' if check['passed'] else 'FAIL'} {check['name']}")
    print(f"basis-bound trials: {summary['basis_bound_trials']}")
    return EXIT_OK if summary["passed"] else EXIT_VERIFY


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "inspect-spectrum": cmd_inspect_spectrum,
    "verify": cmd_verify,
}


HELP = {
    "synth": "generate a synthetic dataset with planted cross-channel coupling",
    "train": "fit backbone and shared basis, then train the plugin",
    "eval": "score backbone and backbone + plugin on val and test",
    "inspect-spectrum": "dump per-node band energies, groups and experts for one window",
    "verify": "run the invariant suite",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xcpd", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, schema in SCHEMAS.items():
        p = sub.add_parser(name, help=HELP[name])
        p.add_argument("--config", help="INI file with a [%s] section" % name)
        p.add_argument("--print-config", action="store_true",
                       help="print the resolved configuration and exit")
        for key, spec in schema.items():
            extra = {"nargs": "?", "const": "true"} if spec.parse is _bool else {}
            p.add_argument(f"--{key}", dest=_attr(key), default=None,
                           help=f"{spec.help} (default: {_fmt(spec.default)})", **extra)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        file_values = read_config_file(args.config, args.command) if args.config else {}
        cli_values = {k: getattr(args, _attr(k)) for k in SCHEMAS[args.command]}
        cfg = resolve(args.command, file_values, cli_values)
        if args.print_config:
            sys.stdout.write(format_config(args.command, cfg))
            return EXIT_OK
        return COMMANDS[args.command](cfg)
    except (ConfigurationError, DimensionError, UsageError) as exc:
        print(f"xcpd {args.command}: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, IngestionError) as exc:
        print(f"xcpd {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ConvergenceError as exc:
        print(f"xcpd {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_VERIFY


if __name__ == "__main__":
    sys.exit(main())
