"""Command-line entry point: ``jumptable <subcommand> [--seed N] [--config FILE] [--out DIR]``.

Configuration precedence is built-in defaults, then the JSON config file,
then explicit command-line flags. ``--dump-config`` prints the merged
configuration for a subcommand and exits.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from jumptable import __version__
from jumptable.device import ConductanceBounds, Direction, JumpTablePair
from jumptable.io import (
    DataError,
    SchemaError,
    file_sha256,
    load_device_csv,
    load_mnist,
    load_model,
    save_device_csv,
    save_model,
    save_run_records,
)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_BUDGET = 0, 2, 3, 4

logger = logging.getLogger("jumptable")


class ConfigError(ValueError):
    pass


COMMON = {"seed": 0, "out": "out", "g_min": 3.0, "g_max": 38.0}

DEFAULTS = {
    "synth": {"n": 4000, "sigma": 1.225, "nonlinearity_k": 1.0},
    "fit-binning": {"set_csv": None, "reset_csv": None},
    "fit-opt": {"data": None, "voltage": None, "mu_degree": None, "sigma_degree": None,
                "max_trials": 2000, "target_error": None},
    "metrics": {"model_a": None, "model_b": None, "n_points": 101},
    "train": {"model": None, "learning_rate": 0.1, "batch_size": 256, "epochs": 20,
              "word_bits": 6, "mnist_dir": None, "repeats": 1},
    "sweep": {"axis": "dataset_size", "values": [40, 500, 4000], "repeats": 5, "epochs": 20,
              "batch_size": 256, "full_scale": False, "sigma": 1.225, "dataset_size": 4000,
              "mnist_dir": None},
    "experimental": {"csv": [], "repeats": 20, "max_trials": 500},
}

# flags whose values are lists or booleans need special argparse handling
_LIST_KEYS = {"values", "csv"}
_BOOL_KEYS = {"full_scale"}


def _add_flags(p: argparse.ArgumentParser, defaults: dict) -> None:
    p.add_argument("--config", help="JSON file with flat key/value overrides")
    p.add_argument("--dump-config", action="store_true", help="print the effective configuration and exit")
    for key, value in {**COMMON, **defaults}.items():
        flag = "--" + key.replace("_", "-")
        if key in _BOOL_KEYS:
            p.add_argument(flag, dest=key, action="store_true", default=None)
        elif key in _LIST_KEYS:
            p.add_argument(flag, dest=key, nargs="+", default=None)
        else:
            kind = type(value) if value is not None and not isinstance(value, bool) else str
            p.add_argument(flag, dest=key, type=kind, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jumptable", description="Jump-table device models for crossbar training.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "synth": "sample (G, dG) datasets from a parametric target device",
        "fit-binning": "fit a binning model to SET and RESET CSVs",
        "fit-opt": "optimize polynomial profiles for one CSV",
        "metrics": "SSD and OVLE between two model files",
        "train": "train the 400-50-10 network on a device model (or in float)",
        "sweep": "run a parameter sweep with resumable CSV output",
        "experimental": "binning vs optimized KS comparison on measured CSVs",
    }
    for name, defaults in DEFAULTS.items():
        _add_flags(sub.add_parser(name, help=helps[name]), defaults)
    return parser


def resolve_config(command: str, args: argparse.Namespace) -> dict:
    cfg = {**COMMON, **DEFAULTS[command]}
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a flat JSON object")
        unknown = set(loaded) - set(cfg)
        if unknown:
            raise ConfigError(f"unknown config keys for {command}: {sorted(unknown)}")
        cfg.update(loaded)
    for key in cfg:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    return cfg


def _bounds(cfg) -> ConductanceBounds:
    try:
        return ConductanceBounds(float(cfg["g_min"]), float(cfg["g_max"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _require(cfg, *keys):
    missing = [k for k in keys if not cfg.get(k)]
    if missing:
        raise ConfigError("missing required option(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


def _out_dir(cfg) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, default=str) + "\n", encoding="utf-8")


# --- subcommands -----------------------------------------------------------

def cmd_synth(cfg) -> int:
    from jumptable.synthetic import TargetSpec, build_target_tables, generate_synthetic_data

    bounds = _bounds(cfg)
    try:
        spec = TargetSpec.from_sigma(float(cfg["sigma"]), bounds=bounds, nonlinearity_k=float(cfg["nonlinearity_k"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    pair = build_target_tables(spec)
    out = _out_dir(cfg)
    for i, direction in enumerate(Direction):
        rng = np.random.default_rng([int(cfg["seed"]), i])
        data = generate_synthetic_data(int(cfg["n"]), bounds, pair.table(direction), rng)
        save_device_csv(data, out / f"{direction.value}.csv")
    save_model(out / "target_model.json", pair, {"method": "target", "seed": cfg["seed"], "config": cfg})
    print(f"wrote {out}/set.csv, {out}/reset.csv and {out}/target_model.json")
    return EXIT_OK


def cmd_fit_binning(cfg) -> int:
    from jumptable.binning import DEFAULT_CANDIDATE_GRID, build_binning_model, optimize_bins

    _require(cfg, "set_csv", "reset_csv")
    bounds = _bounds(cfg)
    rng = np.random.default_rng(int(cfg["seed"]))
    profiles, chosen = {}, {}
    for direction, key in ((Direction.SET, "set_csv"), (Direction.RESET, "reset_csv")):
        data = load_device_csv(cfg[key], bounds=bounds)
        bins = optimize_bins(data, bounds, DEFAULT_CANDIDATE_GRID, rng)
        model = build_binning_model(data, bins, bounds)
        if model.low_confidence:
            logger.warning("%s: fewer than 30 samples per occupied bin on average", cfg[key])
        profiles[direction] = model.profile
        chosen[direction.value] = [bins.g_bins, bins.dg_bins]
    pair = JumpTablePair(profiles[Direction.SET], profiles[Direction.RESET], bounds)
    out = _out_dir(cfg)
    save_model(out / "binning_model.json", pair, {
        "method": "binning", "seed": cfg["seed"], "config": cfg, "bins": chosen,
        "dataset_hash": file_sha256(cfg["set_csv"]),
        "dataset_hashes": {"set": file_sha256(cfg["set_csv"]), "reset": file_sha256(cfg["reset_csv"])},
    })
    print(json.dumps({"bins": chosen}))
    return EXIT_OK


def cmd_fit_opt(cfg) -> int:
    from jumptable.binning import DEFAULT_CANDIDATE_GRID, build_binning_model, optimize_bins
    from jumptable.harness import default_degrees
    from jumptable.optimizer import (
        SearchBudget,
        initialize_from_binning,
        optimize_profiles,
        paired_error,
        save_trial_log,
    )

    _require(cfg, "data")
    bounds = _bounds(cfg)
    seed = int(cfg["seed"])
    voltage = None if cfg["voltage"] is None else float(cfg["voltage"])
    data = load_device_csv(cfg["data"], voltage, bounds)
    rng = np.random.default_rng(seed)
    model_half, test_half = data.split(rng)
    bins = optimize_bins(model_half, bounds, DEFAULT_CANDIDATE_GRID, rng)
    binning = build_binning_model(model_half, bins, bounds).profile
    target = cfg["target_error"]
    if target is None:
        target = paired_error(binning, len(model_half), bounds, test_half, seed)
    m, n = default_degrees(voltage)
    m = m if cfg["mu_degree"] is None else int(cfg["mu_degree"])
    n = n if cfg["sigma_degree"] is None else int(cfg["sigma_degree"])
    result = optimize_profiles(model_half, test_half, initialize_from_binning(binning, m, n),
                               SearchBudget(int(cfg["max_trials"]), float(target), seed), bounds)
    out = _out_dir(cfg)
    save_trial_log(result.trials, out / "trials.csv")
    summary = {
        "mu_coeffs": list(result.spec.mu_coeffs), "sigma_coeffs": list(result.spec.sigma_coeffs),
        "knots": result.profile.knots.tolist(), "mu": result.profile.mu.tolist(),
        "sigma": result.profile.sigma.tolist(), "error": result.error,
        "rescored_error": result.rescored_error, "binning_error": float(target),
        "beat_target": result.beat_target, "trials": len(result.trials),
        "dataset_hash": file_sha256(cfg["data"]), "seed": seed,
    }
    _write_json(out / "optimized_profile.json", summary)
    print(json.dumps({k: summary[k] for k in ("error", "rescored_error", "binning_error", "beat_target", "trials")}))
    return EXIT_OK if result.beat_target else EXIT_BUDGET


def cmd_metrics(cfg) -> int:
    from jumptable.metrics import compare_models

    _require(cfg, "model_a", "model_b")
    a, _ = load_model(cfg["model_a"])
    b, _ = load_model(cfg["model_b"])
    cmp = compare_models(a, b, int(cfg["n_points"]))
    result = {"ssd": cmp.ssd, "ovle": cmp.ovle, "n_eval_points": cmp.n_eval_points, "per_direction": cmp.per_direction}
    _write_json(_out_dir(cfg) / "metrics.json", result)
    print(json.dumps(result))
    return EXIT_OK


def cmd_train(cfg) -> int:
    from jumptable.nn import QuantSpec, TrainConfig, train

    source, provenance = None, "float"
    if cfg["model"]:
        source, meta = load_model(cfg["model"])
        provenance = meta.get("method", "model")
    data = load_mnist(cfg["mnist_dir"])
    try:
        base = TrainConfig(learning_rate=float(cfg["learning_rate"]), batch_size=int(cfg["batch_size"]),
                           epochs=int(cfg["epochs"]), quant=QuantSpec(int(cfg["word_bits"])))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    records = [train(source, replace(base, seed=int(cfg["seed"]) + r), data, provenance)
               for r in range(int(cfg["repeats"]))]
    out = _out_dir(cfg)
    save_run_records(records, out / "runs.csv")
    print(json.dumps({"final_test_acc": [r.test_acc[-1] for r in records]}))
    return EXIT_OK


def _parse_values(axis, values):
    cast = int if axis == "dataset_size" else float
    try:
        return tuple(cast(v) for v in values)
    except ValueError as exc:
        raise ConfigError(f"bad sweep values: {exc}") from None


def cmd_sweep(cfg) -> int:
    from jumptable.harness import FULL_SCALE, SweepSpec, run_sweep
    from jumptable.synthetic import TargetSpec

    bounds = _bounds(cfg)
    scale = FULL_SCALE if cfg["full_scale"] else {
        "repeats": int(cfg["repeats"]), "epochs": int(cfg["epochs"]), "batch_size": int(cfg["batch_size"])}
    try:
        spec = SweepSpec(cfg["axis"], _parse_values(cfg["axis"], cfg["values"]), **scale,
                         base=TargetSpec.from_sigma(float(cfg["sigma"]), bounds=bounds),
                         dataset_size=int(cfg["dataset_size"]), root_seed=int(cfg["seed"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    rows = run_sweep(spec, load_mnist(cfg["mnist_dir"]), cfg["out"])
    failed = [r for r in rows if r.get("status") != "ok"]
    print(f"{len(rows) - len(failed)} rows ok, {len(failed)} failed; results in {cfg['out']}/sweep.csv")
    return EXIT_OK


def cmd_experimental(cfg) -> int:
    from jumptable.harness import experimental_pipeline, write_table

    if not cfg["csv"]:
        raise ConfigError("give at least one --csv VOLTAGE=PATH")
    bounds = _bounds(cfg)
    datasets = {}
    for item in cfg["csv"]:
        label, sep, path = str(item).partition("=")
        if not sep:
            raise ConfigError(f"--csv entries look like VOLTAGE=PATH, got {item!r}")
        try:
            voltage = float(label)
        except ValueError:
            raise ConfigError(f"voltage label {label!r} is not a number") from None
        datasets[label] = load_device_csv(path, voltage, bounds)
    res = experimental_pipeline(datasets, bounds, int(cfg["repeats"]), int(cfg["seed"]), int(cfg["max_trials"]))
    out = _out_dir(cfg)
    write_table(res.ks_table, out / "ks_table.csv")
    write_table(res.profile_table, out / "profile_difference.csv")
    print(f"wrote {out}/ks_table.csv and {out}/profile_difference.csv")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth, "fit-binning": cmd_fit_binning, "fit-opt": cmd_fit_opt, "metrics": cmd_metrics,
    "train": cmd_train, "sweep": cmd_sweep, "experimental": cmd_experimental,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args.command, args)
        if args.dump_config:
            print(json.dumps(cfg, indent=2, sort_keys=True))
            return EXIT_OK
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, SchemaError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
