"""Experiment orchestration: learning-rate search, modeling bias, parameter sweeps, experimental pipeline."""

from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from jumptable import __version__
from jumptable.binning import DEFAULT_CANDIDATE_GRID, build_binning_model, optimize_bins
from jumptable.device import ConductanceBounds, DeviceDataset, Direction, JumpTablePair
from jumptable.io import compliance_transform
from jumptable.metrics import compare_models, ks2d
from jumptable.nn import RunRecord, TrainConfig, compute_p_max, train
from jumptable.optimizer import (
    SearchBudget,
    dense_axis,
    initialize_from_binning,
    optimize_profiles,
    paired_error,
    rescore,
)
from jumptable.synthetic import TargetSpec, build_target_tables, c2c_from_sigma, generate_synthetic_data

logger = logging.getLogger(__name__)

DEFAULT_LR_GRID = (1e-3, 3e-3, 1e-2, 3e-2, 1e-1, 3e-1, 1.0)
LR_SEARCH_EPOCHS = 10

# Desk scale keeps the number of updates per epoch close to 60,000 / 4,096
# when training on the 5,000-image MNIST subset.
DESK_SCALE = {"repeats": 5, "epochs": 20, "batch_size": 256}
FULL_SCALE = {"repeats": 20, "epochs": 100, "batch_size": 4096}

SWEEP_AXES = ("dataset_size", "c2c_sigma", "nonlinearity_k", "voltage")


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from any sequence of printable parts."""
    h = hashlib.sha256("/".join(map(str, parts)).encode()).digest()
    return int.from_bytes(h[:8], "big") >> 1


# --- learning rate ---------------------------------------------------------

@dataclass(frozen=True)
class LrSearch:
    best: float
    scores: dict


def grid_search_lr(source: Optional[JumpTablePair], candidates: Sequence[float], data, base: TrainConfig,
                   seeds: Sequence[int] = (0,), epochs: int = LR_SEARCH_EPOCHS,
                   p_max: Optional[int] = None) -> LrSearch:
    """Pick the rate with the best test accuracy averaged over the first `epochs` epochs.

    Ties go to the smaller rate.
    """
    if not candidates:
        raise ValueError("no learning-rate candidates")
    scores = {}
    for lr in sorted(candidates):
        runs = [train(source, replace(base, learning_rate=lr, epochs=epochs, seed=s), data, p_max=p_max)
                for s in seeds]
        scores[lr] = float(np.mean([np.mean(r.test_acc[:epochs]) for r in runs]))
    best = max(sorted(scores), key=lambda lr: (scores[lr], -lr))
    return LrSearch(best, scores)


# --- modeling bias ---------------------------------------------------------

@dataclass(frozen=True)
class BiasReport:
    per_epoch: tuple
    mean_abs_bias: float
    n_repeats: int
    model_manifest: tuple = ()
    target_manifest: tuple = ()

    @property
    def model_mean(self):
        return self.per_epoch


def mean_curve(runs: Sequence[RunRecord]) -> np.ndarray:
    return np.mean([r.test_acc for r in runs], axis=0)


def modeling_bias(model_runs: Sequence[RunRecord], target_runs: Sequence[RunRecord]) -> BiasReport:
    """Epoch-wise mean model accuracy minus mean target accuracy.

    Positive values mean the model over-promises.
    """
    if not model_runs or not target_runs:
        raise ValueError("both run lists must be non-empty")
    epochs = {r.epochs for r in model_runs} | {r.epochs for r in target_runs}
    if len(epochs) != 1:
        raise ValueError(f"runs disagree on the number of epochs: {sorted(epochs)}")
    mb = mean_curve(model_runs) - mean_curve(target_runs)
    manifest = lambda runs: tuple((r.provenance, r.seed) for r in runs)  # noqa: E731
    return BiasReport(tuple(float(v) for v in mb), float(np.mean(np.abs(mb))),
                      min(len(model_runs), len(target_runs)), manifest(model_runs), manifest(target_runs))


# --- sweeps ----------------------------------------------------------------

@dataclass(frozen=True)
class SweepSpec:
    axis: str
    values: tuple
    repeats: int = DESK_SCALE["repeats"]
    epochs: int = DESK_SCALE["epochs"]
    batch_size: int = DESK_SCALE["batch_size"]
    base: TargetSpec = field(default_factory=TargetSpec)
    dataset_size: int = 4000
    lr_grid: tuple = DEFAULT_LR_GRID
    lr_seeds: int = 1
    candidate_grid: tuple = DEFAULT_CANDIDATE_GRID
    root_seed: int = 0
    word_bits: int = 6

    def __post_init__(self):
        if self.axis not in SWEEP_AXES:
            raise ValueError(f"unknown sweep axis {self.axis!r}; choose from {SWEEP_AXES}")
        if not self.values:
            raise ValueError("sweep values must not be empty")
        if self.repeats < 1:
            raise ValueError("repeats must be at least 1")

    @classmethod
    def full_scale(cls, axis: str, values, **kw) -> "SweepSpec":
        return cls(axis, tuple(values), **{**FULL_SCALE, **kw})

    def config_dict(self) -> dict:
        d = asdict(self)
        d["values"] = list(self.values)
        d["lr_grid"] = list(self.lr_grid)
        d["candidate_grid"] = [list(c) for c in self.candidate_grid]
        return d

    def row_target(self, value) -> tuple[TargetSpec, int]:
        base, n = self.base, self.dataset_size
        if self.axis == "dataset_size":
            n = int(value)
        elif self.axis == "c2c_sigma":
            base = replace(base, c2c=c2c_from_sigma(float(value), base.bounds))
        elif self.axis == "nonlinearity_k":
            base = replace(base, nonlinearity_k=float(value))
        else:
            raise ValueError("voltage sweeps run through experimental_pipeline")
        return base, n


ROW_FIELDS = (
    "row_id", "axis", "value", "seed", "config_hash", "code_version", "status",
    "n_points", "sigma", "nonlinearity_k", "set_bins", "reset_bins", "low_confidence",
    "ssd", "ovle", "ssd_set", "ovle_set", "ssd_reset", "ovle_reset",
    "p_max", "learning_rate", "target_opt_acc", "binning_opt_acc", "target_final_acc",
    "binning_final_acc", "mean_abs_bias", "bias_trace",
)


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ";".join(_fmt(x) for x in v)
    return str(v)


def format_row(row: dict) -> str:
    buf = _io.StringIO()
    csv.writer(buf, lineterminator="\n").writerow([_fmt(row.get(k, "")) for k in ROW_FIELDS])
    return buf.getvalue()


def row_config_hash(spec: SweepSpec, value) -> str:
    payload = json.dumps({"spec": spec.config_dict(), "value": value}, sort_keys=True, default=str)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def binning_pair(target: JumpTablePair, n: int, candidate_grid, seed: int):
    """Synthesize n points per direction from the target and fit a binning model to each."""
    bounds = target.bounds
    profiles, configs, low_conf = {}, {}, False
    for i, direction in enumerate(Direction):
        rng = np.random.default_rng([seed, i])
        data = generate_synthetic_data(n, bounds, target.table(direction), rng)
        cfg = optimize_bins(data, bounds, candidate_grid, rng)
        model = build_binning_model(data, cfg, bounds)
        profiles[direction], configs[direction] = model.profile, cfg
        low_conf = low_conf or model.low_confidence
    pair = JumpTablePair(profiles[Direction.SET], profiles[Direction.RESET], bounds)
    return pair, configs, low_conf


def run_sweep_row(spec: SweepSpec, row_id: int, data) -> dict:
    """Everything for one axis value; deterministic given (spec, row_id)."""
    value = spec.values[row_id]
    seed = derive_seed(spec.root_seed, spec.axis, row_id)
    row = {"row_id": row_id, "axis": spec.axis, "value": value, "seed": seed,
           "config_hash": row_config_hash(spec, value), "code_version": __version__}
    try:
        target_spec, n = spec.row_target(value)
        target = build_target_tables(target_spec)
        binning, configs, low_conf = binning_pair(target, n, spec.candidate_grid, derive_seed(seed, "data"))
        cmp = compare_models(target, binning)
        # binning models share the target's dynamic range: a noisy binned mean can
        # stall before g_max, which would make its own pulse count undefined
        pm = compute_p_max(target)
        if pm.cap_hit:
            raise ValueError("target mean profile does not traverse the conductance range")
        base = TrainConfig(batch_size=spec.batch_size, epochs=spec.epochs,
                           quant=replace(TrainConfig().quant, word_bits=spec.word_bits))
        lr_seeds = [derive_seed(seed, "lr", i) for i in range(spec.lr_seeds)]
        lr = grid_search_lr(target, spec.lr_grid, data, base, lr_seeds, p_max=pm.p_max).best
        cfgs = [replace(base, learning_rate=lr, seed=derive_seed(seed, "repeat", r)) for r in range(spec.repeats)]
        target_runs = [train(target, c, data, "target", p_max=pm.p_max) for c in cfgs]
        binning_runs = [train(binning, c, data, "binning", p_max=pm.p_max) for c in cfgs]
        report = modeling_bias(binning_runs, target_runs)
        t_curve, b_curve = mean_curve(target_runs), mean_curve(binning_runs)
        row.update({
            "status": "ok", "n_points": n, "sigma": target_spec.sigma, "nonlinearity_k": target_spec.nonlinearity_k,
            "set_bins": f"{configs[Direction.SET].g_bins}x{configs[Direction.SET].dg_bins}",
            "reset_bins": f"{configs[Direction.RESET].g_bins}x{configs[Direction.RESET].dg_bins}",
            "low_confidence": low_conf, "ssd": cmp.ssd, "ovle": cmp.ovle,
            "ssd_set": cmp.per_direction["set"]["ssd"], "ovle_set": cmp.per_direction["set"]["ovle"],
            "ssd_reset": cmp.per_direction["reset"]["ssd"], "ovle_reset": cmp.per_direction["reset"]["ovle"],
            "p_max": pm.p_max, "learning_rate": lr,
            "target_opt_acc": float(t_curve.max()), "binning_opt_acc": float(b_curve.max()),
            "target_final_acc": float(t_curve[-1]), "binning_final_acc": float(b_curve[-1]),
            "mean_abs_bias": report.mean_abs_bias, "bias_trace": list(report.per_epoch),
        })
    except Exception as exc:  # one bad row must not sink the sweep
        logger.exception("sweep row %d (%s=%s) failed", row_id, spec.axis, value)
        row["status"] = f"error: {type(exc).__name__}: {exc}"
    return row


def _completed_rows(path: Path) -> dict:
    if not path.exists():
        return {}
    with path.open(newline="", encoding="utf-8") as fh:
        return {int(r["row_id"]): r for r in csv.DictReader(fh) if r.get("status") == "ok"}


def run_sweep(spec: SweepSpec, data, out_dir=None) -> list[dict]:
    """Run every axis value; with `out_dir`, rows are appended to sweep.csv and completed rows are skipped."""
    rows = []
    done, table = {}, None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "manifest.json").write_text(json.dumps(
            {"spec": spec.config_dict(), "code_version": __version__}, indent=2, default=str) + "\n")
        table = out / "sweep.csv"
        done = _completed_rows(table)
        if not table.exists():
            table.write_text(",".join(ROW_FIELDS) + "\n", encoding="utf-8")
    for row_id in range(len(spec.values)):
        if row_id in done:
            rows.append(done[row_id])
            continue
        row = run_sweep_row(spec, row_id, data)
        rows.append(row)
        if table is not None:
            with table.open("a", encoding="utf-8") as fh:
                fh.write(format_row(row))
    if out_dir is not None:
        write_plot_data(spec.axis, rows, Path(out_dir) / "plot_data.csv")
    return rows


def write_plot_data(axis: str, rows: Sequence[dict], path) -> None:
    """x/y/err columns for the device-metric and bias plots of a sweep."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("series", "x", "y", "err"))
        for r in rows:
            if r.get("status") != "ok":
                continue
            for key in ("ovle", "ssd", "mean_abs_bias", "target_opt_acc", "binning_opt_acc", "learning_rate"):
                w.writerow((key, r["value"], r[key], ""))
            trace = r["bias_trace"]
            if isinstance(trace, str):
                trace = [float(v) for v in trace.split(";") if v]
            for epoch, mb in enumerate(trace, start=1):
                w.writerow((f"bias_trace[{axis}={r['value']}]", epoch, mb, ""))


# --- experimental data -----------------------------------------------------

def default_degrees(voltage: Optional[float]) -> tuple[int, int]:
    """Quadratic profiles for RESET (negative) voltages, linear for SET."""
    return (2, 2) if voltage is not None and voltage < 0 else (1, 1)


def normalized_profile_difference(binning, optimized, axis) -> tuple[float, float]:
    """100 * mean((binning - optimized) / max|optimized|) for the mean and sigma profiles."""
    mb, sb = binning.evaluate(axis)
    mo, so = optimized.evaluate(axis)
    out = []
    for b, o in ((mb, mo), (sb, so)):
        scale = float(np.max(np.abs(o)))
        out.append(100.0 * float(np.mean(b - o)) / scale if scale > 0 else 0.0)
    return out[0], out[1]


@dataclass
class ExperimentalResult:
    ks_table: list
    profile_table: list
    iterations: dict = field(default_factory=dict)


def experimental_pipeline(datasets: dict, bounds: ConductanceBounds = ConductanceBounds(), repeats: int = 20,
                          seed: int = 0, max_trials: int = 500, candidate_grid=DEFAULT_CANDIDATE_GRID,
                          degrees: Optional[dict] = None) -> ExperimentalResult:
    """Binning vs optimized models on measured data, scored by 2D KS against held-out halves.

    `datasets` maps a label (usually the pulse voltage) to a DeviceDataset.
    Each of `repeats` iterations re-splits the data 50/50 into modeling and
    test halves. Per label the KS table reports mean and standard deviation
    over iterations of KS(test, binning synth), KS(test, optimized synth)
    and KS(test, modeling half).
    """
    ks_rows, prof_rows, per_label = [], [], {}
    for label, d in datasets.items():
        try:
            g, dg = compliance_transform(d.g, d.delta_g, bounds)
            d = DeviceDataset(g, dg, d.voltage)
            m, n = (degrees or {}).get(label, default_degrees(d.voltage if d.voltage is not None else _as_float(label)))
            its = []
            for it in range(repeats):
                it_seed = derive_seed(seed, label, it)
                rng = np.random.default_rng(it_seed)
                model_half, test_half = d.split(rng)
                cfg = optimize_bins(model_half, bounds, candidate_grid, rng)
                binning = build_binning_model(model_half, cfg, bounds).profile
                size = len(model_half)
                e = paired_error(binning, size, bounds, test_half, it_seed)
                init = initialize_from_binning(binning, m, n)
                opt = optimize_profiles(model_half, test_half, init,
                                        SearchBudget(max_trials=max_trials, target_error=e, seed=it_seed), bounds)
                axis = dense_axis(bounds)
                dmu, dsig = normalized_profile_difference(binning, opt.profile, axis)
                its.append({
                    "ks_binning": rescore(binning, size, bounds, test_half, it_seed),
                    "ks_optimized": rescore(opt.profile, size, bounds, test_half, it_seed),
                    "ks_baseline": ks2d(test_half, model_half),
                    "beat_binning": opt.beat_target, "trials": len(opt.trials),
                    "mu_diff_pct": dmu, "sigma_diff_pct": dsig,
                })
            per_label[label] = its
            row = {"label": label, "status": "ok", "iterations": repeats}
            for key in ("ks_binning", "ks_optimized", "ks_baseline"):
                vals = np.array([i[key] for i in its])
                row[f"{key}_mean"], row[f"{key}_std"] = float(vals.mean()), float(vals.std())
            row["beat_fraction"] = float(np.mean([i["beat_binning"] for i in its]))
            ks_rows.append(row)
            prof_rows.append({
                "label": label,
                "mu_diff_pct": float(np.mean([i["mu_diff_pct"] for i in its])),
                "sigma_diff_pct": float(np.mean([i["sigma_diff_pct"] for i in its])),
            })
        except Exception as exc:
            logger.exception("experimental pipeline failed for %s", label)
            ks_rows.append({"label": label, "status": f"error: {type(exc).__name__}: {exc}"})
    return ExperimentalResult(ks_rows, prof_rows, per_label)


def _as_float(label):
    try:
        return float(label)
    except (TypeError, ValueError):
        return None


def write_table(rows: Sequence[dict], path) -> None:
    keys = []
    for r in rows:
        keys += [k for k in r if k not in keys]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) for k, v in r.items()})
