from __future__ import annotations

from types import SimpleNamespace

import numpy as np
import pytest

from jumptable.device import ConductanceBounds, Profile
from jumptable.harness import (
    DEFAULT_LR_GRID,
    ROW_FIELDS,
    SweepSpec,
    derive_seed,
    experimental_pipeline,
    format_row,
    grid_search_lr,
    modeling_bias,
    normalized_profile_difference,
    run_sweep,
    run_sweep_row,
)
from jumptable.nn import RunRecord, TrainConfig
from jumptable.synthetic import generate_synthetic_data


def rec(acc, prov="m", seed=0):
    return RunRecord(list(acc), list(acc), {}, prov, seed)


def test_modeling_bias_examples():
    r = modeling_bias([rec([0.9, 0.92])], [rec([0.88, 0.90])])
    assert r.per_epoch == pytest.approx((0.02, 0.02))
    assert r.mean_abs_bias == pytest.approx(0.02)
    r = modeling_bias([rec([0.5, 0.7]), rec([0.7, 0.9])], [rec([0.6, 0.8])])
    assert r.per_epoch == pytest.approx((0.0, 0.0))
    with pytest.raises(ValueError):
        modeling_bias([rec([0.5])], [rec([0.5, 0.6])])
    with pytest.raises(ValueError):
        modeling_bias([], [rec([0.5])])


def test_modeling_bias_antisymmetric():
    a, b = [rec([0.1, 0.5, 0.7])], [rec([0.2, 0.4, 0.9])]
    assert modeling_bias(a, b).per_epoch == pytest.approx(tuple(-v for v in modeling_bias(b, a).per_epoch))


def test_default_grid():
    assert DEFAULT_LR_GRID == (1e-3, 3e-3, 1e-2, 3e-2, 1e-1, 3e-1, 1.0)


def test_grid_search_ties_go_to_smaller_rate(monkeypatch):
    import jumptable.harness as h

    def fake_train(source, cfg, data, p_max=None):
        acc = 0.9 if cfg.learning_rate >= 0.1 else 0.5
        return rec([acc] * cfg.epochs)

    monkeypatch.setattr(h, "train", fake_train)
    res = grid_search_lr(None, DEFAULT_LR_GRID, None, TrainConfig())
    assert res.best == 0.1
    with pytest.raises(ValueError):
        grid_search_lr(None, (), None, TrainConfig())


def test_derive_seed_stable():
    assert derive_seed(0, "x", 1) == derive_seed(0, "x", 1)
    assert derive_seed(0, "x", 1) != derive_seed(0, "x", 2)
    assert 0 <= derive_seed(5) < 2**63


def test_sweep_spec_validation():
    with pytest.raises(ValueError):
        SweepSpec("bogus", (1,))
    with pytest.raises(ValueError):
        SweepSpec("dataset_size", ())
    assert SweepSpec.full_scale("dataset_size", (40,)).repeats == 20


def _tiny_mnist():
    rng = np.random.default_rng(0)
    centers = rng.normal(0, 1, (10, 400))
    y = rng.integers(0, 10, 300)
    x = centers[y] + 0.5 * rng.normal(0, 1, (300, 400))
    return SimpleNamespace(train_x=x[:200], train_y=y[:200], test_x=x[200:], test_y=y[200:])


def _small_spec(**kw):
    base = dict(repeats=1, epochs=2, batch_size=50, lr_grid=(0.3, 1.0), candidate_grid=((4, 4), (8, 4)))
    return SweepSpec("dataset_size", kw.pop("values", (60, 300)), **{**base, **kw})


def test_sweep_row_reproducible_and_resumable(tmp_path):
    data = _tiny_mnist()
    spec = _small_spec()
    rows = run_sweep(spec, data, tmp_path)
    assert all(r["status"] == "ok" for r in rows)
    lines = (tmp_path / "sweep.csv").read_text().splitlines()
    assert lines[0].split(",") == list(ROW_FIELDS)
    assert format_row(run_sweep_row(spec, 1, data)).rstrip("\n") == lines[2]
    # a second run appends nothing
    run_sweep(spec, data, tmp_path)
    assert (tmp_path / "sweep.csv").read_text().splitlines() == lines
    assert (tmp_path / "plot_data.csv").exists() and (tmp_path / "manifest.json").exists()


def test_failed_row_is_recorded_not_raised():
    spec = _small_spec(values=(1,))
    row = run_sweep_row(spec, 0, _tiny_mnist())
    assert row["status"].startswith("error")


def test_normalized_profile_difference():
    b = ConductanceBounds()
    opt = Profile.linear(b, (2.0, 2.0), 1.0)
    binning = Profile.linear(b, (2.2, 2.2), 1.0)
    axis = np.linspace(3, 38, 11)
    dmu, dsig = normalized_profile_difference(binning, opt, axis)
    assert dmu == pytest.approx(10.0) and dsig == pytest.approx(0.0)


def test_experimental_pipeline_on_synthetic_stand_in():
    b = ConductanceBounds()
    d = generate_synthetic_data(400, b, Profile.linear(b, (1.0, 0.2), 0.5), np.random.default_rng(0), voltage=1.5)
    res = experimental_pipeline({"1.5": d}, b, repeats=2, seed=0, max_trials=20,
                                candidate_grid=((4, 4), (8, 4)))
    row = res.ks_table[0]
    assert row["status"] == "ok" and row["iterations"] == 2
    for key in ("ks_binning_mean", "ks_optimized_mean", "ks_baseline_mean"):
        assert 0.0 <= row[key] <= 1.0
    assert len(res.profile_table) == 1
