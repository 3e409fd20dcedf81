import csv
import json

import numpy as np
import pytest

from c3rl import runner
from c3rl.data import SplitSpec, make_dataset, synthetic_sine, write_csv
from c3rl.errors import CapabilityError, ConfigError, DataError, NumericError
from c3rl.framework import LossWeights
from c3rl.lambdas import FALLBACK, LAMBDA_TABLE, default_lambdas, lookup_lambdas
from c3rl.models import build_model
from c3rl.runner import (
    ExperimentConfig,
    emit_results,
    parse_config,
    run_experiment,
    run_lambda_sweep,
    run_paired,
    run_unweighted,
    sweep_summary,
    sweep_trend,
)


@pytest.fixture(scope="module")
def sine_csv(tmp_path_factory):
    return write_csv(synthetic_sine(200, 1, seed=0), tmp_path_factory.mktemp("data") / "sine.csv")


@pytest.fixture(scope="module")
def sine2_csv(tmp_path_factory):
    return write_csv(synthetic_sine(240, 2, seed=5), tmp_path_factory.mktemp("data") / "sine2.csv")


def quick(path, **kw):
    base = dict(dataset=str(path), model="DLinear", lookback=24, horizon=12, epochs=8, patience=3)
    base.update(kw)
    return parse_config(None, base)


class TestParseConfig:
    def test_empty_file_defaults(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("")
        cfg = parse_config(p)
        assert cfg.seed == 2025
        assert cfg.mode == "paired"

    def test_flag_overrides_file(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("lambda_simsia: 0.2\nhorizon: 48\n")
        cfg = parse_config(p, {"lambda_simsia": 0.4, "seed": None})
        assert cfg.lambda_simsia == 0.4
        assert cfg.horizon == 48

    def test_negative_lr(self):
        with pytest.raises(ConfigError, match="^lr"):
            parse_config(None, {"lr": -1e-3})

    def test_unknown_key(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("learning_rate: 0.1\n")
        with pytest.raises(ConfigError, match="learning_rate"):
            parse_config(p)

    def test_type_mismatch(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("epochs: many\n")
        with pytest.raises(ConfigError, match="epochs"):
            parse_config(p)

    def test_fractional_int(self):
        with pytest.raises(ConfigError, match="horizon"):
            parse_config(None, {"horizon": 9.5})

    def test_nested_rejected(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("model:\n  kind: DLinear\n")
        with pytest.raises(ConfigError, match="model"):
            parse_config(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            parse_config(tmp_path / "absent.yaml")

    def test_grid_string(self):
        assert parse_config(None, {"grid": "0.1, 0.5,0.9"}).grid == (0.1, 0.5, 0.9)

    def test_grid_out_of_range(self):
        with pytest.raises(ConfigError, match="grid"):
            parse_config(None, {"grid": [0.5, 1.5]})

    def test_out_of_scope_backbone(self):
        with pytest.raises(CapabilityError):
            parse_config(None, {"model": "S-Mamba", "dataset": "ETTh1.csv", "horizon": 96})

    def test_architecture_checked_early(self):
        with pytest.raises(ConfigError, match="heads"):
            parse_config(None, {"model": "iTransformer", "d_model": 10, "heads": 4})

    def test_defaults_by_lineage(self):
        lin = parse_config(None, {"model": "DLinear"})
        tr = parse_config(None, {"model": "iTransformer"})
        assert (lin.resolved_lookback, lin.resolved_lr) == (336, 1e-3)
        assert (tr.resolved_lookback, tr.resolved_lr) == (96, 1e-4)

    def test_kernel_fits_short_lookback(self):
        assert parse_config(None, {"lookback": 24}).resolved_kernel == 23
        assert parse_config(None, {"lookback": 336}).resolved_kernel == 25

    def test_ett_protocol_from_name(self):
        assert parse_config(None, {"dataset": "x/ETTh2.csv"}).split_spec().protocol == "ETT_hour"
        assert parse_config(None, {"dataset": "x/ETTm1.csv"}).split_spec().protocol == "ETT_minute"
        assert parse_config(None, {"dataset": "x/weather.csv"}).split_spec().protocol == "ratio"


class TestLambdas:
    def test_dlinear_etth1(self):
        assert default_lambdas("DLinear", "ETTh1", 96).as_tuple() == (0.4, 0.6)

    def test_itransformer_exchange(self):
        assert default_lambdas("iTransformer", "Exchange", 96).as_tuple() == (0.01, 0.99)

    def test_rlinear_etth2(self):
        assert default_lambdas("RLinear", "ETTh2", 96).as_tuple() == (0.2, 0.8)

    def test_fallback(self):
        assert lookup_lambdas("DLinear", "Mars", 96) is None
        assert default_lambdas("DLinear", "Mars", 96) == FALLBACK == LossWeights(0.1, 0.9)

    def test_oom_cells_absent(self):
        assert lookup_lambdas("PatchTST", "Traffic", 96) is None

    def test_table_entries_valid(self):
        for key, pair in LAMBDA_TABLE.items():
            LossWeights(*pair)

    def test_fallback_flagged_in_config(self):
        cfg = parse_config(None, {"dataset": "x/sine.csv"})
        assert cfg.tuned_weights() == (FALLBACK, True)
        cfg = parse_config(None, {"dataset": "x/ETTh1.csv", "horizon": 96})
        assert cfg.tuned_weights() == (LossWeights(0.4, 0.6), False)

    def test_partial_explicit_weights(self):
        assert parse_config(None, {"lambda_simsia": 0.3}).explicit_weights().as_tuple() == (0.3, 0.7)


class TestRunExperiment:
    def test_beats_mean_predictor(self, sine_csv):
        cfg = parse_config(None, dict(dataset=str(sine_csv), model="DLinear", lookback=24, horizon=12, mode="baseline"))
        res = run_experiment(cfg)
        ds = make_dataset(synthetic_sine(200, 1, seed=0), SplitSpec(), 24, 12)
        _, y = ds.arrays("test")
        mean_predictor = float(np.mean((y - y.mean()) ** 2))
        assert res.test_mse < mean_predictor

    def test_deterministic(self, sine2_csv):
        cfg = quick(sine2_csv, mode="c3rl", model="iTransformer", d_model=8, heads=2, layers=1)
        a, b = run_experiment(cfg), run_experiment(cfg)
        assert a.test_mse == b.test_mse and a.test_mae == b.test_mae
        assert a.curves == b.curves

    @pytest.mark.parametrize("model", ["DLinear", "RLinear", "iTransformer", "PatchTST"])
    def test_pure_prediction_matches_baseline(self, sine2_csv, model):
        kw = dict(model=model, d_model=8, heads=2, layers=1, patch_len=8, stride=4)
        base = run_experiment(quick(sine2_csv, mode="baseline", **kw))
        c3 = run_experiment(quick(sine2_csv, mode="c3rl", lambda_simsia=0.0, lambda_pred=1.0, **kw))
        assert abs(base.test_mse - c3.test_mse) <= 1e-9
        assert abs(base.test_mae - c3.test_mae) <= 1e-9

    def test_checkpoint_is_best_val(self, sine2_csv):
        res = run_experiment(quick(sine2_csv, mode="c3rl", epochs=12, patience=2))
        val = res.curves["val_loss"]
        assert res.best_epoch == int(np.argmin(val)) + 1
        assert res.best_epoch <= res.epochs_run == len(val)
        assert res.best_val == min(val)
        # recompute test metrics from the stored checkpoint
        cfg = quick(sine2_csv)
        ds = make_dataset(synthetic_sine(240, 2, seed=5), cfg.split_spec(), 24, 12)
        model = build_model(cfg.model_config(2), 0)
        model.load_state_dict(res.state)
        x, y = ds.arrays("test")
        pred = model.predict(x).data
        assert float(np.mean((pred - y) ** 2)) == pytest.approx(res.test_mse, rel=1e-12)

    def test_flags(self, sine_csv, tmp_path):
        res = run_experiment(parse_config(None, dict(dataset=str(sine_csv), lookback=24, horizon=12, epochs=2, mode="c3rl")))
        assert res.flags["lambda_fallback"] is True
        assert res.flags["assumed_lookback"] is False
        assert res.weights == (0.1, 0.9)
        long_csv = write_csv(synthetic_sine(900, 1), tmp_path / "long.csv")
        res = run_experiment(parse_config(None, dict(dataset=str(long_csv), horizon=12, epochs=1, mode="baseline")))
        assert res.lookback == 336
        assert res.flags["assumed_lookback"] is True

    def test_missing_dataset(self, tmp_path):
        with pytest.raises(DataError):
            run_experiment(parse_config(None, dict(dataset=str(tmp_path / "none.csv"), lookback=8, horizon=4)))

    def test_no_dataset(self):
        with pytest.raises(DataError):
            run_experiment(ExperimentConfig(lookback=8, horizon=4))

    def test_non_finite_loss(self, sine_csv, monkeypatch):
        real = runner.prediction_loss

        def poisoned(pred, target):
            return real(pred, target) * float("nan")

        monkeypatch.setattr(runner, "prediction_loss", poisoned)
        with pytest.raises(NumericError, match="epoch 1, batch 0"):
            run_experiment(quick(sine_csv, mode="baseline"))

    def test_curves_recorded(self, sine2_csv):
        res = run_experiment(quick(sine2_csv, mode="c3rl", epochs=3, patience=5))
        for key in ("train_total", "train_simsia", "train_pred", "val_loss", "collapse_std"):
            assert len(res.curves[key]) == 3
        assert all(np.isfinite(res.curves["collapse_std"]))


class TestModes:
    def test_paired_row(self, sine2_csv):
        base, c3, row = run_paired(quick(sine2_csv))
        assert base.arm == "baseline" and c3.arm == "c3rl"
        assert row["delta_mse"] == c3.test_mse - base.test_mse
        assert set(row) >= {"model", "dataset", "horizon", "baseline_mse", "baseline_mae", "c3rl_mse", "c3rl_mae"}

    def test_sweep_echoes_weights(self, sine2_csv):
        results = run_lambda_sweep(quick(sine2_csv, epochs=3), [0.1, 0.5, 0.9])
        assert [r.weights for r in results] == [(0.1, 0.9), (0.5, 0.5), (0.9, 1.0 - 0.9)]
        summary = sweep_summary(results)
        assert [row["lambda_simsia"] for row in summary] == [0.1, 0.5, 0.9]
        trend = sweep_trend(results)
        assert trend["mse_rises_with_weight"] == (results[-1].test_mse > results[0].test_mse)

    def test_sweep_zero_is_baseline(self, sine2_csv):
        cfg = quick(sine2_csv, epochs=4)
        (zero,) = run_lambda_sweep(cfg, [0.0])
        base = run_experiment(cfg.replace(mode="baseline"))
        assert abs(zero.test_mse - base.test_mse) <= 1e-9

    def test_unweighted_row(self, sine2_csv):
        tuned, flat, row = run_unweighted(quick(sine2_csv, epochs=3))
        assert flat.weights == (1.0, 1.0)
        assert row["unweighted_lambda_simsia"] == 1.0 and row["unweighted_lambda_pred"] == 1.0
        assert row["tuned_mse"] == tuned.test_mse and row["unweighted_mse"] == flat.test_mse


@pytest.fixture(scope="module")
def emitted(sine2_csv, tmp_path_factory):
    base, c3, row = run_paired(quick(sine2_csv, epochs=3))
    out = tmp_path_factory.mktemp("out")
    paths = emit_results([base, c3], out, {"deltas": [row]})
    return base, c3, row, out, paths


class TestEmit:
    def test_json_round_trip(self, emitted):
        base, c3, _, out, _ = emitted
        doc = json.loads((out / "results.json").read_text())
        for run, res in zip(doc["runs"], (base, c3)):
            assert run["test_mse"] == res.test_mse
            assert run["test_mae"] == res.test_mae
            assert run["curves"]["val_loss"] == res.curves["val_loss"]
            assert run["flags"] == res.flags
            assert run["config"]["seed"] == 2025

    def test_comparison_rows(self, emitted):
        base, c3, _, out, _ = emitted
        with open(out / "comparison.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert [(r["model"], r["dataset"], r["horizon"], r["arm"]) for r in rows] == [
            ("DLinear", "sine2", "12", "baseline"), ("DLinear", "sine2", "12", "c3rl")]
        assert float(rows[0]["test_mse"]) == base.test_mse
        assert float(rows[1]["test_mae"]) == c3.test_mae

    def test_deltas(self, emitted):
        _, _, row, out, _ = emitted
        with open(out / "deltas.csv") as fh:
            (back,) = list(csv.DictReader(fh))
        assert float(back["delta_mse"]) == row["delta_mse"]

    def test_prediction_files(self, emitted):
        base, _, _, out, _ = emitted
        with open(out / f"predictions_{base.tag}.csv") as fh:
            rows = list(csv.DictReader(fh))
        per_window = {}
        for r in rows:
            per_window.setdefault(r["window"], []).append(r)
        assert len(per_window) == 4
        assert all(len(v) == 12 for v in per_window.values())
        assert float(rows[0]["pred_ch0"]) == base.predictions[0, 0, 0]
        assert float(rows[0]["true_ch1"]) == base.truth[0, 0, 1]

    def test_curves_and_weights(self, emitted):
        base, _, _, out, _ = emitted
        with open(out / f"curves_{base.tag}.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert [float(r["val_loss"]) for r in rows] == base.curves["val_loss"]
        with np.load(out / f"weights_{base.tag}.npz") as z:
            for k, v in base.state.items():
                np.testing.assert_array_equal(z[k], v)

    def test_unwritable(self, emitted, tmp_path):
        base = emitted[0]
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(DataError, match="file"):
            emit_results([base], blocker / "sub")
