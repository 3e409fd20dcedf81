"""Experiment orchestration: config parsing, training, paired runs, sweeps, emission."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from . import tensor as T
from .data import SplitSpec, load_csv, make_dataset, mae, mse, sample_windows
from .errors import ConfigError, DataError, NumericError
from .framework import (
    HeadConfig,
    LossWeights,
    build_siamese,
    forward_infer,
    forward_train,
    prediction_loss,
)
from .lambdas import lookup_lambdas, FALLBACK
from .models import ModelConfig, build_model, canonical_kind
from .nn import Adam

__all__ = [
    "ExperimentConfig",
    "RunResult",
    "parse_config",
    "run_experiment",
    "run_paired",
    "run_lambda_sweep",
    "run_unweighted",
    "sweep_summary",
    "sweep_trend",
    "emit_results",
    "MODES",
]

logger = logging.getLogger(__name__)

MODES = ("baseline", "c3rl", "paired", "lambda_sweep", "unweighted")
LINEAR_KINDS = ("DLinear", "RLinear")
DEFAULT_GRID = (0.05, 0.25, 0.5, 0.75, 0.95)


@dataclass
class ExperimentConfig:
    dataset: str | None = None
    split: str = "auto"
    ratios: tuple = (0.7, 0.1, 0.2)
    dataset_name: str | None = None
    model: str = "DLinear"
    lookback: int | None = None
    horizon: int = 96
    d_model: int = 128
    layers: int = 2
    heads: int = 8
    kernel: int | None = None
    patch_len: int = 16
    stride: int = 8
    d_sia: int | None = None
    share_head: bool = True
    lambda_simsia: float | None = None
    lambda_pred: float | None = None
    lr: float | None = None
    batch_size: int = 32
    eval_batch_size: int = 256
    epochs: int = 30
    patience: int = 5
    seed: int = 2025
    out: str | None = None
    mode: str = "paired"
    grid: tuple = DEFAULT_GRID
    export_windows: int = 4

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        self.model = canonical_kind(self.model)
        if self.mode not in MODES:
            raise ConfigError(f"mode: expected one of {MODES}, got {self.mode!r}")
        if self.split not in ("auto", "ETT_hour", "ETT_minute", "ratio"):
            raise ConfigError(f"split: unknown protocol {self.split!r}")
        if self.lr is not None and not self.lr > 0:
            raise ConfigError(f"lr: must be positive, got {self.lr}")
        for key in ("batch_size", "eval_batch_size", "epochs", "patience", "horizon"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key}: must be >= 1, got {getattr(self, key)}")
        if self.lookback is not None and self.lookback < 1:
            raise ConfigError(f"lookback: must be >= 1, got {self.lookback}")
        if self.export_windows < 0:
            raise ConfigError("export_windows: must be >= 0")
        for key in ("lambda_simsia", "lambda_pred"):
            v = getattr(self, key)
            if v is not None and v < 0:
                raise ConfigError(f"{key}: must be non-negative, got {v}")
        if self.lambda_simsia == 0 and self.lambda_pred == 0:
            raise ConfigError("lambda_simsia: weights cannot both be zero")
        if any(not 0.0 <= g <= 1.0 for g in self.grid):
            raise ConfigError(f"grid: sweep values must lie in [0, 1], got {self.grid}")
        if len(self.ratios) != 3:
            raise ConfigError(f"ratios: need three fractions, got {self.ratios}")
        # surfaces architecture errors (kernel, heads, patches) before any data is read
        self.model_config(1)

    # -- derived settings ----------------------------------------------------

    @property
    def resolved_dataset_name(self) -> str:
        if self.dataset_name:
            return self.dataset_name
        return Path(self.dataset).stem if self.dataset else "unknown"

    @property
    def resolved_lookback(self) -> int:
        if self.lookback is not None:
            return self.lookback
        return 336 if self.model in LINEAR_KINDS else 96

    @property
    def resolved_kernel(self) -> int:
        """Explicit kernel, else 25 capped at the largest odd width that fits the lookback."""
        if self.kernel is not None:
            return self.kernel
        lookback = self.resolved_lookback
        return min(25, lookback if lookback % 2 else lookback - 1)

    @property
    def resolved_lr(self) -> float:
        if self.lr is not None:
            return self.lr
        return 1e-3 if self.model in LINEAR_KINDS else 1e-4

    def split_spec(self) -> SplitSpec:
        protocol = self.split
        if protocol == "auto":
            name = self.resolved_dataset_name.lower()
            protocol = "ETT_hour" if name.startswith("etth") else "ETT_minute" if name.startswith("ettm") else "ratio"
        return SplitSpec(protocol, tuple(self.ratios))

    def explicit_weights(self) -> LossWeights | None:
        if self.lambda_simsia is None and self.lambda_pred is None:
            return None
        if self.lambda_simsia is None:
            return LossWeights(1.0 - self.lambda_pred, self.lambda_pred)
        if self.lambda_pred is None:
            return LossWeights(self.lambda_simsia, 1.0 - self.lambda_simsia)
        return LossWeights(self.lambda_simsia, self.lambda_pred)

    def tuned_weights(self) -> tuple[LossWeights, bool]:
        """``(weights, used_fallback)``: explicit weights win, then the tuned table."""
        explicit = self.explicit_weights()
        if explicit is not None:
            return explicit, False
        found = lookup_lambdas(self.model, self.resolved_dataset_name, self.horizon)
        return (found, False) if found is not None else (FALLBACK, True)

    def model_config(self, channels: int) -> ModelConfig:
        return ModelConfig(
            self.model, self.resolved_lookback, self.horizon, channels,
            d_model=self.d_model, layers=self.layers, heads=self.heads, kernel=self.resolved_kernel,
            patch_len=self.patch_len, stride=self.stride,
        )

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["ratios"] = list(self.ratios)
        d["grid"] = list(self.grid)
        return d


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}


def _coerce(key: str, value: Any) -> Any:
    spec = _FIELD_TYPES[key]
    if value is None:
        if "None" in spec:
            return None
        raise ConfigError(f"{key}: value required")
    base = spec.replace(" | None", "")
    try:
        if base == "int":
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise TypeError
            return int(value)
        if base == "float":
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if base == "bool":
            if isinstance(value, bool):
                return value
            if isinstance(value, str) and value.lower() in ("true", "false", "1", "0", "yes", "no"):
                return value.lower() in ("true", "1", "yes")
            raise TypeError
        if base == "str":
            if not isinstance(value, (str, int, float)) or isinstance(value, bool):
                raise TypeError
            return str(value)
        if base == "tuple":
            if isinstance(value, str):
                value = [v for v in value.replace(",", " ").split()]
            return tuple(float(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected {base}, got {value!r}") from None
    return value


def parse_config(file=None, overrides: dict | None = None) -> ExperimentConfig:
    """Build a config from a flat YAML mapping plus flag overrides.

    Overrides whose value is ``None`` are ignored, so argparse namespaces can be
    passed straight through.
    """
    values: dict[str, Any] = {}
    if file is not None:
        path = Path(file)
        if not path.is_file():
            raise ConfigError(f"config: file not found: {path}")
        try:
            doc = yaml.safe_load(path.read_text())
        except yaml.YAMLError as exc:
            raise ConfigError(f"config: cannot parse {path}: {exc}") from exc
        if doc is None:
            doc = {}
        if not isinstance(doc, dict):
            raise ConfigError(f"config: {path} must hold a flat key-value mapping")
        for key, value in doc.items():
            key = str(key).replace("-", "_")
            if isinstance(value, dict):
                raise ConfigError(f"{key}: nested sections are not supported")
            values[key] = value
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key.replace("-", "_")] = value
    unknown = sorted(set(values) - set(_FIELD_TYPES))
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown config key")
    return ExperimentConfig(**{k: _coerce(k, v) for k, v in values.items()})


@dataclass
class RunResult:
    arm: str
    model: str
    dataset: str
    horizon: int
    lookback: int
    weights: tuple | None
    test_mse: float
    test_mae: float
    best_val: float
    best_epoch: int
    epochs_run: int
    curves: dict
    config: dict
    flags: dict
    predictions: np.ndarray = field(repr=False)
    truth: np.ndarray = field(repr=False)
    state: dict = field(repr=False)
    channels: tuple = ()
    seconds: float = 0.0

    @property
    def tag(self) -> str:
        return f"{self.model}_{self.dataset}_{self.horizon}_{self.arm}"

    def to_dict(self) -> dict:
        return {
            "arm": self.arm,
            "model": self.model,
            "dataset": self.dataset,
            "horizon": self.horizon,
            "lookback": self.lookback,
            "weights": None if self.weights is None else list(self.weights),
            "test_mse": self.test_mse,
            "test_mae": self.test_mae,
            "best_val": self.best_val,
            "best_epoch": self.best_epoch,
            "epochs_run": self.epochs_run,
            "curves": self.curves,
            "config": self.config,
            "flags": self.flags,
            "seconds": self.seconds,
        }


def _evaluate(predict, dataset, segment: str, batch_size: int) -> tuple[np.ndarray, np.ndarray]:
    preds, truths = [], []
    with T.no_grad():
        for x, y in sample_windows(dataset, segment, batch_size, shuffle=False):
            preds.append(predict(x).data)
            truths.append(y)
    return np.concatenate(preds), np.concatenate(truths)


def _run(config: ExperimentConfig, weights: LossWeights | None, arm: str,
         flags: dict | None = None, stop_grad: bool = True) -> RunResult:
    """Train one arm. ``weights=None`` trains the bare backbone on MSE."""
    started = time.perf_counter()
    series = load_csv(config.dataset) if config.dataset else None
    if series is None:
        raise DataError("dataset: no dataset path configured")
    lookback = config.resolved_lookback
    dataset = make_dataset(series, config.split_spec(), lookback, config.horizon)
    mcfg = config.model_config(series.n_channels)

    # independent streams so the backbone init and batch order do not depend on
    # whether a siamese branch was built
    init_rng, siamese_rng, shuffle_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(3)
    )
    model = build_model(mcfg, init_rng)
    bundle = None
    if weights is not None:
        bundle = build_siamese(model, HeadConfig(config.d_sia, share_head=config.share_head), weights, siamese_rng)
        bundle.stop_grad = stop_grad
        params = bundle.parameters()
    else:
        params = model.parameters()
    opt = Adam(params, lr=config.resolved_lr)

    curves = {k: [] for k in ("train_total", "train_simsia", "train_pred", "val_loss", "collapse_std")}
    best_val, best_epoch, best_state, stale = math.inf, 0, model.state_dict(), 0
    epoch = 0
    for epoch in range(1, config.epochs + 1):
        sums = dict.fromkeys(("total", "simsia", "pred", "collapse"), 0.0)
        seen = seen_collapse = 0
        for b, (x, y) in enumerate(sample_windows(dataset, "train", config.batch_size, shuffle_rng)):
            T.reset_tape()
            opt.zero_grad()
            if bundle is not None:
                report = forward_train(bundle, x, y)
                loss = report.total
                parts = (report.l_total, report.l_simsia, report.l_pred, report.collapse_std)
            else:
                loss = prediction_loss(model.predict(x), y)
                parts = (loss.item(), math.nan, loss.item(), math.nan)
            if not np.isfinite(loss.item()):
                raise NumericError(f"non-finite training loss at epoch {epoch}, batch {b}")
            T.backward(loss)
            opt.step(allow_missing=True)
            n = len(x)
            seen += n
            for key, v in zip(("total", "simsia", "pred"), parts):
                sums[key] += v * n
            if np.isfinite(parts[3]):
                sums["collapse"] += parts[3] * n
                seen_collapse += n
        curves["train_total"].append(sums["total"] / seen)
        curves["train_simsia"].append(sums["simsia"] / seen)
        curves["train_pred"].append(sums["pred"] / seen)
        curves["collapse_std"].append(sums["collapse"] / seen_collapse if seen_collapse else math.nan)

        vp, vt = _evaluate(model.predict, dataset, "val", config.eval_batch_size)
        val = mse(vp, vt)
        if not np.isfinite(val):
            raise NumericError(f"non-finite validation loss at epoch {epoch}")
        curves["val_loss"].append(val)
        logger.info("%s epoch %d: train %.5f val %.5f", arm, epoch, curves["train_total"][-1], val)
        if val < best_val:
            best_val, best_epoch, best_state, stale = val, epoch, model.state_dict(), 0
        else:
            stale += 1
            if stale >= config.patience:
                break

    model.load_state_dict(best_state)
    T.reset_tape()
    predict = (lambda x: forward_infer(bundle, x)) if bundle is not None else model.predict
    tp, tt = _evaluate(predict, dataset, "test", config.eval_batch_size)

    run_flags = {
        "assumed_lookback": config.lookback is None,
        "assumed_head_widths": bundle is not None,
        "lambda_fallback": False,
        "split_protocol": dataset_protocol(config),
    }
    run_flags.update(flags or {})
    k = config.export_windows
    return RunResult(
        arm=arm,
        model=mcfg.kind,
        dataset=config.resolved_dataset_name,
        horizon=config.horizon,
        lookback=lookback,
        weights=None if weights is None else weights.as_tuple(),
        test_mse=mse(tp, tt),
        test_mae=mae(tp, tt),
        best_val=best_val,
        best_epoch=best_epoch,
        epochs_run=epoch,
        curves=curves,
        config=config.to_dict(),
        flags=run_flags,
        predictions=tp[:k],
        truth=tt[:k],
        state=best_state,
        channels=series.channels,
        seconds=time.perf_counter() - started,
    )


def dataset_protocol(config: ExperimentConfig) -> str:
    return config.split_spec().protocol


def run_experiment(config: ExperimentConfig, stop_grad: bool = True) -> RunResult:
    """Single run in ``baseline`` or ``c3rl`` mode (other modes run their c3rl arm)."""
    if config.mode == "baseline":
        return _run(config, None, "baseline")
    weights, fallback = config.tuned_weights()
    return _run(config, weights, "c3rl", {"lambda_fallback": fallback}, stop_grad=stop_grad)


def _delta_row(base: RunResult, c3: RunResult) -> dict:
    return {
        "model": base.model,
        "dataset": base.dataset,
        "horizon": base.horizon,
        "baseline_mse": base.test_mse,
        "baseline_mae": base.test_mae,
        "c3rl_mse": c3.test_mse,
        "c3rl_mae": c3.test_mae,
        "lambda_simsia": c3.weights[0],
        "lambda_pred": c3.weights[1],
        "delta_mse": c3.test_mse - base.test_mse,
        "delta_mae": c3.test_mae - base.test_mae,
    }


def run_paired(config: ExperimentConfig) -> tuple[RunResult, RunResult, dict]:
    base = run_experiment(config.replace(mode="baseline"))
    c3 = run_experiment(config.replace(mode="c3rl"))
    return base, c3, _delta_row(base, c3)


def run_lambda_sweep(config: ExperimentConfig, grid=None) -> list[RunResult]:
    grid = tuple(config.grid if grid is None else grid)
    results = []
    for value in grid:
        w = LossWeights.from_simsia(value)
        results.append(_run(config.replace(mode="c3rl"), w, f"sweep{value:g}"))
    return results


def sweep_summary(results: list[RunResult]) -> list[dict]:
    return [
        {"lambda_simsia": r.weights[0], "lambda_pred": r.weights[1], "test_mse": r.test_mse,
         "test_mae": r.test_mae, "best_epoch": r.best_epoch}
        for r in results
    ]


def sweep_trend(results: list[RunResult]) -> dict:
    """Endpoint comparison between the smallest and largest swept weight (reported, not enforced)."""
    ordered = sorted(results, key=lambda r: r.weights[0])
    lo, hi = ordered[0], ordered[-1]
    return {
        "low_lambda_simsia": lo.weights[0],
        "high_lambda_simsia": hi.weights[0],
        "low_mse": lo.test_mse,
        "high_mse": hi.test_mse,
        "mse_rises_with_weight": bool(hi.test_mse > lo.test_mse),
    }


def run_unweighted(config: ExperimentConfig) -> tuple[RunResult, RunResult, dict]:
    tuned_w, fallback = config.tuned_weights()
    tuned = _run(config.replace(mode="c3rl"), tuned_w, "c3rl", {"lambda_fallback": fallback})
    flat = _run(config.replace(mode="c3rl"), LossWeights(1.0, 1.0), "unweighted")
    row = {
        "model": tuned.model,
        "dataset": tuned.dataset,
        "horizon": tuned.horizon,
        "tuned_lambda_simsia": tuned_w.lambda_simsia,
        "tuned_lambda_pred": tuned_w.lambda_pred,
        "tuned_mse": tuned.test_mse,
        "tuned_mae": tuned.test_mae,
        "unweighted_lambda_simsia": 1.0,
        "unweighted_lambda_pred": 1.0,
        "unweighted_mse": flat.test_mse,
        "unweighted_mae": flat.test_mae,
    }
    return tuned, flat, row


# -- emission --------------------------------------------------------------------

COMPARISON_FIELDS = ("model", "dataset", "horizon", "arm", "lambda_simsia", "lambda_pred",
                     "test_mse", "test_mae", "best_epoch", "epochs_run")


def _write_rows(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        if not rows:
            return
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def emit_results(results: list[RunResult], out_dir, summaries: dict[str, list[dict]] | None = None) -> dict:
    """Write results.json, comparison.csv, per-run curves/predictions/weights, and summaries.

    ``summaries`` maps a file stem (e.g. ``"deltas"``, ``"sweep"``) to rows.
    Returns the written paths keyed by role.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc}") from exc
    paths: dict[str, Any] = {"curves": [], "predictions": [], "weights": []}
    try:
        doc = {"runs": [r.to_dict() for r in results]}
        p = out / "results.json"
        p.write_text(json.dumps(doc, indent=2, allow_nan=True))
        paths["results"] = p

        rows = []
        for r in results:
            lam = r.weights or (None, None)
            rows.append({
                "model": r.model, "dataset": r.dataset, "horizon": r.horizon, "arm": r.arm,
                "lambda_simsia": "" if lam[0] is None else lam[0],
                "lambda_pred": "" if lam[1] is None else lam[1],
                "test_mse": r.test_mse, "test_mae": r.test_mae,
                "best_epoch": r.best_epoch, "epochs_run": r.epochs_run,
            })
        p = out / "comparison.csv"
        with open(p, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=COMPARISON_FIELDS)
            w.writeheader()
            w.writerows(rows)
        paths["comparison"] = p

        for r in results:
            p = out / f"curves_{r.tag}.csv"
            n = len(r.curves["val_loss"])
            _write_rows(p, [{"epoch": i + 1, **{k: v[i] for k, v in r.curves.items()}} for i in range(n)])
            paths["curves"].append(p)

            p = out / f"predictions_{r.tag}.csv"
            names = list(r.channels) or [f"ch{c}" for c in range(r.truth.shape[-1])]
            pred_rows = []
            for wi in range(r.predictions.shape[0]):
                for step in range(r.predictions.shape[1]):
                    row = {"window": wi, "step": step}
                    row.update({f"pred_{c}": r.predictions[wi, step, j] for j, c in enumerate(names)})
                    row.update({f"true_{c}": r.truth[wi, step, j] for j, c in enumerate(names)})
                    pred_rows.append(row)
            _write_rows(p, pred_rows)
            paths["predictions"].append(p)

            p = out / f"weights_{r.tag}.npz"
            np.savez(p, **r.state)
            paths["weights"].append(p)

        for stem, srows in (summaries or {}).items():
            p = out / f"{stem}.csv"
            _write_rows(p, srows)
            paths[stem] = p
    except OSError as exc:
        raise DataError(f"cannot write results to {out}: {exc}") from exc
    return paths
