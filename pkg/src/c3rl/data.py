"""CSV ingestion, chronological splits, scaling, sliding windows and metrics."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError, DimensionError

__all__ = [
    "RawSeries",
    "SplitSpec",
    "Scaler",
    "WindowedDataset",
    "load_csv",
    "write_csv",
    "split",
    "fit_scaler",
    "apply_scaler",
    "invert_scaler",
    "make_dataset",
    "sample_windows",
    "window_count",
    "mse",
    "mae",
    "synthetic_sine",
]

SEGMENTS = ("train", "val", "test")

# 12/4/4 months of 30 days
_ETT_MONTH_HOURS = 30 * 24


@dataclass(frozen=True)
class RawSeries:
    timestamps: np.ndarray
    values: np.ndarray  # [T_total, N]
    channels: tuple[str, ...]
    name: str = ""

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]


def load_csv(path) -> RawSeries:
    """Read a ``date,<ch1>,<ch2>,...`` file.

    Raises :class:`DataError` for a missing file, a blank or non-numeric cell
    (row and column are named), or timestamps that are not strictly increasing.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"dataset not found: {path}")
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: cannot parse CSV ({exc})") from exc
    if df.shape[1] < 2 or df.columns[0] != "date":
        raise DataError(f"{path}: first column must be 'date' followed by at least one numeric column")
    numeric = df.iloc[:, 1:].apply(pd.to_numeric, errors="coerce")
    bad = ~np.isfinite(numeric.to_numpy(dtype=np.float64))
    if bad.any():
        r, c = map(int, np.argwhere(bad)[0])
        cell = df.iloc[r, c + 1]
        what = "blank cell" if cell.strip() == "" else f"non-numeric or non-finite cell {cell!r}"
        # +2: header line plus 1-based numbering
        raise DataError(f"{path}: {what} at row {r + 2}, column {df.columns[c + 1]!r}")
    try:
        stamps = pd.to_datetime(df["date"]).to_numpy()
    except (ValueError, TypeError) as exc:
        raise DataError(f"{path}: unparseable timestamp ({exc})") from exc
    if len(stamps) > 1:
        steps = np.diff(stamps)
        if (steps <= np.timedelta64(0)).any():
            r = int(np.argmax(steps <= np.timedelta64(0)))
            raise DataError(f"{path}: timestamps not strictly increasing at row {r + 3}")
    # pandas' fast parser can be one ulp off; numpy's conversion is correctly rounded
    values = df.iloc[:, 1:].to_numpy(dtype=str).astype(np.float64)
    return RawSeries(stamps, values, tuple(df.columns[1:]), path.stem)


def write_csv(series: RawSeries, path) -> Path:
    path = Path(path)
    df = pd.DataFrame(series.values, columns=list(series.channels))
    df.insert(0, "date", pd.to_datetime(series.timestamps).strftime("%Y-%m-%d %H:%M:%S"))
    df.to_csv(path, index=False, float_format="%.17g")
    return path


@dataclass(frozen=True)
class SplitSpec:
    protocol: str = "ratio"  # ETT_hour | ETT_minute | ratio
    ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)

    def __post_init__(self):
        if self.protocol not in ("ETT_hour", "ETT_minute", "ratio"):
            raise ConfigError(f"split: unknown protocol {self.protocol!r}")
        if self.protocol == "ratio":
            if len(self.ratios) != 3 or any(r <= 0 for r in self.ratios) or sum(self.ratios) > 1 + 1e-9:
                raise ConfigError(f"split: ratios must be three positive fractions summing to <= 1, got {self.ratios}")


def split(series_or_length, spec: SplitSpec, lookback: int, horizon: int) -> dict[str, tuple[int, int]]:
    """Row ranges ``[start, end)`` for train/val/test.

    Validation and test ranges start ``lookback`` rows early so their first
    window can see a full history.
    """
    total = series_or_length if isinstance(series_or_length, int) else series_or_length.length
    if spec.protocol == "ratio":
        n_train = int(total * spec.ratios[0])
        n_test = int(total * spec.ratios[2])
        n_val = int(total * spec.ratios[1]) if sum(spec.ratios) < 1 - 1e-9 else total - n_train - n_test
        ends = (n_train, n_train + n_val, n_train + n_val + n_test)
    else:
        unit = _ETT_MONTH_HOURS * (4 if spec.protocol == "ETT_minute" else 1)
        ends = (12 * unit, 16 * unit, 20 * unit)
        if total < ends[2]:
            raise DataError(f"series has {total} rows; {spec.protocol} split needs {ends[2]}")
    starts = (0, ends[0] - lookback, ends[1] - lookback)
    ranges = dict(zip(SEGMENTS, zip(starts, ends)))
    for name, (a, b) in ranges.items():
        if a < 0 or b - a < lookback + horizon:
            raise DataError(
                f"{name} segment [{a}, {b}) too short for lookback {lookback} + horizon {horizon} "
                f"(series length {total})"
            )
    return ranges


@dataclass(frozen=True)
class Scaler:
    mean: np.ndarray
    std: np.ndarray


def fit_scaler(train_values, eps: float = 1e-8) -> Scaler:
    """Per-channel mean and population std; near-constant channels get std 1."""
    v = np.asarray(train_values, dtype=np.float64)
    std = v.std(axis=0)
    return Scaler(v.mean(axis=0), np.where(std < eps, 1.0, std))


def apply_scaler(values, scaler: Scaler) -> np.ndarray:
    return (np.asarray(values, dtype=np.float64) - scaler.mean) / scaler.std


def invert_scaler(values, scaler: Scaler) -> np.ndarray:
    return np.asarray(values, dtype=np.float64) * scaler.std + scaler.mean


def window_count(segment_length: int, lookback: int, horizon: int) -> int:
    return max(segment_length - lookback - horizon + 1, 0)


@dataclass(frozen=True)
class WindowedDataset:
    values: np.ndarray  # standardized [T_total, N]
    ranges: dict
    lookback: int
    horizon: int
    scaler: Scaler
    channels: tuple[str, ...] = ()
    name: str = ""

    def n_windows(self, segment: str) -> int:
        a, b = self.ranges[segment]
        return window_count(b - a, self.lookback, self.horizon)

    def window(self, segment: str, i: int) -> tuple[np.ndarray, np.ndarray]:
        a, _ = self.ranges[segment]
        t = a + i
        return (self.values[t:t + self.lookback],
                self.values[t + self.lookback:t + self.lookback + self.horizon])

    def arrays(self, segment: str) -> tuple[np.ndarray, np.ndarray]:
        """All windows of a segment as ``x [W, L, N]``, ``y [W, P, N]``."""
        return self._gather(segment, np.arange(self.n_windows(segment)))

    def _gather(self, segment: str, idx: np.ndarray):
        a, _ = self.ranges[segment]
        starts = a + np.asarray(idx)
        xi = starts[:, None] + np.arange(self.lookback)
        yi = starts[:, None] + self.lookback + np.arange(self.horizon)
        return self.values[xi], self.values[yi]


def make_dataset(series: RawSeries, spec: SplitSpec, lookback: int, horizon: int) -> WindowedDataset:
    ranges = split(series, spec, lookback, horizon)
    a, b = ranges["train"]
    scaler = fit_scaler(series.values[a:b])
    values = apply_scaler(series.values, scaler)
    values.setflags(write=False)
    return WindowedDataset(values, ranges, lookback, horizon, scaler, series.channels, series.name)


def sample_windows(dataset: WindowedDataset, segment: str, batch_size: int,
                   rng: np.random.Generator | int | None = None,
                   shuffle: bool | None = None) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield ``(x [B, L, N], y [B, P, N])`` batches; the last one may be short.

    Train windows are shuffled by ``rng``; val/test stay chronological.
    """
    n = dataset.n_windows(segment)
    if n < 1:
        raise DataError(f"{segment} segment has no complete window")
    if batch_size < 1:
        raise ConfigError(f"batch_size: must be >= 1, got {batch_size}")
    if shuffle is None:
        shuffle = segment == "train"
    order = np.arange(n)
    if shuffle:
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield dataset._gather(segment, order[start:start + batch_size])


def _check_pair(pred, truth):
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if p.shape != t.shape:
        raise DimensionError(f"prediction {p.shape} and truth {t.shape} differ")
    return p, t


def mse(pred, truth) -> float:
    p, t = _check_pair(pred, truth)
    return float(np.mean((p - t) ** 2))


def mae(pred, truth) -> float:
    p, t = _check_pair(pred, truth)
    return float(np.mean(np.abs(p - t)))


def synthetic_sine(length: int = 400, channels: int = 1, noise: float = 0.1,
                   periods=(24.0, 12.0, 48.0, 36.0), seed: int = 0,
                   start: str = "2016-07-01") -> RawSeries:
    """Hourly sum-of-sines test series with Gaussian noise."""
    rng = np.random.default_rng(seed)
    t = np.arange(length, dtype=np.float64)
    cols = []
    for c in range(channels):
        p = periods[c % len(periods)]
        phase = rng.uniform(0, 2 * np.pi)
        cols.append(np.sin(2 * np.pi * t / p + phase) + 0.5 * np.sin(2 * np.pi * t / (p / 2) + 2 * phase))
    values = np.stack(cols, axis=1) + noise * rng.normal(size=(length, channels))
    stamps = pd.date_range(start, periods=length, freq="h").to_numpy()
    return RawSeries(stamps, values, tuple(f"ch{c}" for c in range(channels)), "sine")
