"""Datasets for nowcasting: synthetic benchmark, CSV ingestion, windows, folds.

A dataset is K named series of equal length T stored as a (T, K) float64
matrix. Everything downstream works on window samples: a (tau, K) input block
plus the K-vector at the immediately following step.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

logger = logging.getLogger(__name__)

NA_MARKERS = {"", "na", "n/a", "nan", "null", "none"}

# Sinusoid mixtures for the synthetic benchmark, as (amplitude, period, phase)
# terms summed per series. ts1 spawns two derived series: a half-amplitude
# copy and a phase-shifted copy; three standard-normal noise series round out
# the set. The constants are stand-ins with deliberately incommensurate
# periods and can be overridden per call.
DEFAULT_TONES: dict[str, tuple[tuple[float, float, float], ...]] = {
    "ts1": ((1.0, 24.0, 0.0), (0.5, 8.0, math.pi / 2)),
    "ts2": ((0.8, 17.0, 0.0), (0.3, 5.0, math.pi / 2)),
    "ts3": ((1.2, 31.0, math.pi / 2), (0.4, 11.0, 0.0)),
}

SYNTH_STRUCTURED = ("ts1", "ts2", "ts3", "half_ts1", "shifted_ts1")
SYNTH_NOISE = ("noise1", "noise2", "noise3")
TS1_FAMILY = ("ts1", "half_ts1", "shifted_ts1")


class DataError(ValueError):
    """Bad input data: unparseable cells, impossible ranges, degenerate series."""


@dataclass
class NormStats:
    """Per-series mean and standard deviation from a stated step range."""

    means: np.ndarray  # (K,)
    stds: np.ndarray   # (K,)

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (values - self.means) / self.stds

    def invert(self, z: np.ndarray) -> np.ndarray:
        return z * self.stds + self.means


@dataclass
class TimeSeriesDataset:
    """K named series of equal length with optional normalization stats."""

    names: list[str]
    values: np.ndarray                 # (T, K) float64
    norm_stats: NormStats | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DataError(f"values must be 2-D (T, K), got shape {self.values.shape}")
        if len(self.names) != self.values.shape[1]:
            raise DataError(
                f"{len(self.names)} names for {self.values.shape[1]} series columns"
            )
        if not np.all(np.isfinite(self.values)):
            raise DataError("dataset contains non-finite values")

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def n_series(self) -> int:
        return self.values.shape[1]

    def series_index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise DataError(f"no series named {name!r}; have {self.names}") from None


def generate_synthetic(
    n_steps: int,
    rng: np.random.Generator,
    shift: int = 6,
    tones: dict[str, tuple[tuple[float, float, float], ...]] | None = None,
) -> TimeSeriesDataset:
    """Five structured series plus three standard-normal noise series.

    half_ts1 is exactly 0.5 * ts1; shifted_ts1[t] equals ts1 evaluated at
    t + shift (same amplitude, displaced phase). Noise columns are i.i.d.
    draws from the given generator.
    """
    if n_steps < 64:
        raise DataError(f"synthetic dataset needs at least 64 steps, got {n_steps}")
    tones = DEFAULT_TONES if tones is None else tones

    def tone_series(name: str, offset: float = 0.0) -> np.ndarray:
        t = np.arange(n_steps, dtype=np.float64) + offset
        out = np.zeros(n_steps)
        for amp, period, phase in tones[name]:
            out += amp * np.sin(2.0 * np.pi * t / period + phase)
        return out

    ts1 = tone_series("ts1")
    columns = [
        ts1,
        tone_series("ts2"),
        tone_series("ts3"),
        0.5 * ts1,
        tone_series("ts1", offset=float(shift)),
        rng.standard_normal(n_steps),
        rng.standard_normal(n_steps),
        rng.standard_normal(n_steps),
    ]
    names = list(SYNTH_STRUCTURED) + list(SYNTH_NOISE)
    return TimeSeriesDataset(names=names, values=np.column_stack(columns))


def _parse_cell(raw: str, line: int, col: int, header: list[str]) -> float | None:
    """Float value of a CSV cell, or None for a recognized missing marker."""
    text = raw.strip()
    if text.lower() in NA_MARKERS:
        return None
    try:
        return float(text)
    except ValueError:
        raise DataError(
            f"unparseable numeric cell {raw!r} at line {line}, column "
            f"{header[col]!r}"
        ) from None


def load_csv(path, timestamp_column: bool | None = None, na_policy: str = "drop") -> TimeSeriesDataset:
    """Read a dataset from a comma-separated UTF-8 file with a header row.

    Every column after an optional leading timestamp column becomes a series,
    in file order. With timestamp_column=None the leading column is treated
    as a timestamp exactly when its first non-missing value is not numeric.
    na_policy 'drop' removes rows with missing values, 'ffill' carries the
    previous row forward (rows before the first complete one are dropped).
    """
    if na_policy not in ("drop", "ffill"):
        raise DataError(f"na_policy must be 'drop' or 'ffill', got {na_policy!r}")
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        rows = list(reader)
    if not rows:
        raise DataError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    if not body:
        raise DataError(f"{path}: no data rows")

    if timestamp_column is None:
        first_col = next((r[0].strip() for r in body if r and r[0].strip().lower() not in NA_MARKERS), "")
        try:
            float(first_col)
            timestamp_column = False
        except ValueError:
            timestamp_column = True
    first_series = 1 if timestamp_column else 0
    names = [h.strip() for h in header[first_series:]]
    if len(names) < 2:
        raise DataError(f"{path}: need at least 2 numeric columns, found {len(names)}")

    parsed: list[list[float | None]] = []
    for i, row in enumerate(body):
        if len(row) != len(header):
            raise DataError(
                f"{path}: row {i + 1} has {len(row)} cells, header has {len(header)}"
            )
        parsed.append(
            [_parse_cell(row[j], i + 2, j, header) for j in range(first_series, len(header))]
        )

    kept: list[list[float]] = []
    affected = 0
    last_complete: list[float] | None = None
    for row_vals in parsed:
        if any(v is None for v in row_vals):
            affected += 1
            if na_policy == "ffill" and last_complete is not None:
                filled = [last_complete[j] if v is None else v for j, v in enumerate(row_vals)]
                kept.append(filled)
                last_complete = filled
            # under 'drop' (or a leading gap under 'ffill') the row vanishes
        else:
            row_f = [float(v) for v in row_vals]
            kept.append(row_f)
            last_complete = row_f
    if affected:
        logger.info("%s: %d rows with missing values handled by na_policy=%s", path, affected, na_policy)
    if not kept:
        raise DataError(f"{path}: no usable rows after applying na_policy={na_policy!r}")
    return TimeSeriesDataset(names=names, values=np.asarray(kept, dtype=np.float64))


def save_csv(ds: TimeSeriesDataset, path) -> None:
    """Write a dataset as a header row plus full-precision float rows."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(ds.names) + "\n")
        for row in ds.values:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def standardize(ds: TimeSeriesDataset, stat_range: tuple[int, int] | None = None) -> TimeSeriesDataset:
    """Z-score the dataset using stats from stat_range only (default: all steps).

    Computing stats on the training range and applying them everywhere keeps
    validation data out of the transform. The returned dataset carries the
    stats so predictions can be mapped back to original units.
    """
    start, end = stat_range if stat_range is not None else (0, ds.n_steps)
    if not 0 <= start < end <= ds.n_steps:
        raise DataError(f"stat_range [{start}, {end}) out of bounds for T={ds.n_steps}")
    block = ds.values[start:end]
    means = block.mean(axis=0)
    stds = block.std(axis=0)
    for k, s in enumerate(stds):
        if s <= 0.0:
            raise DataError(
                f"series {ds.names[k]!r} has zero standard deviation over "
                f"[{start}, {end}); cannot standardize"
            )
    stats = NormStats(means=means, stds=stds)
    return TimeSeriesDataset(names=list(ds.names), values=stats.apply(ds.values), norm_stats=stats)


@dataclass
class WindowSample:
    """One nowcasting sample: a (tau, K) block and the next step's K values."""

    x: np.ndarray
    y: np.ndarray


class Windows(Sequence):
    """Window samples stored as stacked arrays for batch training.

    x has shape (N, tau, K), y has shape (N, K); indexing yields WindowSample
    views into the stacks.
    """

    def __init__(self, x: np.ndarray, y: np.ndarray):
        self.x = x
        self.y = y

    def __len__(self) -> int:
        return self.x.shape[0]

    def __getitem__(self, i):
        if isinstance(i, slice):
            return Windows(self.x[i], self.y[i])
        return WindowSample(x=self.x[i], y=self.y[i])

    @property
    def tau(self) -> int:
        return self.x.shape[1]

    @property
    def n_series(self) -> int:
        return self.x.shape[2]


def make_windows(ds: TimeSeriesDataset, step_range: tuple[int, int], tau: int) -> Windows:
    """All window samples whose input block and target lie in step_range.

    Position i yields x = values[start+i : start+i+tau] and y = the row right
    after, so the count is (end - start) - tau.
    """
    start, end = step_range
    if not 0 <= start < end <= ds.n_steps:
        raise DataError(f"step range [{start}, {end}) out of bounds for T={ds.n_steps}")
    if end - start < tau + 1:
        raise DataError(
            f"range [{start}, {end}) too short for tau={tau}: need at least {tau + 1} steps"
        )
    block = ds.values[start:end]
    x = sliding_window_view(block, tau, axis=0)[:-1].transpose(0, 2, 1)
    y = block[tau:]
    return Windows(x=np.ascontiguousarray(x), y=np.ascontiguousarray(y))


@dataclass
class FoldSpec:
    """One expanding-window fold: training steps then the validation block."""

    fold_index: int
    train_range: tuple[int, int]
    val_range: tuple[int, int]

    def __post_init__(self):
        if self.train_range[1] > self.val_range[0]:
            raise DataError(
                f"fold {self.fold_index}: training range {self.train_range} "
                f"overlaps validation range {self.val_range}"
            )


def ts_kfold(n_steps: int, folds: int = 10, val_fraction: float = 0.1) -> list[FoldSpec]:
    """Expanding-window cross-validation splits.

    The series is cut into `folds` equal blocks; fold i trains on the first i
    blocks and validates on the next floor(val_fraction * T) steps, clamped to
    the series end. Training always precedes validation, so there is no
    temporal leakage. Yields folds - 1 usable folds.
    """
    if folds < 2:
        raise DataError(f"need at least 2 folds, got {folds}")
    block = n_steps // folds
    val_len = int(val_fraction * n_steps)
    if block < 1 or val_len < 1:
        raise DataError(
            f"series of length {n_steps} too short for {folds} folds with "
            f"val_fraction={val_fraction}"
        )
    specs = []
    for i in range(1, folds):
        train_end = i * block
        val_end = min(train_end + val_len, n_steps)
        if val_end <= train_end:
            raise DataError(f"fold {i}: empty validation range")
        specs.append(FoldSpec(fold_index=i, train_range=(0, train_end), val_range=(train_end, val_end)))
    return specs
