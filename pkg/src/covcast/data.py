"""Time series ingestion, imputation, leak-free normalization, splits and windowing.

A SeriesFrame is a timestamp-indexed bundle of named channels, each tagged
with a role (target / past covariate / future-known covariate). A channel may
serve as both past and future covariate: its history then lands in the
lookback block of every window while its horizon segment is carried as a
future-known input.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import DataFileError, SchemaError, SplitError, TimestampError

logger = logging.getLogger(__name__)

STD_FLOOR = 1e-8
DEFAULT_MAX_GAP = 8


@dataclass(frozen=True)
class ChannelSchema:
    """Role assignment for the named channels of one dataset."""

    targets: tuple[str, ...]
    past_covariates: tuple[str, ...] = ()
    future_covariates: tuple[str, ...] = ()
    frequency: str = "1h"

    def __post_init__(self):
        if not self.targets:
            raise SchemaError("schema must declare at least one target channel")
        overlap = set(self.targets) & (set(self.past_covariates) | set(self.future_covariates))
        if overlap:
            raise SchemaError(f"channels cannot be both target and covariate: {sorted(overlap)}")
        for group_name, group in (("targets", self.targets),
                                  ("past_covariates", self.past_covariates),
                                  ("future_covariates", self.future_covariates)):
            if len(set(group)) != len(group):
                raise SchemaError(f"duplicate channel name in {group_name}")

    @property
    def channel_names(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for name in (*self.targets, *self.past_covariates, *self.future_covariates):
            seen.setdefault(name)
        return tuple(seen)

    @property
    def n_targets(self) -> int:
        return len(self.targets)

    @property
    def n_past(self) -> int:
        return len(self.past_covariates)

    @property
    def n_future(self) -> int:
        return len(self.future_covariates)


@dataclass(frozen=True)
class SeriesFrame:
    """Immutable multichannel series on a regular time grid.

    values is (n_channels, n_rows) float64; missing marks entries that are
    absent in the source (and still absent after imputation).
    """

    timestamps: np.ndarray
    values: np.ndarray
    names: tuple[str, ...]
    schema: ChannelSchema
    missing: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if values.ndim != 2 or values.shape[0] != len(self.names):
            raise SchemaError(f"values must be (n_channels={len(self.names)}, n_rows), got {values.shape}")
        if self.missing is None:
            object.__setattr__(self, "missing", ~np.isfinite(values))
        if self.missing.shape != values.shape:
            raise SchemaError("missing mask shape must match values")
        ts = np.asarray(self.timestamps, dtype="datetime64[ns]")
        object.__setattr__(self, "timestamps", ts)
        if len(ts) != values.shape[1]:
            raise SchemaError("timestamps length must match number of rows")
        if len(ts) >= 2:
            deltas = np.diff(ts)
            if np.any(deltas <= np.timedelta64(0, "ns")):
                raise TimestampError("non-monotone timestamps")
            if np.any(deltas != deltas[0]):
                raise TimestampError("timestamps are not equally spaced")
            declared = pd.Timedelta(_normalize_freq(self.schema.frequency)).to_numpy()
            if deltas[0] != declared:
                raise TimestampError(
                    f"timestamp spacing {deltas[0]} differs from declared frequency "
                    f"{self.schema.frequency}")
        missing_names = [n for n in self.schema.channel_names if n not in self.names]
        if missing_names:
            raise SchemaError(f"schema channels absent from frame: {missing_names}")
        self.values.setflags(write=False)
        self.missing.setflags(write=False)

    @property
    def n_rows(self) -> int:
        return self.values.shape[1]

    @property
    def freq(self) -> np.timedelta64:
        if len(self.timestamps) < 2:
            return pd.Timedelta(_normalize_freq(self.schema.frequency)).to_numpy()
        return self.timestamps[1] - self.timestamps[0]

    def _rows_for(self, names: Sequence[str]) -> np.ndarray:
        index = {n: i for i, n in enumerate(self.names)}
        return np.array([index[n] for n in names], dtype=np.intp)

    def channel(self, name: str) -> np.ndarray:
        return self.values[self._rows_for([name])[0]]

    @property
    def target_values(self) -> np.ndarray:
        return self.values[self._rows_for(self.schema.targets)]

    @property
    def past_values(self) -> np.ndarray:
        return self.values[self._rows_for(self.schema.past_covariates)]

    @property
    def future_values(self) -> np.ndarray:
        return self.values[self._rows_for(self.schema.future_covariates)]

    def target_missing(self) -> np.ndarray:
        return self.missing[self._rows_for(self.schema.targets)]

    def past_missing(self) -> np.ndarray:
        return self.missing[self._rows_for(self.schema.past_covariates)]

    def future_missing(self) -> np.ndarray:
        return self.missing[self._rows_for(self.schema.future_covariates)]

    def slice_rows(self, start: int, stop: int) -> "SeriesFrame":
        return SeriesFrame(
            timestamps=self.timestamps[start:stop].copy(),
            values=self.values[:, start:stop].copy(),
            names=self.names,
            schema=self.schema,
            missing=self.missing[:, start:stop].copy(),
        )


def _normalize_freq(freq: str) -> str:
    # pandas deprecated upper-case hour alias; accept both spellings
    return freq.replace("H", "h") if freq.endswith("H") else freq


def load_frame(path: str | Path, schema: ChannelSchema, delimiter: str = ",") -> SeriesFrame:
    """Read a delimiter-separated file into a SeriesFrame.

    First column must be ISO-8601 timestamps; remaining columns are named
    channels. Rows are aligned onto the regular grid implied by the schema
    frequency; absent grid rows become missing entries.
    """
    path = Path(path)
    if not path.exists():
        raise DataFileError(f"dataset file not found: {path}")
    df = pd.read_csv(path, sep=delimiter, float_precision="round_trip")
    if df.shape[1] < 2:
        raise SchemaError(f"{path}: expected a timestamp column plus at least one channel")
    absent = [c for c in schema.channel_names if c not in df.columns[1:]]
    if absent:
        raise SchemaError(f"{path}: missing column(s) {absent}")

    try:
        stamps = pd.to_datetime(df.iloc[:, 0], format="ISO8601")
    except (ValueError, TypeError) as exc:
        raise TimestampError(f"{path}: unparseable timestamps: {exc}") from None
    if stamps.isna().any():
        raise TimestampError(f"{path}: unparseable timestamps at rows {list(np.flatnonzero(stamps.isna())[:5])}")
    ts = stamps.to_numpy(dtype="datetime64[ns]")
    if len(ts) >= 2:
        deltas = np.diff(ts)
        if np.any(deltas <= np.timedelta64(0, "ns")):
            bad = int(np.flatnonzero(deltas <= np.timedelta64(0, "ns"))[0]) + 1
            raise TimestampError(f"{path}: non-monotone timestamps at row {bad}")

    step = pd.Timedelta(_normalize_freq(schema.frequency)).to_numpy()
    offsets = (ts - ts[0]) / step
    rounded = np.rint(offsets)
    if np.any(np.abs(offsets - rounded) > 1e-6):
        bad = int(np.flatnonzero(np.abs(offsets - rounded) > 1e-6)[0])
        raise TimestampError(
            f"{path}: timestamp at row {bad} is off the {schema.frequency} grid by more than tolerance"
        )

    n_rows = int(rounded[-1]) + 1 if len(ts) else 0
    grid = ts[0] + step * np.arange(n_rows)
    names = tuple(schema.channel_names)
    values = np.full((len(names), n_rows), np.nan)
    row_idx = rounded.astype(np.intp)
    for i, name in enumerate(names):
        col = pd.to_numeric(df[name], errors="coerce").to_numpy(dtype=np.float64)
        values[i, row_idx] = col

    frame = SeriesFrame(timestamps=grid, values=values, names=names, schema=schema)
    n_gaps = n_rows - len(ts)
    if n_gaps:
        logger.info("%s: %d missing grid rows inserted during time-index alignment", path.name, n_gaps)
    return frame


def write_frame(frame: SeriesFrame, path: str | Path, delimiter: str = ",") -> None:
    """Serialize a frame to the load_frame input format (missing cells empty)."""
    path = Path(path)
    lines = ["timestamp" + delimiter + delimiter.join(frame.names)]
    for k in range(frame.n_rows):
        stamp = np.datetime_as_string(frame.timestamps[k], unit="s")
        cells = ["" if frame.missing[i, k] else repr(float(frame.values[i, k]))
                 for i in range(len(frame.names))]
        lines.append(stamp + delimiter + delimiter.join(cells))
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise DataFileError(f"cannot write frame {path}: {exc}") from exc


def forward_fill(frame: SeriesFrame, max_gap: int = DEFAULT_MAX_GAP) -> SeriesFrame:
    """Fill short covariate gaps with the last observed value.

    Only covariate channels are imputed; target gaps are preserved and later
    invalidate any window touching them. Gaps longer than max_gap (and
    leading gaps) stay missing and are logged.
    """
    cov_names = set(frame.schema.past_covariates) | set(frame.schema.future_covariates)
    values = frame.values.copy()
    missing = frame.missing.copy()
    for i, name in enumerate(frame.names):
        if name not in cov_names:
            continue
        row_missing = missing[i]
        if not row_missing.any():
            continue
        filled, still_missing, long_gaps = _ffill_row(values[i], row_missing, max_gap)
        values[i] = filled
        missing[i] = still_missing
        for start, length in long_gaps:
            logger.warning("channel %r: gap of %d step(s) at row %d left unfilled (max_gap=%d)",
                           name, length, start, max_gap)
    return SeriesFrame(frame.timestamps.copy(), values, frame.names, frame.schema, missing)


def _ffill_row(row: np.ndarray, row_missing: np.ndarray, max_gap: int):
    filled = row.copy()
    still_missing = row_missing.copy()
    long_gaps = []
    n = len(row)
    i = 0
    while i < n:
        if not row_missing[i]:
            i += 1
            continue
        start = i
        while i < n and row_missing[i]:
            i += 1
        length = i - start
        if start == 0:
            long_gaps.append((start, length))  # nothing precedes a leading gap
        elif length <= max_gap:
            filled[start:i] = filled[start - 1]
            still_missing[start:i] = False
        else:
            long_gaps.append((start, length))
    return filled, still_missing, long_gaps


@dataclass(frozen=True)
class SplitSpec:
    """Chronological 3-way split ratios."""

    train_ratio: float = 0.7
    val_ratio: float = 0.1
    test_ratio: float = 0.2

    def __post_init__(self):
        ratios = (self.train_ratio, self.val_ratio, self.test_ratio)
        if any(r < 0 for r in ratios):
            raise SplitError("split ratios must be non-negative")
        if abs(sum(ratios) - 1.0) > 1e-9:
            raise SplitError(f"split ratios must sum to 1, got {sum(ratios)}")


def chrono_split(frame: SeriesFrame, spec: SplitSpec = SplitSpec(),
                 min_rows: int = 0) -> tuple[SeriesFrame, SeriesFrame, SeriesFrame]:
    """Contiguous chronological split: floor on train and val, remainder to test."""
    n = frame.n_rows
    n_train = int(np.floor(spec.train_ratio * n))
    n_val = int(np.floor(spec.val_ratio * n))
    n_test = n - n_train - n_val
    if min_rows and min(n_train, n_val, n_test) < min_rows:
        raise SplitError(
            f"split lengths {n_train}/{n_val}/{n_test} cannot host a window of {min_rows} rows"
        )
    train = frame.slice_rows(0, n_train)
    val = frame.slice_rows(n_train, n_train + n_val)
    test = frame.slice_rows(n_train + n_val, n)
    return train, val, test


@dataclass(frozen=True)
class NormStats:
    """Per-channel standardization statistics, fit on the training split only."""

    names: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray

    def transform(self, frame: SeriesFrame) -> SeriesFrame:
        idx = [self.names.index(n) for n in frame.names]
        mean = self.mean[idx][:, None]
        std = self.std[idx][:, None]
        return SeriesFrame(frame.timestamps.copy(), (frame.values - mean) / std,
                           frame.names, frame.schema, frame.missing.copy())

    def inverse(self, values: np.ndarray, names: Sequence[str]) -> np.ndarray:
        idx = [self.names.index(n) for n in names]
        return values * self.std[idx][:, None] + self.mean[idx][:, None]

    def to_dict(self) -> dict:
        return {"names": list(self.names), "mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, payload: dict) -> "NormStats":
        return cls(tuple(payload["names"]),
                   np.asarray(payload["mean"], dtype=np.float64),
                   np.asarray(payload["std"], dtype=np.float64))


def fit_apply_norm(train: SeriesFrame, *others: SeriesFrame) -> tuple[NormStats, list[SeriesFrame]]:
    """Fit per-channel mean/std on the train split and standardize all frames.

    Population convention (divide by N); std floored at STD_FLOOR so constant
    channels normalize to ~0 instead of blowing up.
    """
    if train.n_rows == 0:
        raise SplitError("cannot fit normalization statistics on an empty train split")
    obs = np.where(train.missing, np.nan, train.values)
    mean = np.nanmean(obs, axis=1)
    std = np.nanstd(obs, axis=1)  # population: ddof=0
    for i, name in enumerate(train.names):
        if not np.isfinite(mean[i]):
            raise SchemaError(f"channel {name!r} has no observed values in the train split")
        if std[i] < STD_FLOOR:
            logger.warning("channel %r is constant on the train split; std floored to %g", name, STD_FLOOR)
            std[i] = STD_FLOOR
    stats = NormStats(train.names, mean, std)
    return stats, [stats.transform(f) for f in (train, *others)]


@dataclass(frozen=True)
class WindowSample:
    """One training/eval instance at a single forecast origin."""

    x_target: np.ndarray   # (C, T)
    x_past: np.ndarray     # (Mp, T)
    y_future: np.ndarray   # (Mf, F)
    y_target: np.ndarray   # (C, F)
    origin_index: int


@dataclass(frozen=True)
class WindowSet:
    """Stacked window samples sharing (lookback, horizon)."""

    x_target: np.ndarray   # (n, C, T)
    x_past: np.ndarray     # (n, Mp, T)
    y_future: np.ndarray   # (n, Mf, F)
    y_target: np.ndarray   # (n, C, F)
    origins: np.ndarray    # (n,)
    lookback: int
    horizon: int

    def __len__(self) -> int:
        return self.x_target.shape[0]

    def __getitem__(self, i: int) -> WindowSample:
        return WindowSample(self.x_target[i], self.x_past[i], self.y_future[i],
                            self.y_target[i], int(self.origins[i]))

    @property
    def n_targets(self) -> int:
        return self.x_target.shape[1]

    @property
    def n_past(self) -> int:
        return self.x_past.shape[1]

    @property
    def n_future(self) -> int:
        return self.y_future.shape[1]


def make_windows(frame: SeriesFrame, lookback: int, horizon: int, stride: int = 1,
                 with_future_cov: bool = True) -> WindowSet:
    """Emit sliding windows at origins lookback, lookback+stride, ...

    Windows containing missing values in any carried slice are dropped.
    Setting with_future_cov=False withholds the future-known block, so one
    frame serves both evaluation protocols.
    """
    if lookback < 1 or horizon < 1 or stride < 1:
        raise ValueError("lookback, horizon and stride must be positive")
    n = frame.n_rows
    tgt = frame.target_values
    past = frame.past_values
    fut = frame.future_values
    tgt_miss = frame.target_missing()
    past_miss = frame.past_missing()
    fut_miss = frame.future_missing()

    x_t, x_p, y_f, y_t, origins = [], [], [], [], []
    n_dropped = 0
    for origin in range(lookback, n - horizon + 1, stride):
        lo, hi = origin - lookback, origin + horizon
        bad = (tgt_miss[:, lo:hi].any()
               or past_miss[:, lo:origin].any()
               or (with_future_cov and fut_miss[:, origin:hi].any()))
        if bad:
            n_dropped += 1
            continue
        x_t.append(tgt[:, lo:origin])
        x_p.append(past[:, lo:origin])
        y_f.append(fut[:, origin:hi] if with_future_cov else np.zeros((0, horizon)))
        y_t.append(tgt[:, origin:hi])
        origins.append(origin)

    if n_dropped:
        logger.info("dropped %d window(s) containing missing values", n_dropped)

    c = frame.schema.n_targets
    mp = frame.schema.n_past
    mf = frame.schema.n_future if with_future_cov else 0
    if not origins:
        return WindowSet(np.zeros((0, c, lookback)), np.zeros((0, mp, lookback)),
                         np.zeros((0, mf, horizon)), np.zeros((0, c, horizon)),
                         np.zeros((0,), dtype=np.intp), lookback, horizon)
    return WindowSet(np.stack(x_t), np.stack(x_p), np.stack(y_f), np.stack(y_t),
                     np.asarray(origins, dtype=np.intp), lookback, horizon)
