"""Series ingestion, splits, standardization, windowing and synthetic data.

CSV files follow the ETT convention: a header row, first column "date" as
"YYYY-MM-DD HH:MM:SS", remaining columns numeric, target last. Splits are
chronological; standardization always uses train-split statistics.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass

import numpy as np

from .embedding import TimeMarks
from .exceptions import ConfigError, DataError

FREQ_MINUTES = {"hourly": 60, "quarter-hourly": 15}


@dataclass
class TimeSeriesFrame:
    timestamps: list[dt.datetime]
    values: np.ndarray           # (n, d_x) float64
    names: list[str]
    freq: str                    # hourly | quarter-hourly | custom-minutes
    step_minutes: int

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d_x(self) -> int:
        return self.values.shape[1]

    def slice(self, start: int, stop: int) -> "TimeSeriesFrame":
        return TimeSeriesFrame(self.timestamps[start:stop],
                               self.values[start:stop],
                               self.names, self.freq, self.step_minutes)


@dataclass
class SplitSpec:
    """Chronological train/val/test boundaries, as months or fractions."""

    kind: str = "ratio"          # ratio | months
    train: float = 0.7
    val: float = 0.1
    test: float | None = None    # months mode requires all three

    def boundaries(self, n: int, step_minutes: int) -> tuple[int, int, int]:
        if self.kind == "ratio":
            n_train = int(n * self.train)
            n_val = int(n * self.val)
            n_test = n - n_train - n_val
        elif self.kind == "months":
            if self.test is None:
                raise ConfigError("months split needs train/val/test month counts")
            rows_per_month = 30 * 24 * 60 // step_minutes
            n_train = int(self.train * rows_per_month)
            n_val = int(self.val * rows_per_month)
            n_test = min(int(self.test * rows_per_month), n - n_train - n_val)
        else:
            raise ConfigError(f"unknown split kind {self.kind!r}")
        if n_train <= 0 or n_val <= 0 or n_test <= 0 or n_train + n_val + n_test > n:
            raise DataError(f"split {self.kind} does not fit {n} rows "
                            f"({n_train}/{n_val}/{n_test})")
        return n_train, n_val, n_test


def split_frame(frame: TimeSeriesFrame, spec: SplitSpec):
    n_train, n_val, n_test = spec.boundaries(frame.n, frame.step_minutes)
    return (frame.slice(0, n_train),
            frame.slice(n_train, n_train + n_val),
            frame.slice(n_train + n_val, n_train + n_val + n_test))


def _infer_freq(step_minutes: int) -> str:
    for name, minutes in FREQ_MINUTES.items():
        if step_minutes == minutes:
            return name
    return "custom-minutes"


def load_csv(path) -> TimeSeriesFrame:
    timestamps: list[dt.datetime] = []
    rows: list[list[float]] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file")
        if len(header) < 2:
            raise DataError(f"{path}: need a date column plus at least one feature")
        width = len(header)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise DataError(f"{path}:{lineno}: ragged row, "
                                f"{len(row)} fields where header has {width}")
            try:
                ts = dt.datetime.strptime(row[0], "%Y-%m-%d %H:%M:%S")
                vals = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            if not all(math.isfinite(v) for v in vals):
                raise DataError(f"{path}:{lineno}: non-finite value")
            timestamps.append(ts)
            rows.append(vals)
    if len(rows) < 2:
        raise DataError(f"{path}: need at least two data rows")
    values = np.asarray(rows, dtype=np.float64)
    deltas = {int((b - a).total_seconds()) for a, b in zip(timestamps, timestamps[1:])}
    if len(deltas) != 1 or min(deltas) <= 0:
        raise DataError(f"{path}: timestamps not strictly increasing with uniform spacing")
    step_minutes = deltas.pop() // 60
    return TimeSeriesFrame(timestamps, values, header[1:],
                           _infer_freq(step_minutes), step_minutes)


def extract_time_marks(timestamps, step_minutes: int = 60) -> TimeMarks:
    month = np.array([t.month - 1 for t in timestamps], dtype=np.int64)
    day = np.array([t.day - 1 for t in timestamps], dtype=np.int64)
    hour = np.array([t.hour for t in timestamps], dtype=np.int64)
    minute = np.array([t.minute for t in timestamps], dtype=np.int64)
    return TimeMarks(month, day, hour, minute, minute_granular=step_minutes < 60)


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, train_values: np.ndarray) -> "Standardizer":
        if train_values.size == 0:
            raise DataError("cannot fit standardizer on an empty train slice")
        mean = train_values.mean(axis=0)
        std = train_values.std(axis=0)
        std = np.where(std > 0, std, 1.0)  # constant features pass through centered
        return cls(mean, std)

    def apply(self, frame: TimeSeriesFrame) -> TimeSeriesFrame:
        return TimeSeriesFrame(frame.timestamps,
                               (frame.values - self.mean) / self.std,
                               frame.names, frame.freq, frame.step_minutes)

    def invert(self, values: np.ndarray) -> np.ndarray:
        return values * self.std + self.mean


@dataclass
class WindowSample:
    x_enc: np.ndarray
    enc_marks: TimeMarks
    x_label: np.ndarray
    label_marks: TimeMarks
    y_true: np.ndarray
    y_marks: TimeMarks


class WindowDataset:
    """Stride-1 sliding windows; the label segment is the trailing L_label
    steps of the encoder window and the target immediately follows it."""

    def __init__(self, frame: TimeSeriesFrame, L_x: int, L_label: int, L_y: int,
                 stride: int = 1):
        if L_label > L_x:
            raise ConfigError(f"label length {L_label} exceeds input length {L_x}")
        if frame.n < L_x + L_y:
            raise DataError(
                f"split with {frame.n} rows shorter than one window ({L_x}+{L_y})")
        self.frame = frame
        self.L_x, self.L_label, self.L_y = L_x, L_label, L_y
        self.stride = stride
        self.marks = extract_time_marks(frame.timestamps, frame.step_minutes)
        self._starts = range(0, frame.n - L_x - L_y + 1, stride)

    def __len__(self) -> int:
        return len(self._starts)

    def __getitem__(self, i: int) -> WindowSample:
        s = self._starts[i]
        v = self.frame.values
        e0, e1 = s, s + self.L_x
        l0 = e1 - self.L_label
        y1 = e1 + self.L_y
        return WindowSample(
            x_enc=v[e0:e1], enc_marks=self.marks.slice(e0, e1),
            x_label=v[l0:e1], label_marks=self.marks.slice(l0, e1),
            y_true=v[e1:y1], y_marks=self.marks.slice(e1, y1))


def make_windows(frame: TimeSeriesFrame, L_x: int, L_label: int, L_y: int,
                 stride: int = 1) -> WindowDataset:
    return WindowDataset(frame, L_x, L_label, L_y, stride)


def synth_generate(spec: dict) -> TimeSeriesFrame:
    """Deterministic synthetic series: per-dimension phase-shifted sines plus
    linear trend and Gaussian noise, hourly timestamps.

    spec keys: n, d, components [{period, amp, phase}], trend, noise_std,
    phase_step, seed, start (ISO date), freq_minutes.
    """
    known = {"n", "d", "components", "trend", "noise_std", "phase_step",
             "seed", "start", "freq_minutes"}
    unknown = set(spec) - known
    if unknown:
        raise ConfigError(f"unknown synthetic-spec keys: {sorted(unknown)}")
    n, d = int(spec.get("n", 0)), int(spec.get("d", 0))
    if n < 1 or d < 1:
        raise ConfigError(f"synthetic spec needs n, d >= 1, got n={n} d={d}")
    components = spec.get("components", [])
    for c in components:
        if set(c) - {"period", "amp", "phase"}:
            raise ConfigError(f"unknown component keys in {c}")
        if float(c.get("period", 0)) <= 0:
            raise ConfigError(f"component period must be positive: {c}")
    trend = float(spec.get("trend", 0.0))
    noise_std = float(spec.get("noise_std", 0.0))
    phase_step = float(spec.get("phase_step", 2.0 * np.pi / max(d, 1)))
    seed = int(spec.get("seed", 0))
    step_minutes = int(spec.get("freq_minutes", 60))

    t = np.arange(n, dtype=np.float64)[:, None]
    dim_phase = phase_step * np.arange(d, dtype=np.float64)[None, :]
    values = np.zeros((n, d), dtype=np.float64)
    for c in components:
        period = float(c["period"])
        amp = float(c.get("amp", 1.0))
        phase = float(c.get("phase", 0.0))
        values += amp * np.sin(2.0 * np.pi * t / period + phase + dim_phase)
    values += trend * t
    if noise_std > 0:
        rng = np.random.default_rng(seed)
        values += rng.normal(0.0, noise_std, size=values.shape)

    start = dt.datetime.fromisoformat(spec.get("start", "2021-01-01 00:00:00"))
    step = dt.timedelta(minutes=step_minutes)
    timestamps = [start + i * step for i in range(n)]
    names = [f"s{j}" for j in range(d)]
    return TimeSeriesFrame(timestamps, values, names,
                           _infer_freq(step_minutes), step_minutes)


def write_csv(frame: TimeSeriesFrame, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date"] + frame.names)
        for ts, row in zip(frame.timestamps, frame.values):
            writer.writerow([ts.strftime("%Y-%m-%d %H:%M:%S")]
                            + [repr(float(v)) for v in row])
