"""Multichannel time-series containers, CSV interchange, min-max scaling and
fixed-period cycle segmentation."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import DataError, DegenerateSignalError, FormatError, IoError, ShapeError

VARIABLES = ("U", "V", "W", "T")
N_SENSORS_MAX = 20
_CHANNEL_RE = re.compile(r"^f(\d+)_s(\d+)_([A-Za-z]+)$")
_JITTER_TOL = 1e-6
_CLAMP_TOL = 1e-12


@dataclass(frozen=True)
class ChannelDescriptor:
    flame_index: int
    sensor_index: int
    variable: str

    def __post_init__(self):
        if self.flame_index < 0:
            raise FormatError(f"negative flame index {self.flame_index}")
        if not 0 <= self.sensor_index < N_SENSORS_MAX:
            raise FormatError(f"sensor index {self.sensor_index} outside [0, {N_SENSORS_MAX - 1}]")
        if self.variable not in VARIABLES:
            raise FormatError(f"unknown variable {self.variable!r}")

    @property
    def name(self) -> str:
        return f"f{self.flame_index}_s{self.sensor_index}_{self.variable}"

    @classmethod
    def parse(cls, name: str) -> "ChannelDescriptor":
        match = _CHANNEL_RE.match(name.strip())
        if match is None:
            raise FormatError(f"malformed channel name {name!r}")
        return cls(int(match.group(1)), int(match.group(2)), match.group(3))


@dataclass(frozen=True)
class FeatureMatrix:
    """Time-major sample matrix: rows are time samples, columns are channels."""

    values: np.ndarray
    sample_rate: float
    channels: tuple[ChannelDescriptor, ...]

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ShapeError("feature matrix must be 2-D")
        if values.shape[0] < 2:
            raise DataError("feature matrix needs at least 2 rows")
        if values.shape[1] != len(self.channels):
            raise ShapeError(f"{values.shape[1]} columns but {len(self.channels)} channel descriptors")
        if not np.all(np.isfinite(values)):
            raise DataError("feature matrix contains non-finite values")
        if len(set(self.channels)) != len(self.channels):
            raise FormatError("duplicate channel descriptors")
        if not self.sample_rate > 0:
            raise DataError("sample rate must be positive")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "channels", tuple(self.channels))

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_samples) / self.sample_rate

    def with_values(self, values: np.ndarray) -> "FeatureMatrix":
        return FeatureMatrix(values, self.sample_rate, self.channels)

    def same_schema(self, other: "FeatureMatrix") -> bool:
        return self.channels == other.channels and self.sample_rate == other.sample_rate


def concatenate(matrices: Sequence[FeatureMatrix]) -> FeatureMatrix:
    """Stack matrices row-wise; all must share channels and sample rate."""
    if not matrices:
        raise DataError("nothing to concatenate")
    first = matrices[0]
    for other in matrices[1:]:
        if not first.same_schema(other):
            raise DataError("channel schema mismatch between datasets")
    return FeatureMatrix(np.vstack([m.values for m in matrices]), first.sample_rate, first.channels)


def save_csv(path: str | Path, data: FeatureMatrix) -> None:
    header = ",".join(["t"] + [c.name for c in data.channels])
    table = np.column_stack([data.times, data.values])
    try:
        np.savetxt(path, table, delimiter=",", header=header, comments="", fmt="%.17g", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _snap_rate(rate: float) -> float:
    nearest = round(rate)
    if nearest > 0 and abs(rate - nearest) <= 1e-9 * rate:
        return float(nearest)
    return rate


def load_csv(path: str | Path) -> FeatureMatrix:
    """Read the canonical CSV layout: a leading ``t`` column then ``f{i}_s{j}_{V}`` columns."""
    try:
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().strip().split(",")
            body = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if not header or header[0].strip() != "t":
        raise FormatError("first column must be 't'")
    channels = tuple(ChannelDescriptor.parse(name) for name in header[1:])
    if not channels:
        raise FormatError("no channel columns")
    if len(set(channels)) != len(channels):
        raise FormatError("duplicate channel columns")
    rows = [line for line in body.splitlines() if line.strip()]
    try:
        table = np.array([[float(v) for v in line.split(",")] for line in rows], dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"unparseable value: {exc}") from exc
    if table.ndim != 2 or table.shape[1] != len(header):
        raise FormatError("ragged rows or column count differs from header")
    if not np.all(np.isfinite(table)):
        raise DataError("non-finite value in data")
    if table.shape[0] < 2:
        raise DataError("need at least two rows to infer the sample rate")
    dt = np.diff(table[:, 0])
    step = float(np.median(dt))
    if step <= 0 or np.max(np.abs(dt - step)) > _JITTER_TOL:
        raise DataError("timestamps are not uniformly spaced")
    return FeatureMatrix(table[:, 1:], _snap_rate(1.0 / step), channels)


@dataclass(frozen=True)
class NormalizationSpec:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = np.array(self.min, dtype=np.float64)
        hi = np.array(self.max, dtype=np.float64)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ShapeError("min and max must be equal-length vectors")
        if np.any(lo > hi):
            raise DataError("normalizer has min > max")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @property
    def n_channels(self) -> int:
        return self.min.shape[0]

    def to_dict(self) -> dict:
        return {"min": self.min.tolist(), "max": self.max.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationSpec":
        return cls(np.asarray(d["min"], dtype=float), np.asarray(d["max"], dtype=float))


def fit_normalizer(data: FeatureMatrix) -> NormalizationSpec:
    return NormalizationSpec(data.values.min(axis=0), data.values.max(axis=0))


def _scale_array(spec: NormalizationSpec, x: np.ndarray) -> np.ndarray:
    if x.shape[-1] != spec.n_channels:
        raise ShapeError(f"normalizer has {spec.n_channels} channels, data has {x.shape[-1]}")
    span = spec.max - spec.min
    constant = span == 0
    out = (x - spec.min) / np.where(constant, 1.0, span)
    out = np.where(constant, 0.0, out)
    # Snap rounding noise at the bounds; real drift stays visible.
    out = np.where((out < 0) & (out >= -_CLAMP_TOL), 0.0, out)
    out = np.where((out > 1) & (out <= 1 + _CLAMP_TOL), 1.0, out)
    return out


def apply_normalizer(spec: NormalizationSpec, data: FeatureMatrix) -> FeatureMatrix:
    return data.with_values(_scale_array(spec, data.values))


def normalize_values(spec: NormalizationSpec, values: np.ndarray) -> np.ndarray:
    return _scale_array(spec, np.asarray(values, dtype=np.float64))


def inverse_normalize(spec: NormalizationSpec, data: FeatureMatrix) -> FeatureMatrix:
    if data.n_channels != spec.n_channels:
        raise ShapeError("channel count mismatch")
    return data.with_values(data.values * (spec.max - spec.min) + spec.min)


def estimate_period(data: FeatureMatrix, channel: int) -> int:
    """Dominant period in samples from the largest DFT bin above 0.5 Hz."""
    n = data.n_samples
    if n < 4:
        raise DataError("need at least 4 samples")
    if not 0 <= channel < data.n_channels:
        raise ShapeError(f"channel index {channel} out of range")
    x = data.values[:, channel]
    x = x - x.mean()
    spectrum = np.abs(np.fft.rfft(x))
    freqs = np.fft.rfftfreq(n, d=1.0 / data.sample_rate)
    usable = freqs > 0.5
    scale = max(float(np.max(np.abs(data.values[:, channel]))), 1.0)
    if not np.any(usable) or np.max(spectrum[usable]) <= 1e-12 * n * scale:
        raise DegenerateSignalError("channel has no oscillating content")
    candidates = np.flatnonzero(usable)
    peak = candidates[np.argmax(spectrum[candidates])]
    return int(round(data.sample_rate / freqs[peak]))


def common_period(matrices: Sequence[FeatureMatrix]) -> int:
    """Median of the per-matrix periods, skipping matrices with no oscillation.

    Each matrix is estimated separately: modes differ in flame phase, so a
    concatenation smears the fundamental across neighbouring bins.
    """
    periods = []
    for m in matrices:
        try:
            periods.append(estimate_period(m, dominant_channel(m)))
        except DegenerateSignalError:
            continue
    if not periods:
        raise DegenerateSignalError("no matrix has oscillating content")
    return int(sorted(periods)[(len(periods) - 1) // 2])  # lower median stays an observed value


def dominant_channel(data: FeatureMatrix) -> int:
    """Index of the channel with the largest variance after min-max scaling."""
    span = np.ptp(data.values, axis=0)
    scaled = (data.values - data.values.min(axis=0)) / np.where(span == 0, 1.0, span)
    return int(np.argmax(scaled.var(axis=0)))


@dataclass(frozen=True)
class CycleSet:
    """Equal-length, ordered, non-overlapping windows over a series of ``n`` samples."""

    L: int
    n: int
    cycles: tuple[tuple[int, Optional[str]], ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "cycles", tuple((int(s), lab) for s, lab in self.cycles))
        prev_end = 0
        for start, _ in self.cycles:
            if start < prev_end:
                raise DataError("cycles overlap or are out of order")
            if start + self.L > self.n:
                raise DataError("cycle runs past the end of the series")
            prev_end = start + self.L

    def __len__(self) -> int:
        return len(self.cycles)

    @property
    def starts(self) -> list[int]:
        return [s for s, _ in self.cycles]

    @property
    def labels(self) -> list[Optional[str]]:
        return [lab for _, lab in self.cycles]

    def windows(self, array: np.ndarray) -> np.ndarray:
        """Stack the cycles of ``array`` (n x d) into a (count, L, d) block."""
        array = np.asarray(array)
        if array.shape[0] != self.n:
            raise ShapeError(f"series has {array.shape[0]} rows, cycle set expects {self.n}")
        return np.stack([array[s : s + self.L] for s in self.starts]) if self.cycles else np.empty((0, self.L) + array.shape[1:])

    def relabel(self, label: Optional[str]) -> "CycleSet":
        return CycleSet(self.L, self.n, tuple((s, label) for s in self.starts))

    def to_json(self) -> str:
        return json.dumps({"L": self.L, "cycles": [{"start": s, "label": lab} for s, lab in self.cycles]}, indent=1)

    @classmethod
    def from_json(cls, text: str, n: Optional[int] = None) -> "CycleSet":
        try:
            obj = json.loads(text)
            L = int(obj["L"])
            cycles = tuple((int(c["start"]), c.get("label")) for c in obj["cycles"])
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad cycle-set JSON: {exc}") from exc
        if n is None:
            n = max((s + L for s, _ in cycles), default=L)
        return cls(L, n, cycles)


def segment_cycles(n: int, L: int, count_limit: Optional[int] = None, label: Optional[str] = None) -> CycleSet:
    if L < 2:
        raise ShapeError("cycle length must be at least 2")
    if L > n:
        raise ShapeError(f"cycle length {L} exceeds series length {n}")
    count = n // L
    if count_limit is not None:
        count = min(count, count_limit)
    return CycleSet(L, n, tuple((i * L, label) for i in range(count)))


def group_cycles(windows: np.ndarray, group_size: int) -> np.ndarray:
    """Merge consecutive cycles into groups, (count, L, d) -> (count // g, g * L, d)."""
    if group_size < 1:
        raise ShapeError("group size must be >= 1")
    count = windows.shape[0] // group_size
    if count == 0:
        raise DataError(f"fewer than {group_size} cycles available")
    trimmed = windows[: count * group_size]
    return trimmed.reshape((count, group_size * windows.shape[1]) + windows.shape[2:])


def channel_names(channels: Iterable[ChannelDescriptor]) -> list[str]:
    return [c.name for c in channels]
