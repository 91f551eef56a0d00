"""Synthetic coupled-flame sensor data.

Each flame carries ``sensors_per_flame`` sensors stacked along its axis, each
recording U, V, W velocity components and temperature T. Channel values are a
fundamental plus one harmonic, phase-shifted per flame by the mode's offsets
and per sensor by a small convective delay::

    x(t) = B[v, j] + A[v, j] * a * (sin(w t + phi_i + psi_j)
                                    + h2 * sin(2 w t + 2 phi_i + psi_j)) + noise

with ``psi_j = 0.05 j`` rad and Gaussian noise of standard deviation
``noise_std * A[v, j]``. Offsets ``B`` and amplitudes ``A`` are linear ramps
in sensor height ``j`` (see ``RAMPS``).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .dataset import VARIABLES, ChannelDescriptor, FeatureMatrix, save_csv
from .errors import ConfigError, DataError, IoError, ShapeError
from .rng import Rng, derive_seed

MODE_NAMES = ("IP", "AP", "ROTATION", "DEATH", "PIP")
SUITE_MODES = {1: ("IP",), 2: ("IP", "AP"), 3: ("IP", "DEATH", "ROTATION", "PIP")}
SENSOR_LAG = 0.05  # rad per sensor index
DEATH_MAX_AMPLITUDE = 0.05

# variable -> (B at j=0, dB/dj, A at j=0, dA/dj); velocities in m/s, T in K
RAMPS = {
    "U": (0.0, 0.0, 0.10, 0.010),
    "V": (0.0, 0.0, 0.08, 0.008),
    "W": (0.8, 0.06, 0.30, 0.030),
    "T": (1500.0, -30.0, 150.0, 10.0),
}

_TWO_PI = 2.0 * math.pi


def _same_angle(a: float, b: float, tol: float = 1e-9) -> bool:
    d = (a - b) % _TWO_PI
    return min(d, _TWO_PI - d) <= tol


def _offsets_match(offsets, expected) -> bool:
    """Compare offset multisets up to a common rotation and reordering."""
    if len(offsets) != len(expected):
        return False
    base = offsets[0]
    for shift_src in expected:
        rel = sorted(((o - base + shift_src) % _TWO_PI) for o in offsets)
        ref = sorted(e % _TWO_PI for e in expected)
        if all(_same_angle(r, e) for r, e in zip(rel, ref)):
            return True
    return False


@dataclass(frozen=True)
class ModeSpec:
    name: str
    phase_offsets: tuple[float, ...]
    amplitude_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "phase_offsets", tuple(float(p) for p in self.phase_offsets))
        if self.name not in MODE_NAMES:
            raise ConfigError(f"unknown mode {self.name!r}")
        if not 0.0 <= self.amplitude_scale <= 1.0:
            raise ConfigError("amplitude_scale must lie in [0, 1]")
        offs = self.phase_offsets
        if not offs:
            raise ConfigError("a mode needs at least one phase offset")
        ok = True
        if self.name in ("IP", "DEATH"):
            ok = all(_same_angle(o, offs[0]) for o in offs)
        elif self.name == "AP":
            ok = _offsets_match(offs, (0.0, math.pi))
        elif self.name == "ROTATION":
            ok = _offsets_match(offs, (0.0, _TWO_PI / 3, 2 * _TWO_PI / 3))
        elif self.name == "PIP":
            ok = _offsets_match(offs, (0.0, 0.0, math.pi))
        if not ok:
            raise ConfigError(f"phase offsets {offs} are inconsistent with mode {self.name}")
        if self.name == "DEATH" and self.amplitude_scale > DEATH_MAX_AMPLITUDE:
            raise ConfigError(f"death mode amplitude must be <= {DEATH_MAX_AMPLITUDE}")

    @property
    def flames(self) -> int:
        return len(self.phase_offsets)


def standard_mode(name: str, flames: int, death_amplitude: float = DEATH_MAX_AMPLITUDE) -> ModeSpec:
    """The canonical phase pattern of ``name`` for a system of ``flames`` flames."""
    if name in ("IP", "DEATH"):
        offsets = (0.0,) * flames
    elif name == "AP" and flames == 2:
        offsets = (0.0, math.pi)
    elif name == "ROTATION" and flames == 3:
        offsets = (0.0, _TWO_PI / 3, 2 * _TWO_PI / 3)
    elif name == "PIP" and flames == 3:
        offsets = (0.0, 0.0, math.pi)
    else:
        raise ConfigError(f"mode {name} is not defined for {flames} flames")
    return ModeSpec(name, offsets, death_amplitude if name == "DEATH" else 1.0)


@dataclass(frozen=True)
class SynthConfig:
    flames: int = 2
    sensors_per_flame: int = 20
    base_frequency: float = 10.0
    sample_rate: float = 1000.0
    duration: float = 5.0
    predict_duration: float = 2.0
    noise_std: float = 0.02
    harmonic2_fraction: float = 0.3
    death_amplitude: float = DEATH_MAX_AMPLITUDE
    seed: int = 0

    def __post_init__(self):
        if self.flames not in (1, 2, 3):
            raise ConfigError("flames must be 1, 2 or 3")
        if not 1 <= self.sensors_per_flame <= 20:
            raise ConfigError("sensors_per_flame must lie in [1, 20]")
        if not self.sample_rate > 2 * self.base_frequency:
            raise ConfigError("sample_rate must exceed twice the base frequency")
        period = self.sample_rate / self.base_frequency
        for d in (self.duration, self.predict_duration):
            if d * self.sample_rate < 2 * period:
                raise ConfigError("duration must cover at least two periods")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be non-negative")
        if not 0 <= self.death_amplitude <= DEATH_MAX_AMPLITUDE:
            raise ConfigError(f"death_amplitude must lie in [0, {DEATH_MAX_AMPLITUDE}]")

    def to_dict(self) -> dict:
        return asdict(self)


def channel_layout(flames: int, sensors: int) -> tuple[ChannelDescriptor, ...]:
    return tuple(
        ChannelDescriptor(i, j, v) for i in range(flames) for j in range(sensors) for v in VARIABLES
    )


def ramp_constants(sensors: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-(sensor, variable) baseline B and amplitude A, shape (sensors, 4)."""
    j = np.arange(sensors, dtype=np.float64)[:, None]
    b0, db, a0, da = (np.array([RAMPS[v][k] for v in VARIABLES]) for k in range(4))
    return b0 + db * j, a0 + da * j


def generate(config: SynthConfig, mode: ModeSpec, duration: Optional[float] = None,
             seed: Optional[int] = None) -> tuple[FeatureMatrix, str]:
    if mode.flames != config.flames:
        raise ShapeError(f"mode has {mode.flames} phase offsets but config has {config.flames} flames")
    duration = config.duration if duration is None else duration
    seed = config.seed if seed is None else seed
    n = int(round(duration * config.sample_rate))
    t = np.arange(n) / config.sample_rate
    omega = _TWO_PI * config.base_frequency
    sensors = config.sensors_per_flame
    base, amp = ramp_constants(sensors)
    psi = SENSOR_LAG * np.arange(sensors)

    blocks = []
    for phi in mode.phase_offsets:
        # (n, sensors) waveform shared by all four variables of a sensor
        wave = (np.sin(omega * t[:, None] + phi + psi[None, :])
                + config.harmonic2_fraction * np.sin(2 * omega * t[:, None] + 2 * phi + psi[None, :]))
        block = base[None, :, :] + amp[None, :, :] * mode.amplitude_scale * wave[:, :, None]
        blocks.append(block.reshape(n, sensors * len(VARIABLES)))
    values = np.concatenate(blocks, axis=1)
    if config.noise_std > 0:
        scale = np.tile(amp.reshape(-1), config.flames) * config.noise_std
        values = values + Rng(seed).normal(values.shape) * scale[None, :]
    channels = channel_layout(config.flames, sensors)
    return FeatureMatrix(values, config.sample_rate, channels), mode.name


@dataclass
class SuiteEntry:
    label: Optional[str]
    train: FeatureMatrix
    predict: Optional[FeatureMatrix] = None


@dataclass
class Suite:
    config: SynthConfig
    entries: list[SuiteEntry] = field(default_factory=list)

    @property
    def labels(self) -> list[Optional[str]]:
        return [e.label for e in self.entries]


def generate_suite(config: SynthConfig) -> Suite:
    """All modes of the configured flame count, each with train and predict matrices.

    A single flame yields one unlabeled flicker dataset without a predict split.
    """
    suite = Suite(config)
    if config.flames == 1:
        mode = standard_mode("IP", 1)
        train, _ = generate(config, mode, config.duration, derive_seed(config.seed, "FLICKER", "train"))
        suite.entries.append(SuiteEntry(None, train))
        return suite
    for name in SUITE_MODES[config.flames]:
        mode = standard_mode(name, config.flames, config.death_amplitude)
        train, _ = generate(config, mode, config.duration, derive_seed(config.seed, name, "train"))
        pred, _ = generate(config, mode, config.predict_duration, derive_seed(config.seed, name, "predict"))
        suite.entries.append(SuiteEntry(name, train, pred))
    return suite


UNLABELED_KEY = "unlabeled"


def write_suite(suite: Suite, out_dir: str | Path) -> Path:
    """Write every matrix as CSV plus ``manifest.json`` with paths relative to ``out_dir``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {out}: {exc}") from exc
    manifest = {}
    for entry in suite.entries:
        key = entry.label or UNLABELED_KEY
        record = {"train": f"{key}_train.csv", "predict": None}
        save_csv(out / record["train"], entry.train)
        if entry.predict is not None:
            record["predict"] = f"{key}_predict.csv"
            save_csv(out / record["predict"], entry.predict)
        manifest[key] = record
    path = out / "manifest.json"
    try:
        path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    return path


def read_manifest(path: str | Path) -> dict[str, dict[str, Optional[Path]]]:
    """Load a suite manifest, resolving file entries against its directory."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"bad manifest {path}: {exc}") from exc
    out = {}
    for mode, rec in raw.items():
        if not isinstance(rec, dict) or "train" not in rec:
            raise DataError(f"manifest entry {mode!r} lacks a train path")
        out[mode] = {k: (path.parent / v if v else None) for k, v in rec.items()}
    return out
