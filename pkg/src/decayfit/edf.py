"""Energy decay functions and the multi-exponential decay model.

The decay model of order K is

    d_K(t) = N0 (L - t) + sum_i A_i [exp(-13.8 t / (fs T_i)) - exp(-13.8 L / (fs T_i))]

where ``t`` is a sample index, ``L`` the upper limit of integration and
``-13.8 = ln(1e-6)`` makes every slope lose 60 dB after ``T_i`` seconds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal

from .errors import DegenerateInput, FormatError, InvalidBand, ShapeMismatch

MODEL_DECAY_CONSTANT = -13.8  # ln(1e-6), rounded as in the model definition
DB_FLOOR = 1e-18
INPUT_LENGTH = 100
OCTAVE_CENTERS = (125, 250, 500, 1000, 2000, 4000)


@dataclass(frozen=True)
class EnergyDecayFunction:
    samples: np.ndarray
    sample_rate: float

    def __post_init__(self):
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=np.float64))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def length(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return self.length / self.sample_rate


@dataclass
class DecayParameters:
    """Parameter set of the decay model.

    ``decay_times`` are in seconds, ``amplitudes`` linear and ``noise`` is the
    per-sample noise energy of the grid the parameters belong to.  Arrays may
    hold more entries than ``order``; inactive slopes carry zero amplitude.
    """

    order: int
    decay_times: np.ndarray
    amplitudes: np.ndarray
    noise: float

    def __post_init__(self):
        self.decay_times = np.atleast_1d(np.asarray(self.decay_times, dtype=np.float64))
        self.amplitudes = np.atleast_1d(np.asarray(self.amplitudes, dtype=np.float64))
        self.noise = float(self.noise)
        if self.decay_times.shape != self.amplitudes.shape:
            raise ShapeMismatch("decay_times and amplitudes must have equal length")

    def to_dict(self) -> dict:
        return {
            "order": int(self.order),
            "decay_times": [float(v) for v in self.decay_times],
            "amplitudes": [float(v) for v in self.amplitudes],
            "noise": float(self.noise),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DecayParameters":
        return cls(data["order"], data["decay_times"], data["amplitudes"], data["noise"])


@dataclass(frozen=True)
class PreprocessedInput:
    db_samples: np.ndarray
    original_length: int
    original_rate: float
    clipped: bool = field(default=False, compare=False)


def schroeder_integrate(rir, sample_rate: float) -> EnergyDecayFunction:
    """Backward-integrate a room impulse response into a normalized EDF."""
    h = np.asarray(rir, dtype=np.float64).ravel()
    peak = np.max(np.abs(h)) if h.size else 0.0
    if peak > 0 and np.isfinite(peak):
        h = h / peak  # the EDF is scale-free; this keeps tiny responses from underflowing when squared
    return EnergyDecayFunction(integrate_energy(h * h), sample_rate)


def integrate_energy(energy) -> np.ndarray:
    """Normalized backward cumulative sum of an energy (squared) response."""
    e = np.asarray(energy, dtype=np.float64)
    if e.size == 0:
        raise DegenerateInput("empty impulse response")
    tail = np.cumsum(e[::-1])[::-1]
    total = tail[0]
    if not total > 0.0:
        raise DegenerateInput("impulse response has zero energy")
    return tail / total


def evaluate_decay_model(params: DecayParameters, length: int, sample_rate: float, t_grid=None) -> np.ndarray:
    """Evaluate the decay model at sample indices ``t_grid`` (default ``0..L-1``).

    ``t_grid`` may be fractional, which is how the model is evaluated on a
    resampled time axis.
    """
    t = np.arange(length, dtype=np.float64) if t_grid is None else np.asarray(t_grid, dtype=np.float64)
    out = params.noise * (length - t)
    for T, A in zip(params.decay_times, params.amplitudes):
        if A == 0.0:
            continue
        rate = MODEL_DECAY_CONSTANT / (sample_rate * T)
        out = out + A * (np.exp(rate * t) - math.exp(rate * length))
    return out


def decay_model_batch(times, amps, noise, length, t_grid) -> np.ndarray:
    """Vectorized decay model on a common grid.

    ``times`` and ``amps`` have shape (B, K) in grid units (samples), ``noise``
    shape (B,).  Returns (B, len(t_grid)).
    """
    times = np.asarray(times, dtype=np.float64)
    amps = np.asarray(amps, dtype=np.float64)
    t = np.asarray(t_grid, dtype=np.float64)
    rate = MODEL_DECAY_CONSTANT / times  # (B, K)
    slopes = np.exp(rate[:, :, None] * t[None, None, :]) - np.exp(rate * length)[:, :, None]
    return np.einsum("bk,bkt->bt", amps, slopes) + np.asarray(noise, dtype=np.float64)[:, None] * (length - t)[None, :]


def to_decibel(curve) -> np.ndarray:
    return 10.0 * np.log10(np.maximum(np.asarray(curve, dtype=np.float64), DB_FLOOR))


def fractional_resample(curve, target_len: int = INPUT_LENGTH) -> np.ndarray:
    """Linear interpolation at ``target_len`` uniformly spaced fractional indices."""
    y = np.asarray(curve, dtype=np.float64)
    if y.shape[0] < 2:
        raise DegenerateInput("need at least two samples to resample")
    if target_len < 2:
        raise ValueError("target_len must be >= 2")
    positions = np.linspace(0.0, y.shape[0] - 1, target_len)
    return np.interp(positions, np.arange(y.shape[0], dtype=np.float64), y)


def retained_length(length: int) -> int:
    """Number of leading samples kept when the last 5% are discarded (t <= floor(0.95 L))."""
    return (95 * length) // 100 + 1 if length > 0 else 0


def analysis_grid(length: int, target_len: int = INPUT_LENGTH) -> np.ndarray:
    """Positions of the resampled points on a time axis where the full EDF spans ``target_len`` units."""
    return np.linspace(0.0, target_len * (retained_length(length) - 1) / length, target_len)


def truncate_and_resample(samples, target_len: int = INPUT_LENGTH) -> np.ndarray:
    samples = np.asarray(samples, dtype=np.float64)
    return fractional_resample(samples[: retained_length(samples.shape[0])], target_len)


def preprocess(edf: EnergyDecayFunction, norm_factor: float, target_len: int = INPUT_LENGTH) -> PreprocessedInput:
    if edf.length < 40:
        raise DegenerateInput(f"EDF too short for preprocessing ({edf.length} < 40 samples)")
    db = to_decibel(truncate_and_resample(edf.samples, target_len)) / norm_factor
    clipped = bool(np.any(np.abs(db) > 1.0))
    return PreprocessedInput(np.clip(db, -1.0, 1.0), edf.length, edf.sample_rate, clipped)


def mse_db(edf, fit) -> float:
    """Mean squared dB difference over the first 95% of the samples."""
    a = edf.samples if isinstance(edf, EnergyDecayFunction) else np.asarray(edf, dtype=np.float64)
    b = np.asarray(fit, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"EDF has {a.shape[0]} samples, fit has {b.shape[0]}")
    n = retained_length(a.shape[0])
    diff = to_decibel(a[:n]) - to_decibel(b[:n])
    return float(np.mean(diff * diff))


def octave_band_sos(center_freq: float, sample_rate: float) -> np.ndarray:
    if center_freq <= 0 or center_freq * math.sqrt(2) >= sample_rate / 2:
        raise InvalidBand(f"octave band at {center_freq} Hz does not fit below Nyquist of fs={sample_rate} Hz")
    edges = [center_freq / math.sqrt(2), center_freq * math.sqrt(2)]
    # order 3 per edge gives a 6th-order band-pass
    return signal.butter(3, edges, btype="bandpass", fs=sample_rate, output="sos")


def octave_band_filter(x, center_freq: float, sample_rate: float, axis: int = -1) -> np.ndarray:
    """Zero-phase octave-band filter (forward-backward 6th-order Butterworth)."""
    sos = octave_band_sos(center_freq, sample_rate)
    return signal.sosfiltfilt(sos, np.asarray(x, dtype=np.float64), axis=axis)


def write_edf_csv(path, edf: EnergyDecayFunction) -> None:
    fs = edf.sample_rate
    fs_text = str(int(fs)) if float(fs).is_integer() else repr(float(fs))
    lines = [f"# edf v1, fs={fs_text}, L={edf.length}"]
    lines.extend(repr(float(v)) for v in edf.samples)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_edf_csv(path) -> EnergyDecayFunction:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    if not text or not text[0].startswith("# edf v1"):
        raise FormatError(f"{path}: missing '# edf v1' header")
    fields = {}
    for part in text[0][len("# edf v1"):].split(","):
        if "=" in part:
            key, value = part.split("=", 1)
            fields[key.strip()] = value.strip()
    try:
        fs = float(fields["fs"])
        length = int(fields["L"])
        values = np.array([float(v) for v in text[1:] if v.strip()], dtype=np.float64)
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: malformed EDF file ({exc})") from exc
    if values.shape[0] != length:
        raise FormatError(f"{path}: header declares {length} samples, found {values.shape[0]}")
    return EnergyDecayFunction(values, fs)
