"""Synthetic EDF dataset generation.

Ground-truth parameters are drawn at random, shaped Gaussian noise is
backward-integrated into an EDF, and the result is truncated, resampled to
``M`` points and converted to dB.  Noise levels are stored on the M-sample
scale so that targets do not depend on the original EDF length.
"""

from __future__ import annotations

import json
import logging
import struct
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import edf as edfmod
from .edf import DecayParameters, EnergyDecayFunction
from .errors import FormatError, GenerationStalled, InvalidParameters

log = logging.getLogger(__name__)

FORMAT_NAME = "decayfit-dataset"
FORMAT_VERSION = 1
MAX_ORDER = 3
INPUT_LENGTH = edfmod.INPUT_LENGTH
RECORD_FLOATS = INPUT_LENGTH + 1 + 2 * MAX_ORDER + 1
MAX_REDRAWS = 100_000
STREAM_PAD_SECONDS = 0.1
RNG_IDENTITY = "numpy.PCG64 seeded by SeedSequence(entropy=seed, spawn_key=(record_index,))"


@dataclass
class GeneratorConfig:
    """Dataset generation settings.

    ``count`` is the total number of records; it is split equally between
    model orders 1, 2 and 3.
    """

    count: int = 3000
    t_edf: float = 10.0
    sample_rate: float = 48000.0
    target_len: int = INPUT_LENGTH
    seed: int = 0
    octave_centers: tuple = edfmod.OCTAVE_CENTERS
    decay_time_range: tuple = (0.1, 1.5)  # fractions of t_edf
    noise_exponent_range: tuple = (-14.0, -3.0)
    amplitude_exponent_range: tuple = (-3.0, 0.0)
    noise_mode: str = "constant"  # or "ramp": noise power grows as (fs*T_EDF - t)

    def __post_init__(self):
        self.octave_centers = tuple(self.octave_centers)
        self.decay_time_range = tuple(self.decay_time_range)
        self.noise_exponent_range = tuple(self.noise_exponent_range)
        self.amplitude_exponent_range = tuple(self.amplitude_exponent_range)

    def validate(self):
        if self.count <= 0 or self.count % MAX_ORDER:
            raise ValueError(f"count must be a positive multiple of {MAX_ORDER}, got {self.count}")
        if self.t_edf <= 0:
            raise ValueError("t_edf must be positive")
        if self.target_len < 2:
            raise ValueError("target_len must be >= 2")
        if self.noise_mode not in ("constant", "ramp"):
            raise ValueError(f"unknown noise_mode {self.noise_mode!r}")
        for fc in self.octave_centers:
            edfmod.octave_band_sos(fc, self.sample_rate)

    @property
    def length(self) -> int:
        return int(round(self.sample_rate * self.t_edf))

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("octave_centers", "decay_time_range", "noise_exponent_range", "amplitude_exponent_range"):
            d[key] = list(d[key])
        return d


@dataclass
class DatasetRecord:
    db: np.ndarray
    params: DecayParameters
    band: float = field(default=0.0, compare=False)

    @property
    def order(self) -> int:
        return self.params.order


def record_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,))))


def _draw_times(K, config, rng):
    lo, hi = config.decay_time_range
    return np.sort(rng.uniform(lo * config.t_edf, hi * config.t_edf, K))


def _draw_amplitudes(K, config, rng):
    amps = 10.0 ** rng.uniform(*config.amplitude_exponent_range, K)
    return np.sort(amps / amps.sum())[::-1].copy()


def draw_parameters(K: int, config: GeneratorConfig, rng: np.random.Generator) -> DecayParameters:
    if K not in (1, 2, 3):
        raise InvalidParameters(f"model order must be 1, 2 or 3, got {K}")
    noise = 10.0 ** rng.uniform(*config.noise_exponent_range)
    return DecayParameters(K, _draw_times(K, config, rng), _draw_amplitudes(K, config, rng), noise)


def check_multislope_constraints(params: DecayParameters) -> bool:
    K = params.order
    T = params.decay_times[:K]
    A = params.amplitudes[:K]
    if K < 2:
        return True
    if np.any(T[1:] < 1.5 * T[:-1]):
        return False
    if np.any(A[1:] <= 0):
        return False
    return bool(np.all(A[:-1] / A[1:] >= 10.0 ** (3.0 / K)))


def draw_valid_parameters(K: int, config: GeneratorConfig, rng: np.random.Generator) -> DecayParameters:
    """Draw parameters, re-drawing times and amplitudes jointly until the multi-slope constraints hold."""
    params = draw_parameters(K, config, rng)
    attempts = 1
    while not check_multislope_constraints(params):
        if attempts >= MAX_REDRAWS:
            raise GenerationStalled(f"no valid order-{K} parameters after {MAX_REDRAWS} draws")
        params = DecayParameters(K, _draw_times(K, config, rng), _draw_amplitudes(K, config, rng), params.noise)
        attempts += 1
    return params


def _noise_stream(config, rng, length):
    band = config.octave_centers[rng.integers(len(config.octave_centers))]
    # filter a longer stream and crop, so that edge transients of the filter stay outside
    pad = int(round(STREAM_PAD_SECONDS * config.sample_rate))
    g = edfmod.octave_band_filter(rng.standard_normal(length + 2 * pad), band, config.sample_rate)
    g = g[pad:pad + length]
    g -= g.mean()
    g /= g.std()
    return g, band


def synthesize_full_edf(params: DecayParameters, config: GeneratorConfig, rng: np.random.Generator,
                        unit_streams: bool = False) -> EnergyDecayFunction:
    """Build the full-resolution synthetic EDF for ``params``.

    ``unit_streams`` replaces every filtered Gaussian stream by a constant 1,
    which makes the result deterministic and directly comparable to the model.
    """
    if not check_multislope_constraints(params):
        raise InvalidParameters("parameters violate the multi-slope constraints")
    K = params.order
    L = config.length
    fs = config.sample_rate
    t = np.arange(L, dtype=np.float64)

    amp_synth = -edfmod.MODEL_DECAY_CONSTANT * config.t_edf * params.amplitudes[:K] / params.decay_times[:K]
    noise_synth = config.target_len * params.noise

    streams = []
    for _ in range(K + 1):
        if unit_streams:
            streams.append(np.ones(L))
        else:
            streams.append(_noise_stream(config, rng, L)[0])

    noise_power = noise_synth * streams[0] ** 2
    if config.noise_mode == "ramp":
        noise_power *= fs * config.t_edf - t
    energy = noise_power
    for i in range(K):
        rate = edfmod.MODEL_DECAY_CONSTANT / (fs * params.decay_times[i])
        energy += amp_synth[i] * streams[i + 1] ** 2 * np.exp(rate * t)
    return EnergyDecayFunction(edfmod.integrate_energy(energy), fs)


def synthesize_edf(params: DecayParameters, config: GeneratorConfig, rng: np.random.Generator,
                   unit_streams: bool = False) -> DatasetRecord:
    full = synthesize_full_edf(params, config, rng, unit_streams=unit_streams)
    db = edfmod.to_decibel(edfmod.truncate_and_resample(full.samples, config.target_len))
    return DatasetRecord(db, params)


def model_on_record_grid(params: DecayParameters, config: GeneratorConfig) -> np.ndarray:
    """Decay model of stored ground truth on the M-point grid of a record (linear scale)."""
    M = config.target_len
    grid = edfmod.analysis_grid(config.length, M)
    fs_m = M / config.t_edf
    return edfmod.evaluate_decay_model(params, M, fs_m, grid)


def _make_record(index: int, config: GeneratorConfig) -> np.ndarray:
    per_order = config.count // MAX_ORDER
    K = 1 + index // per_order
    rng = record_rng(config.seed, index)
    params = draw_valid_parameters(K, config, rng)
    record = synthesize_edf(params, config, rng)
    row = np.zeros(RECORD_FLOATS, dtype=np.float64)
    M = config.target_len
    row[:M] = record.db
    row[M] = K
    row[M + 1:M + 1 + K] = params.decay_times[:K]
    row[M + 1 + MAX_ORDER:M + 1 + MAX_ORDER + K] = params.amplitudes[:K]
    row[M + 1 + 2 * MAX_ORDER] = params.noise
    return row


def _make_records(args):
    indices, config = args
    return np.stack([_make_record(i, config) for i in indices])


def _encode_header(header: dict) -> bytes:
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return struct.pack("<I", len(blob)) + blob


def read_header(fh) -> dict:
    raw = fh.read(4)
    if len(raw) != 4:
        raise FormatError("file too short for header length prefix")
    (size,) = struct.unpack("<I", raw)
    blob = fh.read(size)
    if len(blob) != size:
        raise FormatError("truncated header")
    try:
        return json.loads(blob.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt header: {exc}") from exc


def generate_dataset(config: GeneratorConfig, output_path, workers: int = 1, progress=None) -> dict:
    """Generate ``config.count`` records and write them to ``output_path``.

    Records are grouped by order (all K=1 first).  Every record has its own
    RNG stream, so the file does not depend on ``workers``.
    """
    config.validate()
    t0 = time.perf_counter()
    indices = np.arange(config.count)
    chunks = [indices[i:i + 256] for i in range(0, config.count, 256)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(_make_records, [(c, config) for c in chunks]))
    else:
        blocks = []
        for c in chunks:
            blocks.append(_make_records((c, config)))
            if progress is not None:
                progress(int(c[-1]) + 1, config.count)
    rows = np.concatenate(blocks).astype("<f4")

    M = config.target_len
    norm_factor = float(np.max(np.abs(rows[:, :M])))
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "config": config.to_dict(),
        "record_count": int(config.count),
        "record_floats": RECORD_FLOATS,
        "input_length": M,
        "edf_length": config.length,
        "norm_factor": norm_factor,
        "rng": RNG_IDENTITY,
    }
    path = Path(output_path)
    with open(path, "wb") as fh:
        fh.write(_encode_header(header))
        fh.write(rows.tobytes())
    elapsed = time.perf_counter() - t0
    per_order = config.count // MAX_ORDER
    log.info("wrote %d records to %s in %.1f s", config.count, path, elapsed)
    return {
        "path": str(path),
        "record_count": int(config.count),
        "counts": {str(k): per_order for k in (1, 2, 3)},
        "seed": int(config.seed),
        "norm_factor": norm_factor,
        "elapsed": elapsed,
    }


@dataclass
class Dataset:
    header: dict
    db: np.ndarray  # (N, M) dB curves, not normalized
    orders: np.ndarray
    decay_times: np.ndarray  # (N, 3) seconds
    amplitudes: np.ndarray
    noise: np.ndarray  # M-sample scale

    def __len__(self):
        return self.db.shape[0]

    @property
    def norm_factor(self) -> float:
        return float(self.header["norm_factor"])

    @property
    def config(self) -> GeneratorConfig:
        return GeneratorConfig(**self.header["config"])

    def params(self, i: int) -> DecayParameters:
        K = int(self.orders[i])
        return DecayParameters(K, self.decay_times[i, :K], self.amplitudes[i, :K], self.noise[i])

    def record(self, i: int) -> DatasetRecord:
        return DatasetRecord(self.db[i].copy(), self.params(i))

    def edf(self, i: int) -> EnergyDecayFunction:
        """Stored curve as a 100-sample linear EDF covering the retained span."""
        M = self.db.shape[1]
        span = self.config.t_edf * (edfmod.retained_length(self.config.length) - 1) / self.config.length
        return EnergyDecayFunction(10.0 ** (self.db[i] / 10.0), (M - 1) / span)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.header, self.db[idx], self.orders[idx], self.decay_times[idx],
                       self.amplitudes[idx], self.noise[idx])


def load_dataset(path) -> Dataset:
    path = Path(path)
    with open(path, "rb") as fh:
        header = read_header(fh)
        if header.get("format") != FORMAT_NAME:
            raise FormatError(f"{path}: not a dataset file")
        if header.get("version") != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported dataset version {header.get('version')}")
        payload = fh.read()
    n = int(header["record_count"])
    width = int(header["record_floats"])
    if len(payload) != n * width * 4:
        raise FormatError(f"{path}: expected {n} records, payload has {len(payload)} bytes")
    rows = np.frombuffer(payload, dtype="<f4").reshape(n, width).astype(np.float64)
    M = int(header["input_length"])
    return Dataset(
        header=header,
        db=rows[:, :M],
        orders=rows[:, M].astype(int),
        decay_times=rows[:, M + 1:M + 1 + MAX_ORDER],
        amplitudes=rows[:, M + 1 + MAX_ORDER:M + 1 + 2 * MAX_ORDER],
        noise=rows[:, M + 1 + 2 * MAX_ORDER],
    )


@dataclass
class SyntheticEdf:
    edf: EnergyDecayFunction
    params: DecayParameters  # seconds; noise on the EDF's own sample grid
    source: str = ""


def make_edf_set(count: int, config: GeneratorConfig, orders=(1, 2, 3), decimate_to: int | None = 2000,
                 label: str = "edf") -> list:
    """Full-length synthetic EDFs with ground truth, cycling through ``orders``.

    EDFs are decimated to about ``decimate_to`` samples (an EDF is smooth, so
    keeping every k-th sample is exact at the lower rate).
    """
    out = []
    for i in range(count):
        K = orders[i % len(orders)]
        rng = record_rng(config.seed, i)
        params = draw_valid_parameters(K, config, rng)
        full = synthesize_full_edf(params, config, rng)
        step = max(1, full.length // decimate_to) if decimate_to else 1
        edf = EnergyDecayFunction(full.samples[::step], full.sample_rate / step)
        noise = params.noise * config.target_len / edf.length
        truth = DecayParameters(K, params.decay_times, params.amplitudes, noise)
        out.append(SyntheticEdf(edf, truth, f"{label}-{i:05d}"))
    return out
