"""RIR ingestion, octave-band EDFs, fit-quality statistics and runtime benchmarks."""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from . import bayes, regression
from .edf import OCTAVE_CENTERS, EnergyDecayFunction, octave_band_filter, schroeder_integrate
from .errors import DecayFitError, FormatError, InvalidBand
from .report import ENGINES, FitReport

log = logging.getLogger(__name__)

FLAG_THRESHOLD_DB2 = 50.0
MIN_BAND_RATE = 11025.0


def load_rir(path, trim_end: float = 0.0):
    """Read the first channel of a WAV file as float64 in [-1, 1].

    ``trim_end`` seconds are cut from the end of the response.
    """
    try:
        fs, data = wavfile.read(str(path))
    except (ValueError, EOFError) as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if data.ndim > 1:
        data = data[:, 0]
    if data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype == np.int16:
        x = data / 32768.0
    elif data.dtype == np.int32:  # 24-bit samples arrive left-justified in int32
        x = data / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        x = data.astype(np.float64)
    else:
        raise FormatError(f"{path}: unsupported sample type {data.dtype}")
    if trim_end < 0:
        raise ValueError("trim_end must be non-negative")
    n_trim = int(round(trim_end * fs))
    if n_trim:
        x = x[:-n_trim] if n_trim < x.shape[0] else x[:0]
    return np.ascontiguousarray(x, dtype=np.float64), float(fs)


def band_edfs(rir, sample_rate: float, centers=OCTAVE_CENTERS) -> list:
    """Octave-band EDFs of ``rir``, one per center frequency."""
    if sample_rate < MIN_BAND_RATE:
        raise InvalidBand(f"sample rate {sample_rate} Hz cannot represent the 4 kHz octave band")
    return [schroeder_integrate(octave_band_filter(rir, fc, sample_rate), sample_rate) for fc in centers]


def quantile(values, q: float) -> float:
    """Quantile with linear interpolation between order statistics."""
    return float(np.quantile(np.asarray(values, dtype=np.float64), q, method="linear"))


# -- engines ----------------------------------------------------------------

@dataclass
class Engine:
    """A fitting engine applied to a list of EDFs.

    ``fit_all`` returns one entry per EDF: a :class:`FitReport` or the
    exception raised while fitting it.
    """

    name: str
    weights: object = None  # NetworkParameters for the net engine
    seed: int = 0
    space: bayes.SearchSpace | None = None
    regression_config: regression.RegressionConfig | None = None

    def __post_init__(self):
        if self.name not in ENGINES:
            raise ValueError(f"unknown engine {self.name!r}; choose from {', '.join(ENGINES)}")
        if self.name == "net" and self.weights is None:
            raise ValueError("the net engine needs trained weights")

    def fit_one(self, edf: EnergyDecayFunction, index: int = 0, source: str = "") -> FitReport:
        if self.name == "net":
            from .net.infer import infer

            return infer(edf, self.weights, source)
        if self.name == "bayes":
            rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=(index,))))
            return bayes.bayes_fit_auto(edf, self.space, rng, source=source)
        if self.name == "regression-std":
            return regression.nonlinear_fit(edf, config=self.regression_config, source=source)
        return regression.grid_search_fit(edf, self.regression_config, source=source)

    def fit_all(self, edfs, sources=None, offset: int = 0) -> list:
        edfs = list(edfs)
        sources = list(sources) if sources is not None else [""] * len(edfs)
        if self.name == "net":
            from .net.infer import infer_batch

            try:
                return infer_batch(edfs, self.weights, sources)
            except DecayFitError:
                pass  # fall back to per-item inference to isolate the failing inputs
        out = []
        for i, (edf, src) in enumerate(zip(edfs, sources)):
            try:
                out.append(self.fit_one(edf, offset + i, src))
            except DecayFitError as exc:
                out.append(exc)
        return out


def _fit_chunk(args):
    engine, edfs, sources, offset = args
    return engine.fit_all(edfs, sources, offset)


def run_engine(engine: Engine, edfs, sources=None, workers: int = 1, chunk: int = 64) -> list:
    """``engine.fit_all`` fanned out over a process pool (order preserved)."""
    edfs = list(edfs)
    sources = list(sources) if sources is not None else [""] * len(edfs)
    if workers <= 1 or len(edfs) <= chunk or engine.name == "net":
        return engine.fit_all(edfs, sources)
    jobs = [(engine, edfs[i:i + chunk], sources[i:i + chunk], i) for i in range(0, len(edfs), chunk)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return [r for part in pool.map(_fit_chunk, jobs) for r in part]


# -- evaluation -------------------------------------------------------------

@dataclass
class ItemResult:
    source: str
    band: float | None
    engine: str
    mse_db: float | None
    error: str = ""


@dataclass
class EvalSummary:
    items: list  # ItemResult, one per (EDF, engine)
    engines: list
    flagged: list = field(default_factory=list)  # sources above the threshold under every engine
    threshold: float = FLAG_THRESHOLD_DB2
    excluded_flagged: bool = False

    def failures(self) -> list:
        return [(it.source, it.engine, it.error) for it in self.items if it.mse_db is None]

    def values(self, engine: str, band=None) -> np.ndarray:
        skip = set(self.flagged) if self.excluded_flagged else set()
        vals = [it.mse_db for it in self.items
                if it.engine == engine and it.mse_db is not None and it.source not in skip
                and (band is None or it.band == band)]
        return np.sort(np.asarray(vals, dtype=np.float64))

    def rows(self) -> list:
        """One row per engine over all bands, then one per engine and band."""
        bands = sorted({it.band for it in self.items if it.band is not None})
        flagged = set(self.flagged)
        out = []
        for engine in self.engines:
            for band in [None] + bands:
                vals = self.values(engine, band)
                n_flag = len({it.source for it in self.items if it.engine == engine and it.source in flagged
                              and (band is None or it.band == band)})
                out.append({
                    "engine": engine,
                    "band": "all" if band is None else _band_label(band),
                    "n": int(vals.size),
                    "median_db2": quantile(vals, 0.5) if vals.size else float("nan"),
                    "q99_db2": quantile(vals, 0.99) if vals.size else float("nan"),
                    "flagged_count": n_flag,
                })
        return out

    def median(self, engine: str) -> float:
        return quantile(self.values(engine), 0.5)

    def q99(self, engine: str) -> float:
        return quantile(self.values(engine), 0.99)


def _band_label(band) -> str:
    return str(int(band)) if float(band).is_integer() else str(band)


def evaluate(engines, edfs, sources=None, bands=None, workers: int = 1, threshold: float = FLAG_THRESHOLD_DB2,
             exclude_flagged: bool = False) -> EvalSummary:
    """Fit every EDF with every engine and aggregate the dB-domain MSE.

    Failures are recorded per item.  EDFs whose error exceeds ``threshold``
    under all engines are flagged; they stay in the aggregates unless
    ``exclude_flagged`` is set.
    """
    engines = [engines] if isinstance(engines, Engine) else list(engines)
    edfs = list(edfs)
    n = len(edfs)
    sources = list(sources) if sources is not None else [f"edf-{i:05d}" for i in range(n)]
    if len(set(sources)) != n:
        raise ValueError("source ids must be unique")
    bands = list(bands) if bands is not None else [None] * n
    items = []
    for engine in engines:
        results = run_engine(engine, edfs, sources, workers)
        for src, band, res in zip(sources, bands, results):
            if isinstance(res, FitReport):
                items.append(ItemResult(src, band, engine.name, float(res.mse_db)))
            else:
                items.append(ItemResult(src, band, engine.name, None, f"{type(res).__name__}: {res}"))
    flagged = []
    for src in sources:
        vals = [it.mse_db for it in items if it.source == src]
        if vals and all(v is not None and v > threshold for v in vals):
            flagged.append(src)
    return EvalSummary(items, [e.name for e in engines], flagged, threshold, exclude_flagged)


SUMMARY_FIELDS = ["engine", "band", "n", "median_db2", "q99_db2", "flagged_count"]
TIMING_FIELDS = ["engine", "n_edfs", "repeats", "mean_s", "per_edf_us"]


def _write_csv(path, fields, rows):
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def write_summary_csv(summary: EvalSummary, path):
    _write_csv(path, SUMMARY_FIELDS, summary.rows())


def write_summary_json(summary: EvalSummary, path):
    doc = {
        "summary": summary.rows(),
        "flagged": list(summary.flagged),
        "flag_threshold_db2": summary.threshold,
        "flagged_excluded": summary.excluded_flagged,
        "failures": [{"source": s, "engine": e, "error": msg} for s, e, msg in summary.failures()],
    }
    with open(Path(path), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def write_plot_csv(summary: EvalSummary, path):
    """Per-item errors, one row per (EDF id, engine), for violin-style plots."""
    rows = [{"edf_id": it.source, "engine": it.engine, "mse_db": it.mse_db if it.mse_db is not None else ""}
            for it in summary.items]
    _write_csv(path, ["edf_id", "engine", "mse_db"], rows)


# -- benchmarking -----------------------------------------------------------

def benchmark(engines, edfs, repeats: int = 1, warmup: bool = True) -> list:
    """Mean wall-clock time per engine over ``repeats`` runs on the whole set."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    engines = [engines] if isinstance(engines, Engine) else list(engines)
    edfs = list(edfs)
    rows = []
    for engine in engines:
        if warmup:
            engine.fit_all(edfs[: min(len(edfs), 8)])
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            engine.fit_all(edfs)
            times.append(time.perf_counter() - t0)
        mean = float(np.mean(times))
        rows.append({"engine": engine.name, "n_edfs": len(edfs), "repeats": repeats, "mean_s": mean,
                     "per_edf_us": mean / max(len(edfs), 1) * 1e6})
    return rows


def write_timing_csv(rows, path):
    _write_csv(path, TIMING_FIELDS, rows)
