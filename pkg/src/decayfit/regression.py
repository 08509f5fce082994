"""Single exponential plus noise regression baseline.

The EDF is fitted on a power scale, ``d(t)**s``, with a damped least-squares
(Levenberg-Marquardt) solver working on log-parameters so that decay time,
amplitude and noise stay positive.  ``grid_search_fit`` repeats the fit over
a range of scale exponents and keeps the best fit in the dB domain.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .edf import (
    MODEL_DECAY_CONSTANT,
    DecayParameters,
    EnergyDecayFunction,
    evaluate_decay_model,
    mse_db,
    retained_length,
    to_decibel,
)
from .errors import DegenerateInput
from .report import FitReport

MIN_FIT_SAMPLES = 10


@dataclass(frozen=True)
class RegressionConfig:
    scale: float = 0.5
    grid_range: tuple = (0.2, 0.8)
    grid_step: float = 0.05
    threshold_db: float = -5.0
    max_iterations: int = 200
    tolerance: float = 1e-10

    def __post_init__(self):
        if not 0 < self.scale <= 1:
            raise ValueError("scale exponent must lie in (0, 1]")
        lo, hi = self.grid_range
        if not 0 < lo <= hi <= 1 or self.grid_step <= 0:
            raise ValueError("grid range must be a nonempty subinterval of (0, 1] with a positive step")

    def scales(self) -> np.ndarray:
        lo, hi = self.grid_range
        n = int(math.floor((hi - lo) / self.grid_step + 1e-9)) + 1
        return np.round(lo + self.grid_step * np.arange(n), 10)


@dataclass
class Solution:
    theta: np.ndarray  # log T, log A, log N0
    cost: float
    converged: bool
    costs: list = field(default_factory=list)  # cost after every accepted step


def fit_samples(edf: EnergyDecayFunction, threshold_db: float = -5.0) -> np.ndarray:
    """Indices of the retained samples below ``threshold_db``."""
    n = retained_length(edf.length)
    db = to_decibel(edf.samples[:n])
    return np.flatnonzero(db < threshold_db)


def _model_and_jacobian(theta, t, length, fs, s):
    T, A, N = np.exp(theta)
    rate = -MODEL_DECAY_CONSTANT / (fs * T)
    e_t = np.exp(-rate * t)
    e_l = math.exp(-rate * length)
    slope = e_t - e_l
    ramp = length - t
    m = A * slope + N * ramp
    m_s = m ** s
    # d m / d log T = T * dm/dT
    dm = np.empty((t.shape[0], 3))
    dm[:, 0] = A * rate * (t * e_t - length * e_l)
    dm[:, 1] = A * slope
    dm[:, 2] = N * ramp
    jac = (s * m_s / m)[:, None] * dm
    return m_s, jac


def _initial_guess(edf: EnergyDecayFunction, idx: np.ndarray) -> np.ndarray:
    n = retained_length(edf.length)
    db = to_decibel(edf.samples[:n])
    t = np.arange(n, dtype=np.float64)
    band = np.flatnonzero((db <= -5.0) & (db >= -25.0))
    if band.size < 2:
        band = idx[: max(2, min(idx.size, 10))]
    slope, _ = np.polyfit(t[band] / edf.sample_rate, db[band], 1)
    T = -60.0 / slope if slope < 0 else edf.duration
    T = float(np.clip(T, 1e-3 * edf.duration, 1e3 * edf.duration))
    i5 = idx[0]
    rate = -MODEL_DECAY_CONSTANT / (edf.sample_rate * T)
    A = max(edf.samples[i5] * math.exp(rate * i5), 1e-12)
    tail = t[int(0.9 * n):]
    N = max(float(np.mean(edf.samples[tail.astype(int)]) / np.mean(edf.length - tail)), 1e-30)
    return np.log([T, A, N])


def levenberg_marquardt(theta, target, t, length, fs, s, config: RegressionConfig, bounds=None) -> Solution:
    """Damped Gauss-Newton on log-parameters; trial points are projected into ``bounds`` (lo, hi)."""
    lo, hi = (np.full(3, -np.inf), np.full(3, np.inf)) if bounds is None else map(np.asarray, bounds)
    theta = np.clip(theta, lo, hi)
    m, jac = _model_and_jacobian(theta, t, length, fs, s)
    r = m - target
    cost = 0.5 * float(r @ r)
    costs = [cost]
    lam = 1e-3
    converged = False
    for _ in range(config.max_iterations):
        g = jac.T @ r
        h = jac.T @ jac
        improved = False
        while lam < 1e16:
            step = np.linalg.solve(h + lam * np.diag(np.diag(h) + 1e-300), -g)
            trial = np.clip(theta + step, lo, hi)
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                m_new, jac_new = _model_and_jacobian(trial, t, length, fs, s)
                r_new = m_new - target
                new_cost = 0.5 * float(r_new @ r_new)
            if np.isfinite(new_cost) and new_cost <= cost:
                improved = True
                break
            lam *= 4.0
        if not improved:  # no descent direction left at machine precision
            converged = True
            break
        rel = (cost - new_cost) / max(cost, 1e-300)
        theta, m, jac, r, cost = trial, m_new, jac_new, r_new, new_cost
        costs.append(cost)
        lam = max(lam / 3.0, 1e-12)
        if rel < config.tolerance:
            converged = True
            break
    return Solution(theta, cost, converged, costs)


def nonlinear_fit(edf: EnergyDecayFunction, scale: float | None = None, config: RegressionConfig | None = None,
                  source: str = "", theta0=None, engine: str = "regression-std") -> FitReport:
    """Fit one exponential and a noise term to ``edf`` on the power scale ``edf**scale``."""
    t0 = time.perf_counter()
    config = config or RegressionConfig()
    s = config.scale if scale is None else float(scale)
    if not 0 < s <= 1:
        raise ValueError("scale exponent must lie in (0, 1]")
    idx = fit_samples(edf, config.threshold_db)
    if idx.size < MIN_FIT_SAMPLES:
        raise DegenerateInput(f"only {idx.size} samples below {config.threshold_db} dB (need {MIN_FIT_SAMPLES})")
    t = idx.astype(np.float64)
    target = edf.samples[idx] ** s
    theta = _initial_guess(edf, idx) if theta0 is None else np.asarray(theta0, dtype=np.float64)
    # keep the log-parameters in a box wide enough for any physical decay, narrow enough to avoid overflow
    d = edf.duration
    bounds = (np.log([1e-4 * d, 1e-12, 1e-40]), np.log([1e4 * d, 1e6, 1e6]))
    sol = levenberg_marquardt(theta, target, t, edf.length, edf.sample_rate, s, config, bounds)
    T, A, N = np.exp(sol.theta)
    params = DecayParameters(1, np.array([T]), np.array([A]), float(N))
    fit = evaluate_decay_model(params, edf.length, edf.sample_rate)
    flags = [] if sol.converged else ["NotConverged"]
    return FitReport(engine, params, mse_db(edf, fit), elapsed=time.perf_counter() - t0, source=source, fit=fit,
                     flags=flags, extra={"scale": s, "cost": sol.cost, "iterations": len(sol.costs) - 1})


def grid_search_fit(edf: EnergyDecayFunction, config: RegressionConfig | None = None, source: str = "") -> FitReport:
    """Fit every scale exponent of the grid; keep the fit with the smallest dB-domain MSE."""
    t0 = time.perf_counter()
    config = config or RegressionConfig()
    best, candidates = None, []
    for s in config.scales():
        rep = nonlinear_fit(edf, s, config, source=source, engine="regression-grid")
        candidates.append({"scale": float(s), "mse_db": rep.mse_db})
        if best is None or rep.mse_db < best.mse_db:
            best = rep
    best.elapsed = time.perf_counter() - t0
    best.extra = {**best.extra, "candidates": candidates}
    return best
