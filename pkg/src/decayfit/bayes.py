"""Slice-sampling maximum-likelihood decay analysis with BIC order selection.

The EDF is fitted on its 100-point resampled version, with residuals taken
in decibels by default (``SearchSpace.domain="linear"`` compares linear
energies instead).  Each
parameter axis is discretized (decay times linearly, amplitudes and noise
logarithmically) and the sampler updates one coordinate at a time: a level is
drawn uniformly below the current likelihood, and the next value is drawn
uniformly from all grid points on that axis whose likelihood reaches the
level.  The best point seen in any evaluation is returned.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import gammaln

from .edf import (
    DB_FLOOR,
    INPUT_LENGTH,
    MODEL_DECAY_CONSTANT,
    DecayParameters,
    EnergyDecayFunction,
    analysis_grid,
    evaluate_decay_model,
    mse_db,
    truncate_and_resample,
)
from .errors import DegenerateInput, ShapeMismatch
from .report import FitReport

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SearchSpace:
    decay_time_range: tuple = (0.1, 3.5)  # seconds
    amplitude_exponent_range: tuple = (-3.0, 0.0)
    noise_exponent_range: tuple = (-10.0, -2.0)
    points: int = 100
    iterations: int = 50
    auto_scale: bool = True
    full_resolution: bool = False
    domain: str = "db"  # scale of the error functional: "db" or "linear"

    def __post_init__(self):
        lo, hi = self.decay_time_range
        if not 0 < lo < hi:
            raise ValueError("decay_time_range must be a nonempty positive interval")
        for name in ("amplitude_exponent_range", "noise_exponent_range"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ValueError(f"{name} must be nonempty")
        if self.points < 2:
            raise ValueError("points must be >= 2")
        if self.domain not in ("linear", "db"):
            raise ValueError("domain must be 'linear' or 'db'")

    def decay_times(self) -> np.ndarray:
        return np.linspace(*self.decay_time_range, self.points)

    def amplitudes(self) -> np.ndarray:
        return np.logspace(*self.amplitude_exponent_range, self.points)

    def noise_levels(self) -> np.ndarray:
        return np.logspace(*self.noise_exponent_range, self.points)

    def for_duration(self, duration: float) -> "SearchSpace":
        """Rescale the decay-time range when it does not bracket 10-150% of ``duration``."""
        lo, hi = 0.1 * duration, 1.5 * duration
        if not self.auto_scale or (self.decay_time_range[0] <= lo and self.decay_time_range[1] >= hi):
            return self
        log.info("decay-time search range %s rescaled to [%.3g, %.3g] s", self.decay_time_range, lo, hi)
        return replace(self, decay_time_range=(lo, hi))


@dataclass
class LikelihoodResult:
    log_likelihood: float
    error: float
    indices: tuple  # (time indices, amplitude indices, noise index)
    params: DecayParameters  # original time scale
    analysis_params: DecayParameters  # analysis-grid scale; values lie exactly on the search grid
    n_samples: int = INPUT_LENGTH
    history: np.ndarray | None = None  # best log-likelihood after each sweep
    perfect_fit: bool = False


def _to_db(x):
    return 10.0 * np.log10(np.maximum(x, DB_FLOOR))


def error_functional(curve, params: DecayParameters, sample_rate: float, length: int, t_grid=None,
                     domain: str = "linear") -> float:
    """Half the sum of squared differences between an EDF and the model.

    ``domain="db"`` compares the curves in decibels instead of linear energy.
    """
    d = np.asarray(curve, dtype=np.float64)
    model = evaluate_decay_model(params, length, sample_rate, t_grid)
    if d.shape != model.shape:
        raise ShapeMismatch(f"EDF has {d.shape[0]} samples, model grid has {model.shape[0]}")
    if domain == "db":
        d, model = _to_db(d), _to_db(model)
    elif domain != "linear":
        raise ValueError("domain must be 'linear' or 'db'")
    r = d - model
    return 0.5 * float(r @ r)


def log_likelihood(error, n_samples: int):
    """ln of Gamma(L/2) (2 pi E)^(-L/2) / 2.  Zero error gives +inf (a perfect fit)."""
    e = np.asarray(error, dtype=np.float64)
    with np.errstate(divide="ignore"):
        out = gammaln(n_samples / 2.0) - (n_samples / 2.0) * np.log(2.0 * np.pi * e) - math.log(2.0)
    return float(out) if out.ndim == 0 else out


def bic(log_lik_max: float, order: int, n_samples: int) -> float:
    return 2.0 * log_lik_max - (2 * order + 1) * math.log(n_samples)


class _Problem:
    """Precomputed grid tables for one EDF on the analysis grid."""

    def __init__(self, curve, grid, length, space: SearchSpace, time_scale: float):
        self.db = space.domain == "db"
        self.curve = curve
        self.target = _to_db(curve) if self.db else curve
        self.n = curve.shape[0]
        self.T = space.decay_times()
        self.A = space.amplitudes()
        self.N = space.noise_levels()
        tau = self.T * time_scale  # decay times in grid samples
        rate = MODEL_DECAY_CONSTANT / tau
        self.slopes = np.exp(rate[:, None] * grid[None, :]) - np.exp(rate * length)[:, None]
        self.ramp = length - grid

    def model(self, ti, ai, ni):
        return self.A[ai] @ self.slopes[ti] + self.N[ni] * self.ramp

    def loglik(self, residual_sq_sums):
        return log_likelihood(0.5 * residual_sq_sums, self.n)

    def residual_sums(self, models):
        r = self.target - (_to_db(models) if self.db else models)
        return np.einsum("...m,...m->...", r, r)



def _sample_axis(rng, loglik, current_ll):
    """Slice step over a discrete axis: uniform pick among points at or above a random level."""
    level = current_ll + math.log(rng.uniform(1e-300, 1.0)) if math.isfinite(current_ll) else current_ll
    ok = np.flatnonzero(loglik >= level)
    if ok.size == 0:  # only possible through rounding; stay put
        return None
    return int(ok[rng.integers(ok.size)])


def _prepare(edf: EnergyDecayFunction, space: SearchSpace):
    if edf.length < 40:
        raise DegenerateInput(f"EDF too short ({edf.length} samples)")
    if not np.all(np.isfinite(edf.samples)) or np.max(edf.samples) <= 0:
        raise DegenerateInput("EDF must be finite and not identically zero")
    space = space.for_duration(edf.duration)
    if space.full_resolution:
        n_keep = (95 * edf.length) // 100 + 1
        curve = edf.samples[:n_keep].copy()
        grid = np.arange(n_keep, dtype=np.float64)
        length = float(edf.length)
        time_scale = edf.sample_rate
    else:
        curve = truncate_and_resample(edf.samples, INPUT_LENGTH)
        grid = analysis_grid(edf.length, INPUT_LENGTH)
        length = float(INPUT_LENGTH)
        time_scale = INPUT_LENGTH / edf.duration  # grid samples per second
    return space, curve, grid, length, time_scale


def slice_sample_fit(edf: EnergyDecayFunction, order: int, space: SearchSpace, rng: np.random.Generator
                     ) -> LikelihoodResult:
    space, curve, grid, length, time_scale = _prepare(edf, space)
    prob = _Problem(curve, grid, length, space, time_scale)
    P = space.points
    ti = rng.integers(P, size=order)
    ai = rng.integers(P, size=order)
    ni = int(rng.integers(P))

    residual_sums = prob.residual_sums
    current = prob.model(ti, ai, ni)
    current_ll = float(prob.loglik(residual_sums(current)))
    best = (current_ll, ti.copy(), ai.copy(), ni)
    history = np.empty(space.iterations)

    for sweep in range(space.iterations):
        for axis in range(2 * order + 1):
            if axis == 2 * order:
                base = current - prob.N[ni] * prob.ramp
                cands = base[None, :] + prob.N[:, None] * prob.ramp[None, :]
            else:
                i = axis // 2
                base = current - prob.A[ai[i]] * prob.slopes[ti[i]]
                if axis % 2 == 0:
                    cands = base[None, :] + prob.A[ai[i]] * prob.slopes
                else:
                    cands = base[None, :] + prob.A[:, None] * prob.slopes[ti[i]][None, :]
            ll = prob.loglik(residual_sums(cands))
            j_best = int(np.argmax(ll))
            if ll[j_best] > best[0]:
                tb, ab, nb = ti.copy(), ai.copy(), ni
                if axis == 2 * order:
                    nb = j_best
                elif axis % 2 == 0:
                    tb[axis // 2] = j_best
                else:
                    ab[axis // 2] = j_best
                best = (float(ll[j_best]), tb, ab, nb)
            j = _sample_axis(rng, ll, current_ll)
            if j is None:
                continue
            if axis == 2 * order:
                ni = j
            elif axis % 2 == 0:
                ti[axis // 2] = j
            else:
                ai[axis // 2] = j
            current = cands[j]
            current_ll = float(ll[j])
        history[sweep] = best[0]

    best_ll, tb, ab, nb = best
    err = 0.5 * float(residual_sums(prob.model(tb, ab, nb)))
    sort = np.argsort(prob.T[tb], kind="stable")
    analysis = DecayParameters(order, prob.T[tb][sort], prob.A[ab][sort], prob.N[nb])
    # noise on the analysis grid maps back to the original sample grid by length ratio
    params = DecayParameters(order, analysis.decay_times, analysis.amplitudes, analysis.noise * length / edf.length)
    return LikelihoodResult(best_ll, err, (tb[sort], ab[sort], nb), params, analysis, curve.shape[0], history,
                            perfect_fit=err == 0.0)


def bayes_fit_auto(edf: EnergyDecayFunction, space: SearchSpace | None = None, rng=None, max_order: int = 3,
                   source: str = "") -> FitReport:
    """Fit orders 1..max_order and keep the one with the largest information criterion."""
    t0 = time.perf_counter()
    space = space or SearchSpace()
    rng = rng if rng is not None else np.random.default_rng(0)
    results, scores = [], []
    for K in range(1, max_order + 1):
        res = slice_sample_fit(edf, K, space, rng)
        results.append(res)
        scores.append(bic(res.log_likelihood, K, res.n_samples))
    k_best = int(np.argmax(scores))
    chosen = results[k_best]
    fit = evaluate_decay_model(chosen.params, edf.length, edf.sample_rate)
    elapsed = time.perf_counter() - t0
    extra = {"bic": [float(s) for s in scores], "log_likelihood": [float(r.log_likelihood) for r in results]}
    return FitReport("bayes", chosen.params, mse_db(edf, fit), elapsed=elapsed, source=source, fit=fit,
                     extra=extra)
