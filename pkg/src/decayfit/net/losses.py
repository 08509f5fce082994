"""Training losses and their gradients w.r.t. the raw network outputs.

The fit curve used by the EDF loss lives on the network's M-point grid:
decay times in grid units are ``t^2 + 1``, amplitudes ``a^2`` and the noise
level ``10^-n``.  During training the amplitude mask uses the true model
order, so gradients reach exactly the active slopes.
"""

from __future__ import annotations

import math

import numpy as np

from ..edf import DB_FLOOR, MODEL_DECAY_CONSTANT
from ..errors import DomainError, ShapeMismatch
from .model import NetworkOutput

LN10 = math.log(10.0)
NOISE_EXPONENT_CLIP = 32.0


def edf_loss(true_db, fit_db) -> float:
    a = np.asarray(true_db, dtype=np.float64)
    b = np.asarray(fit_db, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"EDF lengths differ: {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(a - b)))


def noise_loss(true_noise: float, predicted_noise: float) -> float:
    if true_noise <= 0 or predicted_noise <= 0:
        raise DomainError("noise levels must be positive")
    return abs(math.log10(true_noise) - math.log10(predicted_noise))


def log_softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def order_loss(logits, order: int) -> float:
    """Cross-entropy of the order logits for the true order (1-based)."""
    return float(-log_softmax(logits)[order - 1])


def reconstruct(out: NetworkOutput, orders, grid, M: int):
    """Fit curve on the training grid; returns (curve, intermediates for the gradient)."""
    tau = out.t ** 2 + 1.0
    mask = np.arange(1, out.t.shape[1] + 1)[None, :] <= np.asarray(orders)[:, None]
    amps = np.where(mask, out.a ** 2, 0.0)
    n_exp = np.clip(out.n, -NOISE_EXPONENT_CLIP, NOISE_EXPONENT_CLIP)
    noise = 10.0 ** (-n_exp)
    rate = MODEL_DECAY_CONSTANT / tau  # (B, K)
    decay = np.exp(rate[:, :, None] * grid[None, None, :])  # (B, K, M)
    tail = np.exp(rate * M)  # (B, K)
    ramp = M - grid
    curve = np.einsum("bk,bkm->bm", amps, decay - tail[:, :, None]) + noise[:, None] * ramp[None, :]
    return curve, (tau, mask, amps, noise, rate, decay, tail, ramp)


def batch_loss(out: NetworkOutput, true_db, true_noise, orders, grid, M: int, reduction: str = "mean"):
    """Total loss (EDF + noise + order) of a batch and its gradient w.r.t. ``out``.

    Returns ``(loss, components, grad)`` where ``components`` holds the
    per-record EDF, noise and order losses.
    """
    true_db = np.asarray(true_db, dtype=np.float64)
    orders = np.asarray(orders)
    grid = np.asarray(grid, dtype=np.float64)
    B = true_db.shape[0]
    curve, (tau, mask, amps, noise, rate, decay, tail, ramp) = reconstruct(out, orders, grid, M)

    fit_db = 10.0 * np.log10(np.maximum(curve, DB_FLOOR))
    resid = true_db - fit_db
    l_edf = np.mean(np.abs(resid), axis=1)

    log_noise = np.log10(np.asarray(true_noise, dtype=np.float64))
    noise_err = log_noise + out.n  # log10 N_true - log10 N_hat
    l_noise = np.abs(noise_err)

    logp = log_softmax(out.logits)
    onehot = np.zeros_like(logp)
    onehot[np.arange(B), orders - 1] = 1.0
    l_order = -np.sum(logp * onehot, axis=1)

    per_record = l_edf + l_noise + l_order
    scale = 1.0 / B if reduction == "mean" else 1.0
    loss = float(per_record.sum() * scale)

    # d loss / d curve
    g_db = -np.sign(resid) / M * scale
    g_curve = np.where(curve > DB_FLOOR, g_db * 10.0 / (LN10 * np.maximum(curve, DB_FLOOR)), 0.0)

    g_amps = np.einsum("bm,bkm->bk", g_curve, decay - tail[:, :, None])
    # d/dtau of exp(-13.8 u / tau) - exp(-13.8 M / tau)
    d_slope = (-MODEL_DECAY_CONSTANT / tau ** 2)[:, :, None] * (
        grid[None, None, :] * decay - M * tail[:, :, None])
    g_tau = amps * np.einsum("bm,bkm->bk", g_curve, d_slope)
    g_noise = g_curve @ ramp

    in_range = np.abs(out.n) < NOISE_EXPONENT_CLIP
    grad_t = g_tau * 2.0 * out.t
    grad_a = np.where(mask, g_amps * 2.0 * out.a, 0.0)
    grad_n = np.where(in_range, g_noise * (-LN10) * noise, 0.0) + np.sign(noise_err) * scale
    grad_logits = (np.exp(logp) - onehot) * scale
    components = {"edf": l_edf, "noise": l_noise, "order": l_order, "fit_db": fit_db}
    return loss, components, NetworkOutput(grad_t, grad_a, grad_n, grad_logits)


def total_loss(record, params, grid, M: int):
    """Loss of a single dataset record and gradients w.r.t. all network parameters."""
    from .model import DecayFitNet

    net = DecayFitNet(params)
    x = np.clip(np.asarray(record.db) / params.norm_factor, -1.0, 1.0)
    out = net.forward(x, keep_cache=True)
    loss, components, grad_out = batch_loss(out, np.asarray(record.db)[None, :], [record.params.noise],
                                            [record.order], grid, M)
    return loss, net.backward(grad_out), components
