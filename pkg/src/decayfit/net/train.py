"""Training loop: AdamW with cosine annealing and warm restarts."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..edf import analysis_grid
from ..errors import TrainingDiverged
from ..synth import Dataset, load_dataset
from .losses import batch_loss
from .model import DecayFitNet, NetworkParameters, NetworkTopology, init_parameters, predicted_order

log = logging.getLogger(__name__)


@dataclass
class TrainingConfig:
    epochs: int = 200
    learning_rate: float = 1e-3
    weight_decay: float = 3e-4
    restart_period: int = 40
    min_learning_rate: float = 1e-6
    batch_size: int = 128
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    validation_fraction: float = 0.05
    seed: int = 0

    def validate(self):
        for name in ("epochs", "learning_rate", "restart_period", "batch_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.weight_decay < 0 or self.min_learning_rate < 0:
            raise ValueError("weight_decay and min_learning_rate must be non-negative")
        if not 0 <= self.validation_fraction < 1:
            raise ValueError("validation_fraction must be in [0, 1)")


def cosine_learning_rate(epoch: int, config: TrainingConfig) -> float:
    """Learning rate of a 0-based epoch; restarts at the initial rate every ``restart_period`` epochs."""
    phase = (epoch % config.restart_period) / config.restart_period
    lo, hi = config.min_learning_rate, config.learning_rate
    return lo + (hi - lo) * (1.0 + math.cos(math.pi * phase)) / 2.0


class AdamW:
    """Adam with decoupled weight decay, operating on a dict of arrays in place."""

    def __init__(self, arrays: dict, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.arrays = arrays
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.m = {k: np.zeros_like(v) for k, v in arrays.items()}
        self.v = {k: np.zeros_like(v) for k, v in arrays.items()}
        self.steps = 0

    def step(self, grads: dict, lr: float):
        self.steps += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.steps
        c2 = 1.0 - b2 ** self.steps
        for name, p in self.arrays.items():
            g = grads[name]
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            if self.weight_decay:
                p *= 1.0 - lr * self.weight_decay
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def output_bias_from_targets(dataset: Dataset) -> dict:
    """Initial output-layer biases at the mean of the (transformed) training targets."""
    cfg = dataset.config
    M = dataset.db.shape[1]
    active = np.arange(1, 4)[None, :] <= dataset.orders[:, None]
    tau = dataset.decay_times * M / cfg.t_edf
    t_raw = np.sqrt(np.maximum(tau - 1.0, 0.0))
    a_raw = np.sqrt(np.maximum(dataset.amplitudes, 0.0))
    return {
        "t": float(t_raw[active].mean()),
        "a": float(a_raw[active].mean()),
        "n": float(np.mean(-np.log10(dataset.noise))),
    }


def _inputs(dataset: Dataset, norm_factor: float) -> np.ndarray:
    return np.clip(dataset.db / norm_factor, -1.0, 1.0)


def evaluate_dataset(params: NetworkParameters, dataset: Dataset, batch_size: int = 1024) -> dict:
    """Mean loss, per-record EDF MAE and order accuracy of ``params`` on ``dataset``."""
    net = DecayFitNet(params)
    M = dataset.db.shape[1]
    grid = analysis_grid(int(dataset.header["edf_length"]), M)
    x = _inputs(dataset, params.norm_factor)
    losses, maes, correct = [], [], []
    for start in range(0, len(dataset), batch_size):
        sl = slice(start, start + batch_size)
        out = net.forward(x[sl])
        loss, comp, _ = batch_loss(out, dataset.db[sl], dataset.noise[sl], dataset.orders[sl], grid, M,
                                   reduction="sum")
        losses.append(loss)
        maes.append(comp["edf"])
        correct.append(predicted_order(out.logits) == dataset.orders[sl])
    n = max(len(dataset), 1)
    return {
        "loss": float(np.sum(losses) / n),
        "edf_mae": np.concatenate(maes) if maes else np.zeros(0),
        "order_accuracy": float(np.mean(np.concatenate(correct))) if correct else float("nan"),
    }


def train(dataset, config: TrainingConfig, topology: NetworkTopology | None = None, progress=None,
          initial: NetworkParameters | None = None):
    """Train a network; returns ``(params, log_rows)``.

    ``dataset`` is a path or a loaded :class:`Dataset`.  One log row per epoch:
    epoch, learning rate, training loss, validation loss, validation order
    accuracy.
    """
    config.validate()
    if not isinstance(dataset, Dataset):
        dataset = load_dataset(dataset)
    topology = topology or NetworkTopology(input_length=dataset.db.shape[1])
    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(0x7261696E,)))

    n = len(dataset)
    order = rng.permutation(n)
    n_val = int(round(config.validation_fraction * n))
    val = dataset.subset(np.sort(order[:n_val]))
    tr = dataset.subset(np.sort(order[n_val:]))

    if initial is None:
        params = init_parameters(topology, rng, dataset.norm_factor, output_bias_from_targets(tr))
    else:
        params = initial.copy()
    params.meta = {"training": asdict(config), "dataset": {"record_count": n, "seed": dataset.header["config"]["seed"]}}
    net = DecayFitNet(params)
    opt = AdamW(params.arrays, config.beta1, config.beta2, config.eps, config.weight_decay)

    M = dataset.db.shape[1]
    grid = analysis_grid(int(dataset.header["edf_length"]), M)
    x = _inputs(tr, params.norm_factor)
    rows = []
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        lr = cosine_learning_rate(epoch, config)
        perm = rng.permutation(len(tr))
        total = 0.0
        for start in range(0, len(tr), config.batch_size):
            idx = perm[start:start + config.batch_size]
            out = net.forward(x[idx], keep_cache=True)
            loss, _, grad = batch_loss(out, tr.db[idx], tr.noise[idx], tr.orders[idx], grid, M)
            if not math.isfinite(loss):
                raise TrainingDiverged(epoch)
            grads = net.backward(grad)
            opt.step(grads, lr)
            total += loss * len(idx)
        train_loss = total / max(len(tr), 1)
        if n_val:
            stats = evaluate_dataset(params, val)
            val_loss, acc = stats["loss"], stats["order_accuracy"]
        else:
            val_loss, acc = float("nan"), float("nan")
        if not math.isfinite(train_loss):
            raise TrainingDiverged(epoch)
        rows.append({"epoch": epoch, "learning_rate": lr, "train_loss": train_loss,
                     "val_loss": val_loss, "order_accuracy": acc})
        log.info("epoch %d lr %.2e train %.4f val %.4f acc %.3f (%.1f s)", epoch, lr, train_loss, val_loss, acc,
                 time.perf_counter() - t0)
        if progress is not None:
            progress(rows[-1])
    return params, rows


def write_training_log(rows, path):
    fields = ["epoch", "learning_rate", "train_loss", "val_loss", "order_accuracy"]
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (row[k] if k == "epoch" else repr(float(row[k]))) for k in fields})
