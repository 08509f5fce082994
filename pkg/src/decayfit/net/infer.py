"""Inference: EDF in, fitted decay parameters out."""

from __future__ import annotations

import time

import numpy as np

from ..edf import EnergyDecayFunction, evaluate_decay_model, mse_db, preprocess
from ..report import FitReport
from .model import DecayFitNet, NetworkParameters, postprocess_outputs


def infer_batch(edfs, params: NetworkParameters, sources=None, net: DecayFitNet | None = None) -> list:
    """Fit many EDFs with one forward pass.

    The elapsed time of the whole batch is split evenly over its reports.
    """
    t0 = time.perf_counter()
    edfs = list(edfs)
    if not edfs:
        return []
    net = net or DecayFitNet(params)
    M = params.topology.input_length
    inputs = [preprocess(e, params.norm_factor, M) for e in edfs]
    out = net.forward(np.stack([p.db_samples for p in inputs]))
    lengths = np.array([e.length for e in edfs], dtype=np.float64)
    rates = np.array([e.sample_rate for e in edfs], dtype=np.float64)
    fitted = postprocess_outputs(out, lengths, rates, M)
    reports = []
    for i, (edf, p) in enumerate(zip(edfs, fitted)):
        fit = evaluate_decay_model(p, edf.length, edf.sample_rate)
        flags = ["InputClipped"] if inputs[i].clipped else []
        reports.append(FitReport("net", p, mse_db(edf, fit), source=sources[i] if sources else "",
                                 fit=fit, flags=flags))
    per_item = (time.perf_counter() - t0) / len(edfs)
    for r in reports:
        r.elapsed = per_item
    return reports


def infer(edf: EnergyDecayFunction, params: NetworkParameters, source: str = "") -> FitReport:
    return infer_batch([edf], params, [source] if source else None)[0]
