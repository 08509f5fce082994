"""Fit results shared by all engines."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .edf import DecayParameters

ENGINES = ("net", "bayes", "regression-std", "regression-grid")


@dataclass
class FitReport:
    engine: str
    params: DecayParameters
    mse_db: float
    elapsed: float = 0.0
    source: str = ""
    band: float | None = None
    fit: np.ndarray | None = field(default=None, repr=False)
    flags: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def to_dict(self, include_timing: bool = False, include_fit: bool = False) -> dict:
        d = {
            "engine": self.engine,
            "source": self.source,
            "band": self.band,
            **self.params.to_dict(),
            "mse_db": float(self.mse_db),
            "flags": list(self.flags),
        }
        if self.extra:
            d["extra"] = self.extra
        if include_timing:
            d["elapsed"] = float(self.elapsed)
        if include_fit and self.fit is not None:
            d["fit"] = [float(v) for v in self.fit]
        return d
