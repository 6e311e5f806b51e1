"""Image error metrics. MAPE and RelMSE divide by the reference (second argument)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError
from ..image import Image

EPS_METRIC = 0.01


@dataclass(frozen=True)
class MetricsReport:
    mse: float
    mape: float
    relmse: float
    error_map: np.ndarray | None = None

    def as_dict(self):
        return {"mse": self.mse, "mape": self.mape, "relmse": self.relmse}


def _pixels(a):
    return np.asarray(a.pixels if isinstance(a, Image) else a, dtype=float)


def compute_metrics(img, ref, eps_metric: float = EPS_METRIC, error_map: bool = False) -> MetricsReport:
    a, b = _pixels(img), _pixels(ref)
    if a.shape != b.shape:
        raise ConfigurationError(f"image shapes differ: {a.shape} vs {b.shape}")
    if not eps_metric > 0.0:
        raise ConfigurationError("eps_metric must be positive")
    sq = (a - b) ** 2
    rel = sq / (b * b + eps_metric)
    return MetricsReport(
        mse=float(sq.mean()),
        mape=float((np.abs(a - b) / (b + eps_metric)).mean()),
        relmse=float(rel.mean()),
        error_map=rel.mean(axis=-1) if error_map and a.ndim == 3 else None,
    )
