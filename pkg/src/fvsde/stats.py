"""Log-log slope fitting and Monte Carlo summaries."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

__all__ = ["fit_rate", "mc_mean_ci"]


def fit_rate(pairs: Sequence[tuple[float, float]]) -> tuple[float, float, float]:
    """Least-squares line through (log scale, log error).

    Returns (slope, intercept, residual) with residual the RMS misfit of the
    log errors.  Raises ValueError on fewer than 2 pairs or non-positive data.
    """
    if len(pairs) < 2:
        raise ValueError("need at least 2 (scale, error) pairs")
    scales = np.array([p[0] for p in pairs], dtype=float)
    errors = np.array([p[1] for p in pairs], dtype=float)
    if np.any(scales <= 0.0) or np.any(errors <= 0.0):
        raise ValueError("scales and errors must be positive")
    x = np.log(scales)
    y = np.log(errors)
    slope, intercept = np.polyfit(x, y, 1)
    misfit = y - (slope * x + intercept)
    return float(slope), float(intercept), float(np.sqrt(np.mean(misfit**2)))


def mc_mean_ci(samples: Sequence[float]) -> tuple[float, float]:
    """Sample mean and 95% half-width 1.96 * std / sqrt(M).

    Samples are reduced in a canonical (sorted) order, so any permutation of
    the same sample set produces bit-identical output.
    """
    arr = np.sort(np.asarray(samples, dtype=float))
    m = arr.shape[0]
    if m < 2:
        raise ValueError("need at least 2 samples for a confidence interval")
    mean = float(arr.sum() / m)
    var = float(np.sum((arr - mean) ** 2) / (m - 1))
    return mean, 1.96 * math.sqrt(var / m)
