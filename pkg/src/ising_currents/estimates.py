"""Estimate containers and binning / jackknife error analysis.

Monte Carlo series are reduced to bin means (at least 20 bins) so that the
reported standard error absorbs the integrated autocorrelation time; ratio
estimators (worm occupation ratios) use a jackknife over the same bins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

MIN_BINS = 20


@dataclass
class EstimateSeries:
    """A single scalar estimate with its binned error."""

    name: str
    mean: float
    stderr: float
    n_samples: int
    n_bins: int = 0
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (self.stderr >= 0.0 or math.isnan(self.stderr)):
            raise ValueError("standard error must be nonnegative")

    def agrees_with(self, value: float, n_sigma: float = 3.0) -> bool:
        if math.isinf(self.stderr):
            return True
        return abs(self.mean - value) <= n_sigma * max(self.stderr, 1e-300)

    def as_dict(self):
        return {"name": self.name, "mean": self.mean, "stderr": self.stderr,
                "n": self.n_samples, "n_bins": self.n_bins, "seed": self.seed,
                **({"meta": self.meta} if self.meta else {})}


def binned_stats(series: np.ndarray, n_bins: int = 32):
    """Mean and binned standard error of a (possibly autocorrelated) series.

    Works on 1D series or 2D (time, observables) arrays; trailing samples
    that do not fill a bin are dropped.
    """
    series = np.asarray(series, dtype=float)
    n = series.shape[0]
    n_bins = max(MIN_BINS, min(n_bins, n))
    if n < n_bins:
        mean = series.mean(axis=0)
        return mean, np.full_like(np.atleast_1d(mean), np.inf, dtype=float)
    per = n // n_bins
    trimmed = series[: per * n_bins]
    bins = trimmed.reshape(n_bins, per, *series.shape[1:]).mean(axis=1)
    mean = bins.mean(axis=0)
    err = bins.std(axis=0, ddof=1) / math.sqrt(n_bins)
    return mean, err


def jackknife_ratio(num_bins: np.ndarray, den_bins: np.ndarray, scale: float = 1.0):
    """Mean and error of scale * sum(num) / sum(den) by leave-one-bin-out."""
    num_bins = np.asarray(num_bins, dtype=float)
    den_bins = np.asarray(den_bins, dtype=float)
    ns = num_bins.sum()
    ds = den_bins.sum()
    if ds <= 0.0:
        return 0.0, math.inf
    full = scale * ns / ds
    n = len(num_bins)
    if n < 2:
        return full, math.inf
    den_loo = ds - den_bins
    if np.any(den_loo <= 0.0):
        return full, math.inf
    loo = scale * (ns - num_bins) / den_loo
    var = (n - 1) / n * np.sum((loo - loo.mean()) ** 2)
    return full, math.sqrt(var)


def combined_sigma(*errors: float) -> float:
    return math.sqrt(sum(e * e for e in errors))
