"""Relative performance improvement (RPI) and its cross-trial statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, InsufficientDataError, UndefinedMetricError

METHODS = ("dual-KF", "joint-EKF")
QUANTITIES = ("eps", "q", "p")


def rpi(estimate, truth, baseline, dt: float, burn_in: float = 0.0) -> float:
    """``1 - int (est - truth)^2 dt / int (baseline - truth)^2 dt``.

    Integrals are left-endpoint Riemann sums on the shared grid, starting after
    ``burn_in`` seconds.  An estimate identical to a perfect baseline scores 0
    (no improvement); a zero baseline error with a nonzero estimate error
    raises :class:`UndefinedMetricError`.
    """
    est = np.asarray(estimate, dtype=float)
    tru = np.asarray(truth, dtype=float)
    base = np.asarray(baseline, dtype=float)
    if not est.shape == tru.shape == base.shape or est.ndim != 1:
        raise ConfigurationError(
            f"paths must be 1-D of equal length, got {est.shape}, {tru.shape}, {base.shape}"
        )
    start = int(round(burn_in / dt)) if burn_in > 0 else 0
    if start >= est.size:
        raise ConfigurationError("burn-in covers the whole path")
    err_est = float(np.sum((est[start:] - tru[start:]) ** 2)) * dt
    err_base = float(np.sum((base[start:] - tru[start:]) ** 2)) * dt
    if err_base == 0.0:
        if err_est == 0.0:
            return 0.0
        raise UndefinedMetricError("baseline has zero error; RPI undefined")
    return 1.0 - err_est / err_base


def mean_sem(values) -> tuple[float, float]:
    """Arithmetic mean and standard error ``sqrt(sum (x - mean)^2 / (N (N - 1)))``."""
    x = np.asarray(list(values), dtype=float)
    n = x.size
    if n < 2:
        raise InsufficientDataError(f"need at least 2 values for an SEM, got {n}")
    m = float(x.mean())
    return m, math.sqrt(float(np.sum((x - m) ** 2)) / (n * (n - 1)))


@dataclass(frozen=True)
class RpiStat:
    mean: float
    sem: float
    n_trials: int
    n_diverged: int = 0


@dataclass
class RpiSummary:
    """Mean RPI and SEM keyed by ``(method, quantity)``."""

    stats: dict = field(default_factory=dict)

    def __getitem__(self, key) -> RpiStat:
        return self.stats[key]

    @classmethod
    def from_trials(cls, per_method: dict, n_diverged: dict | None = None) -> "RpiSummary":
        """Aggregate ``{(method, quantity): [rpi, ...]}``; undefined entries are NaN."""
        n_diverged = n_diverged or {}
        stats = {}
        for key, values in per_method.items():
            vals = [v for v in values if np.isfinite(v)]
            div = n_diverged.get(key[0], 0)
            if len(vals) >= 2:
                m, s = mean_sem(vals)
            elif len(vals) == 1:
                m, s = vals[0], math.nan
            else:
                m, s = math.nan, math.nan
            stats[key] = RpiStat(m, s, len(vals), div)
        return cls(stats)

    def rows(self):
        for method in METHODS:
            for quantity in QUANTITIES:
                if (method, quantity) in self.stats:
                    yield method, quantity, self.stats[(method, quantity)]
