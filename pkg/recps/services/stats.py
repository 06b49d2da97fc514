# recps/services/stats.py
# Confidence gap, logit transform, OUT Gaussian and the one-sided tail test
import logging
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.special import ndtr

from recps.utils.exceptions import InsufficientSamplesError

logger = logging.getLogger(__name__)

EPS_Q = 1e-6
SIGMA_FLOOR = 1e-6
MIN_OUT_SAMPLES = 30

ArrayLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class OutDistribution:
    """Gaussian fitted to the φ values of OUT (non-member) interactions."""

    mu: float
    sigma: float
    n: int

    def as_dict(self) -> dict:
        return {"mu": float(self.mu), "sigma": float(self.sigma), "n": int(self.n)}


def confidence_gap(p: ArrayLike) -> ArrayLike:
    """q = |2p - 1|."""
    return np.abs(2.0 * np.asarray(p, dtype=np.float64) - 1.0)


def logit(q: ArrayLike) -> ArrayLike:
    """log(q / (1 - q)) with q clamped to [EPS_Q, 1 - EPS_Q]."""
    clamped = np.clip(np.asarray(q, dtype=np.float64), EPS_Q, 1.0 - EPS_Q)
    return np.log(clamped) - np.log1p(-clamped)


def phi_from_probability(p: ArrayLike) -> ArrayLike:
    return logit(confidence_gap(p))


def fit_out_distribution(phis) -> OutDistribution:
    """
    Fit mean and unbiased standard deviation (floored at SIGMA_FLOOR).

    Raises:
        InsufficientSamplesError: fewer than MIN_OUT_SAMPLES values
    """
    values = np.asarray(phis, dtype=np.float64).ravel()
    if values.size < MIN_OUT_SAMPLES:
        raise InsufficientSamplesError(MIN_OUT_SAMPLES, int(values.size))
    mu = float(np.mean(values))
    sigma = max(float(np.std(values, ddof=1)), SIGMA_FLOOR)
    return OutDistribution(mu=mu, sigma=sigma, n=int(values.size))


def lambda_statistic(phi: ArrayLike, dist: OutDistribution) -> ArrayLike:
    """Standard normal CDF of (phi - mu) / sigma; larger means more member-like."""
    return ndtr((np.asarray(phi, dtype=np.float64) - dist.mu) / dist.sigma)
