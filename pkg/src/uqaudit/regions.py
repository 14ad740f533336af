"""Credible regions built from posterior samples, and membership tests.

Empirical quantiles lean toward inclusion:

* HPD threshold: the ``floor(alpha * N)``-th smallest potential (1-based,
  at least the 1st), so at least ``1 - alpha`` of the samples are members.
* Ball radius: the ``ceil((1 - alpha) * N)``-th smallest distance to the
  sample mean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import UnsupportedRegionError

# guards floor/ceil against representation error, e.g. (1 - 0.1) * 100
_EPS = 1e-9


def _check_alpha(alpha):
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")


def hpd_index(alpha, n):
    """0-based order-statistic index of the HPD threshold."""
    return max(1, math.floor(alpha * n + _EPS)) - 1


def ball_index(alpha, n):
    """0-based order-statistic index of the ball radius."""
    return min(n, max(1, math.ceil((1.0 - alpha) * n - _EPS))) - 1


@dataclass(frozen=True)
class HpdRegion:
    gamma_alpha: float
    alpha: float
    evaluator: Callable | None = None

    def contains(self, candidate):
        if self.evaluator is None:
            raise UnsupportedRegionError("HPD membership needs a potential evaluator for this model")
        return bool(self.evaluator(candidate) >= self.gamma_alpha)


@dataclass(frozen=True, eq=False)
class BallRegion:
    center: np.ndarray
    radius: float
    alpha: float

    def contains(self, candidate):
        candidate = np.asarray(candidate)
        if candidate.shape != self.center.shape:
            raise ValueError(f"candidate shape {candidate.shape} != region shape {self.center.shape}")
        return bool(np.linalg.norm(candidate - self.center) <= self.radius)


def hpd_from_chain(potentials, alpha):
    """Threshold ``gamma_alpha`` on ``U_y`` from a chain's potential values."""
    _check_alpha(alpha)
    u = np.asarray(potentials, dtype=np.float64).ravel()
    if u.size == 0:
        raise ValueError("no potentials")
    if not np.all(np.isfinite(u)):
        raise ValueError("potentials contain non-finite values")
    k = hpd_index(alpha, u.size)
    return float(np.partition(u, k)[k])


def hpd_thresholds(potentials, alphas):
    u = np.sort(np.asarray(potentials, dtype=np.float64).ravel())
    if u.size == 0 or not np.all(np.isfinite(u)):
        raise ValueError("potentials must be non-empty and finite")
    for a in alphas:
        _check_alpha(a)
    return np.array([u[hpd_index(a, u.size)] for a in alphas])


def hpd_region(potentials, alpha, evaluator=None):
    return HpdRegion(hpd_from_chain(potentials, alpha), alpha, evaluator)


def sample_distances(samples, center=None):
    s = np.asarray(samples, dtype=np.float64)
    if center is None:
        center = s.mean(axis=0)
    d = (s - center).reshape(s.shape[0], -1)
    return center, np.sqrt(np.einsum("ij,ij->i", d, d))


def ball_from_chain(samples, alpha, center=None):
    """Ball centred on the sample mean whose radius is the empirical
    ``(1 - alpha)`` quantile of sample distances to the centre."""
    _check_alpha(alpha)
    s = np.asarray(samples, dtype=np.float64)
    if s.ndim < 2 or s.shape[0] < 1:
        raise ValueError("need at least one sample")
    if s.shape[0] < 2:
        raise ValueError("ball regions need at least two samples")
    center, dist = sample_distances(s, center)
    k = ball_index(alpha, dist.size)
    return BallRegion(center, float(np.partition(dist, k)[k]), alpha)


def ball_radii(samples, alphas, center=None):
    center, dist = sample_distances(samples, center)
    dist = np.sort(dist)
    for a in alphas:
        _check_alpha(a)
    return center, np.array([dist[ball_index(a, dist.size)] for a in alphas])


def contains(region, candidate):
    return region.contains(candidate)
