"""Conjugate-Gaussian reference models.

A :class:`GaussianPrior` with a circulant covariance plays the role of
nature's prior. Under the circular blur model its posterior is Gaussian and
diagonal in the DFT basis, so means, variances, exact draws and coverage
ground truth are all available in closed form or by direct simulation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imaging import Dataset, as_image, sample_observation
from .priors import laplacian_eigenvalues
from .streams import substream


def _half(spec):
    return spec[:, : spec.shape[1] // 2 + 1]


@dataclass(frozen=True, eq=False)
class GaussianPrior:
    """``N(mean, C)`` with ``C`` circulant; ``spectrum`` holds the DFT
    eigenvalues of ``C`` (the per-mode variances), full ``fft2`` layout."""

    mean: np.ndarray
    spectrum: np.ndarray

    def __post_init__(self):
        mean = as_image(self.mean, "mean")
        spec = np.asarray(self.spectrum, dtype=np.float64)
        if spec.shape != mean.shape:
            raise ValueError(f"spectrum shape {spec.shape} != mean shape {mean.shape}")
        if not np.all(spec > 0):
            raise ValueError("all mode variances must be positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "spectrum", spec)

    @classmethod
    def isotropic(cls, shape, variance, mean=0.0):
        return cls(np.full(shape, float(mean)), np.full(shape, float(variance)))

    @classmethod
    def smooth_field(cls, shape, pixel_std=0.15, mean=0.5, floor=0.1):
        """Smooth random fields: mode variance ∝ 1 / (floor + Laplacian eigenvalue),
        scaled so each pixel has marginal standard deviation ``pixel_std``."""
        s = 1.0 / (floor + laplacian_eigenvalues(shape))
        s *= pixel_std**2 / s.mean()
        return cls(np.full(shape, float(mean)), s)

    @property
    def shape(self):
        return self.mean.shape

    @property
    def pixel_variance(self):
        return float(self.spectrum.mean())

    def scaled(self, factor):
        """Same mean, covariance multiplied by ``factor``."""
        return GaussianPrior(self.mean, self.spectrum * factor)

    def sample(self, rng, size=None):
        shape = self.shape
        z = rng.standard_normal(shape if size is None else (size, *shape))
        amp = np.sqrt(_half(self.spectrum))
        return self.mean + np.fft.irfft2(np.fft.rfft2(z) * amp, s=shape)

    def neg_log_density(self, x):
        """``(x - mean)^T C^{-1} (x - mean) / 2`` (unnormalised)."""
        d = np.asarray(x) - self.mean
        cd = np.fft.irfft2(np.fft.rfft2(d) / _half(self.spectrum), s=self.shape)
        return 0.5 * float(np.sum(d * cd))

    def covariance(self):
        """Dense covariance matrix (row-major pixel order); small images only."""
        return _dense_circulant(self.spectrum)


@dataclass(frozen=True, eq=False)
class AnalyticPosterior:
    mean: np.ndarray
    mode_variance: np.ndarray

    @property
    def shape(self):
        return self.mean.shape

    @property
    def pixel_variance(self):
        return float(self.mode_variance.mean())

    def sample(self, rng, size=None):
        shape = self.shape
        z = rng.standard_normal(shape if size is None else (size, *shape))
        amp = np.sqrt(_half(self.mode_variance))
        return self.mean + np.fft.irfft2(np.fft.rfft2(z) * amp, s=shape)

    def log_density(self, x):
        """Log density up to an additive constant; works on a stack of images."""
        d = np.asarray(x) - self.mean
        cd = np.fft.irfft2(np.fft.rfft2(d) / _half(self.mode_variance), s=self.shape)
        return -0.5 * np.sum(d * cd, axis=(-2, -1))

    def covariance(self):
        return _dense_circulant(self.mode_variance)


def _dense_circulant(spectrum):
    h, w = spectrum.shape
    n = h * w
    basis = np.eye(n).reshape(n, h, w)
    cols = np.real(np.fft.ifft2(np.fft.fft2(basis) * spectrum))
    return cols.reshape(n, n).T


def analytic_posterior(y, prior, m):
    """Exact posterior of ``x`` given ``y = Hx + w`` under a circulant Gaussian prior.

    Per DFT mode ``k``: ``v_k = (|h_k|^2 / sigma^2 + 1/s_k)^-1`` and
    ``mean_k = v_k (conj(h_k) y_k / sigma^2 + mu_k / s_k)``.
    """
    y = as_image(y, "y")
    if y.shape != prior.shape:
        raise ValueError(f"observation {y.shape} and prior {prior.shape} differ in shape")
    s2 = m.noise_sigma**2
    hk = m.kernel.transfer(y.shape)
    v = 1.0 / (np.abs(hk) ** 2 / s2 + 1.0 / prior.spectrum)
    mk = v * (np.conj(hk) * np.fft.fft2(y) / s2 + np.fft.fft2(prior.mean) / prior.spectrum)
    return AnalyticPosterior(np.real(np.fft.ifft2(mk)), v)


def synthetic_dataset(prior, n_items, seed):
    """Draw ``n_items`` i.i.d. images from ``prior``."""
    items = [prior.sample(substream(seed, 7, i)) for i in range(n_items)]
    return Dataset(items, [f"synthetic-{i:05d}" for i in range(n_items)])


def random_rectangles(shape, n_items, seed, n_rects=6, noise_std=0.0):
    """Piecewise-constant images of overlapping rectangles on [0, 1]; a
    heavy-tailed-gradient stand-in for natural images."""
    items = []
    h, w = shape
    for i in range(n_items):
        rng = substream(seed, 11, i)
        img = np.full(shape, rng.uniform(0.2, 0.8))
        for _ in range(n_rects):
            r0, c0 = rng.integers(0, h), rng.integers(0, w)
            rh, rw = rng.integers(2, h // 2 + 1), rng.integers(2, w // 2 + 1)
            img[r0 : r0 + rh, c0 : c0 + rw] = rng.uniform(0.0, 1.0)
        if noise_std:
            img = img + noise_std * rng.standard_normal(shape)
        items.append(img)
    return Dataset(items, [f"rect-{i:05d}" for i in range(n_items)])


def brute_coverage(true_prior, assumed_prior, m, alpha, region="ball", M=2000, seed=0, n_posterior=500):
    """Monte Carlo estimate of ``E_y P[x in C_alpha^y | y]``.

    Each replication draws ``(x*, y)`` from the true joint, builds the region
    from ``n_posterior`` exact draws of the assumed posterior and records
    whether ``x*`` is inside. ``alpha`` may be a scalar or a sequence; the
    return value has the same form.
    """
    from .regions import ball_from_chain, contains, hpd_from_chain

    if M < 1000:
        raise ValueError(f"brute-force coverage needs M >= 1000 replications, got {M}")
    alphas = np.atleast_1d(np.asarray(alpha, dtype=np.float64))
    hits = np.zeros(alphas.size)
    for j in range(M):
        rng = substream(seed, 3, j)
        x = true_prior.sample(rng)
        y = sample_observation(x, m, rng)
        post = analytic_posterior(y, assumed_prior, m)
        draws = post.sample(rng, n_posterior)
        if region == "ball":
            for a, al in enumerate(alphas):
                hits[a] += contains(ball_from_chain(draws, al), x)
        elif region == "hpd":
            pots = post.log_density(draws)
            ux = post.log_density(x)
            for a, al in enumerate(alphas):
                hits[a] += ux >= hpd_from_chain(pots, al)
        else:
            raise ValueError(f"unknown region kind {region!r}")
    cov = hits / M
    return float(cov[0]) if np.ndim(alpha) == 0 else cov
