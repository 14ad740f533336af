"""Posterior samplers behind one contract.

Every sampler returns a :class:`ChainOutput`. Samplers whose prior
potential can be evaluated also record ``U_y(x) = log p(y|x) + log p(x)``
(up to a constant) for every emitted sample and expose the same function as
``ChainOutput.evaluator``, which is what HPD membership tests use.

Step sizes are checked against a Lipschitz bound of each drift; a step above
``1 / L`` is a configuration error. ``step_size=None`` picks ``0.9 / L``.
"""

from __future__ import annotations

import dataclasses
import logging
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DivergedChainError, StepSizeError
from .imaging import as_image
from .oracle import analytic_posterior
from .priors import GmrfPrior, TvPotential, tweedie_score
from .streams import substream

log = logging.getLogger(__name__)

AUTO_STEP_FRACTION = 0.9


class BoundarySolutionWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ChainConfig:
    step_size: float | None = None
    n_burnin: int = 0
    n_samples: int = 1000
    thinning: int = 1
    seed: int = 0
    stream: tuple = ()

    def __post_init__(self):
        if self.step_size is not None and not self.step_size > 0:
            raise ValueError(f"step_size must be positive, got {self.step_size}")
        if self.n_burnin < 0 or self.n_samples < 1 or self.thinning < 1:
            raise ValueError("need n_burnin >= 0, n_samples >= 1, thinning >= 1")

    def rng(self, *extra):
        return substream(self.seed, *self.stream, *extra)

    def with_stream(self, *stream):
        return dataclasses.replace(self, stream=tuple(stream))

    def resolve_step(self, lipschitz):
        bound = 1.0 / lipschitz
        if self.step_size is None:
            return AUTO_STEP_FRACTION * bound
        if self.step_size > bound * (1.0 + 1e-12):
            raise StepSizeError(self.step_size, bound)
        return float(self.step_size)

    @property
    def total_steps(self):
        return self.n_burnin + self.n_samples * self.thinning


@dataclass(eq=False)
class ChainOutput:
    samples: np.ndarray
    potentials: np.ndarray | None
    mean: np.ndarray
    second_moment: np.ndarray
    wall_time: float
    evaluator: Callable | None = None
    info: dict = field(default_factory=dict)

    @property
    def n_samples(self):
        return self.samples.shape[0]

    @property
    def variance(self):
        return self.second_moment - self.mean**2


@dataclass(frozen=True)
class GibbsHyperPriors:
    """Gamma(shape, rate) hyperpriors on the prior precision ``delta`` and
    the noise precision ``gamma``."""

    a_delta: float = 1e-3
    b_delta: float = 1e-3
    a_gamma: float = 1e-3
    b_gamma: float = 1e-3

    def __post_init__(self):
        for name, val in dataclasses.asdict(self).items():
            if not val > 0:
                raise ValueError(f"{name} must be positive, got {val}")


class Likelihood:
    """Gaussian log-likelihood ``-||y - Hx||^2 / (2 sigma^2)`` with cached transfer."""

    def __init__(self, y, m):
        self.y = as_image(y, "y")
        self.model = m
        self.shape = self.y.shape
        self._h = m.kernel.rtransfer(self.shape)
        self._hty = np.fft.rfft2(self.y) * np.conj(self._h)
        self._s2 = m.noise_sigma**2
        self.lipschitz = m.lipschitz(self.shape)

    def forward(self, x):
        return np.fft.irfft2(np.fft.rfft2(x) * self._h, s=self.shape)

    def value(self, x):
        r = self.y - self.forward(x)
        return -0.5 * float(np.sum(r * r)) / self._s2

    def grad(self, x):
        xf = np.fft.rfft2(x)
        return np.fft.irfft2(self._hty - np.conj(self._h) * self._h * xf, s=self.shape) / self._s2


class _Recorder:
    def __init__(self, cfg, shape, potential):
        self.samples = np.empty((cfg.n_samples, *shape))
        self.potentials = np.empty(cfg.n_samples) if potential is not None else None
        self.potential = potential
        self.sum = np.zeros(shape)
        self.sumsq = np.zeros(shape)
        self.count = 0
        self.burnin = cfg.n_burnin
        self.thinning = cfg.thinning

    def offer(self, step, x):
        """``step`` counts from 1. Returns True once the sample budget is full."""
        k = step - self.burnin
        if k <= 0 or k % self.thinning:
            return False
        self.samples[self.count] = x
        if self.potential is not None:
            self.potentials[self.count] = self.potential(x)
        self.sum += x
        self.sumsq += x * x
        self.count += 1
        return self.count == self.samples.shape[0]

    def output(self, t0, evaluator=None, **info):
        n = self.count
        return ChainOutput(
            samples=self.samples,
            potentials=self.potentials,
            mean=self.sum / n,
            second_moment=self.sumsq / n,
            wall_time=time.perf_counter() - t0,
            evaluator=evaluator,
            info=info,
        )


def _langevin(drift, x0, cfg, step, potential=None, rng=None):
    t0 = time.perf_counter()
    rng = cfg.rng() if rng is None else rng
    x = np.array(x0, dtype=np.float64)
    rec = _Recorder(cfg, x.shape, potential)
    noise = np.sqrt(2.0 * step)
    for k in range(1, cfg.total_steps + 1):
        x = x + step * drift(x) + noise * rng.standard_normal(x.shape)
        if not np.isfinite(x).all():
            raise DivergedChainError(k)
        if rec.offer(k, x):
            break
    return rec.output(t0, evaluator=potential, step_size=step)


def ula_chain(grad_log_posterior, x0, cfg, lipschitz=None, potential=None):
    """Unadjusted Langevin: ``x <- x + d * grad(x) + sqrt(2 d) xi``."""
    if lipschitz is not None:
        step = cfg.resolve_step(lipschitz)
    elif cfg.step_size is None:
        raise ValueError("ula_chain needs either a step size or a Lipschitz bound")
    else:
        step = cfg.step_size
    return _langevin(grad_log_posterior, x0, cfg, step, potential)


# ---------------------------------------------------------------------------
# MYULA and SAPG
# ---------------------------------------------------------------------------


class _MoreauDrift:
    """Likelihood gradient plus the Moreau-Yosida gradient ``(prox(x) - x) / theta``.

    Keeps the TV dual between calls to warm-start the prox solver.
    """

    def __init__(self, lik, prior, theta):
        self.lik = lik
        self.prior = prior
        self.theta = theta
        self.dual = None
        self.prox_failures = 0

    def __call__(self, x):
        r = self.prior.prox(x, self.theta, dual_init=self.dual)
        self.dual = r.dual
        if not r.converged:
            self.prox_failures += 1
        return self.lik.grad(x) + (r.image - x) / self.theta


def myula_tv_chain(y, m, tv, theta, cfg, x0=None):
    """MYULA on the posterior with a (Moreau-Yosida smoothed) TV prior.

    ``tv`` may be any potential exposing ``value`` and ``prox`` (e.g.
    :class:`~uqaudit.priors.QuadraticPotential`). Potentials are recorded with
    the unsmoothed prior.
    """
    if not theta > 0:
        raise ValueError(f"theta must be positive, got {theta}")
    lik = Likelihood(y, m)
    step = cfg.resolve_step(lik.lipschitz + 1.0 / theta)
    drift = _MoreauDrift(lik, tv, theta)

    def potential(x):
        return lik.value(x) - tv.value(x)

    out = _langevin(drift, lik.y if x0 is None else x0, cfg, step, potential)
    out.info["prox_failures"] = drift.prox_failures
    if drift.prox_failures:
        log.warning("TV prox hit its iteration cap %d times", drift.prox_failures)
    return out


def sapg_tv(
    y,
    m,
    theta,
    lambda_bounds=(1e-3, 1e3),
    cfg=None,
    *,
    prior=None,
    n_iter=None,
    lam0=None,
    c=None,
    decay=0.8,
    average_fraction=0.25,
    x0=None,
):
    """Estimate the prior weight by maximum marginal likelihood, then sample.

    Interleaves one MYULA step with the stochastic approximation update
    ``lam <- clip(lam + g_k (n / (b lam) - R(x_k)))`` where ``R`` is the
    unweighted regulariser, ``b`` its degree of homogeneity (1 for TV) and
    ``g_k = c k^-decay``. The estimate is the mean of ``lam`` over the final
    ``average_fraction`` of iterations; a MYULA chain at that value follows.

    Returns ``(lambda_hat, ChainOutput)``.
    """
    cfg = cfg or ChainConfig()
    lo, hi = map(float, lambda_bounds)
    if not 0 < lo < hi:
        raise ValueError(f"lambda bounds must satisfy 0 < lo < hi, got {lambda_bounds}")
    prior = prior or TvPotential(1.0)
    lik = Likelihood(y, m)
    n = lik.y.size
    beta = prior.homogeneity
    c = 10.0 / n if c is None else c
    n_iter = n_iter or cfg.total_steps
    step = cfg.resolve_step(lik.lipschitz + 1.0 / theta)
    x = np.array(lik.y if x0 is None else x0, dtype=np.float64)
    if lam0 is None:
        reg = prior.regulariser(x)
        lam0 = n / (beta * reg) if reg > 0 else np.sqrt(lo * hi)
    lam = float(np.clip(lam0, lo, hi))

    rng = cfg.rng(0)
    noise = np.sqrt(2.0 * step)
    drift = _MoreauDrift(lik, prior.with_lam(lam), theta)
    trace = np.empty(n_iter)
    t0 = time.perf_counter()
    for k in range(1, n_iter + 1):
        drift.prior = prior.with_lam(lam)
        x = x + step * drift(x) + noise * rng.standard_normal(x.shape)
        if not np.isfinite(x).all():
            raise DivergedChainError(k)
        g = n / (beta * lam) - prior.regulariser(x)
        lam = float(np.clip(lam + c * k ** (-decay) * g, lo, hi))
        trace[k - 1] = lam
    tail = trace[int(np.floor((1.0 - average_fraction) * n_iter)) :]
    lam_hat = float(tail.mean())
    at_bound = bool(np.all(tail == lo) or np.all(tail == hi))
    if at_bound:
        warnings.warn(f"lambda pinned at a bound ({lam_hat:g}) over the averaging window", BoundarySolutionWarning)

    out = myula_tv_chain(lik.y, m, prior.with_lam(lam_hat), theta, dataclasses.replace(cfg, stream=(*cfg.stream, 1)), x0=x)
    out.wall_time = time.perf_counter() - t0
    out.info.update(lambda_hat=lam_hat, lambda_trace=trace, boundary=at_bound, sapg_prox_failures=drift.prox_failures)
    return lam_hat, out


# ---------------------------------------------------------------------------
# hierarchical GMRF Gibbs sampler
# ---------------------------------------------------------------------------


def sample_delta(x, prior, h, rng):
    """Draw the prior precision from Gamma(a + n/2, b + <x,(L+rI)x>/2)."""
    n = np.asarray(x).size
    return rng.gamma(h.a_delta + 0.5 * n, 1.0 / (h.b_delta + 0.5 * prior.quadratic_form(x)))


def sample_gamma(x, lik, h, rng):
    """Draw the noise precision from Gamma(a + n/2, b + ||y - Hx||^2/2)."""
    r = lik.y - lik.forward(x)
    return rng.gamma(h.a_gamma + 0.5 * r.size, 1.0 / (h.b_gamma + 0.5 * float(np.sum(r * r))))


def gibbs_gmrf(y, m, prior=None, h=None, cfg=None, *, delta0=None, gamma0=None, freeze=False):
    """Gibbs sampler for ``x, delta, gamma`` with a circulant GMRF prior.

    The ``x`` update draws from the Gaussian full conditional whose precision
    ``gamma |H|^2 + delta (L + r)`` is diagonal in the DFT basis. With
    ``freeze=True`` the hyperparameters stay at ``delta0`` / ``gamma0`` and the
    chain reduces to an exact Gaussian sampler (potentials are then recorded).
    """
    prior = prior or GmrfPrior()
    h = h or GibbsHyperPriors()
    cfg = cfg or ChainConfig()
    lik = Likelihood(y, m)
    shape = lik.y.shape
    hk = m.kernel.rtransfer(shape)
    h2 = np.abs(hk) ** 2
    spec = prior.spectrum(shape, real=True)
    yf_ht = np.conj(hk) * np.fft.rfft2(lik.y)

    gamma = 1.0 / m.noise_sigma**2 if gamma0 is None else float(gamma0)
    if delta0 is None:
        delta = lik.y.size / max(prior.quadratic_form(lik.y), 1e-12)
    else:
        delta = float(delta0)

    potential = None
    if freeze:
        frozen = prior.with_delta(delta)

        def potential(x):
            r = lik.y - lik.forward(x)
            return -0.5 * gamma * float(np.sum(r * r)) - frozen.potential(x)

    rng = cfg.rng()
    rec = _Recorder(cfg, shape, potential)
    deltas = np.empty(cfg.total_steps)
    gammas = np.empty(cfg.total_steps)
    t0 = time.perf_counter()
    x = lik.y
    for k in range(1, cfg.total_steps + 1):
        prec = gamma * h2 + delta * spec
        zf = np.fft.rfft2(rng.standard_normal(shape))
        x = np.fft.irfft2((gamma * yf_ht + zf * np.sqrt(prec)) / prec, s=shape)
        if not freeze:
            delta = sample_delta(x, prior, h, rng)
            gamma = sample_gamma(x, lik, h, rng)
        if not (np.isfinite(x).all() and np.isfinite(delta) and np.isfinite(gamma)):
            raise DivergedChainError(k)
        deltas[k - 1] = delta
        gammas[k - 1] = gamma
        if rec.offer(k, x):
            break
    return rec.output(t0, evaluator=potential, delta_trace=deltas, gamma_trace=gammas)


# ---------------------------------------------------------------------------
# plug-and-play ULA, CRR ULA, exact Gaussian draws
# ---------------------------------------------------------------------------

PNP_BOX = (-0.5, 1.5)
PNP_LAMBDA_PROJ = 1.0


def pnp_ula(y, m, denoiser, proj_box=PNP_BOX, cfg=None, lam_proj=PNP_LAMBDA_PROJ, x0=None):
    """ULA with the Tweedie score of ``denoiser`` as prior gradient, plus a
    pull ``(clip(x) - x) / lam_proj`` toward the box ``proj_box``.

    No potentials are recorded (the prior density is not available).
    """
    cfg = cfg or ChainConfig()
    lik = Likelihood(y, m)
    drift = pnp_drift(lik, denoiser, proj_box, lam_proj)
    step = cfg.resolve_step(lik.lipschitz + 1.0 / denoiser.epsilon + 1.0 / lam_proj)
    return _langevin(drift, lik.y if x0 is None else x0, cfg, step)


def pnp_drift(lik, denoiser, proj_box=PNP_BOX, lam_proj=PNP_LAMBDA_PROJ):
    lo, hi = proj_box
    if not lo <= hi:
        raise ValueError(f"empty projection box {proj_box}")
    if not lam_proj > 0:
        raise ValueError(f"lam_proj must be positive, got {lam_proj}")

    def drift(x):
        return lik.grad(x) + tweedie_score(x, denoiser) + (np.clip(x, lo, hi) - x) / lam_proj

    return drift


def crr_ula(y, m, crr, cfg=None, x0=None):
    """ULA on the posterior with a CRR prior (smooth, convex potential)."""
    cfg = cfg or ChainConfig()
    lik = Likelihood(y, m)
    step = cfg.resolve_step(lik.lipschitz + crr.lipschitz(lik.shape))

    def drift(x):
        return lik.grad(x) - crr.grad(x)

    def potential(x):
        return lik.value(x) - crr.potential(x)

    return _langevin(drift, lik.y if x0 is None else x0, cfg, step, potential)


def exact_gaussian_sampler(y, prior, m, cfg=None):
    """I.i.d. draws from the conjugate posterior (burn-in and thinning ignored).

    Potentials are the exact log posterior density, which equals
    ``log p(y|x) + log p(x)`` up to a constant.
    """
    cfg = cfg or ChainConfig()
    t0 = time.perf_counter()
    post = analytic_posterior(y, prior, m)
    draws = post.sample(cfg.rng(), cfg.n_samples)

    def potential(x):
        return float(post.log_density(x))

    return ChainOutput(
        samples=draws,
        potentials=post.log_density(draws),
        mean=draws.mean(axis=0),
        second_moment=(draws * draws).mean(axis=0),
        wall_time=time.perf_counter() - t0,
        evaluator=potential,
        info={"posterior": post},
    )
