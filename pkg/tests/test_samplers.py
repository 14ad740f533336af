import warnings

import numpy as np
import pytest

from uqaudit.errors import StepSizeError
from uqaudit.imaging import BlurKernel, ObservationModel, psnr, sample_observation
from uqaudit.oracle import GaussianPrior, analytic_posterior, random_rectangles
from uqaudit.priors import (
    CallableDenoiser,
    GaussianMMSEDenoiser,
    GmrfPrior,
    QuadraticPotential,
    TvPotential,
    builtin_crr,
)
from uqaudit.samplers import (
    BoundarySolutionWarning,
    ChainConfig,
    GibbsHyperPriors,
    Likelihood,
    crr_ula,
    exact_gaussian_sampler,
    gibbs_gmrf,
    myula_tv_chain,
    pnp_drift,
    pnp_ula,
    sample_delta,
    sapg_tv,
    ula_chain,
)
from uqaudit.streams import substream

IDENTITY = BlurKernel.identity()


def _rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def _check_contract(out, n):
    assert out.samples.shape[0] == n
    np.testing.assert_allclose(out.mean, out.samples.mean(axis=0), atol=1e-10)
    np.testing.assert_allclose(out.second_moment, (out.samples**2).mean(axis=0), atol=1e-10)


def _check_potentials(out, lik, prior_value):
    """Potential differences equal recomputed log-likelihood + log-prior differences."""
    a, b = out.samples[0], out.samples[-1]
    direct = (lik.value(a) - prior_value(a)) - (lik.value(b) - prior_value(b))
    assert out.potentials[0] - out.potentials[-1] == pytest.approx(direct, abs=1e-8)
    assert out.evaluator(a) == pytest.approx(out.potentials[0], abs=1e-10)


# --- ULA --------------------------------------------------------------------


def test_ula_random_walk_increments():
    cfg = ChainConfig(step_size=0.5, n_samples=100_000, seed=3)
    out = ula_chain(lambda x: np.zeros_like(x), np.zeros((1, 1)), cfg)
    inc = np.diff(out.samples[:, 0, 0])
    assert abs(inc.var() - 1.0) < 0.02


def test_ula_deterministic_and_seed_sensitive():
    cfg = ChainConfig(step_size=0.1, n_samples=200, seed=1, stream=(4, 2))
    a = ula_chain(lambda x: -x, np.zeros((2, 2)), cfg)
    b = ula_chain(lambda x: -x, np.zeros((2, 2)), cfg)
    c = ula_chain(lambda x: -x, np.zeros((2, 2)), cfg.with_stream(4, 3))
    assert np.array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples, c.samples)
    _check_contract(a, 200)


def test_burnin_and_thinning_counts():
    cfg = ChainConfig(step_size=0.1, n_burnin=7, n_samples=11, thinning=3)
    out = ula_chain(lambda x: -x, np.zeros((1, 1)), cfg)
    _check_contract(out, 11)
    assert cfg.total_steps == 7 + 33


def test_step_guard():
    with pytest.raises(StepSizeError):
        ula_chain(lambda x: -x, np.zeros((1, 1)), ChainConfig(step_size=1.5), lipschitz=1.0)
    m = ObservationModel(IDENTITY, 0.1)
    with pytest.raises(StepSizeError):
        crr_ula(np.zeros((4, 4)), m, builtin_crr(), ChainConfig(step_size=1.0))
    with pytest.raises(StepSizeError):
        pnp_ula(np.zeros((4, 4)), m, GaussianMMSEDenoiser(1, 0.1), cfg=ChainConfig(step_size=1.0))
    with pytest.raises(StepSizeError):
        myula_tv_chain(np.zeros((4, 4)), m, TvPotential(1.0), 0.1, ChainConfig(step_size=1.0))


# --- MYULA / SAPG -------------------------------------------------------------


def test_myula_vanishing_prior_matches_flat_posterior(rng):
    sigma = 0.1
    y = rng.random((6, 6))
    m = ObservationModel(IDENTITY, sigma)
    cfg = ChainConfig(step_size=0.01 * sigma**2, n_burnin=2000, n_samples=40_000, seed=2)
    out = myula_tv_chain(y, m, TvPotential(1e-9), 1.0, cfg)
    _check_contract(out, 40_000)
    assert _rel(out.mean, y) < 0.02
    assert abs(out.variance.mean() / sigma**2 - 1) < 0.02


def test_myula_quadratic_prox_matches_smoothed_gaussian(rng):
    sigma, q, theta = 0.2, 10.0, 0.01
    y = rng.random((4, 4))
    m = ObservationModel(IDENTITY, sigma)
    lik = Likelihood(y, m)
    cfg = ChainConfig(step_size=0.05 * sigma**2, n_burnin=1000, n_samples=60_000, seed=7)
    a = myula_tv_chain(y, m, QuadraticPotential(q), theta, cfg)
    qs = q / (1 + theta * q)
    b = ula_chain(lambda x: lik.grad(x) - qs * x, y, cfg)
    prec = 1 / sigma**2 + qs
    assert _rel(a.mean, b.mean) < 0.02
    assert abs(a.variance.mean() / b.variance.mean() - 1) < 0.02
    assert abs(a.variance.mean() * prec - 1) < 0.05
    _check_potentials(a, lik, QuadraticPotential(q).value)


def test_myula_improves_on_observation():
    x = random_rectangles((16, 16), 1, 3).items[0]
    m = ObservationModel(BlurKernel.uniform(3), 0.01)
    y = sample_observation(x, m, substream(8))
    out = myula_tv_chain(y, m, TvPotential(20.0), 1e-4, ChainConfig(n_burnin=500, n_samples=2000, seed=1))
    assert out.info["prox_failures"] == 0 or out.info["prox_failures"] < 0.01 * 2500
    assert psnr(x, out.mean) > psnr(x, y)


def _quadratic_problem(lam_true=2.0, sigma=0.3, n_side=16, seed=5):
    rng = substream(seed)
    x = rng.standard_normal((n_side, n_side)) / np.sqrt(lam_true)
    y = x + sigma * rng.standard_normal(x.shape)
    lam_ml = 1.0 / max(np.mean(y * y) - sigma**2, 1e-12)
    return y, ObservationModel(IDENTITY, sigma), lam_ml


def test_sapg_quadratic_recovers_ml():
    y, m, lam_ml = _quadratic_problem()
    cfg = ChainConfig(n_samples=50, seed=1)
    lam, out = sapg_tv(y, m, 0.01, (1e-3, 1e3), cfg, prior=QuadraticPotential(1.0), n_iter=10_000)
    assert abs(lam / lam_ml - 1) < 0.10
    assert out.info["lambda_hat"] == lam and not out.info["boundary"]


def test_sapg_seed_stability():
    y, m, _ = _quadratic_problem()
    lams = [
        sapg_tv(y, m, 0.01, (1e-3, 1e3), ChainConfig(n_samples=10, seed=s), prior=QuadraticPotential(1.0), n_iter=10_000)[0]
        for s in (1, 2)
    ]
    assert abs(lams[0] / lams[1] - 1) < 0.05


def test_sapg_boundary_warning():
    y, m, lam_ml = _quadratic_problem()
    assert lam_ml < 10
    with pytest.warns(BoundarySolutionWarning):
        lam, out = sapg_tv(
            y, m, 0.01, (10.0, 100.0), ChainConfig(n_samples=10), prior=QuadraticPotential(1.0), n_iter=2000
        )
    assert lam == 10.0 and out.info["boundary"]


def test_sapg_tv_runs_and_is_deterministic():
    x = random_rectangles((8, 8), 1, 1).items[0]
    m = ObservationModel(BlurKernel.uniform(3), 0.05)
    y = sample_observation(x, m, substream(2))
    cfg = ChainConfig(n_samples=100, seed=3)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BoundarySolutionWarning)
        a = sapg_tv(y, m, 0.01, cfg=cfg, n_iter=500)
        b = sapg_tv(y, m, 0.01, cfg=cfg, n_iter=500)
    assert a[0] == b[0] and np.array_equal(a[1].samples, b[1].samples)
    _check_potentials(a[1], Likelihood(y, m), TvPotential(a[0]).value)


# --- Gibbs --------------------------------------------------------------------


def _gmrf_as_gaussian(shape, delta, ridge=1e-5):
    return GaussianPrior(np.zeros(shape), 1.0 / (delta * GmrfPrior(delta, ridge).spectrum(shape)))


def test_gibbs_frozen_matches_analytic(rng):
    shape = (8, 8)
    m = ObservationModel(BlurKernel.uniform(3), 0.05)
    y = rng.random(shape)
    delta = 20.0
    out = gibbs_gmrf(y, m, cfg=ChainConfig(n_samples=5000, seed=2), delta0=delta, freeze=True)
    post = analytic_posterior(y, _gmrf_as_gaussian(shape, delta), m)
    sd = np.sqrt(post.pixel_variance)
    assert np.max(np.abs(out.mean - post.mean)) < 5 * sd / np.sqrt(5000)
    mode_var = np.var(np.fft.fft2(out.samples), axis=0)
    assert np.max(np.abs(mode_var / (post.mode_variance * y.size) - 1)) < 0.15
    _check_contract(out, 5000)
    _check_potentials(out, Likelihood(y, m), GmrfPrior(delta).potential)


def test_gibbs_noise_free_mean_is_observation(rng):
    y = rng.random((6, 6))
    m = ObservationModel(IDENTITY, 1e-4)
    out = gibbs_gmrf(y, m, cfg=ChainConfig(n_samples=200), delta0=1.0, gamma0=1e12, freeze=True)
    np.testing.assert_allclose(out.mean, y, atol=1e-5)


def test_delta_conditional_mean(rng):
    x = rng.standard_normal((6, 6))
    p, h = GmrfPrior(), GibbsHyperPriors()
    r = substream(4)
    draws = np.array([sample_delta(x, p, h, r) for _ in range(100_000)])
    expect = (h.a_delta + x.size / 2) / (h.b_delta + p.quadratic_form(x) / 2)
    assert abs(draws.mean() / expect - 1) < 0.01


def test_gibbs_hierarchical_runs_and_traces(rng):
    y = rng.random((8, 8))
    m = ObservationModel(BlurKernel.uniform(3), 0.05)
    out = gibbs_gmrf(y, m, cfg=ChainConfig(n_burnin=50, n_samples=200, seed=9))
    assert out.potentials is None and out.evaluator is None
    assert np.all(out.info["delta_trace"] > 0) and np.all(out.info["gamma_trace"] > 0)
    _check_contract(out, 200)


# --- PnP, CRR, exact -----------------------------------------------------------


def test_pnp_drift_clamp_arithmetic():
    lik = Likelihood(np.full((1, 1), 5.0), ObservationModel(IDENTITY, 1.0))
    drift = pnp_drift(lik, CallableDenoiser(lambda z: z, 1.0), (0.0, 1.0), 2.0)
    assert drift(np.full((1, 1), 5.0))[0, 0] == pytest.approx((1.0 - 5.0) / 2.0)


def test_pnp_identity_denoiser_is_flat_prior(rng):
    sigma = 0.1
    y = rng.random((4, 4))
    m = ObservationModel(IDENTITY, sigma)
    cfg = ChainConfig(step_size=0.02 * sigma**2, n_burnin=1000, n_samples=40_000, seed=5)
    out = pnp_ula(y, m, CallableDenoiser(lambda z: z, 1.0), (-1e3, 1e3), cfg)
    assert _rel(out.mean, y) < 0.02
    assert abs(out.variance.mean() / sigma**2 - 1) < 0.03
    assert out.potentials is None


def test_crr_chain_potentials(rng):
    y = rng.random((6, 6))
    m = ObservationModel(BlurKernel.uniform(3), 0.05)
    crr = builtin_crr(lam=5.0)
    out = crr_ula(y, m, crr, ChainConfig(n_burnin=100, n_samples=300, seed=1))
    _check_contract(out, 300)
    _check_potentials(out, Likelihood(y, m), crr.potential)


def test_exact_sampler_identity_mean(rng):
    s2, sigma = 0.09, 0.3
    y = rng.random((4, 4))
    out = exact_gaussian_sampler(y, GaussianPrior.isotropic((4, 4), s2), ObservationModel(IDENTITY, sigma))
    np.testing.assert_allclose(out.info["posterior"].mean, s2 / (s2 + sigma**2) * y, atol=1e-12)


def test_exact_sampler_mode_covariance(rng):
    shape = (4, 4)
    m = ObservationModel(BlurKernel.uniform(3), 0.05)
    prior = GaussianPrior.smooth_field(shape)
    y = rng.random(shape)
    out = exact_gaussian_sampler(y, prior, m, ChainConfig(n_samples=100_000, seed=1))
    post = out.info["posterior"]
    C = np.cov(out.samples.reshape(100_000, -1).T)
    np.testing.assert_allclose(np.diag(C), np.diag(post.covariance()), rtol=0.03)
    mode_var = np.var(np.fft.fft2(out.samples), axis=0)
    np.testing.assert_allclose(mode_var, post.mode_variance * y.size, rtol=0.03)
    _check_potentials(out, Likelihood(y, m), prior.neg_log_density)
