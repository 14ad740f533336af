"""Wiring from a :class:`~uqaudit.config.RunConfig` to data, models and samplers."""

from __future__ import annotations

import numpy as np

from .imaging import BlurKernel, ObservationModel, load_dataset, sigma_from_bsnr
from .oracle import GaussianPrior, random_rectangles, synthetic_dataset
from .priors import DenoiserSpec, GmrfPrior, builtin_crr, load_crr
from .samplers import (
    ChainConfig,
    GibbsHyperPriors,
    Likelihood,
    crr_ula,
    exact_gaussian_sampler,
    gibbs_gmrf,
    pnp_ula,
    sapg_tv,
)


def build_kernel(obs):
    if obs["kernel"] == "identity":
        return BlurKernel.identity()
    return BlurKernel.uniform(obs["kernel_size"])


def dataset_prior(rc, shape):
    ds = rc.dataset
    return GaussianPrior.smooth_field(shape, pixel_std=ds["pixel_std"], mean=ds["mean"])


def build_dataset(rc):
    ds = rc.dataset
    if ds["source"] != "synthetic":
        return load_dataset(ds["source"])
    shape = (ds["height"], ds["width"])
    if ds["generator"] == "rectangles":
        return random_rectangles(shape, ds["n_items"], ds["seed"])
    return synthetic_dataset(dataset_prior(rc, shape), ds["n_items"], ds["seed"])


def build_models(rc, dataset):
    """One model, or one per item when the noise level is given as a BSNR."""
    kernel = build_kernel(rc.observation)
    sigma = rc.observation["sigma"]
    if sigma is not None:
        return ObservationModel(kernel, sigma)
    b = rc.observation["bsnr_db"]
    base = ObservationModel(kernel, 1.0)
    return [base.with_sigma(sigma_from_bsnr(base.forward(x), b)) for x in dataset.items]


def sigma_from_observed_bsnr(y, bsnr_db):
    """Noise level implied by a BSNR when only ``y = Hx + w`` is known.

    ``Var(y) = Var(Hx) + s^2`` and ``Var(Hx) = 10^(b/10) s^2`` give
    ``s^2 = Var(y) / (10^(b/10) + 1)``.
    """
    return float(np.sqrt(np.var(y) / (10.0 ** (bsnr_db / 10.0) + 1.0)))


def chain_config(params, seed=0, stream=()):
    return ChainConfig(
        step_size=params.get("step_size"),
        n_burnin=params.get("n_burnin") or 0,
        n_samples=params["n_samples"],
        thinning=params.get("thinning") or 1,
        seed=seed,
        stream=tuple(stream),
    )


def make_sampler(rc, shape):
    """Return ``run(y, m, seed, stream) -> ChainOutput`` for the configured method.

    The returned callable has a ``close()`` for methods holding an external
    connection, and the TV method stores its last estimate in ``last_lambda``.
    """
    p = rc.method_params
    meth = rc.method

    if meth == "exact-gaussian":
        if p["prior"] == "isotropic":
            prior = GaussianPrior.isotropic(shape, p["prior_variance"], p["prior_mean"])
        else:
            prior = dataset_prior(rc, shape)
        prior = prior.scaled(p["prior_scale"])

        def run(y, m, seed, stream):
            return exact_gaussian_sampler(y, prior, m, chain_config(p, seed, stream))

    elif meth == "gibbs-gmrf":
        gprior = GmrfPrior(dc_ridge=p["dc_ridge"])
        hyper = GibbsHyperPriors(p["a_delta"], p["b_delta"], p["a_gamma"], p["b_gamma"])

        def run(y, m, seed, stream):
            return gibbs_gmrf(y, m, gprior, hyper, chain_config(p, seed, stream))

    elif meth == "tv-sapg":
        bounds = (p["lambda_min"], p["lambda_max"])

        def run(y, m, seed, stream):
            theta = p["theta"] or 1.0 / Likelihood(y, m).lipschitz
            lam, out = sapg_tv(y, m, theta, bounds, chain_config(p, seed, stream), n_iter=p["n_iter"], c=p["c"])
            run.last_lambda = lam
            return out

        run.last_lambda = None

    elif meth == "crr":
        crr = load_crr(p["weights"]) if p["weights"] else builtin_crr()
        crr = crr.with_lam(p["lambda"])

        def run(y, m, seed, stream):
            return crr_ula(y, m, crr, chain_config(p, seed, stream))

    elif meth == "pnp-ula":
        denoiser = DenoiserSpec(p["denoiser"], p["epsilon"], p["s"], p["endpoint"]).build()
        box = (p["box_low"], p["box_high"])

        def run(y, m, seed, stream):
            return pnp_ula(y, m, denoiser, box, chain_config(p, seed, stream), p["lambda_proj"])

        if hasattr(denoiser, "close"):
            run.close = denoiser.close

    elif meth == "external":
        from .protocol import ExternalSampler

        ext = ExternalSampler(p["endpoint"], p["n_samples"])

        def run(y, m, seed, stream):
            return ext(y, m, seed, stream)

        run.close = ext.close
    else:  # pragma: no cover - validated by the config loader
        raise ValueError(meth)

    if not hasattr(run, "close"):
        run.close = lambda: None
    return run

