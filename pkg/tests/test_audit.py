import numpy as np
import pytest

from uqaudit.audit import (
    AuditConfig,
    CoverageReport,
    classify,
    ell_hat,
    run_audit,
    trial_schedule,
    wilson_interval,
)
from uqaudit.errors import AuditError, DivergedChainError, UnsupportedRegionError
from uqaudit.imaging import BlurKernel, ObservationModel
from uqaudit.samplers import ChainConfig, ChainOutput, exact_gaussian_sampler
from uqaudit.oracle import GaussianPrior, synthetic_dataset

M = ObservationModel(BlurKernel.uniform(3), 0.05)


def _report(alphas, misses, n, level=0.95):
    return CoverageReport(tuple(alphas), np.asarray(misses), n, 0, level, (0, 0), (0, 0), 0.0)


def test_wilson_examples():
    lo, hi = wilson_interval(0, 100, 0.95)
    assert lo == 0.0 and hi == pytest.approx(0.0370, abs=5e-5)
    assert wilson_interval(100, 100)[1] == 1.0
    lo, hi = wilson_interval(5000, 10000)
    assert (lo + hi) / 2 == pytest.approx(0.5, abs=1e-12)
    assert (hi - lo) / 2 == pytest.approx(1.959964 / (2 * np.sqrt(10000)), rel=1e-3)


def test_wilson_rejects_bad_counts():
    with pytest.raises(ValueError):
        wilson_interval(5, 3)
    with pytest.raises(ValueError):
        wilson_interval(0, 0)


def test_ell_hat_arithmetic():
    r = np.zeros(100, int)
    r[:15] = 1
    assert ell_hat(0.1, r) == pytest.approx(-0.05)
    rep = _report([0.1], [15], 100)
    assert rep.observed_coverage[0] == pytest.approx(0.85) and rep.ell_hat[0] == pytest.approx(-0.05)


def test_ell_hat_synthetic_patterns(rng):
    for _ in range(20):
        a = float(rng.uniform(0.01, 0.99))
        r = rng.integers(0, 2, size=int(rng.integers(1, 500)))
        assert ell_hat(a, r) == a - r.sum() / r.size


def test_classify_examples():
    alphas = [0.2, 0.15, 0.1, 0.05, 0.025, 0.01, 0.001][::-1]
    # at alpha = 0.001 the Wilson band only excludes 0 once N exceeds about 3840
    assert all(classify(_report(alphas, [0] * 7, 5000), a) == "conservative" for a in alphas)
    assert classify(_report(alphas, [0] * 7, 50), 0.001) == "calibrated"
    assert classify(_report([0.2], [50], 50), 0.2) == "overconfident"
    assert classify(_report([0.5], [2], 4), 0.5) == "calibrated"


def test_schedule_modes():
    cyc = trial_schedule(5, AuditConfig(n_trials=10, seed=1))
    assert sorted(cyc[:5]) == list(range(5)) and cyc[:5] == cyc[5:]
    rep = trial_schedule(5, AuditConfig(n_trials=50, sampling="with-replacement", seed=1))
    assert set(rep) <= set(range(5)) and len(rep) == 50


def test_config_validation_collects_problems():
    with pytest.raises(ValueError) as e:
        AuditConfig(alphas=(0.5, 0.1), region="cube", n_trials=0)
    msg = str(e.value)
    assert "increasing" in msg and "region" in msg and "n_trials" in msg


def _dataset(n=6):
    return synthetic_dataset(GaussianPrior.smooth_field((6, 6)), n, 3)


def test_degenerate_truth_sampler_gives_ell_equal_alpha():
    ds = _dataset()
    cfg = AuditConfig(alphas=(0.01, 0.1, 0.5, 0.9), n_trials=12, region="ball")
    sched = trial_schedule(len(ds), cfg)

    def run(y, m, seed, stream):
        x = ds[sched[stream[0]]]
        s = np.repeat(x[None], 4, axis=0)
        return ChainOutput(s, None, x.copy(), x * x, 0.0)

    rep = run_audit(ds, run, M, cfg)
    np.testing.assert_array_equal(rep.ell_hat, cfg.alphas)
    assert all(classify(rep, a) == "conservative" for a in cfg.alphas if a > 0.3)


def test_hpd_needs_potentials():
    ds = _dataset(2)

    def run(y, m, seed, stream):
        return ChainOutput(np.zeros((3, 6, 6)), None, np.zeros((6, 6)), np.zeros((6, 6)), 0.0)

    with pytest.raises(UnsupportedRegionError):
        run_audit(ds, run, M, AuditConfig(n_trials=2, region="hpd"))


def test_failed_chains_excluded_then_fatal():
    ds = _dataset(4)
    prior = GaussianPrior.smooth_field((6, 6))

    def flaky(every):
        def run(y, m, seed, stream):
            if stream[0] % every == 0:
                raise DivergedChainError(1)
            return exact_gaussian_sampler(y, prior, m, ChainConfig(n_samples=50, seed=seed, stream=stream))

        return run

    rep = run_audit(ds, flaky(25), M, AuditConfig(alphas=(0.1,), n_trials=50))
    assert rep.n_failed == 2 and rep.n_used == 48
    with pytest.raises(AuditError):
        run_audit(ds, flaky(5), M, AuditConfig(alphas=(0.1,), n_trials=50))


def test_threads_do_not_change_results():
    ds = _dataset(5)
    prior = GaussianPrior.smooth_field((6, 6))

    def run(y, m, seed, stream):
        return exact_gaussian_sampler(y, prior, m, ChainConfig(n_samples=100, seed=seed, stream=stream))

    cfg = AuditConfig(alphas=(0.05, 0.5), n_trials=30, seed=9)
    records = []
    a = run_audit(ds, run, M, cfg, on_record=records.append)
    b = run_audit(ds, run, M, cfg, threads=4)
    assert a.to_dict() == b.to_dict()
    assert [r.trial for r in records] == list(range(30))
    assert set(records[0].to_dict()) >= {"trial", "item_id", "seed_path", "psnr_mean", "psnr_obs", "wall_ms", "misses"}


def test_per_item_models():
    ds = _dataset(3)
    prior = GaussianPrior.smooth_field((6, 6))
    models = [M.with_sigma(s) for s in (0.01, 0.05, 0.1)]

    def run(y, m, seed, stream):
        return exact_gaussian_sampler(y, prior, m, ChainConfig(n_samples=50, seed=seed, stream=stream))

    rep = run_audit(ds, run, models, AuditConfig(alphas=(0.5,), n_trials=6))
    assert rep.n_used == 6
    with pytest.raises(ValueError):
        run_audit(ds, run, models[:2], AuditConfig(alphas=(0.5,), n_trials=6))
