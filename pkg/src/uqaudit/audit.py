"""Monte Carlo coverage audit of a Bayesian imaging method.

For each trial: pick a test image ``x``, simulate ``y`` from the
observation model, run the method once, and for every level ``alpha`` check
whether ``x`` falls in the credible region built from that single chain.
The signed error estimate is ``ell_hat = alpha - misses / N``: positive
means conservative, negative overconfident.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import norm

from . import __version__
from .errors import AuditError, DivergedChainError, UnsupportedRegionError
from .imaging import ObservationModel, psnr, sample_observation
from .regions import ball_radii, hpd_thresholds
from .streams import substream

log = logging.getLogger(__name__)

DEFAULT_ALPHAS = (0.001, 0.01, 0.025, 0.05, 0.1, 0.15, 0.2, 0.5, 0.9, 0.99)
TABLE_TARGETS = (0.8, 0.85, 0.9, 0.95, 0.975, 0.99, 0.999)
MAX_FAILURE_FRACTION = 0.05


def wilson_interval(misses, n, level=0.95):
    """Wilson score interval for a binomial proportion ``misses / n``."""
    if n < 1 or not 0 <= misses <= n:
        raise ValueError(f"invalid counts: misses={misses}, n={n}")
    if not 0 < level < 1:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    z = norm.ppf(0.5 + 0.5 * level)
    p = misses / n
    z2n = z * z / n
    denom = 1.0 + z2n
    center = (p + 0.5 * z2n) / denom
    half = z * math.sqrt(p * (1.0 - p) / n + z2n / (4.0 * n)) / denom
    lo = 0.0 if misses == 0 else max(0.0, center - half)
    hi = 1.0 if misses == n else min(1.0, center + half)
    return lo, hi


@dataclass(frozen=True)
class AuditConfig:
    alphas: tuple = DEFAULT_ALPHAS
    n_trials: int = 2500
    region: str = "ball"
    sampling: str = "cyclic"
    seed: int = 0
    level: float = 0.95

    def __post_init__(self):
        a = tuple(float(v) for v in self.alphas)
        object.__setattr__(self, "alphas", a)
        problems = []
        if not a:
            problems.append("alpha grid is empty")
        if any(not 0 < v < 1 for v in a):
            problems.append("every alpha must lie in (0, 1)")
        if any(b <= c for c, b in zip(a, a[1:])):
            problems.append("alphas must be strictly increasing")
        if self.n_trials < 1:
            problems.append("n_trials must be >= 1")
        if self.region not in ("hpd", "ball"):
            problems.append(f"region must be 'hpd' or 'ball', got {self.region!r}")
        if self.sampling not in ("cyclic", "with-replacement"):
            problems.append(f"sampling must be 'cyclic' or 'with-replacement', got {self.sampling!r}")
        if problems:
            raise ValueError("; ".join(problems))


@dataclass
class TrialRecord:
    trial: int
    item: int
    item_id: str
    seed_path: tuple
    misses: tuple = ()
    psnr_mean: float = float("nan")
    psnr_obs: float = float("nan")
    wall_ms: float = 0.0
    failed: bool = False
    error: str = ""

    def to_dict(self):
        return {
            "trial": self.trial,
            "item_id": self.item_id,
            "seed_path": list(self.seed_path),
            "psnr_mean": self.psnr_mean,
            "psnr_obs": self.psnr_obs,
            "wall_ms": self.wall_ms,
            "misses": list(self.misses),
            "failed": self.failed,
        }


@dataclass
class CoverageReport:
    alphas: tuple
    misses: np.ndarray
    n_used: int
    n_failed: int
    level: float
    psnr_mean: tuple
    psnr_obs: tuple
    wall_time_mean: float
    config: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    @property
    def target_coverage(self):
        return 1.0 - np.asarray(self.alphas)

    @property
    def miss_fraction(self):
        return np.asarray(self.misses) / self.n_used

    @property
    def observed_coverage(self):
        return 1.0 - self.miss_fraction

    @property
    def ell_hat(self):
        return np.asarray(self.alphas) - self.miss_fraction

    def wilson(self, level=None):
        """Per-alpha Wilson interval on the observed coverage."""
        lv = self.level if level is None else level
        iv = [wilson_interval(int(k), self.n_used, lv) for k in self.misses]
        return np.array([[1.0 - hi, 1.0 - lo] for lo, hi in iv])

    def ell_interval(self, alpha, level=None):
        i = self.index(alpha)
        lo, hi = self.wilson(level)[i]
        t = 1.0 - self.alphas[i]
        return lo - t, hi - t

    def index(self, alpha):
        for i, a in enumerate(self.alphas):
            if abs(a - alpha) <= 1e-12:
                return i
        raise KeyError(f"alpha {alpha} not in the report grid")

    def rows(self):
        w = self.wilson()
        out = []
        for i, a in enumerate(self.alphas):
            out.append({
                "alpha": a,
                "target_coverage": 1.0 - a,
                "misses": int(self.misses[i]),
                "observed_coverage": float(self.observed_coverage[i]),
                "ell_hat": float(self.ell_hat[i]),
                "wilson_low": float(w[i, 0]),
                "wilson_high": float(w[i, 1]),
                "verdict": classify(self, a),
            })
        return out

    def to_dict(self):
        """Deterministic content only (wall-clock timings are excluded)."""
        return {
            "schema_version": 1,
            "software_version": __version__,
            "config": self.config,
            "provenance": self.provenance,
            "n_used": self.n_used,
            "n_failed": self.n_failed,
            "level": self.level,
            "rows": self.rows(),
            "psnr": {
                "mean_estimate": list(self.psnr_mean),
                "observation": list(self.psnr_obs),
            },
        }


def classify(report, alpha, level=None):
    lo, hi = report.ell_interval(alpha, level)
    if lo > 0:
        return "conservative"
    if hi < 0:
        return "overconfident"
    return "calibrated"


def ell_hat(alpha, misses):
    """``alpha - sum(r) / N`` for a 0/1 miss vector ``misses``."""
    r = np.asarray(misses)
    return alpha - r.sum() / r.size


def trial_schedule(n_items, cfg):
    """Dataset index used by each trial."""
    if cfg.sampling == "cyclic":
        perm = substream(cfg.seed, 0).permutation(n_items)
        return [int(perm[t % n_items]) for t in range(cfg.n_trials)]
    return [int(substream(cfg.seed, 0, t).integers(n_items)) for t in range(cfg.n_trials)]


def _misses(chain, x, alphas, region):
    if region == "hpd":
        if chain.potentials is None or chain.evaluator is None:
            raise UnsupportedRegionError("HPD regions need a sampler that records potentials")
        thr = hpd_thresholds(chain.potentials, alphas)
        return tuple(int(v) for v in (chain.evaluator(x) < thr))
    center, radii = ball_radii(chain.samples, alphas, center=chain.mean)
    d = float(np.linalg.norm(x - center))
    return tuple(int(v) for v in (d > radii))


def _mean_std(values):
    if not values:
        return (float("nan"), float("nan"))
    v = np.asarray(values)
    return (float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0)


def run_audit(dataset, sampler, model, cfg, *, threads=1, on_record=None, provenance=None):
    """Run the coverage audit.

    Parameters
    ----------
    dataset : Dataset
        Test images, all of one shape.
    sampler : callable
        ``sampler(y, model, seed, stream) -> ChainOutput``; must draw all of
        its randomness from the substream ``(seed, *stream)``.
    model : ObservationModel or sequence of ObservationModel
        One model for all items, or one per dataset item.
    cfg : AuditConfig
    threads : int
        Worker threads; results do not depend on this.
    on_record : callable, optional
        Called with every :class:`TrialRecord`, in trial order.
    """
    if len(dataset.shapes) != 1:
        raise ValueError(f"dataset images differ in shape: {sorted(dataset.shapes)}")
    models = [model] * len(dataset) if isinstance(model, ObservationModel) else list(model)
    if len(models) != len(dataset):
        raise ValueError("need one observation model per dataset item")
    schedule = trial_schedule(len(dataset), cfg)
    alphas = cfg.alphas

    def one(t):
        i = schedule[t]
        x = dataset[i]
        m = models[i]
        rec = TrialRecord(t, i, dataset.labels[i], (cfg.seed, t, 1))
        t0 = time.perf_counter()
        y = sample_observation(x, m, substream(cfg.seed, t, 0))
        try:
            chain = sampler(y, m, cfg.seed, (t, 1))
        except DivergedChainError as exc:
            rec.failed, rec.error = True, str(exc)
            return rec
        rec.misses = _misses(chain, x, alphas, cfg.region)
        rec.psnr_mean = psnr(x, chain.mean)
        rec.psnr_obs = psnr(x, y)
        rec.wall_ms = 1000.0 * (time.perf_counter() - t0)
        return rec

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(one, range(cfg.n_trials)))
    else:
        records = [one(t) for t in range(cfg.n_trials)]

    counts = np.zeros(len(alphas), dtype=np.int64)
    ok = [r for r in records if not r.failed]
    for r in records:
        if on_record is not None:
            on_record(r)
    for r in ok:
        counts += np.asarray(r.misses, dtype=np.int64)
    n_failed = len(records) - len(ok)
    if n_failed:
        log.warning("%d of %d trials failed and were excluded", n_failed, len(records))
    if n_failed > MAX_FAILURE_FRACTION * len(records) or not ok:
        raise AuditError(f"{n_failed} of {len(records)} trials failed (limit {MAX_FAILURE_FRACTION:.0%})")

    return CoverageReport(
        alphas=alphas,
        misses=counts,
        n_used=len(ok),
        n_failed=n_failed,
        level=cfg.level,
        psnr_mean=_mean_std([r.psnr_mean for r in ok]),
        psnr_obs=_mean_std([r.psnr_obs for r in ok]),
        wall_time_mean=float(np.mean([r.wall_ms for r in ok])) / 1000.0,
        config={k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(cfg).items()},
        provenance=dict(provenance or {}),
    )
