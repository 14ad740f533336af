"""Run configuration: an INI file with one section per concern.

Example::

    [experiment]
    name = oracle-selftest
    output_dir = out/oracle

    [dataset]
    source = synthetic          ; or a directory of PNG/PGM files
    generator = gaussian-smooth ; gaussian-smooth | rectangles
    n_items = 2000
    height = 16
    width = 16

    [observation]
    kernel = uniform            ; uniform | identity
    kernel_size = 3
    sigma = 0.02                ; or bsnr_db = 30 (not both)

    [method]
    name = exact-gaussian

    [audit]
    alphas = 0.02, 0.05, 0.1, 0.2, 0.5
    n_trials = 2000
    region = ball

Per-method parameters live in a section named after the method. Every key
and its default is listed in :data:`DEFAULTS`. ``UQAUDIT_OUT`` overrides
the output directory.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

METHODS = ("gibbs-gmrf", "tv-sapg", "crr", "pnp-ula", "exact-gaussian", "external")
OUT_ENV = "UQAUDIT_OUT"

DEFAULT_REGION = {
    "gibbs-gmrf": "ball",
    "tv-sapg": "hpd",
    "crr": "hpd",
    "pnp-ula": "ball",
    "exact-gaussian": "ball",
    "external": "ball",
}

DEFAULTS = {
    "experiment": {"name": "audit", "output_dir": "uqaudit-out"},
    "dataset": {
        "source": "synthetic",
        "generator": "gaussian-smooth",
        "n_items": "100",
        "height": "16",
        "width": "16",
        "pixel_std": "0.15",
        "mean": "0.5",
        "seed": "1",
    },
    "observation": {"kernel": "uniform", "kernel_size": "3", "sigma": "", "bsnr_db": ""},
    "method": {"name": "exact-gaussian", "label": ""},
    "audit": {
        "alphas": "0.001, 0.01, 0.025, 0.05, 0.1, 0.15, 0.2, 0.5, 0.9, 0.99",
        "n_trials": "2500",
        "region": "",
        "sampling": "cyclic",
        "seed": "0",
        "threads": "1",
        "level": "0.95",
    },
    "exact-gaussian": {"prior": "dataset", "prior_scale": "1.0", "prior_variance": "", "prior_mean": "0.0", "n_samples": "2000"},
    "gibbs-gmrf": {
        "a_delta": "1e-3", "b_delta": "1e-3", "a_gamma": "1e-3", "b_gamma": "1e-3", "dc_ridge": "1e-5",
        "n_samples": "20000", "n_burnin": "4000", "thinning": "1",
    },
    "tv-sapg": {
        "theta": "", "lambda_min": "1e-3", "lambda_max": "1e3", "n_iter": "", "c": "", "step_size": "",
        "n_samples": "20000", "n_burnin": "4000", "thinning": "1",
    },
    "crr": {"weights": "", "lambda": "10.0", "step_size": "", "n_samples": "40000", "n_burnin": "8000", "thinning": "1"},
    "pnp-ula": {
        "denoiser": "builtin-smoothing", "epsilon": "0.01", "s": "", "endpoint": "",
        "box_low": "-0.5", "box_high": "1.5", "lambda_proj": "1.0", "step_size": "",
        "n_samples": "50000", "n_burnin": "10000", "thinning": "1",
    },
    "external": {"endpoint": "", "n_samples": "100"},
}


@dataclass
class RunConfig:
    name: str
    output_dir: Path
    dataset: dict
    observation: dict
    method: str
    method_params: dict
    audit: dict
    label: str = ""
    source_path: Path | None = None
    extra: dict = field(default_factory=dict)

    def echo(self):
        """JSON-safe summary stored in report provenance."""
        return {
            "name": self.name,
            "method": self.method,
            "label": self.label or self.method,
            "dataset": self.dataset,
            "observation": self.observation,
            "method_params": self.method_params,
        }


def describe_defaults():
    lines = []
    for sec, items in DEFAULTS.items():
        lines.append(f"[{sec}]")
        for k, v in items.items():
            lines.append(f"  {k} = {v if v != '' else '(unset)'}")
    return "\n".join(lines)


def _floats(text):
    return [float(t) for t in text.replace(";", ",").split(",") if t.strip()]


def load_config(path=None, *, text=None, method=None, seed=None, threads=None, out=None):
    """Parse and validate; raises :class:`ConfigError` listing every problem."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.read_dict(DEFAULTS)
    if text is not None:
        cp.read_string(text)
    elif path is not None:
        with open(path, encoding="utf-8") as f:
            cp.read_file(f)
    problems = []

    def get(sec, key, conv=str):
        raw = cp.get(sec, key, fallback="").strip()
        if raw == "":
            return None
        try:
            return conv(raw)
        except ValueError:
            problems.append(f"{sec}.{key}: cannot parse {raw!r}")
            return None

    known = set(DEFAULTS)
    for sec in cp.sections():
        if sec not in known:
            problems.append(f"unknown section [{sec}]")
            continue
        for key in cp[sec]:
            if key not in DEFAULTS[sec]:
                problems.append(f"unknown key {sec}.{key}")

    meth = method or get("method", "name")
    if meth not in METHODS:
        problems.append(f"method.name: unknown method {meth!r} (choose from {', '.join(METHODS)})")

    ds = {
        "source": get("dataset", "source"),
        "generator": get("dataset", "generator"),
        "n_items": get("dataset", "n_items", int),
        "height": get("dataset", "height", int),
        "width": get("dataset", "width", int),
        "pixel_std": get("dataset", "pixel_std", float),
        "mean": get("dataset", "mean", float),
        "seed": get("dataset", "seed", int),
    }
    if ds["source"] == "synthetic":
        if ds["generator"] not in ("gaussian-smooth", "rectangles"):
            problems.append(f"dataset.generator: unknown generator {ds['generator']!r}")
        for k in ("n_items", "height", "width"):
            if ds[k] is not None and ds[k] < 1:
                problems.append(f"dataset.{k} must be >= 1")
    elif ds["source"] and path is not None and not Path(ds["source"]).is_absolute():
        ds["source"] = str((Path(path).parent / ds["source"]).resolve())

    obs = {
        "kernel": get("observation", "kernel"),
        "kernel_size": get("observation", "kernel_size", int),
        "sigma": get("observation", "sigma", float),
        "bsnr_db": get("observation", "bsnr_db", float),
    }
    if obs["sigma"] is not None and obs["bsnr_db"] is not None:
        problems.append("observation.sigma and observation.bsnr_db are mutually exclusive; set only one")
    if obs["sigma"] is None and obs["bsnr_db"] is None:
        problems.append("observation: set one of observation.sigma or observation.bsnr_db")
    if obs["sigma"] is not None and not obs["sigma"] > 0:
        problems.append("observation.sigma must be positive")
    if obs["kernel"] not in ("uniform", "identity"):
        problems.append(f"observation.kernel: unknown kernel {obs['kernel']!r}")
    if obs["kernel_size"] is not None and (obs["kernel_size"] < 1 or obs["kernel_size"] % 2 == 0):
        problems.append("observation.kernel_size must be a positive odd integer")

    params = {}
    if meth in METHODS:
        for key, default in DEFAULTS[meth].items():
            raw = cp.get(meth, key, fallback=default).strip()
            params[key] = raw
        params = _typed_params(meth, params, problems)

    alphas = get("audit", "alphas", _floats) or []
    aud = {
        "alphas": alphas,
        "n_trials": get("audit", "n_trials", int),
        "region": get("audit", "region") or (DEFAULT_REGION.get(meth) if meth in METHODS else None),
        "sampling": get("audit", "sampling"),
        "seed": seed if seed is not None else get("audit", "seed", int),
        "threads": threads if threads is not None else get("audit", "threads", int),
        "level": get("audit", "level", float),
    }
    if not alphas:
        problems.append("audit.alphas is empty")
    if any(not 0 < a < 1 for a in alphas):
        problems.append("audit.alphas must all lie in (0, 1)")
    if sorted(set(alphas)) != list(alphas):
        problems.append("audit.alphas must be strictly increasing")
    if aud["n_trials"] is not None and aud["n_trials"] < 1:
        problems.append("audit.n_trials must be >= 1")
    if aud["region"] not in ("hpd", "ball"):
        problems.append(f"audit.region must be 'hpd' or 'ball', got {aud['region']!r}")
    if aud["region"] == "hpd" and meth in ("pnp-ula", "external", "gibbs-gmrf"):
        problems.append(f"audit.region: HPD regions are unavailable for {meth} (no evaluable potential); use ball")
    if aud["sampling"] not in ("cyclic", "with-replacement"):
        problems.append(f"audit.sampling must be 'cyclic' or 'with-replacement', got {aud['sampling']!r}")
    if aud["threads"] is not None and aud["threads"] < 1:
        problems.append("audit.threads must be >= 1")

    if problems:
        raise ConfigError(problems)

    out_dir = out or os.environ.get(OUT_ENV) or cp.get("experiment", "output_dir")
    return RunConfig(
        name=cp.get("experiment", "name"),
        output_dir=Path(out_dir),
        dataset=ds,
        observation=obs,
        method=meth,
        method_params=params,
        audit=aud,
        label=cp.get("method", "label", fallback=""),
        source_path=Path(path) if path else None,
    )


_INT_KEYS = {"n_samples", "n_burnin", "thinning", "n_iter"}
_STR_KEYS = {"prior", "weights", "denoiser", "endpoint"}


def _typed_params(meth, raw, problems):
    out = {}
    for key, val in raw.items():
        if val == "":
            out[key] = None
            continue
        if key in _STR_KEYS:
            out[key] = val
            continue
        try:
            out[key] = int(val) if key in _INT_KEYS else float(val)
        except ValueError:
            problems.append(f"{meth}.{key}: cannot parse {val!r}")
    for key in ("n_samples",):
        if out.get(key) is not None and out[key] < 2:
            problems.append(f"{meth}.{key} must be >= 2")
    if meth == "pnp-ula":
        if out.get("denoiser") not in ("builtin-gaussian-mmse", "builtin-smoothing", "external"):
            problems.append(f"pnp-ula.denoiser: unknown denoiser {out.get('denoiser')!r}")
        if out.get("denoiser") == "builtin-gaussian-mmse" and out.get("s") is None:
            problems.append("pnp-ula.s is required for builtin-gaussian-mmse")
        if out.get("denoiser") == "external" and not out.get("endpoint"):
            problems.append("pnp-ula.endpoint is required for an external denoiser")
        if out.get("box_low") is not None and out.get("box_high") is not None and out["box_low"] > out["box_high"]:
            problems.append("pnp-ula.box_low must not exceed pnp-ula.box_high")
    if meth == "external" and not out.get("endpoint"):
        problems.append("external.endpoint is required")
    if meth == "exact-gaussian" and out.get("prior") not in ("dataset", "isotropic"):
        problems.append("exact-gaussian.prior must be 'dataset' or 'isotropic'")
    if meth == "exact-gaussian" and out.get("prior") == "isotropic" and out.get("prior_variance") is None:
        problems.append("exact-gaussian.prior_variance is required for an isotropic prior")
    if meth == "tv-sapg" and out.get("lambda_min") is not None and out.get("lambda_max") is not None:
        if not 0 < out["lambda_min"] < out["lambda_max"]:
            problems.append("tv-sapg needs 0 < lambda_min < lambda_max")
    return out
