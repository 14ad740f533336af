"""Prior potentials, gradients, proximal maps and score approximations.

Every potential ``phi`` here is the negative log prior up to a constant,
``p(x) ∝ exp(-phi(x))``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from . import kernels
from .errors import InvalidModelError
from .imaging import as_image

# ---------------------------------------------------------------------------
# total variation
# ---------------------------------------------------------------------------


def tv_value(x):
    """Isotropic TV with first-order circular differences."""
    return float(kernels.tv_value(as_image(x)))


class TvProxResult(NamedTuple):
    image: np.ndarray
    dual: tuple
    gap: float
    iterations: int
    converged: bool


def tv_prox(v, theta, lam=1.0, *, tol=1e-6, max_iter=200, dual_init=None):
    """Proximal map of ``theta * lam * TV`` at ``v``.

    Solved on the dual with accelerated projected gradient (step 1/8 in
    normalised units), stopping when the duality gap drops below ``tol``.
    If the cap is hit first, the iterate with the smallest gap is returned
    with ``converged=False``. ``dual_init`` warm-starts the solver (pass the
    ``dual`` of a previous call on a nearby input).
    """
    if theta <= 0:
        raise ValueError(f"theta must be positive, got {theta}")
    v = as_image(v, "v")
    t = float(theta) * float(lam)
    if dual_init is None:
        ph = np.zeros_like(v)
        pv = np.zeros_like(v)
    else:
        ph, pv = (np.ascontiguousarray(d, dtype=np.float64) for d in dual_init)
    u, ph, pv, gap, it = kernels.tv_fgp(np.ascontiguousarray(v), t, ph, pv, int(max_iter), float(tol))
    return TvProxResult(u, (ph, pv), float(gap), int(it), bool(gap <= tol))


@dataclass(frozen=True)
class TvPotential:
    lam: float

    homogeneity = 1

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")

    def regulariser(self, x):
        return tv_value(x)

    def value(self, x):
        return self.lam * tv_value(x)

    def prox(self, v, theta, dual_init=None):
        return tv_prox(v, theta, self.lam, dual_init=dual_init)

    def with_lam(self, lam):
        return TvPotential(lam)


@dataclass(frozen=True)
class QuadraticPotential:
    """``lam * ||x||^2 / 2``; closed-form prox, used as a Gaussian stand-in."""

    lam: float

    homogeneity = 2

    def regulariser(self, x):
        return 0.5 * float(np.sum(np.asarray(x) ** 2))

    def value(self, x):
        return self.lam * self.regulariser(x)

    def grad(self, x):
        return self.lam * np.asarray(x)

    def prox(self, v, theta, dual_init=None):
        u = np.asarray(v) / (1.0 + theta * self.lam)
        return TvProxResult(u, None, 0.0, 0, True)

    def with_lam(self, lam):
        return QuadraticPotential(lam)


# ---------------------------------------------------------------------------
# Gaussian Markov random field
# ---------------------------------------------------------------------------


def laplacian_eigenvalues(shape, real=False):
    """DFT eigenvalues of the 4-neighbour circulant Laplacian.

    With ``real=True`` the half spectrum matching ``rfft2`` is returned.
    """
    h, w = shape
    c0 = 2.0 - 2.0 * np.cos(2 * np.pi * np.fft.fftfreq(h))
    f1 = np.fft.rfftfreq(w) if real else np.fft.fftfreq(w)
    c1 = 2.0 - 2.0 * np.cos(2 * np.pi * f1)
    return c0[:, None] + c1[None, :]


@dataclass(frozen=True)
class GmrfPrior:
    """``(delta/2) <x, (L + dc_ridge I) x>`` with ``L`` the circulant Laplacian."""

    delta: float = 1.0
    dc_ridge: float = 1e-5

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if not self.dc_ridge > 0:
            raise ValueError(f"dc_ridge must be positive, got {self.dc_ridge}")

    def spectrum(self, shape, real=False):
        """Eigenvalues of ``L + dc_ridge I`` (without ``delta``)."""
        return laplacian_eigenvalues(shape, real=real) + self.dc_ridge

    def quadratic_form(self, x):
        """``<x, (L + dc_ridge I) x>``."""
        x = as_image(x)
        spec = self.spectrum(x.shape, real=True)
        xf = np.fft.rfft2(x)
        lx = np.fft.irfft2(xf * spec, s=x.shape)
        return float(np.sum(x * lx))

    def potential(self, x):
        return 0.5 * self.delta * self.quadratic_form(x)

    def grad(self, x):
        x = as_image(x)
        return self.delta * np.fft.irfft2(np.fft.rfft2(x) * self.spectrum(x.shape, real=True), s=x.shape)

    def with_delta(self, delta):
        return GmrfPrior(delta, self.dc_ridge)


def gmrf_potential(x, p):
    return p.potential(x)


def gmrf_grad(x, p):
    return p.grad(x)


# ---------------------------------------------------------------------------
# convex ridge regulariser
# ---------------------------------------------------------------------------

CRR_MAGIC = b"CRR1"
_CRR_HEADER = struct.Struct("<4sIIIIddd")


class CrrModel:
    """Convex ridge regulariser ``lam * sum_i sum_p psi_i((w_i * x)[p])``.

    ``derivs[i]`` holds ``psi_i'`` at the uniform knots
    ``knot_origin + j * knot_spacing``; ``psi_i'`` is the linear interpolant
    of these values, extrapolated linearly past the end knots, and
    ``psi_i`` its exact integral with ``psi_i(0) = 0``.
    """

    def __init__(self, filters, derivs, knot_origin, knot_spacing, lam=1.0):
        filters = np.array(filters, dtype=np.float64)
        derivs = np.array(derivs, dtype=np.float64)
        if filters.ndim == 2:
            filters = filters[None]
        if derivs.ndim == 1:
            derivs = derivs[None]
        problems = []
        if filters.ndim != 3 or filters.shape[0] < 1:
            problems.append(f"filters must be (L, h, w), got {filters.shape}")
        elif filters.shape[1] % 2 == 0 or filters.shape[2] % 2 == 0:
            problems.append(f"filter sizes must be odd, got {filters.shape[1:]}")
        if derivs.ndim != 2 or derivs.shape[1] < 2:
            problems.append(f"derivs must be (L, K>=2), got {derivs.shape}")
        elif filters.ndim == 3 and derivs.shape[0] != filters.shape[0]:
            problems.append(f"{filters.shape[0]} filters but {derivs.shape[0]} activations")
        if not knot_spacing > 0:
            problems.append(f"knot spacing must be positive, got {knot_spacing}")
        if not lam > 0:
            problems.append(f"lambda must be positive, got {lam}")
        if not (np.all(np.isfinite(filters)) and np.all(np.isfinite(derivs))):
            problems.append("non-finite weights")
        if not problems:
            bad = np.nonzero(np.any(np.diff(derivs, axis=1) < 0, axis=1))[0]
            if bad.size:
                problems.append(f"activation derivative decreases (non-convex) in rows {bad.tolist()}")
        if problems:
            raise InvalidModelError("; ".join(problems))

        self.filters = filters
        self.derivs = derivs
        self.knot_origin = float(knot_origin)
        self.knot_spacing = float(knot_spacing)
        self.lam = float(lam)
        h = self.knot_spacing
        self._cumint = np.concatenate(
            [np.zeros((derivs.shape[0], 1)), np.cumsum(0.5 * h * (derivs[:, 1:] + derivs[:, :-1]), axis=1)], axis=1
        )
        self._offset = np.array(
            [self._eval_row(i, np.zeros((1, 1)), offset=0.0)[0][0, 0] for i in range(derivs.shape[0])]
        )

    @property
    def n_filters(self):
        return self.filters.shape[0]

    def _eval_row(self, i, z, offset=None):
        off = self._offset[i] if offset is None else offset
        return kernels.pwq_eval(z, self.knot_origin, self.knot_spacing, self.derivs[i], self._cumint[i], off)

    def activation(self, i, t):
        """``(psi_i(t), psi_i'(t))`` for an array ``t``."""
        t = np.ascontiguousarray(np.atleast_2d(np.asarray(t, dtype=np.float64)))
        return self._eval_row(i, t)

    def potential(self, x):
        x = np.ascontiguousarray(as_image(x))
        total = 0.0
        for i in range(self.n_filters):
            z = kernels.stencil(x, self.filters[i], False)
            psi, _ = self._eval_row(i, z)
            total += float(np.sum(psi))
        return self.lam * total

    def grad(self, x):
        x = np.ascontiguousarray(as_image(x))
        g = np.zeros_like(x)
        for i in range(self.n_filters):
            z = kernels.stencil(x, self.filters[i], False)
            _, dpsi = self._eval_row(i, z)
            g += kernels.stencil(np.ascontiguousarray(dpsi), self.filters[i], True)
        return self.lam * g

    def activation_lipschitz(self):
        return np.max(np.abs(np.diff(self.derivs, axis=1)), axis=1) / self.knot_spacing

    def lipschitz(self, shape):
        """Lipschitz constant of :meth:`grad` on images of ``shape``."""
        lips = self.activation_lipschitz()
        acc = np.zeros(shape)
        for i in range(self.n_filters):
            k0, k1 = self.filters.shape[1:]
            pad = np.zeros(shape)
            pad[:k0, :k1] = self.filters[i]
            acc += lips[i] * np.abs(np.fft.fft2(pad)) ** 2
        return self.lam * float(acc.max())

    def with_lam(self, lam):
        return CrrModel(self.filters, self.derivs, self.knot_origin, self.knot_spacing, lam)

    # -- file format --------------------------------------------------------

    def to_bytes(self):
        n, fh, fw = self.filters.shape
        k = self.derivs.shape[1]
        head = _CRR_HEADER.pack(CRR_MAGIC, n, fh, fw, k, self.knot_spacing, self.knot_origin, self.lam)
        return head + self.filters.astype("<f8").tobytes() + self.derivs.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, buf):
        if len(buf) < _CRR_HEADER.size:
            raise InvalidModelError("CRR file truncated in header")
        magic, n, fh, fw, k, spacing, origin, lam = _CRR_HEADER.unpack_from(buf)
        if magic != CRR_MAGIC:
            raise InvalidModelError(f"bad CRR magic {magic!r}")
        nf, nd = n * fh * fw, n * k
        expected = _CRR_HEADER.size + 8 * (nf + nd)
        if len(buf) != expected:
            raise InvalidModelError(f"CRR file has {len(buf)} bytes, expected {expected}")
        body = np.frombuffer(buf, dtype="<f8", offset=_CRR_HEADER.size)
        filters = body[:nf].reshape(n, fh, fw)
        derivs = body[nf:].reshape(n, k)
        return cls(filters, derivs, origin, spacing, lam)

    def save(self, path):
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as f:
            return cls.from_bytes(f.read())


def load_crr(path):
    return CrrModel.load(path)


def crr_potential(x, m):
    return m.potential(x)


def crr_grad(x, m):
    return m.grad(x)


def builtin_crr(lam=10.0, eta=0.05):
    """Fallback CRR: 8 first/second-order difference filters, Huber-like
    activations (quadratic on [-eta, eta], linear beyond)."""
    z = np.zeros((3, 3))

    def f(**taps):
        w = z.copy()
        for key, val in taps.items():
            w[int(key[1]), int(key[2])] = val
        return w

    s2 = 1.0 / np.sqrt(2.0)
    filters = np.stack([
        f(p11=-1.0, p12=1.0),
        f(p11=-1.0, p21=1.0),
        f(p11=-s2, p22=s2),
        f(p11=-s2, p20=s2),
        f(p10=0.5, p11=-1.0, p12=0.5),
        f(p01=0.5, p11=-1.0, p21=0.5),
        f(p01=0.25, p10=0.25, p11=-1.0, p12=0.25, p21=0.25),
        f(p00=0.25, p02=-0.25, p20=-0.25, p22=0.25),
    ])
    spacing = eta / 2.0
    knots = np.arange(-20, 21) * spacing
    deriv = np.clip(knots / eta, -1.0, 1.0)
    return CrrModel(filters, np.tile(deriv, (8, 1)), knots[0], spacing, lam)


def quadratic_crr(lam=1.0, n_knots=5):
    """Single identity filter with ``psi(t) = t^2 / 2``; equals ``lam ||x||^2 / 2``."""
    knots = np.linspace(-1.0, 1.0, n_knots)
    return CrrModel(np.ones((1, 1, 1)), knots[None], knots[0], knots[1] - knots[0], lam)


# ---------------------------------------------------------------------------
# denoisers and Tweedie scores
# ---------------------------------------------------------------------------

BINOMIAL_3x3 = np.outer([1.0, 2.0, 1.0], [1.0, 2.0, 1.0]) / 16.0


class GaussianMMSEDenoiser:
    """MMSE denoiser for the prior ``N(0, s^2 I)``: ``D(x) = s^2 / (s^2 + eps) x``."""

    def __init__(self, s, epsilon):
        self.s = float(s)
        self.epsilon = float(epsilon)

    def __call__(self, x):
        return (self.s**2 / (self.s**2 + self.epsilon)) * x

    def lipschitz(self):
        return 1.0


class SmoothingDenoiser:
    def __init__(self, epsilon, kernel=BINOMIAL_3x3):
        self.epsilon = float(epsilon)
        self.kernel = np.asarray(kernel, dtype=np.float64)
        self.kernel = self.kernel / self.kernel.sum()

    def __call__(self, x):
        return kernels.stencil(np.ascontiguousarray(x, dtype=np.float64), self.kernel, False)

    def lipschitz(self):
        return float(np.abs(self.kernel).sum())


class CallableDenoiser:
    """Wrap any ``image -> image`` function as a denoiser of level ``epsilon``."""

    def __init__(self, func: Callable, epsilon, lipschitz=1.0):
        self.func = func
        self.epsilon = float(epsilon)
        self._lip = float(lipschitz)

    def __call__(self, x):
        return self.func(x)

    def lipschitz(self):
        return self._lip


@dataclass(frozen=True)
class DenoiserSpec:
    """Declarative denoiser choice.

    ``kind`` is ``builtin-gaussian-mmse`` (needs ``s``), ``builtin-smoothing``
    or ``external`` (needs ``endpoint``, see :mod:`uqaudit.protocol`).
    """

    kind: str
    epsilon: float
    s: float | None = None
    endpoint: str | None = None

    KINDS = ("builtin-gaussian-mmse", "builtin-smoothing", "external")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown denoiser kind {self.kind!r}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.kind == "builtin-gaussian-mmse" and not (self.s and self.s > 0):
            raise ValueError("builtin-gaussian-mmse needs s > 0")
        if self.kind == "external" and not self.endpoint:
            raise ValueError("external denoiser needs an endpoint")

    def build(self):
        if self.kind == "builtin-gaussian-mmse":
            return GaussianMMSEDenoiser(self.s, self.epsilon)
        if self.kind == "builtin-smoothing":
            return SmoothingDenoiser(self.epsilon)
        from .protocol import ExternalDenoiser

        return ExternalDenoiser(self.endpoint, self.epsilon)


def tweedie_score(x, denoiser):
    """Score approximation ``(D_eps(x) - x) / eps``."""
    x = np.asarray(x, dtype=np.float64)
    dx = np.asarray(denoiser(x), dtype=np.float64)
    if dx.shape != x.shape:
        from .errors import ProtocolError

        raise ProtocolError(f"denoiser returned shape {dx.shape} for input {x.shape}")
    return (dx - x) / denoiser.epsilon
