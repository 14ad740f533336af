"""Images, the circulant blur + Gaussian noise observation model, and metrics.

Images are plain 2-D ``float64`` numpy arrays with nominal range [0, 1].
All linear operators use circular boundaries, so the blur is diagonalised
by the 2-D DFT.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateInputError

log = logging.getLogger(__name__)

PSNR_CAP = 200.0
LUMA_709 = (0.2126, 0.7152, 0.0722)
IMAGE_SUFFIXES = {".png", ".pgm"}


def as_image(x, name="image"):
    """Validate and return ``x`` as a finite 2-D float64 array."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"{name} must be a non-empty 2-D array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    return a


@dataclass(frozen=True, eq=False)
class BlurKernel:
    taps: np.ndarray

    def __post_init__(self):
        taps = np.array(self.taps, dtype=np.float64)
        if taps.ndim != 2 or taps.shape[0] % 2 == 0 or taps.shape[1] % 2 == 0:
            raise ValueError(f"kernel side lengths must be odd, got shape {taps.shape}")
        if not np.all(np.isfinite(taps)):
            raise ValueError("kernel taps must be finite")
        taps.setflags(write=False)
        object.__setattr__(self, "taps", taps)

    @classmethod
    def uniform(cls, size=3):
        return cls(np.full((size, size), 1.0 / (size * size)))

    @classmethod
    def identity(cls):
        return cls(np.ones((1, 1)))

    @property
    def shape(self):
        return self.taps.shape

    def transfer(self, shape):
        """Full 2-D DFT of the kernel embedded in an image of ``shape``,
        anchored so that the center tap sits at pixel (0, 0)."""
        return np.fft.fft2(self._embed(shape))

    def rtransfer(self, shape):
        return np.fft.rfft2(self._embed(shape))

    def _embed(self, shape):
        k0, k1 = self.taps.shape
        if k0 > shape[0] or k1 > shape[1]:
            raise ValueError(f"kernel {self.taps.shape} larger than image {tuple(shape)}")
        pad = np.zeros(shape)
        pad[:k0, :k1] = self.taps
        return np.roll(pad, (-(k0 // 2), -(k1 // 2)), axis=(0, 1))

    def to_dict(self):
        return {"shape": list(self.taps.shape), "taps": self.taps.ravel().tolist()}


@dataclass(frozen=True, eq=False)
class ObservationModel:
    """``y = H x + w`` with ``H`` a circular blur and ``w ~ N(0, noise_sigma^2 I)``."""

    kernel: BlurKernel
    noise_sigma: float
    boundary: str = field(default="circular", init=False)

    def __post_init__(self):
        if not (self.noise_sigma > 0 and np.isfinite(self.noise_sigma)):
            raise ValueError(f"noise_sigma must be positive and finite, got {self.noise_sigma}")

    def forward(self, x):
        return convolve_circular(x, self.kernel)

    def adjoint(self, x):
        x = as_image(x)
        return np.fft.irfft2(np.fft.rfft2(x) * np.conj(self.kernel.rtransfer(x.shape)), s=x.shape)

    def lipschitz(self, shape):
        """Lipschitz constant of the log-likelihood gradient, max|H^|^2 / sigma^2."""
        return float(np.max(np.abs(self.kernel.transfer(shape)) ** 2)) / self.noise_sigma**2

    def with_sigma(self, sigma):
        return ObservationModel(self.kernel, float(sigma))

    def log_likelihood(self, x, y):
        """``log p(y|x)`` up to an additive constant."""
        r = y - self.forward(x)
        return -0.5 * float(np.sum(r * r)) / self.noise_sigma**2

    def to_dict(self):
        return {"kernel": self.kernel.to_dict(), "noise_sigma": self.noise_sigma, "boundary": self.boundary}


@dataclass
class Dataset:
    items: list
    labels: list

    def __post_init__(self):
        if not self.items:
            raise ValueError("dataset is empty")
        if len(self.labels) != len(self.items):
            raise ValueError("labels and items differ in length")

    def __len__(self):
        return len(self.items)

    def __getitem__(self, i):
        return self.items[i]

    @property
    def shapes(self):
        return {im.shape for im in self.items}


def convolve_circular(x, k):
    """Apply the blur ``k`` to ``x`` (true convolution, circular boundary)."""
    x = as_image(x)
    if k.shape[0] > x.shape[0] or k.shape[1] > x.shape[1]:
        raise ValueError(f"kernel {k.shape} does not fit image {x.shape}")
    return np.fft.irfft2(np.fft.rfft2(x) * k.rtransfer(x.shape), s=x.shape)


def sigma_from_bsnr(blurred, bsnr_db):
    """Noise level giving blurred signal-to-noise ratio ``bsnr_db``.

    Uses ``BSNR = 10 log10(Var(Hx) / sigma^2)`` with the empirical
    (population) pixel variance of the blurred image.
    """
    var = float(np.var(as_image(blurred, "blurred")))
    if var <= 0.0:
        raise DegenerateInputError("blurred image has zero variance; BSNR is undefined")
    return float(np.sqrt(var * 10.0 ** (-bsnr_db / 10.0)))


def sample_observation(x, m, rng):
    hx = m.forward(x)
    return hx + m.noise_sigma * rng.standard_normal(hx.shape)


def psnr(reference, estimate, peak=1.0):
    reference = as_image(reference, "reference")
    estimate = as_image(estimate, "estimate")
    if reference.shape != estimate.shape:
        raise ValueError(f"shape mismatch: {reference.shape} vs {estimate.shape}")
    mse = float(np.mean((reference - estimate) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(peak * peak / mse))


# ---------------------------------------------------------------------------
# image files
# ---------------------------------------------------------------------------


def read_image(path):
    """Decode a PNG/PGM file to a grayscale float image in [0, 1]."""
    from PIL import Image as PILImage

    with PILImage.open(path) as im:
        mode = im.mode
        if mode in ("I;16", "I;16B", "I;16L", "I"):
            a = np.asarray(im, dtype=np.float64)
            # 16-bit PNG/PGM decode to mode "I" or "I;16*"
            return a / 65535.0
        if mode in ("L", "P", "1", "LA"):
            return np.asarray(im.convert("L"), dtype=np.float64) / 255.0
        rgb = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return rgb @ np.array(LUMA_709)


def write_png16(path, img):
    """Write ``img`` (clipped to [0, 1]) as a 16-bit grayscale PNG."""
    from PIL import Image as PILImage

    a = np.clip(as_image(img), 0.0, 1.0)
    q = np.round(a * 65535.0).astype(np.uint16)
    PILImage.fromarray(q).save(path, format="PNG")


def load_dataset(path):
    path = Path(path)
    if not path.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {path}")
    items, labels = [], []
    for f in sorted(path.iterdir(), key=lambda p: p.name):
        if f.suffix.lower() not in IMAGE_SUFFIXES or not f.is_file():
            continue
        try:
            items.append(read_image(f))
        except (OSError, ValueError) as exc:
            log.warning("skipping unreadable image %s: %s", f.name, exc)
            continue
        labels.append(f.name)
    if not items:
        raise ValueError(f"no readable images in {path}")
    return Dataset(items, labels)

