import numpy as np
import pytest

from uqaudit.kernels import _grad_adj_np, _grad_np


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def brute_convolve(x, taps):
    """Nested-loop circular convolution, the reference for the FFT path."""
    h, w = x.shape
    kh, kw = taps.shape
    ch, cw = kh // 2, kw // 2
    out = np.zeros_like(x)
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for a in range(kh):
                for b in range(kw):
                    acc += taps[a, b] * x[(i - (a - ch)) % h, (j - (b - cw)) % w]
            out[i, j] = acc
    return out


def central_gradient(f, x, h=1e-6):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = h
        g[idx] = (f(x + e) - f(x - e)) / (2 * h)
    return g



def projected_gradient_prox(v, t, n_iter=20000):
    """Plain (unaccelerated) projected gradient on the TV dual."""
    ph = np.zeros_like(v)
    pv = np.zeros_like(v)
    for _ in range(n_iter):
        gh, gv = _grad_np(v - t * _grad_adj_np(ph, pv))
        ph = ph + gh / (8 * t)
        pv = pv + gv / (8 * t)
        nrm = np.maximum(1.0, np.hypot(ph, pv))
        ph /= nrm
        pv /= nrm
    return v - t * _grad_adj_np(ph, pv)


def aligned_subgradient_residual(v, u, t, dual, tiny=1e-6):
    """``||(v - u)/t - D^T q||`` with ``q = Du/|Du|`` where the gradient is
    nonzero and the solver's dual elsewhere, i.e. a genuine TV subgradient."""
    gh, gv = _grad_np(u)
    m = np.hypot(gh, gv)
    on = m > tiny
    safe = np.where(on, m, 1.0)
    qh = np.where(on, gh / safe, dual[0])
    qv = np.where(on, gv / safe, dual[1])
    assert np.all(np.hypot(qh, qv) <= 1 + 1e-12)
    return float(np.linalg.norm((v - u) / t - _grad_adj_np(qh, qv)))


_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """``acceptance(n, ok, detail)`` records one criterion line for the summary."""
    store = request.config.stash.setdefault(_ACCEPTANCE, {})

    def record(n, ok, detail=""):
        store[n] = ("PASS" if ok else "FAIL", detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(_ACCEPTANCE, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(store):
        verdict, detail = store[n]
        terminalreporter.write_line(f"criterion {n:2d}: {verdict}  {detail}")
