"""Hot inner loops, each with a numba and a numpy implementation.

The public names at the bottom of the module point at whichever backend
:mod:`uqaudit._accel` selected. Both implementations are always importable
under their ``_nb`` / ``_np`` suffixes so they can be checked against each
other and benchmarked.

Difference operators use circular boundaries::

    Dh x[i, j] = x[i, (j + 1) % W] - x[i, j]
    Dv x[i, j] = x[(i + 1) % H, j] - x[i, j]
"""

import math

import numpy as np

from ._accel import USE_NUMBA, njit

# ---------------------------------------------------------------------------
# total variation: dual (fast) projected gradient with adaptive restart
# ---------------------------------------------------------------------------


def _grad_np(u):
    return np.roll(u, -1, axis=1) - u, np.roll(u, -1, axis=0) - u


def _grad_adj_np(ph, pv):
    # adjoint of (Dh, Dv), i.e. minus the divergence
    return (np.roll(ph, 1, axis=1) - ph) + (np.roll(pv, 1, axis=0) - pv)


def _tv_fgp_np(v, t, ph, pv, max_iter, tol):
    ph = ph.copy()
    pv = pv.copy()
    rh, rv = ph.copy(), pv.copy()
    step = 1.0 / (8.0 * t)
    tk = 1.0
    best_gap = np.inf
    best = (v - t * _grad_adj_np(ph, pv), ph.copy(), pv.copy())
    it = 0
    for it in range(1, max_iter + 1):
        u = v - t * _grad_adj_np(rh, rv)
        gh, gv = _grad_np(u)
        qh = rh + step * gh
        qv = rv + step * gv
        norm = np.maximum(1.0, np.sqrt(qh * qh + qv * qv))
        qh /= norm
        qv /= norm

        u = v - t * _grad_adj_np(qh, qv)
        gh, gv = _grad_np(u)
        gap = t * float(np.sum(np.sqrt(gh * gh + gv * gv) - gh * qh - gv * qv))
        if gap < best_gap:
            best_gap = gap
            best = (u, qh.copy(), qv.copy())
        if gap <= tol:
            break

        # gradient-based adaptive restart of the momentum
        if np.sum((rh - qh) * (qh - ph) + (rv - qv) * (qv - pv)) > 0.0:
            rh, rv, ph, pv, tk = qh, qv, qh, qv, 1.0
            continue
        tn = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * tk * tk))
        beta = (tk - 1.0) / tn
        rh = qh + beta * (qh - ph)
        rv = qv + beta * (qv - pv)
        ph, pv, tk = qh, qv, tn
    u, bh, bv = best
    return u, bh, bv, best_gap, it


@njit
def _adj_into(out, v, t, ph, pv):
    n0, n1 = v.shape
    for i in range(n0):
        im = i - 1 if i > 0 else n0 - 1
        for j in range(n1):
            jm = j - 1 if j > 0 else n1 - 1
            d = (ph[i, jm] - ph[i, j]) + (pv[im, j] - pv[i, j])
            out[i, j] = v[i, j] - t * d


@njit
def _tv_fgp_nb(v, t, ph, pv, max_iter, tol):
    n0, n1 = v.shape
    ph = ph.copy()
    pv = pv.copy()
    rh = ph.copy()
    rv = pv.copy()
    qh = np.empty_like(ph)
    qv = np.empty_like(pv)
    u = np.empty_like(v)
    best_u = np.empty_like(v)
    best_h = ph.copy()
    best_v = pv.copy()
    _adj_into(best_u, v, t, ph, pv)
    best_gap = np.inf
    step = 1.0 / (8.0 * t)
    tk = 1.0
    it = 0
    for it in range(1, max_iter + 1):
        _adj_into(u, v, t, rh, rv)
        for i in range(n0):
            ip = i + 1 if i < n0 - 1 else 0
            for j in range(n1):
                jp = j + 1 if j < n1 - 1 else 0
                a = rh[i, j] + step * (u[i, jp] - u[i, j])
                b = rv[i, j] + step * (u[ip, j] - u[i, j])
                nrm = math.sqrt(a * a + b * b)
                if nrm > 1.0:
                    a /= nrm
                    b /= nrm
                qh[i, j] = a
                qv[i, j] = b

        _adj_into(u, v, t, qh, qv)
        gap = 0.0
        for i in range(n0):
            ip = i + 1 if i < n0 - 1 else 0
            for j in range(n1):
                jp = j + 1 if j < n1 - 1 else 0
                gh = u[i, jp] - u[i, j]
                gv = u[ip, j] - u[i, j]
                gap += math.sqrt(gh * gh + gv * gv) - gh * qh[i, j] - gv * qv[i, j]
        gap *= t
        if gap < best_gap:
            best_gap = gap
            best_u[:, :] = u
            best_h[:, :] = qh
            best_v[:, :] = qv
        if gap <= tol:
            break

        dot = 0.0
        for i in range(n0):
            for j in range(n1):
                dot += (rh[i, j] - qh[i, j]) * (qh[i, j] - ph[i, j]) + (rv[i, j] - qv[i, j]) * (qv[i, j] - pv[i, j])
        if dot > 0.0:
            rh[:, :] = qh
            rv[:, :] = qv
            ph[:, :] = qh
            pv[:, :] = qv
            tk = 1.0
            continue
        tn = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * tk * tk))
        beta = (tk - 1.0) / tn
        for i in range(n0):
            for j in range(n1):
                rh[i, j] = qh[i, j] + beta * (qh[i, j] - ph[i, j])
                rv[i, j] = qv[i, j] + beta * (qv[i, j] - pv[i, j])
                ph[i, j] = qh[i, j]
                pv[i, j] = qv[i, j]
        tk = tn
    return best_u, best_h, best_v, best_gap, it


def _tv_value_np(x):
    gh, gv = _grad_np(x)
    return float(np.sum(np.sqrt(gh * gh + gv * gv)))


@njit
def _tv_value_nb(x):
    n0, n1 = x.shape
    s = 0.0
    for i in range(n0):
        ip = i + 1 if i < n0 - 1 else 0
        for j in range(n1):
            jp = j + 1 if j < n1 - 1 else 0
            gh = x[i, jp] - x[i, j]
            gv = x[ip, j] - x[i, j]
            s += math.sqrt(gh * gh + gv * gv)
    return s


# ---------------------------------------------------------------------------
# piece-wise quadratic activations (linear-interpolated derivative)
# ---------------------------------------------------------------------------


def _pwq_eval_np(z, origin, spacing, deriv, cumint, offset):
    k = deriv.shape[0]
    j = np.clip(np.floor((z - origin) / spacing).astype(np.int64), 0, k - 2)
    tau = z - (origin + j * spacing)
    d0 = deriv[j]
    slope = (deriv[j + 1] - d0) / spacing
    dpsi = d0 + slope * tau
    psi = cumint[j] + d0 * tau + 0.5 * slope * tau * tau - offset
    return psi, dpsi


@njit
def _pwq_eval_nb(z, origin, spacing, deriv, cumint, offset):
    k = deriv.shape[0]
    flat = z.ravel()
    psi = np.empty(flat.shape[0])
    dpsi = np.empty(flat.shape[0])
    for n in range(flat.shape[0]):
        s = (flat[n] - origin) / spacing
        j = int(math.floor(s))
        if j < 0:
            j = 0
        elif j > k - 2:
            j = k - 2
        tau = flat[n] - (origin + j * spacing)
        d0 = deriv[j]
        slope = (deriv[j + 1] - d0) / spacing
        dpsi[n] = d0 + slope * tau
        psi[n] = cumint[j] + d0 * tau + 0.5 * slope * tau * tau - offset
    return psi.reshape(z.shape), dpsi.reshape(z.shape)


# ---------------------------------------------------------------------------
# small-stencil circular convolution
# ---------------------------------------------------------------------------


def _stencil_np(x, w, adjoint):
    c0, c1 = w.shape[0] // 2, w.shape[1] // 2
    out = np.zeros_like(x)
    sign = -1 if adjoint else 1
    for a in range(w.shape[0]):
        for b in range(w.shape[1]):
            if w[a, b] != 0.0:
                out += w[a, b] * np.roll(x, (sign * (a - c0), sign * (b - c1)), axis=(0, 1))
    return out


@njit
def _stencil_nb(x, w, adjoint):
    n0, n1 = x.shape
    k0, k1 = w.shape
    c0, c1 = k0 // 2, k1 // 2
    sign = -1 if adjoint else 1
    out = np.zeros_like(x)
    for i in range(n0):
        for j in range(n1):
            acc = 0.0
            for a in range(k0):
                ii = (i - sign * (a - c0)) % n0
                for b in range(k1):
                    jj = (j - sign * (b - c1)) % n1
                    acc += w[a, b] * x[ii, jj]
            out[i, j] = acc
    return out


if USE_NUMBA:
    tv_fgp = _tv_fgp_nb
    tv_value = _tv_value_nb
    pwq_eval = _pwq_eval_nb
    stencil = _stencil_nb
else:
    tv_fgp = _tv_fgp_np
    tv_value = _tv_value_np
    pwq_eval = _pwq_eval_np
    stencil = _stencil_np

grad = _grad_np
grad_adj = _grad_adj_np
