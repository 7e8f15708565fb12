"""NumPy implementations of the hot loops.

Selected by :mod:`arsvhedge._backend` when the compiled ``_core`` extension is
unavailable (or when ``ARSVHEDGE_BACKEND=python``).  Every function here has a
twin in ``_core.pyx`` with the same signature and return layout; the loops are
vectorised across rows (independent series) and sequential along time.
"""
import numpy as np
from scipy.signal import lfilter

BRACKET = 40.0


def arsv_recursion(w, eps, b0, r, gamma, phi, sigma_w):
    """Latent log-variances and log-returns for a batch of paths.

    ``w`` and ``eps`` are standardised innovations of shape ``(n, h)``; ``b0``
    holds the starting log-variance of each row.  Returns ``(b, y)``.
    """
    w = np.ascontiguousarray(w, dtype=np.float64)
    eps = np.ascontiguousarray(eps, dtype=np.float64)
    b0 = np.ascontiguousarray(b0, dtype=np.float64)
    drive = gamma + sigma_w * w
    b, _ = lfilter([1.0], [1.0, -phi], drive, axis=1, zi=(phi * b0)[:, None])
    y = r + np.exp(0.5 * b) * eps
    return b, y


def _bracket(z2, b_pred, c):
    lo = b_pred - BRACKET
    hi = b_pred + BRACKET
    # g' is increasing; widen until it changes sign on [lo, hi]
    for _ in range(64):
        bad = (-z2 * np.exp(-lo) + 1.0 + c * (lo - b_pred)) > 0.0
        if not bad.any():
            break
        lo = np.where(bad, lo - BRACKET, lo)
    for _ in range(64):
        bad = (-z2 * np.exp(-hi) + 1.0 + c * (hi - b_pred)) < 0.0
        if not bad.any():
            break
        hi = np.where(bad, hi + BRACKET, hi)
    return lo, hi


def hlik_solve(z, b_pred, sigma_w, tol, max_iter):
    """Elementwise minimiser of ``z^2 e^{-b} + b + (b - b_pred)^2 / sigma_w^2``.

    Returns ``(b, residual, converged)``.
    """
    z = np.asarray(z, dtype=np.float64)
    b_pred = np.asarray(b_pred, dtype=np.float64)
    z2, b_pred = np.broadcast_arrays(z * z, b_pred)
    z2 = z2.astype(np.float64).ravel()
    bp = b_pred.astype(np.float64).ravel()
    c = 2.0 / (sigma_w * sigma_w)
    lo, hi = _bracket(z2, bp, c)
    x = bp.copy()
    gp = -z2 * np.exp(-x) + 1.0 + c * (x - bp)
    done = np.abs(gp) < tol
    for _ in range(max_iter):
        if done.all():
            break
        act = ~done
        xa, ga = x[act], gp[act]
        loa = np.where(ga < 0.0, xa, lo[act])
        hia = np.where(ga > 0.0, xa, hi[act])
        ez = z2[act] * np.exp(-xa)
        xn = xa - ga / (ez + c)
        out = (xn <= loa) | (xn >= hia)
        xn = np.where(out, 0.5 * (loa + hia), xn)
        gn = -z2[act] * np.exp(-xn) + 1.0 + c * (xn - bp[act])
        collapsed = (hia - loa) <= 4.0 * np.finfo(float).eps * np.maximum(1.0, np.abs(xn))
        x[act], gp[act], lo[act], hi[act] = xn, gn, loa, hia
        done[act] = (np.abs(gn) < tol) | collapsed
    shape = np.broadcast(z, b_pred).shape
    return x.reshape(shape), gp.reshape(shape), done.reshape(shape)


def hlik_run(z, b_u0, gamma, phi, sigma_w, tol, max_iter):
    """Prediction/update recursion along axis 1 of ``z`` (shape ``(n, h)``).

    Returns ``(b_pred, b_upd, ok)`` where ``ok`` is False if any update
    failed to converge (the arrays then hold the last iterates).
    """
    z = np.ascontiguousarray(z, dtype=np.float64)
    n, h = z.shape
    b_pred = np.empty((n, h))
    b_upd = np.empty((n, h))
    prev = np.array(b_u0, dtype=np.float64, copy=True).reshape(n)
    ok = True
    for t in range(h):
        bp = gamma + phi * prev
        bu, _, conv = hlik_solve(z[:, t], bp, sigma_w, tol, max_iter)
        ok = ok and bool(conv.all())
        b_pred[:, t] = bp
        b_upd[:, t] = bu
        prev = bu
    return b_pred, b_upd, ok


def kalman_run(l, a0, p0, alpha, phi, var_eta, mu_xi, var_xi):
    """Scalar-state Kalman recursion along axis 1 of ``l`` (shape ``(n, h)``).

    Returns ``(a_pred, p_pred, a_filt, p_filt)``; the variances do not depend
    on the data and are returned as length-``h`` vectors.
    """
    l = np.ascontiguousarray(l, dtype=np.float64)
    n, h = l.shape
    a_pred = np.empty((n, h))
    a_filt = np.empty((n, h))
    p_pred = np.empty(h)
    p_filt = np.empty(h)
    a = np.array(a0, dtype=np.float64, copy=True).reshape(n)
    p = float(p0)
    for t in range(h):
        ap = alpha + phi * (a - alpha)
        pp = phi * phi * p + var_eta
        f = pp + var_xi
        k = pp / f if f > 0.0 else 0.0
        a = ap + k * (l[:, t] - ap - mu_xi)
        p = pp * (1.0 - k)
        a_pred[:, t] = ap
        a_filt[:, t] = a
        p_pred[t] = pp
        p_filt[t] = p
    return a_pred, p_pred, a_filt, p_filt
