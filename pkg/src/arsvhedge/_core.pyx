# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernels; see ``_pykernels`` for the reference semantics."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, fabs, fmax

cnp.import_array()

cdef double BRACKET = 40.0
cdef double EPS = 2.220446049250313e-16


def arsv_recursion(w, eps, b0, double r, double gamma, double phi, double sigma_w):
    cdef double[:, ::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef double[:, ::1] ev = np.ascontiguousarray(eps, dtype=np.float64)
    cdef double[::1] b0v = np.ascontiguousarray(b0, dtype=np.float64)
    cdef Py_ssize_t n = wv.shape[0], h = wv.shape[1], i, t
    b = np.empty((n, h))
    y = np.empty((n, h))
    cdef double[:, ::1] bv = b
    cdef double[:, ::1] yv = y
    cdef double prev, x
    with nogil:
        for i in range(n):
            prev = b0v[i]
            for t in range(h):
                x = gamma + sigma_w * wv[i, t]
                prev = x + phi * prev
                bv[i, t] = prev
                yv[i, t] = r + exp(0.5 * prev) * ev[i, t]
    return b, y


cdef inline double _gprime(double z2, double x, double bp, double c) nogil:
    return -z2 * exp(-x) + 1.0 + c * (x - bp)


cdef int _solve(double z2, double bp, double c, double tol, int max_iter,
                double* out_x, double* out_g) nogil:
    cdef double lo = bp - BRACKET, hi = bp + BRACKET
    cdef double x, g, xn
    cdef int k
    for k in range(64):
        if _gprime(z2, lo, bp, c) <= 0.0:
            break
        lo -= BRACKET
    for k in range(64):
        if _gprime(z2, hi, bp, c) >= 0.0:
            break
        hi += BRACKET
    x = bp
    g = _gprime(z2, x, bp, c)
    if fabs(g) < tol:
        out_x[0] = x
        out_g[0] = g
        return 1
    for k in range(max_iter):
        if g < 0.0:
            lo = x
        elif g > 0.0:
            hi = x
        xn = x - g / (z2 * exp(-x) + c)
        if xn <= lo or xn >= hi:
            xn = 0.5 * (lo + hi)
        x = xn
        g = _gprime(z2, x, bp, c)
        if fabs(g) < tol or (hi - lo) <= 4.0 * EPS * fmax(1.0, fabs(x)):
            out_x[0] = x
            out_g[0] = g
            return 1
    out_x[0] = x
    out_g[0] = g
    return 0


def hlik_solve(z, b_pred, double sigma_w, double tol, int max_iter):
    zb, bb = np.broadcast_arrays(np.asarray(z, dtype=np.float64),
                                 np.asarray(b_pred, dtype=np.float64))
    shape = zb.shape
    cdef double[::1] zv = np.ascontiguousarray(zb, dtype=np.float64).ravel()
    cdef double[::1] bv = np.ascontiguousarray(bb, dtype=np.float64).ravel()
    cdef Py_ssize_t n = zv.shape[0], i
    x = np.empty(n)
    g = np.empty(n)
    conv = np.empty(n, dtype=np.uint8)
    cdef double[::1] xv = x
    cdef double[::1] gv = g
    cdef unsigned char[::1] cv = conv
    cdef double c = 2.0 / (sigma_w * sigma_w)
    with nogil:
        for i in range(n):
            cv[i] = _solve(zv[i] * zv[i], bv[i], c, tol, max_iter, &xv[i], &gv[i])
    return x.reshape(shape), g.reshape(shape), conv.astype(bool).reshape(shape)


def hlik_run(z, b_u0, double gamma, double phi, double sigma_w, double tol, int max_iter):
    cdef double[:, ::1] zv = np.ascontiguousarray(z, dtype=np.float64)
    cdef Py_ssize_t n = zv.shape[0], h = zv.shape[1], i, t
    cdef double[::1] b0v = np.ascontiguousarray(np.reshape(b_u0, (n,)), dtype=np.float64)
    b_pred = np.empty((n, h))
    b_upd = np.empty((n, h))
    cdef double[:, ::1] pv = b_pred
    cdef double[:, ::1] uv = b_upd
    cdef double c = 2.0 / (sigma_w * sigma_w)
    cdef double prev, bp, x, g
    cdef int ok = 1
    with nogil:
        for i in range(n):
            prev = b0v[i]
            for t in range(h):
                bp = gamma + phi * prev
                if not _solve(zv[i, t] * zv[i, t], bp, c, tol, max_iter, &x, &g):
                    ok = 0
                pv[i, t] = bp
                uv[i, t] = x
                prev = x
    return b_pred, b_upd, bool(ok)


def kalman_run(l, a0, double p0, double alpha, double phi, double var_eta,
               double mu_xi, double var_xi):
    cdef double[:, ::1] lv = np.ascontiguousarray(l, dtype=np.float64)
    cdef Py_ssize_t n = lv.shape[0], h = lv.shape[1], i, t
    cdef double[::1] a0v = np.ascontiguousarray(np.reshape(a0, (n,)), dtype=np.float64)
    a_pred = np.empty((n, h))
    a_filt = np.empty((n, h))
    p_pred = np.empty(h)
    p_filt = np.empty(h)
    gains = np.empty(h)
    cdef double[:, ::1] apv = a_pred
    cdef double[:, ::1] afv = a_filt
    cdef double[::1] ppv = p_pred
    cdef double[::1] pfv = p_filt
    cdef double[::1] kv = gains
    cdef double p = p0, pp, f, k, a, ap
    for t in range(h):
        pp = phi * phi * p + var_eta
        f = pp + var_xi
        k = pp / f if f > 0.0 else 0.0
        p = pp * (1.0 - k)
        ppv[t] = pp
        pfv[t] = p
        kv[t] = k
    with nogil:
        for i in range(n):
            a = a0v[i]
            for t in range(h):
                ap = alpha + phi * (a - alpha)
                a = ap + kv[t] * (lv[i, t] - ap - mu_xi)
                apv[i, t] = ap
                afv[i, t] = a
    return a_pred, p_pred, a_filt, p_filt
