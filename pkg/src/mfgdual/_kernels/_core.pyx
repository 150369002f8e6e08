# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled proximal kernel; same contract as the numpy fallback."""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, isfinite, pow, sqrt

from mfgdual.errors import ProxError

cnp.import_array()

cdef int _MAX_ITER = 200
cdef double _TOL = 1e-12


cdef inline double _fstar_prime(double s, double cfac, double p) noexcept nogil:
    if s <= 0.0:
        return 0.0
    return cfac * pow(s, p - 1.0)


cdef int _solve_beta(double a0, double R, double ell, double cfac,
                     double tau, double r, double p, double* beta_out) noexcept nogil:
    cdef double lo = 0.0
    cdef double hi = R
    cdef double beta = 0.5 * R
    cdef double tg, gv, s, fs, phi, dtg, ds, dfs, dphi, newton
    cdef int it
    for it in range(_MAX_ITER):
        tg = (R - beta) / pow(beta, r - 1.0)
        gv = tg / tau
        s = -a0 - tg + pow(beta, r) / r - ell
        fs = _fstar_prime(s, cfac, p)
        phi = gv - fs
        if fabs(phi) <= _TOL * (1.0 + gv + fs) or hi - lo <= 1e-15 * R:
            beta_out[0] = beta
            return 0
        if phi > 0.0:
            lo = beta
        else:
            hi = beta
        dtg = -(beta + (r - 1.0) * (R - beta)) / pow(beta, r)
        ds = -dtg + pow(beta, r - 1.0)
        if s > 0.0:
            dfs = cfac * (p - 1.0) * pow(s, p - 2.0) * ds
        else:
            dfs = 0.0
        dphi = dtg / tau - dfs
        if dphi < 0.0 and isfinite(dphi):
            newton = beta - phi / dphi
        else:
            newton = 0.5 * (lo + hi)
        if newton > lo and newton < hi and isfinite(newton):
            beta = newton
        else:
            beta = 0.5 * (lo + hi)
    beta_out[0] = beta
    return 1


cdef int _solve_g(double a0, double ell, double cfac, double tau, double p,
                  double* g_out) noexcept nogil:
    cdef double s0 = -a0 - ell
    cdef double hi = _fstar_prime(s0, cfac, p)
    cdef double scale = hi if hi > 1e-300 else 1e-300
    cdef double lo = 0.0
    cdef double gv = 0.5 * hi
    cdef double s, fs, phi, dphi, newton
    cdef int it
    for it in range(_MAX_ITER):
        s = s0 - tau * gv
        fs = _fstar_prime(s, cfac, p)
        phi = gv - fs
        if fabs(phi) <= _TOL * (1.0 + gv + fs) or hi - lo <= 1e-15 * scale:
            g_out[0] = gv
            return 0
        if phi < 0.0:
            lo = gv
        else:
            hi = gv
        if s > 0.0:
            dphi = 1.0 + tau * cfac * (p - 1.0) * pow(s, p - 2.0)
        else:
            dphi = 1.0
        if dphi > 0.0 and isfinite(dphi):
            newton = gv - phi / dphi
        else:
            newton = 0.5 * (lo + hi)
        if newton > lo and newton < hi and isfinite(newton):
            gv = newton
        else:
            gv = 0.5 * (lo + hi)
    g_out[0] = gv
    return 1


def prox_k_cells(a0, b0, double tau, double r, ell, cfac, double p):
    """Cellwise prox of K; returns (a, b, g).  See the fallback docstring."""
    cdef double[::1] a0v = np.ascontiguousarray(a0, dtype=np.float64)
    cdef double[:, ::1] b0v = np.ascontiguousarray(b0, dtype=np.float64)
    cdef double[::1] ellv = np.ascontiguousarray(ell, dtype=np.float64)
    cdef double[::1] cfv = np.ascontiguousarray(cfac, dtype=np.float64)
    cdef Py_ssize_t n = a0v.shape[0]
    cdef Py_ssize_t d = b0v.shape[0]

    a_np = np.empty(n, dtype=np.float64)
    b_np = np.empty((d, n), dtype=np.float64)
    g_np = np.empty(n, dtype=np.float64)
    cdef double[::1] av = a_np
    cdef double[:, ::1] bv = b_np
    cdef double[::1] gv = g_np

    cdef Py_ssize_t i, c
    cdef double R2, R, s0, beta, tg, g0, scale
    cdef int fail = 0
    cdef Py_ssize_t fail_at = -1

    with nogil:
        for i in range(n):
            R2 = 0.0
            for c in range(d):
                R2 += b0v[c, i] * b0v[c, i]
            R = sqrt(R2)
            s0 = -a0v[i] + pow(R, r) / r - ellv[i]
            if s0 <= 0.0:
                av[i] = a0v[i]
                for c in range(d):
                    bv[c, i] = b0v[c, i]
                gv[i] = 0.0
            elif R > 0.0:
                if _solve_beta(a0v[i], R, ellv[i], cfv[i], tau, r, p, &beta):
                    fail = 1
                    fail_at = i
                    break
                tg = (R - beta) / pow(beta, r - 1.0)
                av[i] = a0v[i] + tg
                scale = beta / R
                for c in range(d):
                    bv[c, i] = b0v[c, i] * scale
                gv[i] = tg / tau
            else:
                if _solve_g(a0v[i], ellv[i], cfv[i], tau, p, &g0):
                    fail = 1
                    fail_at = i
                    break
                av[i] = a0v[i] + tau * g0
                for c in range(d):
                    bv[c, i] = 0.0
                gv[i] = g0

    if fail:
        raise ProxError(
            f"prox root-find did not converge in {_MAX_ITER} iterations",
            cell=int(fail_at),
        )
    return a_np, b_np, g_np
