"""Pure-numpy implementation of the proximal kernel.

Solves, for every cell, the proximal map of

    K(x, a, b) = F*(x, -a + H(x, b)),   H(x, b) = |b|^r / r - ell(x),
    dF*/da (x, s) = cfac(x) * max(s, 0)^(p-1),

at the point (a0, b0) with step tau.  The minimizer is colinear with b0, so
the problem reduces to one monotone scalar equation per cell:

* b0 != 0: unknown beta = |b| in (0, R], R = |b0|, with
      tau * g(beta) = (R - beta) / beta^(r-1),
      s(beta) = -a0 - tau*g(beta) + beta^r / r - ell,
      Phi(beta) = g(beta) - dF*/da(s(beta))   (strictly decreasing);

* b0 == 0: unknown g >= 0 with Phi(g) = g - dF*/da(-a0 - tau*g - ell)
  (strictly increasing).

Both are solved by bracketed bisection with Newton acceleration, vectorized
over cells with masks.  g is the multiplier density F*'(s) at the optimum.
"""

import numpy as np

from mfgdual.errors import ProxError

_MAX_ITER = 200
_TOL = 1e-12


def prox_k_cells(a0, b0, tau, r, ell, cfac, p):
    """Cellwise prox of K; returns (a, b, g).

    Shapes: ``a0``, ``ell``, ``cfac`` are (n,); ``b0`` is (d, n); ``tau`` is
    a uniform positive step.  ``cfac`` holds c(x)^(1-p).
    """
    a0 = np.ascontiguousarray(a0, dtype=float)
    b0 = np.ascontiguousarray(b0, dtype=float)
    ell = np.ascontiguousarray(ell, dtype=float)
    cfac = np.ascontiguousarray(cfac, dtype=float)

    R = np.sqrt(np.sum(b0**2, axis=0))
    s0 = -a0 + R**r / r - ell
    a = a0.copy()
    b = b0.copy()
    g = np.zeros_like(a0)

    act = s0 > 0.0
    iv = act & (R > 0.0)
    i0 = act & ~iv

    if np.any(iv):
        beta = _solve_beta(a0[iv], R[iv], ell[iv], cfac[iv], tau, r, p)
        tg = (R[iv] - beta) / beta ** (r - 1.0)
        a[iv] = a0[iv] + tg
        b[:, iv] = b0[:, iv] * (beta / R[iv])
        g[iv] = tg / tau

    if np.any(i0):
        g0 = _solve_g(a0[i0], ell[i0], cfac[i0], tau, p)
        a[i0] = a0[i0] + tau * g0
        g[i0] = g0

    return a, b, g


def _fstar_prime(s, cfac, p):
    return cfac * np.maximum(s, 0.0) ** (p - 1.0)


def _solve_beta(a0, R, ell, cfac, tau, r, p):
    """Root of the decreasing branch; bracket is (0, R)."""
    lo = np.zeros_like(R)
    hi = R.copy()
    beta = 0.5 * R
    done = np.zeros(R.shape, dtype=bool)
    for _ in range(_MAX_ITER):
        tg = (R - beta) / beta ** (r - 1.0)
        gv = tg / tau
        s = -a0 - tg + beta**r / r - ell
        fs = _fstar_prime(s, cfac, p)
        phi = gv - fs
        done = done | (np.abs(phi) <= _TOL * (1.0 + gv + fs)) | (hi - lo <= 1e-15 * R)
        if np.all(done):
            break
        pos = phi > 0.0
        lo = np.where(~done & pos, beta, lo)
        hi = np.where(~done & ~pos, beta, hi)
        dtg = -(beta + (r - 1.0) * (R - beta)) / beta**r
        ds = -dtg + beta ** (r - 1.0)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            dfs = cfac * (p - 1.0) * np.maximum(s, 0.0) ** (p - 2.0) * ds
            dphi = dtg / tau - dfs
            newton = beta - phi / dphi
        ok = np.isfinite(newton) & (dphi < 0.0) & (newton > lo) & (newton < hi)
        beta = np.where(done, beta, np.where(ok, newton, 0.5 * (lo + hi)))
    if not np.all(done):
        idx = int(np.nonzero(~done)[0][0])
        raise ProxError(
            f"prox root-find did not converge in {_MAX_ITER} iterations", cell=idx
        )
    return beta


def _solve_g(a0, ell, cfac, tau, p):
    """Root of the increasing branch; bracket is [0, F*'(s0)]."""
    s0 = -a0 - ell
    hi = _fstar_prime(s0, cfac, p)
    scale = np.maximum(hi, 1e-300)
    lo = np.zeros_like(hi)
    gv = 0.5 * hi
    done = np.zeros(gv.shape, dtype=bool)
    for _ in range(_MAX_ITER):
        s = s0 - tau * gv
        fs = _fstar_prime(s, cfac, p)
        phi = gv - fs
        done = (
            done
            | (np.abs(phi) <= _TOL * (1.0 + gv + fs))
            | (hi - lo <= 1e-15 * scale)
        )
        if np.all(done):
            break
        neg = phi < 0.0
        lo = np.where(~done & neg, gv, lo)
        hi = np.where(~done & ~neg, gv, hi)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            dphi = 1.0 + tau * cfac * (p - 1.0) * np.maximum(s, 0.0) ** (p - 2.0)
            newton = gv - phi / dphi
        ok = np.isfinite(newton) & (dphi > 0.0) & (newton > lo) & (newton < hi)
        gv = np.where(done, gv, np.where(ok, newton, 0.5 * (lo + hi)))
    if not np.all(done):
        idx = int(np.nonzero(~done)[0][0])
        raise ProxError(
            f"prox root-find did not converge in {_MAX_ITER} iterations", cell=idx
        )
    return gv
