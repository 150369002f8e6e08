"""Primal and dual functionals of the two control problems, and their proxes.

The dual side controls a backward Hamilton-Jacobi equation: minimize

    A(phi, alpha) = int F*(x, alpha) - int phi(0) m0,
    subject to  -dt phi + H(x, D phi) <= alpha,  phi(T) = phi_T.

The primal side controls a continuity equation: minimize

    B(m, w) = int [ m H*(x, -w/m) + F(x, m) ] + int phi_T m(T),
    subject to  dt m + div w = 0,  m(0) = m0,  m >= 0,

with the convention that m H*(x, -w/m) is 0 at (m, w) = (0, 0) and +infinity
if m = 0, w != 0.  At the common optimum A + B = 0; the computed value of
A + B is the duality-gap certificate.

Discrete carriers: phi on time-nodes x space-nodes, m and alpha on cells,
the momentum w at cell centres (the multiplier of the face-averaged
gradient), with the face momentum recovered by ``cell_to_face`` when the
staggered divergence is needed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mfgdual._kernels import prox_k_cells
from mfgdual.errors import ProblemError, ShapeError
from mfgdual.grid import (
    central_div_arrays,
    central_grad_arrays,
    time_diff_arrays,
)
from mfgdual.model import INFINITE_COST, ProblemData


@dataclass
class PrimalState:
    """Density m (time-cells x space-cells) and momentum w (cell vector)."""

    m: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        self.m = np.asarray(self.m, dtype=float)
        self.w = np.asarray(self.w, dtype=float)

    def check_shapes(self, data: ProblemData):
        g = data.grid
        if self.m.shape != g.scalar_shape("cell"):
            raise ShapeError(
                f"m must have shape {g.scalar_shape('cell')}, got {self.m.shape}"
            )
        if self.w.shape != g.vector_shape("cell"):
            raise ShapeError(
                f"w must have shape {g.vector_shape('cell')}, got {self.w.shape}"
            )

    def continuity_residual(self, data: ProblemData) -> float:
        """Volume-weighted L1 norm of dt m + div w with m(0-) = m0."""
        g = data.grid
        res = time_diff_with_initial(self.m, data.m0, g.h_t)
        res += central_div_arrays(self.w, g.h_x, g.d)
        return float(np.sum(np.abs(res)) * g.cell_volume)


@dataclass
class DualState:
    """Potential phi (time-nodes x space-nodes) and control alpha (cells)."""

    phi: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=float)
        self.alpha = np.asarray(self.alpha, dtype=float)

    def check_shapes(self, data: ProblemData):
        g = data.grid
        if self.phi.shape != g.scalar_shape("node"):
            raise ShapeError(
                f"phi must have shape {g.scalar_shape('node')}, got {self.phi.shape}"
            )
        if self.alpha.shape != g.scalar_shape("cell"):
            raise ShapeError(
                f"alpha must have shape {g.scalar_shape('cell')}, "
                f"got {self.alpha.shape}"
            )

    def terminal_defect(self, data: ProblemData) -> float:
        return float(np.max(np.abs(self.phi[-1] - data.phi_T)))

    def constraint_residual(self, data: ProblemData) -> float:
        """Max positive part of -dt phi + H(x, D phi) - alpha over cells."""
        s = hj_slack(self.phi, data)
        return float(np.max(np.maximum(s - self.alpha, 0.0)))


def time_diff_with_initial(m: np.ndarray, m0: np.ndarray, h_t: float) -> np.ndarray:
    """(m_k - m_{k-1}) / h_t with the initial-condition slice m_{-1} = m0."""
    out = np.empty_like(m)
    out[0] = (m[0] - m0) / h_t
    out[1:] = (m[1:] - m[:-1]) / h_t
    return out


def hj_slack(phi: np.ndarray, data: ProblemData) -> np.ndarray:
    """Cellwise -dt phi + H(x, D phi) with the solver's central gradient."""
    g = data.grid
    a = time_diff_arrays(phi, g.h_t)
    b = central_grad_arrays(phi[:-1], g.h_x, g.d)
    ell = data.hamiltonian.ell[None]
    return -a + data.hamiltonian.value_grid(b, ell)


# ---------------------------------------------------------------------------
# Pointwise evaluations.
# ---------------------------------------------------------------------------


def kinetic_integrand(data: ProblemData, x, m: float, w):
    """m * H*(x, -w/m); 0 at (0, 0); the +infinity sentinel at (0, w != 0)."""
    if m < 0:
        raise ProblemError("kinetic integrand needs m >= 0")
    w = np.asarray(w, dtype=float)
    if m == 0.0:
        if np.any(w != 0.0):
            return INFINITE_COST
        return 0.0
    return float(m * data.hamiltonian.conjugate(x, -w / m))


def K_eval(data: ProblemData, x, a: float, b) -> float:
    """Coupled convex cost K(x, a, b) = F*(x, -a + H(x, b))."""
    h = data.hamiltonian.value(x, b)
    return float(data.coupling.F_star(x, -a + h))


def prox_K(data: ProblemData, x, a0: float, b0, tau: float):
    """Unique minimizer of K(x, a, b) + (|a - a0|^2 + |b - b0|^2) / (2 tau)."""
    if not tau > 0:
        raise ProblemError("prox step must be positive")
    x = np.asarray(x, dtype=float)
    b0 = np.atleast_1d(np.asarray(b0, dtype=float))
    ell = np.atleast_1d(data.hamiltonian.ell_at(x))
    p = data.coupling.p_conj
    cfac = np.atleast_1d(data.coupling.c_at(x) ** (1.0 - p))
    a, b, _ = prox_k_cells(
        np.atleast_1d(float(a0)),
        b0.reshape(-1, 1),
        float(tau),
        data.hamiltonian.r,
        ell,
        cfac,
        p,
    )
    return float(a[0]), b[:, 0].copy()


def prox_Fstar(data: ProblemData, x, a0: float, tau: float) -> float:
    """argmin_a F*(x, a) + (a - a0)^2 / (2 tau)."""
    c = float(np.atleast_1d(data.coupling.c_at(np.asarray(x, dtype=float)))[0])
    return float(
        prox_fstar_values(np.atleast_1d(float(a0)), float(tau), data.coupling.q, c)[0]
    )


def prox_fstar_values(a0: np.ndarray, tau: float, q: float, c) -> np.ndarray:
    """Vectorized prox of F*(x, .); solves a + tau c^(1-p) a^(p-1) = a0 on a0 > 0."""
    p = q / (q - 1.0)
    cf = np.broadcast_to(np.asarray(c, dtype=float) ** (1.0 - p), a0.shape)
    out = a0.astype(float).copy()
    pos = a0 > 0
    if not np.any(pos):
        return out
    av, cv = a0[pos], cf[pos]
    lo = np.zeros_like(av)
    hi = av.copy()
    x = 0.5 * av
    for _ in range(200):
        phi = x + tau * cv * x ** (p - 1.0) - av
        if np.all(np.abs(phi) <= 1e-13 * (1.0 + av)):
            break
        neg = phi < 0.0
        lo = np.where(neg, x, lo)
        hi = np.where(~neg, x, hi)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            dphi = 1.0 + tau * cv * (p - 1.0) * x ** (p - 2.0)
            newton = x - phi / dphi
        ok = np.isfinite(newton) & (newton > lo) & (newton < hi)
        x = np.where(ok, newton, 0.5 * (lo + hi))
    out[pos] = x
    return out


def conjugate_oracle(s: np.ndarray, g: np.ndarray, z: float) -> float:
    """Brute-force Fenchel transform of sampled data: max_i z*s_i - g(s_i)."""
    s = np.asarray(s, dtype=float)
    g = np.asarray(g, dtype=float)
    if s.size == 0:
        raise ProblemError("conjugate oracle needs a nonempty sample grid")
    return float(np.max(z * s - g))


# ---------------------------------------------------------------------------
# Functional values on grid states.
# ---------------------------------------------------------------------------


def kinetic_total(m: np.ndarray, w: np.ndarray, data: ProblemData):
    """Sum over cells of the kinetic integrand; sentinel if any cell is infeasible."""
    if np.any(m < 0):
        return INFINITE_COST
    wnorm2 = np.sum(w**2, axis=0)
    zero_m = m == 0.0
    if np.any(zero_m & (wnorm2 > 0.0)):
        return INFINITE_COST
    rc = data.hamiltonian.r_conj
    ell = data.hamiltonian.ell[None]
    safe_m = np.where(zero_m, 1.0, m)
    vals = safe_m ** (1.0 - rc) * wnorm2 ** (rc / 2.0) / rc + m * ell
    vals = np.where(zero_m, 0.0, vals)
    return float(np.sum(vals))


def eval_B(state: PrimalState, data: ProblemData):
    """Value of the continuity-control functional; may be the +inf sentinel."""
    state.check_shapes(data)
    g = data.grid
    kin = kinetic_total(state.m, state.w, data)
    if kin is INFINITE_COST:
        return INFINITE_COST
    if np.any(state.m < 0):
        return INFINITE_COST
    coupling = np.sum(data.coupling.F_grid(state.m, data.coupling.c[None]))
    terminal = np.sum(data.phi_T * state.m[-1]) * g.h_x**g.d
    return float((kin + coupling) * g.cell_volume + terminal)


TERMINAL_TOL = 1e-12


def eval_A(state: DualState, data: ProblemData) -> float:
    """Value of the HJ-control functional at (phi, alpha)."""
    state.check_shapes(data)
    g = data.grid
    defect = state.terminal_defect(data)
    if defect > TERMINAL_TOL:
        raise ProblemError(
            f"terminal condition violated by {defect:.3e} (tolerance {TERMINAL_TOL})"
        )
    fstar = np.sum(data.coupling.F_star_grid(state.alpha, data.coupling.c[None]))
    initial = np.sum(state.phi[0] * data.m0) * g.h_x**g.d
    return float(fstar * g.cell_volume - initial)


def eval_A_from_phi(phi: np.ndarray, data: ProblemData) -> float:
    """A at (phi, alpha) with the extracted control alpha = (-dt phi + H) v 0.

    Equals F(phi) + G(Lambda phi) of the saddle formulation because F* vanishes
    on nonpositive arguments.
    """
    g = data.grid
    s = hj_slack(phi, data)
    fstar = np.sum(data.coupling.F_star_grid(s, data.coupling.c[None]))
    initial = np.sum(phi[0] * data.m0) * g.h_x**g.d
    return float(fstar * g.cell_volume - initial)
