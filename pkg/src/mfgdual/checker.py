"""Verification of computed solutions against the weak-solution conditions.

A delivered pair (m, phi) is audited for:

(i)   integrability of D phi, m D_pH(x, D phi) and the energy integrand;
(ii)  the pointwise HJ equation on {m > m_cut} plus the distributional
      HJ inequality tested against a fixed family of nonnegative bumps;
(iii) the continuity equation (measured with the delivered momentum field,
      whose identification w = -m D_pH(x, D phi) is reported separately);
(iv)  the energy identity between the running integrand and the boundary
      terms at t = 0 and t = T;

together with the supersolution selection -dt phi + H(x, D phi) >= 0, a
comparison-principle harness, a data-stability harness, the Hoelder-in-time
ratio, and the degenerate time-space elliptic operator satisfied by phi.

The pointwise checks of (ii) and the supersolution residual use the same
monotone numerical Hamiltonian as the backward sweep that produced phi, so
they measure solution quality rather than scheme mismatch; the discrete time
difference stands in for the absolutely continuous part of dt phi (the
singular part has no grid carrier).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from mfgdual.errors import ProblemError, ShapeError
from mfgdual.functionals import DualState, PrimalState
from mfgdual.grid import central_grad_arrays, time_diff_arrays
from mfgdual.model import ProblemData, nu_exponent
from mfgdual.solver import (
    SolverConfig,
    energy_identity_defect,
    monotone_hj_residual,
    solve,
)


@dataclass
class WeakSolutionReport:
    res_i: dict = field(default_factory=dict)
    res_ii_ae: float = np.nan
    res_ii_distrib: float = np.nan
    res_iii: float = np.nan
    res_iv_lhs: float = np.nan
    res_iv_rhs: float = np.nan
    res_iv_defect: float = np.nan
    condsup_residual: float = np.nan
    flux_residual: float = np.nan
    thresholds: dict = field(default_factory=dict)

    @property
    def res_iv_relative(self) -> float:
        return self.res_iv_defect / (1.0 + abs(self.res_iv_rhs))

    def to_dict(self) -> dict:
        return {
            "res_i": self.res_i,
            "res_ii_ae": self.res_ii_ae,
            "res_ii_distrib": self.res_ii_distrib,
            "res_iii": self.res_iii,
            "res_iv_lhs": self.res_iv_lhs,
            "res_iv_rhs": self.res_iv_rhs,
            "res_iv_defect": self.res_iv_defect,
            "res_iv_relative": self.res_iv_relative,
            "condsup_residual": self.condsup_residual,
            "flux_residual": self.flux_residual,
            "thresholds": self.thresholds,
        }


def check_weak_solution(
    primal: PrimalState,
    dual: DualState,
    data: ProblemData,
    m_cut: float = None,
    viscosity_safety: float = 1.05,
) -> WeakSolutionReport:
    """Evaluate all weak-solution residuals for a delivered pair."""
    primal.check_shapes(data)
    dual.check_shapes(data)
    g = data.grid
    m, w, phi = primal.m, primal.w, dual.phi
    vol = g.cell_volume
    if m_cut is None:
        m_cut = 1e-6 * float(np.max(m))

    rep = WeakSolutionReport()
    rep.thresholds = {"m_cut": m_cut, "viscosity_safety": viscosity_safety}

    # (i) integrability: all three integrals must be finite on the grid
    r = data.hamiltonian.r
    b = central_grad_arrays(phi[:-1], g.h_x, g.d)
    hp = data.hamiltonian.dp_grid(b)
    a = time_diff_arrays(phi, g.h_t)
    advect = np.sum(b * hp, axis=0)
    dphi_lr = float((np.sum(np.sum(b**2, axis=0) ** (r / 2.0)) * vol) ** (1.0 / r))
    mdph_l1 = float(np.sum(m * np.sqrt(np.sum(hp**2, axis=0))) * vol)
    energy_l1 = float(np.sum(np.abs(m * (a - advect))) * vol)
    rep.res_i = {
        "Dphi_Lr": dphi_lr,
        "mDpH_L1": mdph_l1,
        "energy_integrand_L1": energy_l1,
        "all_finite": bool(
            np.isfinite(dphi_lr) and np.isfinite(mdph_l1) and np.isfinite(energy_l1)
        ),
    }

    # (ii) a.e. equation on {m > m_cut} and the distributional inequality
    slack = monotone_hj_residual(phi, data, viscosity_safety)
    f_of_m = data.coupling.f_grid(m, data.coupling.c[None])
    mask = m > m_cut
    rep.res_ii_ae = float(np.sum(np.abs(slack - f_of_m)[mask]) * vol)
    rep.res_ii_distrib = _distributional_inequality(slack - f_of_m, data)

    # (iii) continuity equation with the delivered momentum
    rep.res_iii = primal.continuity_residual(data)
    flux = w + m[None] * hp
    rep.flux_residual = float(np.sum(np.sqrt(np.sum(flux**2, axis=0))) * vol)

    # (iv) energy identity
    lhs, rhs, defect = energy_identity_defect(m, phi, data)
    rep.res_iv_lhs, rep.res_iv_rhs, rep.res_iv_defect = lhs, rhs, defect

    rep.condsup_residual = float(np.max(np.maximum(-slack, 0.0)))
    return rep


def _test_bumps(data: ProblemData):
    """Nonnegative mollified test functions: tensor cosine bumps, 3 scales."""
    g = data.grid
    t = g.time_cells() / g.T
    pts = g.node_points()
    time_part = np.sin(np.pi * t) ** 2
    bumps = []
    for scale in (1, 2, 3):
        for shift in (0.0, 1.0 / 3.0, 2.0 / 3.0):
            if g.d == 1:
                sp = (1.0 + np.cos(2 * np.pi * scale * (pts[..., 0] - shift))) / 2.0
            else:
                sp = (
                    (1.0 + np.cos(2 * np.pi * scale * (pts[..., 0] - shift)))
                    * (1.0 + np.cos(2 * np.pi * scale * (pts[..., 1] - shift)))
                    / 4.0
                )
            bumps.append(time_part.reshape((-1,) + (1,) * g.d) * sp[None])
    return bumps


def _distributional_inequality(residual: np.ndarray, data: ProblemData) -> float:
    """Max positive pairing of the HJ residual with the nonnegative bumps,
    normalized by the test-function mass."""
    vol = data.grid.cell_volume
    worst = 0.0
    for psi in _test_bumps(data):
        pairing = float(np.sum(residual * psi) * vol)
        norm = float(np.sum(psi) * vol)
        worst = max(worst, pairing / norm)
    return worst


def check_condsup(phi: np.ndarray, data: ProblemData,
                  viscosity_safety: float = 1.05) -> float:
    """Max negative part of -dt phi + H(x, D phi), monotone discretization."""
    slack = monotone_hj_residual(phi, data, viscosity_safety)
    return float(np.max(np.maximum(-slack, 0.0)))


def comparison_test(
    data1: ProblemData,
    data2: ProblemData,
    cfg: SolverConfig = None,
):
    """Solve both problems (which may differ only in phi_T, with
    phi_T1 <= phi_T2) and report (ordered, max(phi1 - phi2))."""
    if np.any(data1.phi_T > data2.phi_T + 1e-14):
        raise ProblemError("comparison_test needs phi_T1 <= phi_T2 cellwise")
    if data1.grid != data2.grid:
        raise ShapeError("comparison_test needs a common grid")
    cfg = cfg or SolverConfig(tol=1e-8, max_iters=100000)
    _, dual1, _ = solve(data1, cfg)
    _, dual2, _ = solve(data2, cfg)
    defect = float(np.max(dual1.phi - dual2.phi))
    return defect <= 1e-6, defect


def stability_test(
    data: ProblemData,
    eps_seq,
    cfg: SolverConfig = None,
    perturb: str = "phi_T",
):
    """Solve the base problem and a sequence of perturbed ones; returns the
    list of (eps, ||m_eps - m||_q, ||phi_eps - phi||_inf).

    ``perturb = 'phi_T'`` adds eps * cos(2 pi x) to the terminal cost;
    ``perturb = 'm0'`` modulates the initial density and renormalizes.
    No rate is asserted; the caller checks the series decreases.
    """
    cfg = cfg or SolverConfig(tol=1e-8, max_iters=100000)
    g = data.grid
    q = data.coupling.q
    vol = g.cell_volume
    pts = g.node_points()
    wave = np.cos(2 * np.pi * pts[..., 0])
    base_primal, base_dual, _ = solve(data, cfg)
    series = []
    for eps in eps_seq:
        if perturb == "phi_T":
            pdata = data.with_phi_T(data.phi_T + eps * wave)
        elif perturb == "m0":
            m0 = data.m0 * (1.0 + eps * wave)
            if np.min(m0) < 0:
                raise ProblemError("m0 perturbation makes the density negative")
            m0 = m0 / (np.sum(m0) * g.h_x**g.d)
            pdata = data.with_m0(m0)
        else:
            raise ProblemError(f"unknown perturbation target {perturb!r}")
        p_eps, d_eps, _ = solve(pdata, cfg)
        m_err = float((np.sum(np.abs(p_eps.m - base_primal.m) ** q) * vol) ** (1 / q))
        phi_err = float(np.max(np.abs(d_eps.phi - base_dual.phi)))
        series.append((float(eps), m_err, phi_err))
    return series


def check_holder_time(
    phi: np.ndarray, alpha: np.ndarray, data: ProblemData
) -> float:
    """Worst empirical constant in the one-sided Hoelder-in-time bound
    phi(t1, x) <= phi(t2, x) + C (t2 - t1)^nu ||alpha||_p over dyadic pairs.

    Only finiteness and mesh stability are asserted by callers; the constant
    itself is existential.
    """
    g = data.grid
    nu = nu_exponent(data.hamiltonian.r, data.coupling.q, g.d)
    p = data.coupling.p_conj
    alpha_norm = float((np.sum(np.abs(alpha) ** p) * g.cell_volume) ** (1.0 / p))
    if alpha_norm == 0.0:
        return 0.0
    worst = -np.inf
    level = 1
    while (1 << level) <= g.n_t:
        step = g.n_t >> level if (g.n_t % (1 << level)) == 0 else None
        level += 1
        if step is None or step == 0:
            continue
        dt_pow = (step * g.h_t) ** nu
        for k1 in range(0, g.n_t - step + 1, step):
            k2 = k1 + step
            gain = float(np.max(phi[k1] - phi[k2]))
            worst = max(worst, gain / (dt_pow * alpha_norm))
    return worst


def elliptic_residual(
    phi: np.ndarray, data: ProblemData, delta_reg: float = 1e-8
):
    """Residual of min{G(x, Dphi, D^2phi), -dt phi + H(x, D phi)} at interior
    nodes, with G the divergence-form linearization of the optimality system.

    Cells with -p_t + H <= delta_reg use the convention G = 0 and are
    reported as zero residual (the second-derivative coefficients of F* are
    only defined away from the kink).  Returns (field, l1_summary); the field
    is NaN outside the evaluated interior band (2 slices off each end).
    """
    g = data.grid
    ham, cpl = data.hamiltonian, data.coupling
    h, ht = g.h_x, g.h_t
    d = g.d
    n_t = g.n_t
    pc = cpl.p_conj
    out = np.full(g.scalar_shape("node"), np.nan)
    if n_t < 4:
        raise ProblemError("elliptic residual needs at least 4 time intervals")

    ks = slice(2, n_t - 1)  # time nodes at distance >= 2 h_t from both ends
    phi_k = phi[ks]
    p_t = (phi[3:n_t] - phi[1 : n_t - 2]) / (2 * ht)
    a_tt = (phi[3:n_t] - 2 * phi_k + phi[1 : n_t - 2]) / ht**2

    p_x = central_grad_arrays(phi_k, h, d)
    dpt_x = central_grad_arrays(p_t, h, d)

    # spatial Hessian (central second differences; mixed terms by 4-point)
    C = np.empty((d, d) + phi_k.shape)
    for ax in range(d):
        axis = 1 + ax
        C[ax, ax] = (
            np.roll(phi_k, -1, axis=axis) - 2 * phi_k + np.roll(phi_k, 1, axis=axis)
        ) / h**2
    if d == 2:
        pp = np.roll(np.roll(phi_k, -1, axis=1), -1, axis=2)
        pm = np.roll(np.roll(phi_k, -1, axis=1), 1, axis=2)
        mp = np.roll(np.roll(phi_k, 1, axis=1), -1, axis=2)
        mm = np.roll(np.roll(phi_k, 1, axis=1), 1, axis=2)
        C[0, 1] = C[1, 0] = (pp - pm - mp + mm) / (4 * h**2)

    ell = ham.ell[None]
    cgrid = cpl.c[None]
    s = -p_t + ham.value_grid(p_x, ell)
    hp = ham.dp_grid(p_x)

    # H_pp = |p|^(r-2) (I + (r-2) phat phat^T); zero at p = 0 for r >= 2
    r = ham.r
    pnorm2 = np.sum(p_x**2, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(pnorm2 > 0.0, pnorm2 ** ((r - 2.0) / 2.0), 0.0)
        inv2 = np.where(pnorm2 > 0.0, 1.0 / pnorm2, 0.0)
    hpp = np.empty((d, d) + phi_k.shape)
    for i in range(d):
        for j in range(d):
            hpp[i, j] = scale * ((i == j) + (r - 2.0) * p_x[i] * p_x[j] * inv2)

    # central gradients of the spatial samples, broadcast over time
    gl = central_grad_arrays(ham.ell, h, d)
    gc = central_grad_arrays(cpl.c, h, d)
    h_x = -gl[:, None]  # H_x = -grad ell

    spos = np.maximum(s, 0.0)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        fs_a = cgrid ** (1.0 - pc) * spos ** (pc - 1.0)
        fs_aa = cgrid ** (1.0 - pc) * (pc - 1.0) * spos ** (pc - 2.0)
        fs_xa = (1.0 - pc) * cgrid ** (-pc) * gc[:, None] * spos ** (pc - 1.0)

    hpb = np.sum(hp * dpt_x, axis=0)
    chh = np.einsum("ij...,i...,j...->...", C, hp, hp)
    hphx = np.sum(hp * h_x, axis=0)
    tr_hpp_c = np.einsum("ij...,ij...->...", hpp, C)
    fxah = np.sum(fs_xa * hp, axis=0)

    G = fs_aa * (-a_tt + 2.0 * hpb - chh - hphx) - fxah - fs_a * tr_hpp_c
    active = s > delta_reg
    res = np.where(active, np.minimum(G, s), 0.0)
    out[ks] = res
    summary = float(np.nansum(np.abs(res)) * g.cell_volume)
    return out, summary
