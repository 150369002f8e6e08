"""Primal-dual solver for the discrete saddle point of the two control problems.

The dual problem is written as  min_phi  F(phi) + G(Lambda phi)  with

    Lambda phi = (dt phi, D phi)          (time difference, central gradient),
    G(a, b)    = vol * sum_cells K(x, a, b),   K = F*(x, -a + H(x, b)),
    F(phi)     = -h^d <m0, phi(0)>  + indicator{phi(T) = phi_T},

and solved by the primal-dual hybrid-gradient iteration: the multiplier of
(a, b) is the scaled pair (m, w) (density and cell momentum), the prox of G
is the pointwise prox of K (compiled kernel), and the prox of F is a linear
shift of the initial slice plus exact re-imposition of the terminal slice.
At the optimum the multiplier update reproduces m = f^{-1}(x, alpha),
w = -m D_pH(x, D phi) and the discrete continuity equation, so the reported
duality gap A + B is a genuine optimality certificate.

The delivered potential is always recomputed from the extracted control by a
monotone backward sweep (the discrete maximal subsolution), which also
enforces the supersolution selection -dt phi + H(x, D phi) >= 0.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from mfgdual._kernels import BACKEND, prox_k_cells
from mfgdual.errors import CFLError, DivergenceError, ProblemError, ProxError
from mfgdual.functionals import (
    DualState,
    PrimalState,
    eval_A_from_phi,
    eval_B,
    hj_slack,
    time_diff_with_initial,
)
from mfgdual.grid import (
    SpaceTimeGrid,
    central_div_arrays,
    central_grad_arrays,
    project_simplex_sum,
    time_diff_adjoint_arrays,
    time_diff_arrays,
)
from mfgdual.model import INFINITE_COST, ProblemData, require_valid


@dataclass
class SolverConfig:
    tol: float = 1e-5
    max_iters: int = 50000
    step_safety: float = 0.95
    seed: int = 0
    checkpoint_every: int = 0
    gap_check_every: int = 50
    theta_relax: float = 1.0
    viscosity_safety: float = 1.05
    divergence_factor: float = 10.0

    def to_dict(self) -> dict:
        return {
            "tol": self.tol,
            "max_iters": self.max_iters,
            "step_safety": self.step_safety,
            "seed": self.seed,
            "checkpoint_every": self.checkpoint_every,
            "gap_check_every": self.gap_check_every,
            "theta_relax": self.theta_relax,
            "viscosity_safety": self.viscosity_safety,
            "divergence_factor": self.divergence_factor,
        }


@dataclass
class SaddleState:
    """Iterate of the splitting: potential, multipliers, auxiliary cells."""

    phi: np.ndarray
    phi_bar: np.ndarray
    m: np.ndarray
    w: np.ndarray
    aux_a: np.ndarray
    aux_b: np.ndarray
    sigma: float
    tau: float
    norm_bound: float
    iteration: int = 0

    # flattened per-cell constants, fixed by the problem
    ell_flat: np.ndarray = None
    cfac_flat: np.ndarray = None


@dataclass
class SolveReport:
    duality_gap: float = np.nan
    primal_value: float = np.nan
    dual_value: float = np.nan
    continuity_residual: float = np.nan
    constraint_residual: float = np.nan
    flux_residual: float = np.nan
    alpha_consistency: float = np.nan
    energy_identity_residual: float = np.nan
    condsup_residual: float = np.nan
    iterations: int = 0
    converged: bool = False
    wall_time: float = 0.0
    backend: str = BACKEND
    seed: int = 0
    gap_history: list = field(default_factory=list)

    def to_dict(self, include_wall_time: bool = True) -> dict:
        d = {
            "duality_gap": self.duality_gap,
            "primal_value": self.primal_value,
            "dual_value": self.dual_value,
            "continuity_residual": self.continuity_residual,
            "constraint_residual": self.constraint_residual,
            "flux_residual": self.flux_residual,
            "alpha_consistency": self.alpha_consistency,
            "energy_identity_residual": self.energy_identity_residual,
            "condsup_residual": self.condsup_residual,
            "iterations": self.iterations,
            "converged": self.converged,
            "backend": self.backend,
            "seed": self.seed,
            "gap_history": self.gap_history,
        }
        if include_wall_time:
            d["wall_time"] = self.wall_time
        return d


# ---------------------------------------------------------------------------
# The splitting operator Lambda and its adjoint.
# ---------------------------------------------------------------------------


def lambda_apply(phi: np.ndarray, grid: SpaceTimeGrid):
    a = time_diff_arrays(phi, grid.h_t)
    b = central_grad_arrays(phi[:-1], grid.h_x, grid.d)
    return a, b


def lambda_adjoint(a: np.ndarray, b: np.ndarray, grid: SpaceTimeGrid) -> np.ndarray:
    out = time_diff_adjoint_arrays(a, grid.h_t)
    out[:-1] -= central_div_arrays(b, grid.h_x, grid.d)
    return out


def estimate_operator_norm(grid: SpaceTimeGrid, rel_tol: float = 1e-3) -> float:
    """Largest singular value of Lambda by power iteration on Lambda* Lambda."""
    rng = np.random.default_rng(1234)
    v = rng.standard_normal(grid.scalar_shape("node"))
    v /= np.sqrt(np.sum(v**2))
    lam = 0.0
    for _ in range(2000):
        a, b = lambda_apply(v, grid)
        w = lambda_adjoint(a, b, grid)
        lam_new = np.sqrt(np.sum(v * w))  # = |Lambda v| for unit v
        norm_w = np.sqrt(np.sum(w**2))
        if norm_w == 0.0:
            return 0.0
        v = w / norm_w
        if abs(lam_new - lam) <= rel_tol * max(lam_new, 1e-300):
            return float(lam_new)
        lam = lam_new
    return float(lam)


# ---------------------------------------------------------------------------
# Iteration.
# ---------------------------------------------------------------------------


def init_state(data: ProblemData, cfg: SolverConfig) -> SaddleState:
    """Feasible-ish start: phi_T replicated backward, m0 replicated forward."""
    g = data.grid
    norm = estimate_operator_norm(g)
    step = cfg.step_safety / norm
    phi = np.tile(data.phi_T, (g.n_t + 1,) + (1,) * g.d)
    m = np.tile(data.m0, (g.n_t,) + (1,) * g.d)
    w = np.zeros(g.vector_shape("cell"))
    a, b = lambda_apply(phi, g)
    ncells = g.n_t * g.n_cells_space
    p = data.coupling.p_conj
    ell_flat = np.ascontiguousarray(
        np.broadcast_to(data.hamiltonian.ell[None], m.shape).reshape(ncells)
    )
    cfac_flat = np.ascontiguousarray(
        np.broadcast_to(data.coupling.c[None] ** (1.0 - p), m.shape).reshape(ncells)
    )
    return SaddleState(
        phi=phi,
        phi_bar=phi.copy(),
        m=m,
        w=w,
        aux_a=a,
        aux_b=b,
        sigma=step,
        tau=step,
        norm_bound=norm,
        ell_flat=ell_flat,
        cfac_flat=cfac_flat,
    )


def pd_step(state: SaddleState, data: ProblemData) -> SaddleState:
    """One primal-dual iteration (over-relaxation theta = 1); mutates state.

    The iteration runs in the volume-weighted inner products, so the
    quadrature weights cancel and the dual variable is carried directly as
    the density/momentum pair (m, w).
    """
    g = data.grid
    if state.sigma * state.tau * state.norm_bound**2 > 1.0 + 1e-9:
        raise ProblemError("step-size product violates the operator-norm bound")
    tau_cell = 1.0 / state.sigma
    d, n_t = g.d, g.n_t
    ncells = n_t * g.n_cells_space

    a_bar, b_bar = lambda_apply(state.phi_bar, g)
    a0 = (a_bar - tau_cell * state.m).reshape(ncells)
    b0 = (b_bar - tau_cell * state.w).reshape(d, ncells)
    try:
        a_hat, b_hat, g_mult = prox_k_cells(
            a0,
            b0,
            tau_cell,
            data.hamiltonian.r,
            state.ell_flat,
            state.cfac_flat,
            data.coupling.p_conj,
        )
    except ProxError as exc:
        coords = np.unravel_index(exc.cell, (n_t,) + g.space_shape)
        raise ProxError(
            f"prox failed at cell {tuple(int(c) for c in coords)}", cell=coords
        ) from exc

    cell_shape = (n_t,) + g.space_shape
    state.aux_a = a_hat.reshape(cell_shape)
    state.aux_b = b_hat.reshape((d,) + cell_shape)
    m_new = g_mult.reshape(cell_shape)
    w_new = -m_new[None] * data.hamiltonian.dp_grid(state.aux_b)

    # Note: m is NOT projected onto the mass-1 simplex here.  Projecting the
    # multiplier inside the iteration pins every slice mean of m at its
    # initial value, which freezes the interior means of phi (a spurious
    # fixed point at the initialization).  Emitted states are projected when
    # the solve assembles its output; per-slice mass converges through the
    # continuity residual.
    state.m = m_new
    state.w = w_new

    grad = lambda_adjoint(-m_new, -w_new, g)
    phi_new = state.phi - state.tau * grad
    phi_new[0] += state.tau * data.m0 / g.h_t
    phi_new[-1] = data.phi_T
    state.phi_bar = 2.0 * phi_new - state.phi
    state.phi = phi_new
    state.iteration += 1
    return state


def project_density_slices(m: np.ndarray, grid: SpaceTimeGrid) -> np.ndarray:
    """Vectorized simplex projection of every time slice of a density field."""
    n_t = m.shape[0]
    target = grid.h_x ** (-grid.d)
    flat = m.reshape(n_t, -1)
    u = np.sort(flat, axis=1)[:, ::-1]
    css = np.cumsum(u, axis=1) - target
    j = np.arange(1, flat.shape[1] + 1)
    cond = u - css / j > 0
    rho = cond.shape[1] - 1 - np.argmax(cond[:, ::-1], axis=1)
    lam = css[np.arange(n_t), rho] / (rho + 1)
    return np.maximum(flat - lam[:, None], 0.0).reshape(m.shape)


def _gap_measures(state: SaddleState, data: ProblemData):
    """Duality gap and continuity residual at the current iterate."""
    g = data.grid
    dual_val = eval_A_from_phi(state.phi, data)
    w_eval = np.where(state.m[None] > 0.0, state.w, 0.0)
    primal_val = eval_B(PrimalState(state.m, w_eval), data)
    if primal_val is INFINITE_COST:
        return np.nan, np.nan, np.nan, np.nan
    gap = dual_val + primal_val
    gap_rel = abs(gap) / (1.0 + abs(primal_val))
    res = time_diff_with_initial(state.m, data.m0, g.h_t)
    res += central_div_arrays(state.w, g.h_x, g.d)
    cont = float(np.sum(np.abs(res)) * g.cell_volume)
    return gap, gap_rel, cont, primal_val


def extract_alpha(phi: np.ndarray, m: np.ndarray, data: ProblemData):
    """Control recovery alpha = (-dt phi + H(x, D phi)) v 0, with the L^p
    discrepancy against f(x, m) reported as data (never a failure)."""
    alpha = np.maximum(hj_slack(phi, data), 0.0)
    f_of_m = data.coupling.f_grid(m, data.coupling.c[None])
    p = data.coupling.p_conj
    vol = data.grid.cell_volume
    disc = float((np.sum(np.abs(alpha - f_of_m) ** p) * vol) ** (1.0 / p))
    return alpha, disc


def maximal_subsolution(
    alpha: np.ndarray, data: ProblemData, viscosity_safety: float = 1.05
) -> np.ndarray:
    """Discrete maximal subsolution of -dt phi + H(x, D phi) <= alpha,
    phi(T) = phi_T, by an explicit monotone backward sweep.

    The numerical Hamiltonian is central-with-artificial-viscosity (local
    Lax-Friedrichs); under the CFL guard the scheme is monotone, so the sweep
    dominates every discrete subsolution and satisfies the supersolution
    inequality -dt phi + H >= 0 wherever alpha >= 0.
    """
    g = data.grid
    if np.min(alpha) < -1e-10:
        raise ProblemError("maximal_subsolution needs alpha >= 0 cellwise")
    alpha = np.maximum(alpha, 0.0)
    ham = data.hamiltonian
    h, ht = g.h_x, g.h_t
    phi = np.empty(g.scalar_shape("node"))
    phi[-1] = data.phi_T
    for k in range(g.n_t - 1, -1, -1):
        nxt = phi[k + 1]
        p_bar = central_grad_arrays(nxt, h, g.d)
        hval = ham.value_grid(p_bar, ham.ell)
        hp = ham.dp_grid(p_bar)
        nu = viscosity_safety * np.abs(hp) + 1e-12
        nu_sum = np.sum(nu, axis=0)
        cfl = ht * float(np.max(nu_sum)) / h
        if cfl > 1.0:
            needed = int(np.ceil(g.n_t * cfl / 0.9))
            raise CFLError(
                f"backward sweep CFL ratio {cfl:.3f} > 1; increase n_t to "
                f"~{needed}",
                suggested_n_t=needed,
            )
        visc = np.zeros(g.space_shape)
        for a in range(g.d):
            visc += nu[a] * (
                np.roll(nxt, -1, axis=a) - 2.0 * nxt + np.roll(nxt, 1, axis=a)
            ) / (2.0 * h)
        phi[k] = nxt + ht * (alpha[k] - hval + visc)
    return phi


def monotone_hj_residual(phi: np.ndarray, data: ProblemData,
                         viscosity_safety: float = 1.05) -> np.ndarray:
    """Cellwise -dt phi + H_lf(x, phi) with the sweep's numerical Hamiltonian."""
    g = data.grid
    ham = data.hamiltonian
    h, ht = g.h_x, g.h_t
    out = np.empty(g.scalar_shape("cell"))
    for k in range(g.n_t):
        nxt = phi[k + 1]
        p_bar = central_grad_arrays(nxt, h, g.d)
        hval = ham.value_grid(p_bar, ham.ell)
        hp = ham.dp_grid(p_bar)
        nu = viscosity_safety * np.abs(hp) + 1e-12
        visc = np.zeros(g.space_shape)
        for a in range(g.d):
            visc += nu[a] * (
                np.roll(nxt, -1, axis=a) - 2.0 * nxt + np.roll(nxt, 1, axis=a)
            ) / (2.0 * h)
        out[k] = -(nxt - phi[k]) / ht + hval - visc
    return out


def energy_identity_defect(m: np.ndarray, phi: np.ndarray, data: ProblemData):
    """Defect of int m (dt phi - <D phi, D_pH>) = int m(T) phi_T - m0 phi(0).

    Returns (lhs, rhs, |lhs - rhs|); the time derivative is the plain discrete
    difference (the singular part has no grid carrier).
    """
    g = data.grid
    a = time_diff_arrays(phi, g.h_t)
    b = central_grad_arrays(phi[:-1], g.h_x, g.d)
    hp = data.hamiltonian.dp_grid(b)
    advection = np.sum(b * hp, axis=0)
    lhs = float(np.sum(m * (a - advection)) * g.cell_volume)
    hd = g.h_x**g.d
    rhs = float((np.sum(m[-1] * data.phi_T) - np.sum(data.m0 * phi[0])) * hd)
    return lhs, rhs, abs(lhs - rhs)


def solve(data: ProblemData, cfg: SolverConfig = None, checkpoint=None):
    """Run the saddle-point iteration and assemble the certified solution.

    Returns ``(primal, dual, report)``.  The delivered ``dual.phi`` is the
    maximal-subsolution recomputation from the extracted control; the raw
    saddle iterate only backs the duality-gap certificate.  ``checkpoint``,
    if given, is called as ``checkpoint(iteration, state)`` every
    ``cfg.checkpoint_every`` iterations.
    """
    cfg = cfg or SolverConfig()
    require_valid(data)
    t0 = time.perf_counter()
    state = init_state(data, cfg)
    g = data.grid

    report = SolveReport(seed=cfg.seed, backend=BACKEND)
    best_gap_rel = np.inf
    first_gap_rel = None
    bad_streak = 0
    converged = False
    while state.iteration < cfg.max_iters:
        pd_step(state, data)
        it = state.iteration
        if checkpoint is not None and cfg.checkpoint_every > 0:
            if it % cfg.checkpoint_every == 0:
                checkpoint(it, state)
        if it % cfg.gap_check_every == 0 or it == cfg.max_iters:
            gap, gap_rel, cont, primal_val = _gap_measures(state, data)
            report.gap_history.append([it, gap, cont])
            if not np.isfinite(gap_rel):
                raise DivergenceError(
                    f"non-finite duality gap at iteration {it}; "
                    "step sizes likely violate the operator-norm bound"
                )
            if first_gap_rel is None:
                first_gap_rel = gap_rel
            best_gap_rel = min(best_gap_rel, gap_rel)
            # the signed gap crosses zero during the transient, so divergence
            # is declared only on sustained growth past the starting gap
            grew = gap_rel > cfg.divergence_factor * max(best_gap_rel, cfg.tol)
            if grew and gap_rel > first_gap_rel:
                bad_streak += 1
            else:
                bad_streak = 0
            if bad_streak >= 3:
                raise DivergenceError(
                    f"duality gap grew {gap_rel / max(best_gap_rel, cfg.tol):.1f}x "
                    f"above its best value at iteration {it}"
                )
            if gap_rel <= cfg.tol and cont <= cfg.tol:
                converged = True
                break

    # -- assemble the delivered solution ------------------------------------
    m = project_density_slices(state.m, g)
    alpha, disc = extract_alpha(state.phi, m, data)
    phi_bar = maximal_subsolution(alpha, data, cfg.viscosity_safety)
    w = np.where(m[None] > 0.0, state.w, 0.0)

    primal = PrimalState(m=m, w=w)
    dual = DualState(phi=phi_bar, alpha=alpha)

    report.iterations = state.iteration
    report.converged = converged
    report.dual_value = eval_A_from_phi(state.phi, data)
    pv = eval_B(primal, data)
    report.primal_value = pv if pv is not INFINITE_COST else np.nan
    report.duality_gap = report.dual_value + report.primal_value
    report.continuity_residual = primal.continuity_residual(data)

    # delivered-pair residuals
    sweep = monotone_hj_residual(phi_bar, data, cfg.viscosity_safety)
    report.constraint_residual = float(np.max(np.maximum(sweep - alpha, 0.0)))
    report.condsup_residual = float(np.max(np.maximum(-sweep, 0.0)))
    hp = data.hamiltonian.dp_grid(central_grad_arrays(state.phi[:-1], g.h_x, g.d))
    flux = w + m[None] * hp
    report.flux_residual = float(
        np.sum(np.sqrt(np.sum(flux**2, axis=0))) * g.cell_volume
    )
    report.alpha_consistency = disc
    _, _, report.energy_identity_residual = energy_identity_defect(m, phi_bar, data)
    report.wall_time = time.perf_counter() - t0
    return primal, dual, report
