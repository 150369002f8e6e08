"""N-player deterministic game built from the computed mean field solution.

Players control their velocities; player i pays the running cost
L(gamma_i, dgamma_i) = H*(gamma_i, -dgamma_i), a regularized local coupling
evaluated on the empirical measure of the other players, and the terminal
cost.  The coupling is mollified twice: a width-delta kernel gives meaning
to f at atomic measures, and a width-sigma kernel restores spatial
regularity:

    f_ds(x, mu) = int xi_sigma(x - y) f(y, (xi_delta * mu)(y)) dy.

Open-loop play: each player samples its start from m0 and follows the flow
of the transport field w/m (mollified so the denominator is positive).  A
best response against frozen opponents solves the backward HJ equation with
the frozen empirical coupling as right-hand side (same monotone sweep as
the solver) and integrates the optimal flow -D_pH(x, D phi) forward.  The
Nash gap is the largest cost improvement any sampled player can achieve.

Per-player RNG streams are spawned from the seed, so results do not depend
on scheduling or worker count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from mfgdual.errors import ProblemError
from mfgdual.functionals import DualState, PrimalState
from mfgdual.grid import central_grad_arrays, periodic_interp
from mfgdual.model import ProblemData
from mfgdual.solver import maximal_subsolution


@dataclass(frozen=True)
class GameConfig:
    n_players: int
    delta: float = 0.15
    sigma: float = 0.15
    seed: int = 0
    ode_steps: int = 4
    sample_players: int = 16

    def validate(self, data: ProblemData) -> None:
        g = data.grid
        if self.n_players < 2:
            raise ProblemError("the game needs at least 2 players")
        if self.delta < 2 * g.h_x or self.sigma < 2 * g.h_x:
            raise ProblemError(
                f"mollifier widths must be at least 2 h_x = {2 * g.h_x:.4g}"
            )
        if self.sample_players > self.n_players:
            raise ProblemError("sample_players cannot exceed the player count")
        if self.ode_steps < 1:
            raise ProblemError("ode_steps must be >= 1")

    def to_dict(self) -> dict:
        return {
            "n_players": self.n_players,
            "delta": self.delta,
            "sigma": self.sigma,
            "seed": self.seed,
            "ode_steps": self.ode_steps,
            "sample_players": self.sample_players,
        }


@dataclass
class TrajectoryEnsemble:
    """Sampled equilibrium paths: positions at time nodes, cell velocities."""

    paths: np.ndarray  # (N, n_t + 1, d), torus coordinates
    velocities: np.ndarray  # (N, n_t, d), unwrapped displacement rates
    seed: int
    provenance: dict = field(default_factory=dict)

    @property
    def n_players(self) -> int:
        return self.paths.shape[0]


@dataclass
class NashReport:
    epsilon_hat: float
    gains: list
    player_costs: list
    best_response_costs: list
    sampled_players: list
    mean_cost: float
    value_phi0: float

    def to_dict(self) -> dict:
        return {
            "epsilon_hat": self.epsilon_hat,
            "gains": self.gains,
            "player_costs": self.player_costs,
            "best_response_costs": self.best_response_costs,
            "sampled_players": self.sampled_players,
            "mean_cost": self.mean_cost,
            "value_phi0": self.value_phi0,
        }


# ---------------------------------------------------------------------------
# Kernels.
# ---------------------------------------------------------------------------

_BUMP_NORM = {1: 35.0 / 32.0, 2: 4.0 / np.pi}


def bump_kernel(z: np.ndarray, width: float, d: int) -> np.ndarray:
    """Periodized C^2 bump (1 - |u|^2)^3 of unit mass, u = z / width.

    Lattice images are summed over 3 shifts per axis, enough for any width
    below 1.  ``z`` has trailing component axis of length d.
    """
    z = np.asarray(z, dtype=float)
    out = np.zeros(z.shape[:-1])
    shifts = (-1.0, 0.0, 1.0)
    if d == 1:
        for s in shifts:
            u2 = ((z[..., 0] + s) / width) ** 2
            out += np.where(u2 < 1.0, (1.0 - np.minimum(u2, 1.0)) ** 3, 0.0)
    else:
        for sx in shifts:
            for sy in shifts:
                u2 = ((z[..., 0] + sx) ** 2 + (z[..., 1] + sy) ** 2) / width**2
                out += np.where(u2 < 1.0, (1.0 - np.minimum(u2, 1.0)) ** 3, 0.0)
    return out * (_BUMP_NORM[d] / width**d)


def gaussian_kernel_grid(grid, width: float) -> np.ndarray:
    """Strictly positive periodized gaussian sampled on the grid, unit mass.

    Used for the flow-field mollification, where the denominator m must be
    positive everywhere; the compactly supported bump cannot guarantee that.
    """
    ax = grid.axis_coords()
    z = np.minimum(ax, 1.0 - ax)
    k1 = np.exp(-(z**2) / (2 * width**2))
    if grid.d == 1:
        k = k1
    else:
        k = k1[:, None] * k1[None, :]
    return k / (np.sum(k) * grid.h_x**grid.d)


def _grid_convolve(values: np.ndarray, kernel: np.ndarray, grid) -> np.ndarray:
    """Circular convolution with a grid-sampled kernel times h^d."""
    axes = tuple(range(values.ndim - grid.d, values.ndim))
    vf = np.fft.rfftn(values, axes=axes)
    # kernel index i holds the displacement i*h mod 1, as circular conv needs
    kf = np.fft.rfftn(kernel, axes=tuple(range(grid.d)))
    out = np.fft.irfftn(vf * kf, s=grid.space_shape, axes=axes)
    return out * grid.h_x**grid.d


# ---------------------------------------------------------------------------
# Mollified coupling.
# ---------------------------------------------------------------------------


def smoothed_empirical_density(
    points: np.ndarray, y, delta: float, d: int
) -> np.ndarray:
    """(xi_delta * mu)(y) for the empirical measure of ``points``.

    ``points`` is (M, d); ``y`` has trailing component axis; exact kernel
    sums, no quadrature.
    """
    points = np.asarray(points, dtype=float).reshape(-1, d)
    y = np.asarray(y, dtype=float)
    diff = y[..., None, :] - points  # (..., M, d)
    vals = bump_kernel(diff, delta, d)
    return np.mean(vals, axis=-1)


def mollified_coupling(
    data: ProblemData, x, positions, delta: float, sigma: float
) -> np.ndarray:
    """f_ds(x, empirical measure of positions); x may be a batch of points."""
    g = data.grid
    if delta < 2 * g.h_x or sigma < 2 * g.h_x:
        raise ProblemError("mollifier widths below the grid resolution")
    positions = np.asarray(positions, dtype=float).reshape(-1, g.d)
    if positions.shape[0] == 0:
        raise ProblemError("mollified coupling needs at least one position")
    ygrid = g.node_points()
    rho = smoothed_empirical_density(positions, ygrid, delta, g.d)
    f_vals = data.coupling.f_grid(rho, data.coupling.c)
    x = np.asarray(x, dtype=float)
    diff = x[..., None, :] - ygrid.reshape(-1, g.d)
    kern = bump_kernel(diff, sigma, g.d)
    return np.sum(kern * f_vals.reshape(-1), axis=-1) * g.h_x**g.d


def _coupling_field_on_grid(
    data: ProblemData, f_vals: np.ndarray, sigma: float
) -> np.ndarray:
    """sigma-smoothing of a sampled spatial field by circular convolution."""
    g = data.grid
    ax = g.node_points() - 0.0
    kern = bump_kernel(ax, sigma, g.d)  # kernel centred at the origin node
    return _grid_convolve(f_vals, kern, g)


# ---------------------------------------------------------------------------
# Trajectory sampling.
# ---------------------------------------------------------------------------


def _sample_initial_positions(data: ProblemData, n: int, seed: int) -> np.ndarray:
    """Draw n i.i.d. starts from m0 by inverse CDF (cellwise constant density).

    Per-player RNG streams keep the draw independent of worker scheduling.
    """
    g = data.grid
    weights = (data.m0 / np.sum(data.m0)).reshape(-1)
    cdf = np.cumsum(weights)
    children = np.random.SeedSequence(seed).spawn(n)
    out = np.empty((n, g.d))
    coords = g.node_points().reshape(-1, g.d)
    for j in range(n):
        rng = np.random.default_rng(children[j])
        u = rng.random()
        idx = int(np.searchsorted(cdf, u, side="left"))
        idx = min(idx, weights.size - 1)
        inner = rng.random(g.d)
        out[j] = np.mod(coords[idx] + inner * g.h_x, 1.0)
    return out


def transport_velocity_field(
    primal: PrimalState, data: ProblemData, eps: float
) -> np.ndarray:
    """Mollified flow field v = w_eps / m_eps on cells, shape (n_t, *space, d).

    The gaussian mollifier is strictly positive, so m_eps > 0 everywhere.
    """
    g = data.grid
    kern = gaussian_kernel_grid(g, eps)
    m_eps = _grid_convolve(primal.m, kern, g)
    v = np.empty((g.n_t,) + g.space_shape + (g.d,))
    for a in range(g.d):
        w_eps = _grid_convolve(primal.w[a], kern, g)
        v[..., a] = w_eps / m_eps
    return v


def _integrate_flow(
    x0: np.ndarray, field_at, data: ProblemData, ode_steps: int
) -> tuple:
    """Explicit midpoint integration of dx = v(t, x); returns (paths, vels).

    ``field_at(k, pts)`` evaluates the (time-cell k) velocity at torus points
    of shape (..., d).  Positions wrap; velocities store unwrapped rates.
    """
    g = data.grid
    n = x0.shape[0]
    paths = np.empty((n, g.n_t + 1, g.d))
    vels = np.empty((n, g.n_t, g.d))
    paths[:, 0] = np.mod(x0, 1.0)
    dt = g.h_t / ode_steps
    for k in range(g.n_t):
        x = paths[:, k].copy()
        disp = np.zeros_like(x)
        for _ in range(ode_steps):
            v1 = field_at(k, x)
            xm = np.mod(x + 0.5 * dt * v1, 1.0)
            v2 = field_at(k, xm)
            x = np.mod(x + dt * v2, 1.0)
            disp += dt * v2
        paths[:, k + 1] = x
        vels[:, k] = disp / g.h_t
    return paths, vels


def sample_equilibrium_trajectories(
    primal: PrimalState, data: ProblemData, cfg: GameConfig
) -> TrajectoryEnsemble:
    """Draw starts from m0 and follow the mollified transport field."""
    cfg.validate(data)
    g = data.grid
    eps = max(cfg.delta, 2 * g.h_x)
    v = transport_velocity_field(primal, data, eps)

    def field_at(k, pts):
        out = np.empty_like(pts)
        for a in range(g.d):
            out[..., a] = periodic_interp(v[k, ..., a], pts, g.d)
        return out

    x0 = _sample_initial_positions(data, cfg.n_players, cfg.seed)
    paths, vels = _integrate_flow(x0, field_at, data, cfg.ode_steps)
    return TrajectoryEnsemble(
        paths=paths,
        velocities=vels,
        seed=cfg.seed,
        provenance={"eps": eps, "ode_steps": cfg.ode_steps},
    )


# ---------------------------------------------------------------------------
# Costs, best responses, the Nash gap.
# ---------------------------------------------------------------------------


def _coupling_along_path(
    data: ProblemData, cfg: GameConfig, path: np.ndarray, others: np.ndarray
) -> np.ndarray:
    """f_ds(path(t_k), empirical measure of others at t_k) for all nodes k."""
    n_nodes = path.shape[0]
    out = np.empty(n_nodes)
    for k in range(n_nodes):
        out[k] = mollified_coupling(
            data, path[k], others[:, k], cfg.delta, cfg.sigma
        )
    return out


def player_cost(
    i: int, ensemble: TrajectoryEnsemble, cfg: GameConfig, data: ProblemData,
    path: np.ndarray = None, velocities: np.ndarray = None,
) -> float:
    """Running + coupling + terminal cost of player i.

    ``path``/``velocities`` override player i's own trajectory (used for
    deviations); opponents always come from the ensemble.
    """
    g = data.grid
    ham = data.hamiltonian
    if path is None:
        path = ensemble.paths[i]
        velocities = ensemble.velocities[i]
    others = np.delete(ensemble.paths, i, axis=0)

    mid = 0.5 * (path[:-1] + path[1:])
    lag = ham.lagrangian(np.mod(mid, 1.0), velocities)
    run_l = float(np.sum(lag) * g.h_t)

    fvals = _coupling_along_path(data, cfg, path, others)
    run_f = float(np.trapz(fvals, dx=g.h_t))

    terminal = float(periodic_interp(data.phi_T, path[-1], g.d))
    return run_l + run_f + terminal


def frozen_coupling_field(
    i: int, ensemble: TrajectoryEnsemble, cfg: GameConfig, data: ProblemData
) -> np.ndarray:
    """alpha_hat(t, x) = f_ds(x, empirical measure of others) on the cells.

    Time-cell k uses the opponents' positions at the earlier node k,
    matching the pairing of the backward sweep.
    """
    g = data.grid
    others = np.delete(ensemble.paths, i, axis=0)
    ygrid = g.node_points()
    out = np.empty(g.scalar_shape("cell"))
    for k in range(g.n_t):
        rho = smoothed_empirical_density(others[:, k], ygrid, cfg.delta, g.d)
        f_vals = data.coupling.f_grid(rho, data.coupling.c)
        out[k] = _coupling_field_on_grid(data, f_vals, cfg.sigma)
    return out


def best_response(
    i: int, ensemble: TrajectoryEnsemble, cfg: GameConfig, data: ProblemData
):
    """Optimal deviation of player i against frozen opponents.

    Solves the backward HJ equation with the frozen empirical coupling by
    the monotone sweep, then integrates dx = -D_pH(x, D phi) forward from
    the player's start.  The empirical coupling can be rough (its gradients
    grow as N drops), so the sweep runs on an internally time-refined grid
    when the artifact grid violates the CFL bound; the refinement escalates
    at most four times before the CFL error propagates.  Returns
    (path, velocities, cost) sampled back on the artifact time nodes.
    """
    from mfgdual.errors import CFLError
    from mfgdual.grid import SpaceTimeGrid

    g = data.grid
    alpha_hat = frozen_coupling_field(i, ensemble, cfg, data)

    factor = 1
    for attempt in range(5):
        if factor == 1:
            fine_data, alpha_fine = data, alpha_hat
        else:
            fine_grid = SpaceTimeGrid(d=g.d, n_x=g.n_x, n_t=g.n_t * factor, T=g.T)
            fine_data = ProblemData(
                grid=fine_grid,
                hamiltonian=data.hamiltonian,
                coupling=data.coupling,
                m0=data.m0,
                phi_T=data.phi_T,
            )
            alpha_fine = np.repeat(alpha_hat, factor, axis=0)
        try:
            phi_hat = maximal_subsolution(alpha_fine, fine_data)
            break
        except CFLError as exc:
            if attempt == 4:
                raise
            suggested = exc.suggested_n_t or 2 * fine_data.grid.n_t
            factor = max(factor * 2, int(np.ceil(1.1 * suggested / g.n_t)))

    fg = fine_data.grid
    ham = data.hamiltonian
    grads = np.empty((fg.n_t,) + g.space_shape + (g.d,))
    for k in range(fg.n_t):
        gk = central_grad_arrays(phi_hat[k], g.h_x, g.d)
        hp = ham.dp_grid(gk)
        for a in range(g.d):
            grads[k, ..., a] = -hp[a]

    def field_at(k, pts):
        out = np.empty_like(pts)
        for a in range(g.d):
            out[..., a] = periodic_interp(grads[k, ..., a], pts, g.d)
        return out

    x0 = ensemble.paths[i, 0][None]
    paths_f, vels_f = _integrate_flow(x0, field_at, fine_data, cfg.ode_steps)
    # resample on the artifact time nodes; velocities aggregate displacement
    path = paths_f[0, ::factor]
    vels = vels_f[0].reshape(g.n_t, factor, g.d).mean(axis=1)
    cost = player_cost(i, ensemble, cfg, data, path=path, velocities=vels)
    return path, vels, cost


def nash_gap(
    ensemble: TrajectoryEnsemble,
    cfg: GameConfig,
    data: ProblemData,
    phi0: np.ndarray = None,
) -> NashReport:
    """Best-response gains for the sampled players and the epsilon estimate.

    ``phi0`` (the potential at t = 0) supplies the mean-field value
    int phi(0) m0 that the average realized cost is compared against.
    """
    g = data.grid
    sampled = list(range(cfg.sample_players))
    costs, br_costs, gains = [], [], []
    for i in sampled:
        c_now = player_cost(i, ensemble, cfg, data)
        _, _, c_br = best_response(i, ensemble, cfg, data)
        costs.append(c_now)
        br_costs.append(c_br)
        gains.append(c_now - c_br)
    eps_hat = max(0.0, max(gains))
    value = np.nan
    if phi0 is not None:
        value = float(np.sum(phi0 * data.m0) * g.h_x**g.d)
    return NashReport(
        epsilon_hat=float(eps_hat),
        gains=[float(v) for v in gains],
        player_costs=[float(v) for v in costs],
        best_response_costs=[float(v) for v in br_costs],
        sampled_players=sampled,
        mean_cost=float(np.mean(costs)),
        value_phi0=value,
    )


# ---------------------------------------------------------------------------
# Diagnostics: pushforward distance and the curve-energy audit.
# ---------------------------------------------------------------------------


def wasserstein1_circle(samples: np.ndarray, density: np.ndarray, grid,
                        refine: int = 8) -> float:
    """1-Wasserstein distance on the circle between an empirical sample set
    and a cellwise-constant density (d = 1 only).

    Uses the CDF representation W1 = min_c int |F_emp - F_dens - c| with the
    optimal shift at the median, on a grid refined ``refine``-fold.
    """
    if grid.d != 1:
        raise ProblemError("circle Wasserstein distance is 1-D only")
    n_fine = refine * grid.n_x
    xs = (np.arange(n_fine) + 0.5) / n_fine
    samples = np.mod(np.asarray(samples, dtype=float).reshape(-1), 1.0)
    f_emp = np.searchsorted(np.sort(samples), xs, side="right") / samples.size
    w = density.reshape(-1) * grid.h_x
    w = w / np.sum(w)
    # cell i covers [i h, (i+1) h): piecewise-linear CDF of the density
    cum = np.concatenate([[0.0], np.cumsum(w)])
    pos = xs * grid.n_x
    idx = np.minimum(pos.astype(int), grid.n_x - 1)
    f_dens = cum[idx] + (pos - idx) * w[idx]
    diff = f_emp - f_dens
    shift = np.median(diff)
    return float(np.mean(np.abs(diff - shift)))


def pushforward_distances(
    ensemble: TrajectoryEnsemble, primal: PrimalState, data: ProblemData,
    time_cells=None,
) -> list:
    """W1 between the ensemble slice and m(t) at selected time cells."""
    g = data.grid
    if time_cells is None:
        time_cells = [0, g.n_t // 2, g.n_t - 1]
    out = []
    for k in time_cells:
        w1 = wasserstein1_circle(ensemble.paths[:, k + 1], primal.m[k], g)
        out.append((int(k), float(w1)))
    return out


def energy_equality_audit(
    ensemble: TrajectoryEnsemble,
    primal: PrimalState,
    dual: DualState,
    data: ProblemData,
) -> dict:
    """Defect of the curve-energy identity: average curve cost plus the
    coupling and terminal terms against int phi(0) m0."""
    g = data.grid
    ham = data.hamiltonian
    mid = 0.5 * (ensemble.paths[:, :-1] + ensemble.paths[:, 1:])
    lag = ham.lagrangian(np.mod(mid, 1.0), ensemble.velocities)
    curve_energy = float(np.mean(np.sum(lag, axis=1) * g.h_t))
    f_of_m = data.coupling.f_grid(primal.m, data.coupling.c[None])
    coupling_term = float(np.sum(f_of_m * primal.m) * g.cell_volume)
    terminal = float(np.sum(data.phi_T * primal.m[-1]) * g.h_x**g.d)
    value = float(np.sum(dual.phi[0] * data.m0) * g.h_x**g.d)
    total = curve_energy + coupling_term + terminal
    return {
        "curve_energy": curve_energy,
        "coupling_term": coupling_term,
        "terminal_term": terminal,
        "value_phi0": value,
        "defect": abs(total - value),
    }
