"""Closed-form spatial presets and ready-made benchmark problems."""

from __future__ import annotations

import numpy as np

from mfgdual.grid import SpaceTimeGrid, mass
from mfgdual.model import PowerCoupling, PowerHamiltonian, ProblemData


def constant_field(grid: SpaceTimeGrid, value: float) -> np.ndarray:
    return np.full(grid.space_shape, float(value))


def uniform_density(grid: SpaceTimeGrid) -> np.ndarray:
    return np.ones(grid.space_shape)


def gaussian_bump(grid: SpaceTimeGrid, center, width: float) -> np.ndarray:
    """Periodized gaussian bump exp(-dist(x, center)^2 / (2 width^2)).

    Summed over 3 lattice images per axis; strictly positive everywhere.
    """
    center = np.atleast_1d(np.asarray(center, dtype=float))
    pts = grid.node_points()
    out = np.zeros(grid.space_shape)
    shifts = (-1.0, 0.0, 1.0)
    if grid.d == 1:
        for s in shifts:
            out += np.exp(-((pts[..., 0] - center[0] + s) ** 2) / (2 * width**2))
    else:
        for sx in shifts:
            for sy in shifts:
                d2 = (pts[..., 0] - center[0] + sx) ** 2 + (
                    pts[..., 1] - center[1] + sy
                ) ** 2
                out += np.exp(-d2 / (2 * width**2))
    return out


def cosine_field(grid: SpaceTimeGrid, amplitude: float, frequency: float) -> np.ndarray:
    """amplitude * cos(2 pi frequency x), averaged over axes in 2-D."""
    pts = grid.node_points()
    if grid.d == 1:
        return amplitude * np.cos(2 * np.pi * frequency * pts[..., 0])
    return (
        amplitude
        * 0.5
        * (
            np.cos(2 * np.pi * frequency * pts[..., 0])
            + np.cos(2 * np.pi * frequency * pts[..., 1])
        )
    )


def normalize_density(values: np.ndarray, grid: SpaceTimeGrid) -> np.ndarray:
    """Scale nonnegative samples to unit mass."""
    total = mass(values, grid)
    if total <= 0:
        raise ValueError("density samples must have positive mass")
    return values / total


def homogeneous_problem(
    n_x: int = 32, n_t: int = 32, T: float = 1.0, d: int = 1
) -> ProblemData:
    """Spatially homogeneous benchmark: r = q = 2, c = 1, ell = 0, m0 = 1.

    The exact solution is m = 1, phi(t, x) = T - t, alpha = 1.
    """
    grid = SpaceTimeGrid(d=d, n_x=n_x, n_t=n_t, T=T)
    ham = PowerHamiltonian(r=2.0, ell=constant_field(grid, 0.0), lipschitz_ell=0.0)
    cpl = PowerCoupling(q=2.0, c=constant_field(grid, 1.0))
    return ProblemData(
        grid=grid,
        hamiltonian=ham,
        coupling=cpl,
        m0=uniform_density(grid),
        phi_T=constant_field(grid, 0.0),
    )


def gaussian_problem(
    n_x: int = 32,
    n_t: int = 32,
    T: float = 1.0,
    d: int = 1,
    center: float = 0.5,
    width: float = 0.25,
) -> ProblemData:
    """Gaussian-bump initial density, r = q = 2, flat costs.

    The bump is wide enough to be well resolved at the benchmark grids.
    """
    grid = SpaceTimeGrid(d=d, n_x=n_x, n_t=n_t, T=T)
    ham = PowerHamiltonian(r=2.0, ell=constant_field(grid, 0.0), lipschitz_ell=0.0)
    cpl = PowerCoupling(q=2.0, c=constant_field(grid, 1.0))
    centre = (center,) * d
    m0 = normalize_density(gaussian_bump(grid, centre, width), grid)
    return ProblemData(
        grid=grid,
        hamiltonian=ham,
        coupling=cpl,
        m0=m0,
        phi_T=constant_field(grid, 0.0),
    )
