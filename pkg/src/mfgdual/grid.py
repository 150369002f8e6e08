"""Periodic space-time discretization with exactly adjoint difference operators.

Layout (per spatial axis, periodic with ``n_x`` points, spacing ``h``):

* nodes sit at ``x_i = i * h``; the potential lives on time-nodes x space-nodes;
* cells are the control volumes centred at the nodes; densities and controls
  live on time-cells x space-cells (same index set as the nodes);
* faces sit halfway between adjacent nodes; momenta live on
  time-cells x space-faces, component ``a`` of face ``i`` at ``x_i + h/2``.

``spatial_gradient`` is the periodic forward difference (node -> face) and
``divergence`` is minus its adjoint (face -> cell), so summation by parts is
exact up to rounding.  The time derivative maps time-nodes to time-cells and
its adjoint produces the boundary terms at t=0 and t=T used by the
saddle-point Lagrangian.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mfgdual.errors import ShapeError, StaggeringError

NODE = "node"
CELL = "cell"
FACE = "face"


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Discretization of [0, T] x T^d, d in {1, 2}."""

    d: int
    n_x: int
    n_t: int
    T: float

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ShapeError(f"spatial dimension must be 1 or 2, got {self.d}")
        if self.n_x < 4:
            raise ShapeError(f"n_x must be >= 4, got {self.n_x}")
        if self.n_t < 2:
            raise ShapeError(f"n_t must be >= 2, got {self.n_t}")
        if not self.T > 0:
            raise ShapeError("horizon T must be positive")

    @property
    def h_x(self) -> float:
        return 1.0 / self.n_x

    @property
    def h_t(self) -> float:
        return self.T / self.n_t

    @property
    def cell_volume(self) -> float:
        """Space-time quadrature weight h_t * h_x^d."""
        return self.h_t * self.h_x**self.d

    @property
    def space_shape(self) -> tuple:
        return (self.n_x,) * self.d

    @property
    def n_cells_space(self) -> int:
        return self.n_x**self.d

    def axis_coords(self) -> np.ndarray:
        return np.arange(self.n_x) * self.h_x

    def node_points(self) -> np.ndarray:
        """Node coordinates, shape ``space_shape + (d,)``."""
        ax = self.axis_coords()
        if self.d == 1:
            return ax[:, None]
        gx, gy = np.meshgrid(ax, ax, indexing="ij")
        return np.stack([gx, gy], axis=-1)

    def time_nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_t + 1)

    def time_cells(self) -> np.ndarray:
        """Midpoints of the time intervals."""
        return (np.arange(self.n_t) + 0.5) * self.h_t

    def scalar_shape(self, stag: str) -> tuple:
        if stag == NODE:
            return (self.n_t + 1,) + self.space_shape
        if stag == CELL:
            return (self.n_t,) + self.space_shape
        raise StaggeringError(f"scalar fields are node or cell staggered, got {stag!r}")

    def vector_shape(self, stag: str) -> tuple:
        if stag in (FACE, CELL):
            return (self.d, self.n_t) + self.space_shape
        raise StaggeringError(f"vector fields are face or cell staggered, got {stag!r}")


@dataclass
class ScalarField:
    """Scalar field with a staggering tag; time axis first."""

    grid: SpaceTimeGrid
    stag: str
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        expected = self.grid.scalar_shape(self.stag)
        if self.values.shape != expected:
            raise ShapeError(
                f"{self.stag} scalar field must have shape {expected}, "
                f"got {self.values.shape}"
            )

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.stag, self.values.copy())


@dataclass
class VectorField:
    """Vector field stored with a leading component axis."""

    grid: SpaceTimeGrid
    stag: str
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        expected = self.grid.vector_shape(self.stag)
        if self.values.shape != expected:
            raise ShapeError(
                f"{self.stag} vector field must have shape {expected}, "
                f"got {self.values.shape}"
            )

    def copy(self) -> "VectorField":
        return VectorField(self.grid, self.stag, self.values.copy())


def zeros(grid: SpaceTimeGrid, kind: str, stag: str):
    if kind == "scalar":
        return ScalarField(grid, stag, np.zeros(grid.scalar_shape(stag)))
    if kind == "vector":
        return VectorField(grid, stag, np.zeros(grid.vector_shape(stag)))
    raise ShapeError(f"unknown field kind {kind!r}")


# ---------------------------------------------------------------------------
# Raw-array operators.  Spatial axes are the trailing axes; `axis0` is the
# offset of the first spatial axis in the array (1 for time-indexed fields).
# ---------------------------------------------------------------------------


def grad_arrays(phi: np.ndarray, h: float, d: int) -> np.ndarray:
    """Periodic forward difference per axis; output has leading component axis."""
    out = np.empty((d,) + phi.shape)
    for a in range(d):
        ax = phi.ndim - d + a
        out[a] = (np.roll(phi, -1, axis=ax) - phi) / h
    return out


def div_arrays(w: np.ndarray, h: float, d: int) -> np.ndarray:
    """Backward difference per axis (negative adjoint of ``grad_arrays``)."""
    comp = w[0]
    out = np.zeros(comp.shape)
    for a in range(d):
        ax = comp.ndim - d + a
        out += (w[a] - np.roll(w[a], 1, axis=ax)) / h
    return out


def face_to_cell(w: np.ndarray, d: int) -> np.ndarray:
    """Average the two faces of each cell, per axis."""
    out = np.empty_like(w)
    for a in range(d):
        ax = w[a].ndim - d + a
        out[a] = 0.5 * (w[a] + np.roll(w[a], 1, axis=ax))
    return out


def cell_to_face(u: np.ndarray, d: int) -> np.ndarray:
    """Adjoint of ``face_to_cell``: average the two cells adjacent to a face."""
    out = np.empty_like(u)
    for a in range(d):
        ax = u[a].ndim - d + a
        out[a] = 0.5 * (u[a] + np.roll(u[a], -1, axis=ax))
    return out


def central_grad_arrays(phi: np.ndarray, h: float, d: int) -> np.ndarray:
    """Face-averaged gradient at cells: central difference per axis."""
    return face_to_cell(grad_arrays(phi, h, d), d)


def central_div_arrays(u: np.ndarray, h: float, d: int) -> np.ndarray:
    """Divergence of a cell vector field, equal to div(cell_to_face(u))."""
    return div_arrays(cell_to_face(u, d), h, d)


def time_diff_arrays(phi: np.ndarray, h_t: float) -> np.ndarray:
    """(phi_{k+1} - phi_k) / h_t, time-nodes -> time-cells."""
    return (phi[1:] - phi[:-1]) / h_t


def time_diff_adjoint_arrays(m: np.ndarray, h_t: float) -> np.ndarray:
    """Adjoint of ``time_diff_arrays`` w.r.t. plain sums.

    Output lives on time-nodes; the first and last slices carry the boundary
    terms -m_0/h_t and +m_{n_t-1}/h_t of the discrete integration by parts.
    """
    out = np.zeros((m.shape[0] + 1,) + m.shape[1:])
    out[:-1] -= m / h_t
    out[1:] += m / h_t
    return out


# ---------------------------------------------------------------------------
# Staggered-field wrappers.
# ---------------------------------------------------------------------------


def spatial_gradient(phi: ScalarField) -> VectorField:
    """Periodic forward difference, node scalar -> face vector.

    Time-cell k of the output is the gradient at the earlier time node k;
    the gradient of the terminal slice never enters the running cost.
    """
    if phi.stag != NODE:
        raise StaggeringError("spatial_gradient expects a node-staggered scalar")
    g = phi.grid
    vals = grad_arrays(phi.values[:-1], g.h_x, g.d)
    return VectorField(g, FACE, vals)


def divergence(w: VectorField) -> ScalarField:
    """Face vector -> cell scalar, the negative adjoint of spatial_gradient."""
    if w.stag != FACE:
        raise StaggeringError("divergence expects a face-staggered vector")
    g = w.grid
    return ScalarField(g, CELL, div_arrays(w.values, g.h_x, g.d))


def time_derivative(phi: ScalarField) -> ScalarField:
    """First-order difference in time, node scalar -> cell scalar."""
    if phi.stag != NODE:
        raise StaggeringError("time_derivative expects a node-staggered scalar")
    g = phi.grid
    return ScalarField(g, CELL, time_diff_arrays(phi.values, g.h_t))


def mass(m_slice: np.ndarray, grid: SpaceTimeGrid) -> float:
    """Total mass of one spatial slice: sum(m) * h_x^d."""
    return float(np.sum(m_slice) * grid.h_x**grid.d)


def project_simplex(v: np.ndarray, grid: SpaceTimeGrid) -> np.ndarray:
    """Euclidean projection of a spatial slice onto {m >= 0, mass = 1}.

    Sort-based exact algorithm; the target raw sum is h_x^{-d}.
    """
    target = grid.h_x ** (-grid.d)
    return project_simplex_sum(v, target)


def project_simplex_sum(v: np.ndarray, target: float) -> np.ndarray:
    shape = v.shape
    x = np.ravel(v)
    u = np.sort(x)[::-1]
    css = np.cumsum(u) - target
    j = np.arange(1, x.size + 1)
    cond = u - css / j > 0
    rho = int(np.nonzero(cond)[0][-1]) + 1
    lam = css[rho - 1] / rho
    return np.maximum(x - lam, 0.0).reshape(shape)


def project_simplex_slices(m: np.ndarray, grid: SpaceTimeGrid) -> np.ndarray:
    """Apply the simplex projection to every time slice of a cell field."""
    out = np.empty_like(m)
    for k in range(m.shape[0]):
        out[k] = project_simplex(m[k], grid)
    return out


# ---------------------------------------------------------------------------
# Periodic interpolation (used by the model evaluators and the game module).
# ---------------------------------------------------------------------------


def periodic_interp(values: np.ndarray, points: np.ndarray, d: int) -> np.ndarray:
    """Multilinear periodic interpolation of a spatial sample array.

    ``points`` has trailing component axis of length ``d`` with coordinates
    in R^d (wrapped into [0,1) internally); returns shape ``points.shape[:-1]``.
    """
    pts = np.asarray(points, dtype=float)
    if pts.shape[-1] != d:
        raise ShapeError(f"points must have trailing axis of length {d}")
    n = values.shape[0]
    scaled = np.mod(pts, 1.0) * n
    i0 = np.floor(scaled).astype(int) % n
    frac = scaled - np.floor(scaled)
    i1 = (i0 + 1) % n
    if d == 1:
        a, b = values[i0[..., 0]], values[i1[..., 0]]
        return a * (1 - frac[..., 0]) + b * frac[..., 0]
    fx, fy = frac[..., 0], frac[..., 1]
    v00 = values[i0[..., 0], i0[..., 1]]
    v10 = values[i1[..., 0], i0[..., 1]]
    v01 = values[i0[..., 0], i1[..., 1]]
    v11 = values[i1[..., 0], i1[..., 1]]
    return (
        v00 * (1 - fx) * (1 - fy)
        + v10 * fx * (1 - fy)
        + v01 * (1 - fx) * fy
        + v11 * fx * fy
    )


# ---------------------------------------------------------------------------
# Field persistence: CSV (diffable default) and raw binary (opt in).
# ---------------------------------------------------------------------------


def field_to_csv(path, grid: SpaceTimeGrid, values: np.ndarray, names) -> None:
    """Write a time-indexed field as CSV rows ``t,x(,y),<names...>``.

    ``values`` is one array per named column, all shaped (n_slices, *space);
    row-major slice order, 17 significant digits.
    """
    arrays = [np.asarray(v) for v in values]
    n_slices = arrays[0].shape[0]
    if n_slices == grid.n_t + 1:
        times = grid.time_nodes()
    else:
        times = grid.time_cells()
    coords = grid.node_points().reshape(-1, grid.d)
    header = ["t", "x"] + (["y"] if grid.d == 2 else []) + list(names)
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for k in range(n_slices):
            flat = [a[k].reshape(-1) for a in arrays]
            for idx in range(coords.shape[0]):
                row = [times[k]] + list(coords[idx]) + [f[idx] for f in flat]
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def field_from_csv(path, grid: SpaceTimeGrid, n_columns: int) -> np.ndarray:
    """Inverse of :func:`field_to_csv`; returns shape (n_cols, n_slices, *space)."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    n_coord = 1 + grid.d
    cols = data[:, n_coord : n_coord + n_columns]
    n_space = grid.n_cells_space
    n_slices = data.shape[0] // n_space
    out = cols.T.reshape(n_columns, n_slices, *grid.space_shape)
    return out


def field_to_binary(path, values: np.ndarray) -> None:
    """Raw dump: little-endian int64 ndim, int64 dims, then float64 data."""
    arr = np.ascontiguousarray(values, dtype="<f8")
    with open(path, "wb") as fh:
        np.int64(arr.ndim).astype("<i8").tofile(fh)
        np.asarray(arr.shape, dtype="<i8").tofile(fh)
        arr.tofile(fh)


def field_from_binary(path) -> np.ndarray:
    with open(path, "rb") as fh:
        ndim = int(np.fromfile(fh, dtype="<i8", count=1)[0])
        shape = tuple(np.fromfile(fh, dtype="<i8", count=ndim))
        data = np.fromfile(fh, dtype="<f8").reshape(shape)
    return data
