"""Admissible Hamiltonian and coupling families with closed-form conjugates.

The built-in families are

* ``H(x, p) = |p|^r / r - ell(x)`` with ``r > 1``,
* ``f(x, m) = c(x) * m^(q-1)`` with ``q > 1`` and ``inf c > 0``,

whose convex conjugates and derivatives are all available in closed form:

* ``H*(x, xi) = |xi|^(r') / r' + ell(x)``, ``1/r + 1/r' = 1``,
* ``D_p H(x, p) = |p|^(r-2) p`` (defined as 0 at p = 0),
* ``F(x, m) = c(x) m^q / q`` for ``m >= 0`` (+infinity for m < 0),
* ``F*(x, a) = (a v 0)^p c(x)^(1-p) / p``, ``1/p + 1/q = 1``.

Spatial data (``ell``, ``c``, the initial density and terminal cost) are
grid samples; pointwise evaluators interpolate them periodically.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from mfgdual.errors import ProblemError, ShapeError
from mfgdual.grid import SpaceTimeGrid, mass, periodic_interp


class _InfiniteCost:
    """Tagged +infinity sentinel; never a float Inf inside reductions."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "INFINITE_COST"


INFINITE_COST = _InfiniteCost()


def conjugate_exponent(s: float) -> float:
    """Return s' with 1/s + 1/s' = 1."""
    if not s > 1:
        raise ProblemError(f"exponent must exceed 1 for conjugation, got {s}")
    return s / (s - 1.0)


def nu_exponent(r: float, q: float, d: int) -> float:
    """Hoelder-in-time exponent (r - d(q-1)) / (d(q-1)(r-1) + r q)."""
    return (r - d * (q - 1.0)) / (d * (q - 1.0) * (r - 1.0) + r * q)


def _vec_norm(p: np.ndarray) -> np.ndarray:
    """Euclidean norm over the trailing component axis."""
    return np.sqrt(np.sum(np.asarray(p, dtype=float) ** 2, axis=-1))


@dataclass(frozen=True)
class PowerHamiltonian:
    """H(x, p) = |p|^r / r - ell(x) on the torus.

    ``ell`` holds node samples of the potential (shape (n_x,)*d) and
    ``lipschitz_ell`` is its declared Lipschitz constant; (H3) holds with
    theta = 0 exactly when ell is Lipschitz.
    """

    r: float
    ell: np.ndarray
    lipschitz_ell: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "ell", np.asarray(self.ell, dtype=float))

    @property
    def r_conj(self) -> float:
        return conjugate_exponent(self.r)

    @property
    def d(self) -> int:
        return self.ell.ndim

    def ell_at(self, x) -> np.ndarray:
        return periodic_interp(self.ell, np.asarray(x, dtype=float), self.d)

    # pointwise API: x has trailing component axis of length d, so do p, xi

    def value(self, x, p) -> np.ndarray:
        return _vec_norm(p) ** self.r / self.r - self.ell_at(x)

    def conjugate(self, x, xi) -> np.ndarray:
        rc = self.r_conj
        return _vec_norm(xi) ** rc / rc + self.ell_at(x)

    def dp(self, x, p) -> np.ndarray:
        """Gradient in p; the minimal-norm subgradient 0 is used at p = 0."""
        p = np.asarray(p, dtype=float)
        n = _vec_norm(p)
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(n > 0.0, n ** (self.r - 2.0), 0.0)
        return scale[..., None] * p

    def dxi_conjugate(self, x, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        n = _vec_norm(xi)
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(n > 0.0, n ** (self.r_conj - 2.0), 0.0)
        return scale[..., None] * xi

    def lagrangian(self, x, xi) -> np.ndarray:
        """Running cost of velocity: L(x, xi) = H*(x, -xi)."""
        return self.conjugate(x, -np.asarray(xi, dtype=float))

    # grid API: p stacked with leading component axis, ell broadcast by caller

    def value_grid(self, p: np.ndarray, ell) -> np.ndarray:
        return np.sum(p**2, axis=0) ** (self.r / 2.0) / self.r - ell

    def conjugate_grid(self, xi: np.ndarray, ell) -> np.ndarray:
        rc = self.r_conj
        return np.sum(xi**2, axis=0) ** (rc / 2.0) / rc + ell

    def dp_grid(self, p: np.ndarray) -> np.ndarray:
        n2 = np.sum(p**2, axis=0)
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(n2 > 0.0, n2 ** ((self.r - 2.0) / 2.0), 0.0)
        return scale[None] * p


@dataclass(frozen=True)
class PowerCoupling:
    """f(x, m) = c(x) m^(q-1) for m >= 0, with primitive F and conjugate F*."""

    q: float
    c: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "c", np.asarray(self.c, dtype=float))

    @property
    def p_conj(self) -> float:
        return conjugate_exponent(self.q)

    @property
    def d(self) -> int:
        return self.c.ndim

    def c_at(self, x) -> np.ndarray:
        return periodic_interp(self.c, np.asarray(x, dtype=float), self.d)

    def f(self, x, m) -> np.ndarray:
        m = np.asarray(m, dtype=float)
        if np.any(m < 0):
            raise ProblemError("coupling f is only defined for m >= 0")
        return self.c_at(x) * m ** (self.q - 1.0)

    def F(self, x, m):
        """Primitive of f in m; returns the +infinity sentinel for m < 0."""
        m = np.asarray(m, dtype=float)
        if np.any(m < 0):
            return INFINITE_COST
        return self.c_at(x) * m**self.q / self.q

    def F_star(self, x, a) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        p = self.p_conj
        return np.maximum(a, 0.0) ** p * self.c_at(x) ** (1.0 - p) / p

    def f_grid(self, m: np.ndarray, c) -> np.ndarray:
        return c * m ** (self.q - 1.0)

    def F_grid(self, m: np.ndarray, c) -> np.ndarray:
        return c * m**self.q / self.q

    def F_star_grid(self, a: np.ndarray, c) -> np.ndarray:
        p = self.p_conj
        return np.maximum(a, 0.0) ** p * c ** (1.0 - p) / p

    def F_star_prime_grid(self, a: np.ndarray, c) -> np.ndarray:
        """dF*/da; equals the inverse of f(x, .) on positives."""
        p = self.p_conj
        return np.maximum(a, 0.0) ** (p - 1.0) * c ** (1.0 - p)


@dataclass(frozen=True)
class ProblemData:
    """Full problem description sampled on a space-time grid."""

    grid: SpaceTimeGrid
    hamiltonian: PowerHamiltonian
    coupling: PowerCoupling
    m0: np.ndarray
    phi_T: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "m0", np.asarray(self.m0, dtype=float))
        object.__setattr__(self, "phi_T", np.asarray(self.phi_T, dtype=float))
        shp = self.grid.space_shape
        for name in ("m0", "phi_T"):
            arr = getattr(self, name)
            if arr.shape != shp:
                raise ShapeError(f"{name} must have shape {shp}, got {arr.shape}")
        for name in ("ell", "c"):
            arr = getattr(self.hamiltonian, "ell") if name == "ell" else self.coupling.c
            if arr.shape != shp:
                raise ShapeError(f"{name} samples must have shape {shp}")

    @property
    def d(self) -> int:
        return self.grid.d

    @property
    def T(self) -> float:
        return self.grid.T

    def with_phi_T(self, phi_T: np.ndarray) -> "ProblemData":
        return ProblemData(self.grid, self.hamiltonian, self.coupling, self.m0, phi_T)

    def with_m0(self, m0: np.ndarray) -> "ProblemData":
        return ProblemData(self.grid, self.hamiltonian, self.coupling, m0, self.phi_T)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""
    where: Optional[tuple] = None


@dataclass
class ValidationReport:
    checks: list = field(default_factory=list)
    nu: Optional[float] = None
    constants: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list:
        return [c for c in self.checks if not c.passed]

    def summary(self) -> str:
        lines = []
        for c in self.checks:
            mark = "pass" if c.passed else "FAIL"
            where = f" at {c.where}" if c.where is not None else ""
            lines.append(f"[{mark}] {c.name}: {c.detail}{where}")
        if self.nu is not None:
            lines.append(f"nu = {self.nu:.6g}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "nu": self.nu,
            "constants": self.constants,
            "checks": [
                {
                    "name": c.name,
                    "passed": c.passed,
                    "detail": c.detail,
                    "where": list(c.where) if c.where is not None else None,
                }
                for c in self.checks
            ],
        }


MASS_TOL = 1e-8


def validate(data: ProblemData) -> ValidationReport:
    """Check the structural assumptions on the coupling, the Hamiltonian and
    the boundary data; never raises, failures are reported.

    The growth constants are existential in the theory, so the report records
    the tightest constants observed on samples instead of asserting values.
    """
    rep = ValidationReport()
    ham, cpl, g = data.hamiltonian, data.coupling, data.grid
    r, q, d = ham.r, cpl.q, data.d

    # (H1) coupling: q > 1, strictly increasing, f(x,0)=0, inf c > 0
    c_min, c_max = float(np.min(cpl.c)), float(np.max(cpl.c))
    rep.checks.append(
        CheckResult("H1.exponent", q > 1.0, f"q = {q} must exceed 1")
    )
    where = None
    if c_min <= 0:
        where = tuple(int(i) for i in np.unravel_index(np.argmin(cpl.c), cpl.c.shape))
    rep.checks.append(
        CheckResult(
            "H1.weight_positive", c_min > 0.0, f"inf c = {c_min:.6g}", where
        )
    )
    rep.checks.append(
        CheckResult("H1.normalization", True, "f(x, 0) = 0 holds by construction")
    )
    rep.constants["C0f_observed"] = max(c_max, 1.0 / c_min if c_min > 0 else np.inf)

    # (H2) Hamiltonian growth: r > 1 and r > d(q-1)
    rep.checks.append(CheckResult("H2.exponent", r > 1.0, f"r = {r} must exceed 1"))
    compat = r > d * (q - 1.0)
    rep.checks.append(
        CheckResult(
            "H2.compatibility",
            compat,
            f"r - d(q-1) = {r - d * (q - 1.0):.6g} must be positive",
        )
    )
    ell_sup = float(np.max(np.abs(ham.ell)))
    c0h = max(1.0, ell_sup) * r
    samples = np.linspace(0.0, 8.0, 33)
    worst = 0.0
    worst_at = None
    ok_growth = True
    for pn in samples:
        hvals = pn**r / r - ham.ell
        lo = pn**r / (r * c0h) - c0h
        hi = c0h / r * pn**r + c0h
        bad_lo = hvals < lo - 1e-12
        bad_hi = hvals > hi + 1e-12
        if np.any(bad_lo) or np.any(bad_hi):
            ok_growth = False
            idx = np.unravel_index(np.argmax(bad_lo + bad_hi), hvals.shape)
            worst_at = (float(pn),) + tuple(int(i) for i in idx)
        worst = max(worst, float(np.max(np.abs(hvals) / (1.0 + pn**r))))
    rep.checks.append(
        CheckResult(
            "H2.growth_sandwich",
            ok_growth,
            f"sampled with C0H = {c0h:.6g}",
            worst_at,
        )
    )
    rep.constants["C0H_declared"] = c0h
    rep.constants["H_over_growth_observed"] = worst

    # (H3) with theta = 0: ell Lipschitz; spot-check adjacent nodes per axis
    h = g.h_x
    lip_obs = 0.0
    lip_where = None
    for a in range(d):
        diff = np.abs(np.roll(ham.ell, -1, axis=a) - ham.ell) / h
        m = float(np.max(diff))
        if m > lip_obs:
            lip_obs = m
            lip_where = tuple(
                int(i) for i in np.unravel_index(np.argmax(diff), diff.shape)
            )
    ok_lip = lip_obs <= ham.lipschitz_ell * (1.0 + 1e-9) + 1e-12
    rep.checks.append(
        CheckResult(
            "H3.lipschitz_ell",
            ok_lip,
            f"observed slope {lip_obs:.6g} vs declared {ham.lipschitz_ell:.6g}",
            None if ok_lip else lip_where,
        )
    )
    rep.constants["lipschitz_ell_observed"] = lip_obs

    # (H4) boundary data
    m0 = data.m0
    neg = m0 < 0
    where = None
    if np.any(neg):
        where = tuple(int(i) for i in np.unravel_index(np.argmin(m0), m0.shape))
    rep.checks.append(
        CheckResult(
            "H4.m0_nonnegative", not np.any(neg), f"min m0 = {float(np.min(m0)):.6g}",
            where,
        )
    )
    total = mass(m0, g)
    rep.checks.append(
        CheckResult(
            "H4.m0_mass",
            abs(total - 1.0) <= MASS_TOL,
            f"mass = {total:.12g} (tolerance {MASS_TOL})",
        )
    )
    rep.checks.append(
        CheckResult(
            "H4.phi_T_finite",
            bool(np.all(np.isfinite(data.phi_T))),
            "terminal cost samples finite",
        )
    )

    if compat and q > 1.0 and r > 1.0:
        rep.nu = nu_exponent(r, q, d)
    return rep


def require_valid(data: ProblemData) -> ValidationReport:
    """Validate and raise :class:`ProblemError` listing any failures."""
    rep = validate(data)
    if not rep.ok:
        names = ", ".join(c.name for c in rep.failures())
        raise ProblemError(f"problem data rejected: {names}\n{rep.summary()}")
    return rep
