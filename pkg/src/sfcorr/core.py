"""Grids, units, dimensionless scaling and the two damping kernels.

Everything downstream works in dimensionless units: time is measured in
units of 1/gamma_sp and length in units of 8*pi/(3*delta_o*n), where
n = n_v*pi*R**2 is the linear density of emitters. In these units the
coupling of the population equations is 1, the coupling of the coherence
correlation equation is 1/2, and the spontaneous seed carries the small
factor eps = 3*delta_o/(16*pi). Physical units appear only at I/O.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Union

import numpy as np

ArrayLike = Union[float, np.ndarray]
ProfileFn = Callable[[np.ndarray], np.ndarray]


class SimulationError(RuntimeError):
    """Raised when a solver cannot continue (divergence, corrupted state)."""


class InvalidInput(ValueError):
    """Raised for inputs that violate a documented precondition."""


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NumericalGrid:
    """Uniform (z, tau) grid.

    z has n_z nodes from 0 to z_max (node 0 is the entrance face), tau has
    n_tau steps, i.e. n_tau + 1 time points from 0 to tau_max.
    """

    n_z: int
    n_tau: int
    z_max: float
    tau_max: float
    dimensionless: bool = False

    def __post_init__(self):
        if int(self.n_z) < 2 or int(self.n_tau) < 2:
            raise InvalidInput("grid needs n_z >= 2 and n_tau >= 2")
        if not (self.z_max > 0 and self.tau_max > 0):
            raise InvalidInput("grid extents must be positive")

    @property
    def dz(self) -> float:
        return self.z_max / (self.n_z - 1)

    @property
    def dtau(self) -> float:
        return self.tau_max / self.n_tau

    @property
    def z(self) -> np.ndarray:
        return np.arange(self.n_z) * self.dz

    @property
    def tau(self) -> np.ndarray:
        return np.arange(self.n_tau + 1) * self.dtau

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_z, self.n_tau + 1)


@dataclass(frozen=True)
class RateField:
    """Incoherent rates tabulated on the (z, tau) grid.

    Each (z, tau) rate is either a scalar or an array of shape
    (n_z, n_tau + 1); kappa is a scalar or an array of shape (n_z,).
    Rates are in 1/s (or 1/tau-unit after scaling), kappa in 1/m.
    """

    r_e: ArrayLike = 0.0
    r_g: ArrayLike = 0.0
    gamma_e: ArrayLike = 0.0
    gamma_g: ArrayLike = 0.0
    q: ArrayLike = 0.0
    gamma_n: float = 0.0
    kappa: ArrayLike = 0.0

    TIME_FIELDS = ("r_e", "r_g", "gamma_e", "gamma_g", "q")

    def table(self, name: str, shape: tuple[int, int]) -> np.ndarray:
        """Return rate `name` broadcast to `shape` (read-only view)."""
        return np.broadcast_to(np.asarray(getattr(self, name), dtype=float), shape)

    def kappa_nodes(self, n_z: int) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.kappa, dtype=float), (n_z,))

    def check(self, shape: tuple[int, int]) -> None:
        for name in self.TIME_FIELDS:
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.ndim and arr.shape != tuple(shape):
                raise InvalidInput(f"grid mismatch: {name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)) or np.any(arr < 0):
                raise InvalidInput(f"invalid rate field: {name}")
        kap = np.asarray(self.kappa, dtype=float)
        if kap.ndim and kap.shape != (shape[0],):
            raise InvalidInput(f"grid mismatch: kappa has shape {kap.shape}, expected ({shape[0]},)")
        if self.gamma_n < 0 or np.any(kap < 0) or not np.all(np.isfinite(kap)):
            raise InvalidInput("invalid rate field: gamma_n/kappa")

    def scaled(self, rate_factor: float, kappa_factor: float) -> "RateField":
        def mul(v, f):
            return np.asarray(v, dtype=float) * f if np.ndim(v) else float(v) * f

        return RateField(
            r_e=mul(self.r_e, rate_factor),
            r_g=mul(self.r_g, rate_factor),
            gamma_e=mul(self.gamma_e, rate_factor),
            gamma_g=mul(self.gamma_g, rate_factor),
            q=mul(self.q, rate_factor),
            gamma_n=float(self.gamma_n) * rate_factor,
            kappa=mul(self.kappa, kappa_factor),
        )


def constant_profile(value: float) -> ProfileFn:
    return _Constant(float(value))


@dataclass(frozen=True)
class _Constant:
    value: float

    def __call__(self, z):
        return np.full(np.shape(z), self.value, dtype=float)


@dataclass(frozen=True)
class _Rescaled:
    """profile(z * scale); keeps a handle on the wrapped profile."""

    base: ProfileFn
    scale: float

    def __call__(self, z):
        return self.base(np.asarray(z, dtype=float) * self.scale)


@dataclass(frozen=True)
class PhysicalScenario:
    gamma_sp: float
    wavelength: float
    delta_o: float
    n_v: float
    radius: float
    length: float
    xi_convention: str = "unity"
    rate_fields: RateField = field(default_factory=RateField)
    initial_rho_ee: ProfileFn = field(default_factory=lambda: constant_profile(1.0))
    initial_rho_gg: ProfileFn = field(default_factory=lambda: constant_profile(0.0))
    name: str = "custom"

    def __post_init__(self):
        if not self.gamma_sp > 0:
            raise InvalidInput("gamma_sp must be positive")
        if not self.wavelength > 0:
            raise InvalidInput("wavelength must be positive")
        if not 0 < self.delta_o < 4 * math.pi:
            raise InvalidInput("delta_o must lie in (0, 4*pi)")
        if not (self.n_v > 0 and self.radius > 0 and self.length > 0):
            raise InvalidInput("n_v, radius and length must be positive")
        if self.xi_convention not in ("unity", "geometric"):
            raise InvalidInput("xi_convention must be 'unity' or 'geometric'")

    @property
    def linear_density(self) -> float:
        """n = n_v * pi * R**2 (emitters per unit length)."""
        return self.n_v * math.pi * self.radius**2

    @property
    def xi(self) -> float:
        if self.xi_convention == "geometric":
            return self.delta_o * math.pi * self.radius**2 / (4.0 * self.wavelength**2)
        return 1.0

    @property
    def length_unit(self) -> float:
        """Physical length of one dimensionless z unit (m)."""
        return 8.0 * math.pi / (3.0 * self.delta_o * self.linear_density)

    def check_populations(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        ee = np.asarray(self.initial_rho_ee(z), dtype=float)
        gg = np.asarray(self.initial_rho_gg(z), dtype=float)
        if np.any(ee < 0) or np.any(gg < 0) or np.any(ee > 1) or np.any(gg > 1):
            raise InvalidInput("initial populations must lie in [0, 1]")
        if np.any(ee + gg > 1 + 1e-12):
            raise InvalidInput("initial populations must sum to at most 1")
        return ee, gg


@dataclass(frozen=True)
class DerivedRates:
    Gamma_total: np.ndarray
    Gamma_ee: np.ndarray


@dataclass(frozen=True)
class UnitMap:
    """Inverse map from dimensionless back to physical units."""

    gamma_sp: float
    length_unit: float
    n_v: float
    wavelength: float
    radius: float
    delta_o: float

    @property
    def time_unit(self) -> float:
        return 1.0 / self.gamma_sp

    @property
    def intensity_unit(self) -> float:
        """Photons per (sr m^2 s) of one dimensionless intensity unit."""
        return self.gamma_sp / (4.0 * self.wavelength**2)

    @property
    def eps(self) -> float:
        return 3.0 * self.delta_o / (16.0 * math.pi)


# ---------------------------------------------------------------------------
# Scaling
# ---------------------------------------------------------------------------


def to_dimensionless(scn: PhysicalScenario, grid: NumericalGrid):
    """Return (scaled scenario, scaled grid, UnitMap).

    The scaled scenario has gamma_sp = 1 and (3*delta_o/(8*pi))*n = 1, so
    z is measured in z_tilde = (3*delta_o/(8*pi))*n*z. Wavelength, radius
    and delta_o are kept; they only enter output prefactors and xi.
    A grid flagged dimensionless is passed through untouched.
    """
    L0 = scn.length_unit
    units = UnitMap(scn.gamma_sp, L0, scn.n_v, scn.wavelength, scn.radius, scn.delta_o)
    n_v_scaled = 8.0 * math.pi / (3.0 * scn.delta_o * math.pi * scn.radius**2)
    scaled = replace(
        scn,
        gamma_sp=1.0,
        n_v=n_v_scaled,
        length=scn.length / L0,
        rate_fields=scn.rate_fields.scaled(1.0 / scn.gamma_sp, L0),
        initial_rho_ee=_rescale(scn.initial_rho_ee, L0),
        initial_rho_gg=_rescale(scn.initial_rho_gg, L0),
    )
    if grid.dimensionless:
        sgrid = grid
    else:
        sgrid = NumericalGrid(grid.n_z, grid.n_tau, grid.z_max / L0, grid.tau_max * scn.gamma_sp, True)
    return scaled, sgrid, units


def from_dimensionless(scaled: PhysicalScenario, grid: NumericalGrid, units: UnitMap):
    """Inverse of to_dimensionless."""
    L0 = units.length_unit
    scn = replace(
        scaled,
        gamma_sp=units.gamma_sp,
        n_v=units.n_v,
        length=scaled.length * L0,
        rate_fields=scaled.rate_fields.scaled(units.gamma_sp, 1.0 / L0),
        initial_rho_ee=_rescale(scaled.initial_rho_ee, 1.0 / L0),
        initial_rho_gg=_rescale(scaled.initial_rho_gg, 1.0 / L0),
    )
    pgrid = NumericalGrid(grid.n_z, grid.n_tau, grid.z_max * L0, grid.tau_max / units.gamma_sp, False)
    return scn, pgrid


def _rescale(fn: ProfileFn, scale: float) -> ProfileFn:
    if isinstance(fn, _Constant):
        return fn
    if isinstance(fn, _Rescaled) and fn.scale * scale == 1.0:
        return fn.base
    return _Rescaled(fn, scale)


# ---------------------------------------------------------------------------
# Damping kernels
# ---------------------------------------------------------------------------


def _interval_points(a: float, b: float, nodes: Optional[np.ndarray], n_default: int) -> np.ndarray:
    if nodes is None:
        return np.linspace(a, b, n_default)
    nodes = np.asarray(nodes, dtype=float)
    inner = nodes[(nodes > a) & (nodes < b)]
    return np.concatenate(([a], inner, [b]))


def _integral(rate, a: float, b: float, nodes, n_default: int = 1025) -> float:
    if a > b:
        raise InvalidInput("invalid interval")
    if a == b:
        return 0.0
    pts = _interval_points(a, b, nodes, n_default)
    if callable(rate):
        vals = np.asarray(rate(pts), dtype=float) * np.ones_like(pts)
    elif np.ndim(rate) == 0:
        vals = np.full_like(pts, float(rate))
    else:
        if nodes is None:
            raise InvalidInput("tabulated rate needs its nodes")
        vals = np.interp(pts, np.asarray(nodes, dtype=float), np.asarray(rate, dtype=float))
    return float(np.trapezoid(vals, pts))


def damping_A(kappa, z_from: float, z_to: float, nodes: Optional[np.ndarray] = None) -> float:
    """exp(-1/2 * integral of kappa over [z_from, z_to]), trapezoidal.

    kappa may be a constant, a callable of z, or values tabulated on
    `nodes`. Quadrature points are the nodes inside the interval plus its
    end points (a uniform 1025-point rule if no nodes are given).
    """
    return math.exp(-0.5 * _integral(kappa, z_from, z_to, nodes))


def damping_D(Gamma, tau_from: float, tau_to: float, nodes: Optional[np.ndarray] = None) -> float:
    """exp(-1/2 * integral of Gamma over [tau_from, tau_to]), trapezoidal."""
    return math.exp(-0.5 * _integral(Gamma, tau_from, tau_to, nodes))


def step_factors(values: np.ndarray, h: float, axis: int = -1) -> np.ndarray:
    """One-step factors exp(-1/2 * h * (v_k + v_{k+1}) / 2) along `axis`.

    These are the multipliers of the cumulative-kernel recursions; chaining
    them reproduces the trapezoidal damping factor over any node interval.
    """
    v = np.moveaxis(np.asarray(values, dtype=float), axis, -1)
    f = np.exp(-0.25 * h * (v[..., 1:] + v[..., :-1]))
    return np.moveaxis(f, -1, axis)


def cumulative_exponent(values: np.ndarray, h: float, axis: int = -1) -> np.ndarray:
    """Cumulative trapezoid integral of `values` along `axis`, starting at 0."""
    v = np.moveaxis(np.asarray(values, dtype=float), axis, -1)
    out = np.zeros_like(v)
    np.cumsum(0.5 * h * (v[..., 1:] + v[..., :-1]), axis=-1, out=out[..., 1:])
    return np.moveaxis(out, -1, axis)


def absorption_matrix(kappa_nodes: np.ndarray, dz: float) -> np.ndarray:
    """A[i, k] = exp(-1/2 * int_{z_k}^{z_i} kappa) for k <= i, zero above.

    Built from differences of the cumulative exponent, which are >= 0 in
    the lower triangle, so nothing can overflow.
    """
    phi = cumulative_exponent(kappa_nodes, dz)
    diff = phi[:, None] - phi[None, :]
    A = np.exp(-0.5 * np.where(diff >= 0, diff, 0.0))
    return np.tril(A)


def derive_rates(rates: RateField, scn: PhysicalScenario, shape: tuple[int, int]) -> DerivedRates:
    """Gamma = gamma_sp + gamma_n + q + gamma_e + gamma_g; Gamma_ee = gamma_sp + gamma_e + gamma_n."""
    rates.check(shape)
    ge = rates.table("gamma_e", shape)
    gg = rates.table("gamma_g", shape)
    q = rates.table("q", shape)
    Gamma_ee = (scn.gamma_sp + rates.gamma_n) + ge
    Gamma = Gamma_ee + q + gg
    return DerivedRates(np.array(Gamma), np.array(Gamma_ee))


# ---------------------------------------------------------------------------
# Prepared dimensionless problem shared by both solvers
# ---------------------------------------------------------------------------


@dataclass
class Problem:
    """Everything a solver needs, in dimensionless units, on the grid."""

    scenario: PhysicalScenario  # physical scenario (for metadata and I/O)
    grid: NumericalGrid  # dimensionless grid
    units: UnitMap
    eps: float
    z: np.ndarray
    tau: np.ndarray
    r_e: np.ndarray
    r_g: np.ndarray
    gamma_g: np.ndarray
    gamma_n: float
    Gamma: np.ndarray
    Gamma_ee: np.ndarray
    kappa: np.ndarray
    rho_ee0: np.ndarray
    rho_gg0: np.ndarray

    @property
    def dz(self) -> float:
        return self.grid.dz

    @property
    def dtau(self) -> float:
        return self.grid.dtau


def prepare(scn: PhysicalScenario, grid: NumericalGrid) -> Problem:
    scaled, sgrid, units = to_dimensionless(scn, grid)
    shape = sgrid.shape
    rates = scaled.rate_fields
    der = derive_rates(rates, scaled, shape)
    z = sgrid.z
    ee0, gg0 = scaled.check_populations(z)
    return Problem(
        scenario=scn,
        grid=sgrid,
        units=units,
        eps=units.eps,
        z=z,
        tau=sgrid.tau,
        r_e=np.array(rates.table("r_e", shape)),
        r_g=np.array(rates.table("r_g", shape)),
        gamma_g=np.array(rates.table("gamma_g", shape)),
        gamma_n=float(rates.gamma_n),
        Gamma=der.Gamma_total,
        Gamma_ee=der.Gamma_ee,
        kappa=np.array(rates.kappa_nodes(sgrid.n_z)),
        rho_ee0=np.array(ee0, dtype=float),
        rho_gg0=np.array(gg0, dtype=float),
    )
