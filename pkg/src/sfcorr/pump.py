"""Scenario generators: rate fields and initial conditions.

Three presets are provided:

- fig2: instantaneous swept pumping, full inversion at tau = 0, delta_o = 4e-6.
- neon: direct 1s photoionization of Ne by an x-ray pulse (fixed focus).
- xenon: 4d photoionization of Xe followed by Auger decay into the lasing
  levels, with a Gaussian-beam pump.

The pump front co-propagates with the emitted field, so the flux is
evaluated directly at retarded time.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from .core import InvalidInput, NumericalGrid, PhysicalScenario, RateField, constant_profile

EV = 1.602176634e-19  # J
K_B = 1.380649e-23  # J/K
MB = 1e-22  # m^2 per megabarn
FS = 1e-15
FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))


@dataclass(frozen=True)
class PumpPulse:
    """Gaussian pump pulse with either a fixed focus or a Gaussian beam."""

    photon_energy_ev: float
    fwhm: float
    photon_count: Optional[float] = None
    pulse_energy: Optional[float] = None
    radius: Optional[float] = None
    waist: Optional[float] = None
    rayleigh_range: Optional[float] = None
    focus_z: float = 0.0
    t_center: Optional[float] = None  # default: three standard deviations

    def __post_init__(self):
        if (self.photon_count is None) == (self.pulse_energy is None):
            raise InvalidInput("give exactly one of photon_count or pulse_energy")
        fixed = self.radius is not None
        beam = self.waist is not None or self.rayleigh_range is not None
        if fixed == beam:
            raise InvalidInput("give exactly one focus model: radius or (waist, rayleigh_range)")
        if beam and (self.waist is None or self.rayleigh_range is None):
            raise InvalidInput("Gaussian beam needs waist and rayleigh_range")
        for v in (self.photon_energy_ev, self.fwhm, self.photon_count, self.pulse_energy,
                  self.radius, self.waist, self.rayleigh_range):
            if v is not None and not v > 0:
                raise InvalidInput("pump parameters must be positive")

    @property
    def n_photons(self) -> float:
        if self.photon_count is not None:
            return float(self.photon_count)
        return self.pulse_energy / (self.photon_energy_ev * EV)

    @property
    def sigma_t(self) -> float:
        return self.fwhm * FWHM_TO_SIGMA

    @property
    def center(self) -> float:
        return 3.0 * self.sigma_t if self.t_center is None else self.t_center

    def temporal(self, tau) -> np.ndarray:
        """Normalized Gaussian g(tau) with integral 1 (1/s)."""
        s = self.sigma_t
        x = (np.asarray(tau, dtype=float) - self.center) / s
        return np.exp(-0.5 * x * x) / (s * math.sqrt(2.0 * math.pi))

    def beam_radius(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if self.radius is not None:
            return np.full(z.shape, self.radius)
        return self.waist * np.sqrt(1.0 + ((z - self.focus_z) / self.rayleigh_range) ** 2)


@dataclass(frozen=True)
class Absorber:
    """Pump absorber: cross section (m^2), density (1/m^3), whether the absorber depletes."""

    sigma: float
    n_v: float
    deplete: bool = True


@dataclass
class SpeciesChain:
    """Pump-driven species tables on the (z, tau) grid."""

    J: np.ndarray  # photon flux (1/m^2/s)
    rho_neutral: np.ndarray
    rho_c: Optional[np.ndarray] = None
    auger_out: Optional[np.ndarray] = None  # cumulative Auger decays out of rho_c
    sigma_pump: float = 0.0
    sigma_ion: float = 0.0
    sigma_emit_abs: float = 0.0
    gamma_A: float = 0.0
    b_e: float = 0.0
    b_g: float = 0.0


def _cumtrapz(y: np.ndarray, h: float) -> np.ndarray:
    out = np.zeros_like(y)
    np.cumsum(0.5 * h * (y[..., 1:] + y[..., :-1]), axis=-1, out=out[..., 1:])
    return out


def flux(pulse: PumpPulse, z: np.ndarray, tau: np.ndarray, absorber: Optional[Absorber] = None):
    """Pump flux J(z, tau) and neutral fraction on the grid.

    J = N_ph g(tau) / (pi w(z)^2) * T(z, tau), where T follows the
    Beer-Lambert law dT/dz = -sigma n_v rho_neutral T. The neutral fraction
    obeys d rho_neutral / d tau = -sigma J rho_neutral, solved exactly as
    exp(-sigma * fluence). T is marched in z with Heun's method.
    Returns (J, rho_neutral), both of shape (len(z), len(tau)).
    """
    z = np.asarray(z, dtype=float)
    tau = np.asarray(tau, dtype=float)
    h = tau[1] - tau[0] if tau.size > 1 else 1.0
    free = pulse.n_photons * pulse.temporal(tau)[None, :] / (math.pi * pulse.beam_radius(z)[:, None] ** 2)
    if absorber is None:
        return free, np.ones_like(free)
    J = np.empty_like(free)
    rn = np.empty_like(free)
    k = absorber.sigma * absorber.n_v

    def neutral(Jrow):
        if not absorber.deplete:
            return np.ones_like(Jrow)
        return np.exp(-absorber.sigma * _cumtrapz(Jrow, h))

    logT = np.zeros(tau.size)
    for j in range(z.size):
        J[j] = free[j] * np.exp(logT)
        rn[j] = neutral(J[j])
        if j + 1 == z.size:
            break
        dz = z[j + 1] - z[j]
        pred = logT - k * dz * rn[j]
        rn_pred = neutral(free[j + 1] * np.exp(pred))
        logT = logT - 0.5 * k * dz * (rn[j] + rn_pred)
    return J, rn


def core_hole_population(J: np.ndarray, rho_neutral: np.ndarray, sigma: float, gamma_A: float, h: float,
                         source: str = "neutral_loss"):
    """d rho_c / d tau = sigma J rho_neutral - gamma_A rho_c, rho_c(0) = 0.

    Per step the source increment is taken as uniform and the Auger decay is
    integrated exactly: rho_{k+1} = e^{-gamma h} rho_k + inc_k (1 - e^{-gamma h}) / (gamma h).
    With source="neutral_loss" inc_k is the neutral-fraction drop over the
    step, so neutrals + core holes + Auger output is conserved to roundoff;
    "trapezoid" integrates sigma J rho_neutral instead (for a non-depleting
    absorber). Returns (rho_c, cumulative Auger output).
    """
    if source == "neutral_loss":
        inc = np.maximum(-np.diff(rho_neutral, axis=-1), 0.0)
    elif source == "trapezoid":
        src = sigma * J * rho_neutral
        inc = 0.5 * h * (src[..., 1:] + src[..., :-1])
    else:
        raise InvalidInput(f"unknown source model {source!r}")
    x = gamma_A * h
    decay = math.exp(-x)
    gain = (1.0 - decay) / x if x > 0 else 1.0
    rc = np.zeros(np.shape(J))
    out = np.zeros_like(rc)
    for k in range(rc.shape[-1] - 1):
        rc[..., k + 1] = decay * rc[..., k] + gain * inc[..., k]
        out[..., k + 1] = out[..., k] + rc[..., k] + inc[..., k] - rc[..., k + 1]
    return rc, out


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------


@dataclass
class BuiltScenario:
    scenario: PhysicalScenario
    grid: NumericalGrid
    chain: Optional[SpeciesChain] = None
    pulse: Optional[PumpPulse] = None
    params: dict = field(default_factory=dict)


@dataclass
class Fig2Params:
    delta_o: float = 4e-6
    z_max_dimensionless: float = 300.0
    tau_max_dimensionless: float = 2.0
    gamma_sp: float = 1.0 / (160 * FS)
    wavelength: float = 1.46e-9
    n_v: float = 1.6e25
    radius: float = 2e-6
    xi_convention: str = "unity"
    n_z: int = 400
    n_tau: int = 800


@dataclass
class NeonParams:
    n_v: float = 1.6e25  # 1.6e19 cm^-3
    length: float = 15e-3
    radius: float = 2e-6
    photon_energy_ev: float = 880.0
    photon_count: float = 2e12
    fwhm: float = 40 * FS
    t_center: Optional[float] = None
    sigma_pump: float = 0.3 * MB
    wavelength: float = 1.46e-9
    lifetime: float = 160 * FS
    auger_time: float = 2.4 * FS
    delta_o: Optional[float] = None  # default 2 pi R^2 / L^2
    sigma_ion_lower: float = 0.0  # optional photoionization of the lower level
    xi_convention: str = "unity"
    tau_max: float = 150 * FS
    n_z: int = 300
    n_tau: int = 1200


@dataclass
class XenonParams:
    pressure: float = 700.0  # Pa (7 mbar)
    temperature: float = 300.0
    length: float = 6e-3
    photon_energy_ev: float = 73.0
    pulse_energy: float = 50e-6
    fwhm: float = 80 * FS
    t_center: Optional[float] = None
    waist: float = 61e-6
    rayleigh_range: float = 2.0e-3
    focus_z: Optional[float] = None  # default: cell centre
    wavelength: float = 65e-9
    lifetime: float = 1e-9
    auger_time: float = 6 * FS
    b_e: float = 0.021
    b_g: float = 0.0075
    sigma_pump: float = 5.2 * MB
    sigma_ion: Optional[float] = None  # default: sigma_pump
    sigma_emit_abs: float = 60 * MB
    delta_o: Optional[float] = None  # default 2 pi w0^2 / L^2
    xi_convention: str = "unity"
    tau_max: float = 2000 * FS
    n_z: int = 240
    n_tau: int = 1000


def _merge(cls, params, overrides):
    base = params if params is not None else cls()
    if overrides:
        names = set(asdict(base))
        bad = sorted(set(overrides) - names)
        if bad:
            raise InvalidInput(f"unknown parameter(s) for {cls.__name__}: {', '.join(bad)}")
        base = replace(base, **overrides)
    return base


def fig2_scenario(params: Optional[Fig2Params] = None, **overrides) -> BuiltScenario:
    """Full inversion at tau = 0, no incoherent processes; grid given in dimensionless units."""
    p = _merge(Fig2Params, params, overrides)
    probe = PhysicalScenario(p.gamma_sp, p.wavelength, p.delta_o, p.n_v, p.radius, 1.0, p.xi_convention)
    length = p.z_max_dimensionless * probe.length_unit
    scn = replace(probe, length=length, name="fig2")
    grid = NumericalGrid(p.n_z, p.n_tau, p.z_max_dimensionless, p.tau_max_dimensionless, dimensionless=True)
    return BuiltScenario(scn, grid, params=asdict(p))


def ne_scenario(params: Optional[NeonParams] = None, **overrides) -> BuiltScenario:
    """Ne 1s photoionization pumping; Auger decay depletes the upper level."""
    p = _merge(NeonParams, params, overrides)
    if p.length <= 0 or p.radius <= 0:
        raise InvalidInput("inconsistent geometry")
    delta_o = p.delta_o if p.delta_o is not None else 2 * math.pi * p.radius**2 / p.length**2
    grid = NumericalGrid(p.n_z, p.n_tau, p.length, p.tau_max)
    pulse = PumpPulse(p.photon_energy_ev, p.fwhm, photon_count=p.photon_count, radius=p.radius, t_center=p.t_center)
    J, rn = flux(pulse, grid.z, grid.tau, Absorber(p.sigma_pump, p.n_v, deplete=True))
    rates = RateField(
        r_e=p.sigma_pump * J * rn,
        gamma_e=np.full(grid.shape, 1.0 / p.auger_time),
        gamma_g=p.sigma_ion_lower * J,
    )
    scn = PhysicalScenario(
        gamma_sp=1.0 / p.lifetime,
        wavelength=p.wavelength,
        delta_o=delta_o,
        n_v=p.n_v,
        radius=p.radius,
        length=p.length,
        xi_convention=p.xi_convention,
        rate_fields=rates,
        initial_rho_ee=constant_profile(0.0),
        initial_rho_gg=constant_profile(0.0),
        name="neon",
    )
    chain = SpeciesChain(J=J, rho_neutral=rn, sigma_pump=p.sigma_pump, gamma_A=1.0 / p.auger_time)
    return BuiltScenario(scn, grid, chain, pulse, asdict(p))


def xenon_density(pressure: float, temperature: float = 300.0) -> float:
    return pressure / (K_B * temperature)


def xe_scenario(params: Optional[XenonParams] = None, **overrides) -> BuiltScenario:
    """Xe 4d photoionization, Auger feeding of both lasing levels, Gaussian-beam pump."""
    p = _merge(XenonParams, params, overrides)
    if p.length <= 0 or p.waist <= 0:
        raise InvalidInput("inconsistent geometry")
    if p.b_e + p.b_g > 1:
        raise InvalidInput("branching ratios must sum to at most 1")
    n_v = xenon_density(p.pressure, p.temperature)
    focus = p.length / 2 if p.focus_z is None else p.focus_z
    sigma_ion = p.sigma_pump if p.sigma_ion is None else p.sigma_ion
    delta_o = p.delta_o if p.delta_o is not None else 2 * math.pi * p.waist**2 / p.length**2
    grid = NumericalGrid(p.n_z, p.n_tau, p.length, p.tau_max)
    pulse = PumpPulse(
        p.photon_energy_ev, p.fwhm, pulse_energy=p.pulse_energy, waist=p.waist,
        rayleigh_range=p.rayleigh_range, focus_z=focus, t_center=p.t_center,
    )
    J, rn = flux(pulse, grid.z, grid.tau, Absorber(p.sigma_pump, n_v, deplete=True))
    gamma_A = 1.0 / p.auger_time
    rc, out = core_hole_population(J, rn, p.sigma_pump, gamma_A, grid.dtau)
    rates = RateField(
        r_e=p.b_e * gamma_A * rc,
        r_g=p.b_g * gamma_A * rc,
        gamma_e=sigma_ion * J,
        gamma_g=sigma_ion * J,
        kappa=p.sigma_emit_abs * n_v,
    )
    scn = PhysicalScenario(
        gamma_sp=1.0 / p.lifetime,
        wavelength=p.wavelength,
        delta_o=delta_o,
        n_v=n_v,
        radius=p.waist,
        length=p.length,
        xi_convention=p.xi_convention,
        rate_fields=rates,
        initial_rho_ee=constant_profile(0.0),
        initial_rho_gg=constant_profile(0.0),
        name="xenon",
    )
    chain = SpeciesChain(J=J, rho_neutral=rn, rho_c=rc, auger_out=out, sigma_pump=p.sigma_pump, sigma_ion=sigma_ion,
                         sigma_emit_abs=p.sigma_emit_abs, gamma_A=gamma_A, b_e=p.b_e, b_g=p.b_g)
    return BuiltScenario(scn, grid, chain, pulse, asdict(p))


PRESETS = {
    "fig2": (fig2_scenario, Fig2Params, "instantaneous full inversion, delta_o = 4e-6 (dimensionless units)"),
    "neon": (ne_scenario, NeonParams, "Ne 1s photoionization at 880 eV, 15 mm cell"),
    "xenon": (xe_scenario, XenonParams, "Xe 4d ionization + Auger cascade at 73 eV, Gaussian beam"),
}


def build_preset(name: str, **overrides) -> BuiltScenario:
    if name not in PRESETS:
        raise InvalidInput(f"unknown scenario {name!r}; choose from {', '.join(PRESETS)}")
    return PRESETS[name][0](**overrides)
