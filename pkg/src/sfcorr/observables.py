"""Post-processing: photon numbers, normalized intensity maps, spectra."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import curve_fit
from scipy.signal.windows import hann

from .core import InvalidInput, PhysicalScenario

PSD_TOL = 1e-9


# ---------------------------------------------------------------------------
# Photon numbers
# ---------------------------------------------------------------------------


def photon_number_rate(intensity, scn: PhysicalScenario, tau=None):
    """Photon rate dN/dt (1/s) and cumulative N(z) from a dimensionless intensity.

    dN/dt = xi * gamma_sp * I_dimless. In the geometric xi convention this is
    I * delta_o * pi R^2 with I = gamma_sp / (4 lambda^2) * I_dimless.
    `tau` is the dimensionless time axis; N integrates over it by trapezoid.
    """
    I = np.asarray(intensity, dtype=float)
    rate = scn.xi * scn.gamma_sp * I
    if tau is None:
        return rate, None
    N = scn.xi * np.trapezoid(I, np.asarray(tau, dtype=float), axis=-1)
    return rate, N


def spontaneous_photon_rate(scn: PhysicalScenario, rho_ee, z):
    """(3 / 8 pi) gamma_sp rho_ee n z delta_o xi, z in metres."""
    return 3.0 / (8.0 * math.pi) * scn.gamma_sp * np.asarray(rho_ee) * scn.linear_density * np.asarray(z) * scn.delta_o * scn.xi


# ---------------------------------------------------------------------------
# Normalized maps and peak tracks
# ---------------------------------------------------------------------------


@dataclass
class NormalizedMap:
    values: np.ndarray  # each row divided by its maximum
    peak_index: np.ndarray  # first index of the row maximum, -1 for zero rows
    peak_time: np.ndarray  # nan for zero rows
    zero_rows: np.ndarray  # bool flags


def normalized_map(intensity, tau=None) -> NormalizedMap:
    I = np.asarray(intensity, dtype=float)
    if np.any(I < 0):
        raise InvalidInput("intensity must be non-negative")
    peak = I.max(axis=1)
    zero = peak <= 0
    safe = np.where(zero, 1.0, peak)
    vals = I / safe[:, None]
    idx = np.argmax(I, axis=1)  # argmax returns the earliest of tied maxima
    idx = np.where(zero, -1, idx)
    t = np.arange(I.shape[1], dtype=float) if tau is None else np.asarray(tau, dtype=float)
    ptime = np.where(zero, np.nan, t[np.maximum(idx, 0)])
    return NormalizedMap(vals, idx, ptime, zero)


def local_maxima(row, min_level: float = 0.0):
    """Indices of interior local maxima with value >= min_level * max(row)."""
    r = np.asarray(row, dtype=float)
    if r.size < 3:
        return np.array([], dtype=int)
    top = r.max()
    inner = (r[1:-1] >= r[:-2]) & (r[1:-1] > r[2:]) & (r[1:-1] >= min_level * top)
    return np.flatnonzero(inner) + 1


def ringing_onset(nmap: NormalizedMap, z, level: float = 0.01):
    """First z whose normalized row has a secondary local maximum >= level.

    Returns (z value, row index), or (nan, -1) if no row rings.
    """
    for j, row in enumerate(nmap.values):
        if nmap.zero_rows[j]:
            continue
        pk = nmap.peak_index[j]
        sec = [k for k in local_maxima(row, level) if k != pk]
        if sec:
            return float(np.asarray(z)[j]), j
    return float("nan"), -1


def _gamma_shape(t, A, a, b):
    return A * t**a * np.exp(-b * t)


def fit_peak_time(tau, y):
    """Mode of a least-squares fit A t^a exp(-b t) to a single-humped curve.

    Used to locate the peak of a noisy ensemble mean; it draws on every
    sample instead of the few near the raw maximum.
    """
    t = np.asarray(tau, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = t > 0
    yn = y[keep] / y[keep].max()
    p, _ = curve_fit(_gamma_shape, t[keep], yn, p0=(math.e, 1.0, 1.0), maxfev=20000)
    return p[1] / p[2]


# ---------------------------------------------------------------------------
# Spectra
# ---------------------------------------------------------------------------


@dataclass
class SpectrumResult:
    omega_offsets: np.ndarray  # angular frequency relative to the carrier
    power: np.ndarray  # spectral density, (n_omega,) or (n_z, n_omega)
    window: str = "rect"
    meta: dict = field(default_factory=dict)


def _check_hermitian(G, tol):
    scale = max(np.abs(G).max(), 1e-300)
    err = np.abs(G - G.conj().T).max() / scale
    if err > tol:
        raise InvalidInput(f"non-Hermitian input (relative asymmetry {err:.3e})")


def spectrum(G, dtau: float, window: str = "rect", pad: int = 4, herm_tol: float = 1e-9, time_unit: float = 1.0) -> SpectrumResult:
    """Power spectrum of a two-time correlation G(tau1, tau2).

    power(w) = (1/2pi) sum_ab h^2 w_a w_b exp(i w (tau_a - tau_b)) G_ab,
    evaluated on a zero-padded FFT grid. `time_unit` converts dtau to seconds
    for the frequency axis (1 keeps dimensionless units).
    """
    G = np.asarray(G, dtype=complex)
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise InvalidInput("G must be a square matrix")
    _check_hermitian(G, herm_tol)
    G = 0.5 * (G + G.conj().T)
    n = G.shape[0]
    if window == "hann":
        w = hann(n, sym=False)
    elif window == "rect":
        w = np.ones(n)
    else:
        raise InvalidInput(f"unknown window {window!r}")
    Gw = G * np.outer(w, w)
    N = max(int(pad), 2) * n
    # P_k = sum_d c_d exp(2 pi i k d / N) with c_d the sum along the d-th diagonal (a - b = d)
    c = np.zeros(N, dtype=complex)
    for d in range(-(n - 1), n):
        c[d % N] = np.trace(Gw, offset=-d)
    P = (np.fft.ifft(c) * N).real
    h = dtau * time_unit
    P *= h * h / (2.0 * np.pi)
    omega = 2.0 * np.pi * np.fft.fftfreq(N, d=h)
    order = np.argsort(omega, kind="stable")
    omega, P = omega[order], P[order]
    dw = 2.0 * np.pi / (N * h)
    lhs = P.sum() * dw
    rhs = h * np.real(np.sum(np.diag(Gw)))
    rel = abs(lhs - rhs) / max(abs(rhs), 1e-300)
    meta = {"window": window, "pad": int(pad), "estimator": "two-time quadratic form",
            "parseval_lhs": float(lhs), "parseval_rhs": float(rhs), "parseval_rel_error": float(rel)}
    return SpectrumResult(omega, P, window, meta)


def fwhm(omega, power) -> float:
    """Full width at half maximum around the global peak (linear interpolation)."""
    w = np.asarray(omega, dtype=float)
    p = np.asarray(power, dtype=float)
    k = int(np.argmax(p))
    half = 0.5 * p[k]
    i = k
    while i > 0 and p[i] > half:
        i -= 1
    j = k
    while j < len(p) - 1 and p[j] > half:
        j += 1
    if p[i] > half or p[j] > half:
        return float("nan")
    left = w[i] + (half - p[i]) * (w[i + 1] - w[i]) / (p[i + 1] - p[i])
    right = w[j - 1] + (half - p[j - 1]) * (w[j] - w[j - 1]) / (p[j] - p[j - 1])
    return float(right - left)
