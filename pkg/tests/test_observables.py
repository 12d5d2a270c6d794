import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sfcorr import cfsolver, observables as obs, pump
from sfcorr.core import InvalidInput, NumericalGrid, PhysicalScenario, prepare


def _scn(**kw):
    base = dict(gamma_sp=6.25e12, wavelength=1.46e-9, delta_o=1e-4, n_v=1.6e25, radius=2e-6, length=15e-3)
    base.update(kw)
    return PhysicalScenario(**base)


# --- photon numbers -----------------------------------------------------------


@pytest.mark.parametrize("conv", ["unity", "geometric"])
def test_uncorrelated_rate_matches_spontaneous_formula(conv):
    scn = _scn(xi_convention=conv)
    grid = NumericalGrid(31, 40, scn.length, 200e-15)
    prob = prepare(scn, grid)
    h = cfsolver.evolve_phase1(prob, coupling=False)
    rate, _ = obs.photon_number_rate(h.intensity, scn)
    z_phys = prob.z * prob.units.length_unit
    ref = obs.spontaneous_photon_rate(scn, h.rho_ee, z_phys[:, None])
    np.testing.assert_allclose(rate[1:], ref[1:], rtol=1e-3)


def test_geometric_rate_equals_intensity_times_solid_angle_area():
    scn = _scn(xi_convention="geometric")
    prob = prepare(scn, NumericalGrid(3, 3, scn.length, 1e-13))
    I_dimless = np.array([0.5, 2.0])
    rate, _ = obs.photon_number_rate(I_dimless, scn)
    I_phys = I_dimless * prob.units.intensity_unit
    np.testing.assert_allclose(rate, I_phys * scn.delta_o * math.pi * scn.radius**2, rtol=1e-12)


def test_zero_intensity_gives_zero_photons():
    scn = _scn()
    rate, N = obs.photon_number_rate(np.zeros((3, 5)), scn, tau=np.linspace(0, 1, 5))
    assert np.all(rate == 0) and np.all(N == 0)


@settings(max_examples=30, deadline=None)
@given(a=st.floats(-10, 10), b=st.floats(-10, 10), seed=st.integers(0, 1000))
def test_photon_rate_is_linear(a, b, seed):
    rng = np.random.default_rng(seed)
    I1, I2 = rng.uniform(0, 1, (2, 4, 6))
    tau = np.linspace(0, 2, 6)
    scn = _scn()
    r, N = obs.photon_number_rate(a * I1 + b * I2, scn, tau)
    r1, N1 = obs.photon_number_rate(I1, scn, tau)
    r2, N2 = obs.photon_number_rate(I2, scn, tau)
    np.testing.assert_allclose(r, a * r1 + b * r2, rtol=1e-12, atol=1e-12 * scn.gamma_sp * 20)
    np.testing.assert_allclose(N, a * N1 + b * N2, rtol=1e-12, atol=1e-10)


# --- normalized maps ----------------------------------------------------------


def test_constant_map_is_ones():
    m = obs.normalized_map(np.full((3, 4), 2.5))
    assert np.all(m.values == 1.0)
    assert np.all(m.peak_index == 0)


def test_tie_break_is_earliest():
    row = np.array([[0.0, 1.0, 0.2, 1.0, 0.0]])
    m = obs.normalized_map(row, tau=np.arange(5) * 0.5)
    assert m.peak_index[0] == 1 and m.peak_time[0] == 0.5


def test_zero_rows_flagged():
    I = np.array([[0.0, 0.0, 0.0], [0.0, 2.0, 1.0]])
    m = obs.normalized_map(I)
    assert list(m.zero_rows) == [True, False]
    assert m.peak_index[0] == -1 and math.isnan(m.peak_time[0])
    assert np.all(m.values[0] == 0)


def test_negative_intensity_rejected():
    with pytest.raises(InvalidInput):
        obs.normalized_map(np.array([[1.0, -0.1]]))


def test_ringing_onset_synthetic():
    t = np.linspace(0, 1, 200)
    rows = [np.exp(-((t - 0.3) / 0.1) ** 2), np.exp(-((t - 0.3) / 0.1) ** 2) + 0.005 * np.exp(-((t - 0.7) / 0.05) ** 2),
            np.exp(-((t - 0.3) / 0.1) ** 2) + 0.2 * np.exp(-((t - 0.7) / 0.05) ** 2)]
    m = obs.normalized_map(np.array(rows), t)
    z, j = obs.ringing_onset(m, [0.0, 1.0, 2.0], level=0.01)
    assert (z, j) == (2.0, 2)
    assert obs.ringing_onset(obs.normalized_map(np.array(rows[:1]), t), [0.0])[1] == -1


def test_fig2_peak_track():
    b = pump.fig2_scenario(n_z=61, n_tau=200, z_max_dimensionless=300)
    h = cfsolver.evolve_phase1(b.scenario, b.grid)
    m = obs.normalized_map(h.intensity, b.grid.tau)
    assert m.zero_rows[0]
    j150 = int(np.argmin(np.abs(b.grid.z - 150)))
    assert m.peak_time[j150] > 0.3  # delayed burst
    assert m.peak_time[-1] < m.peak_time[j150]  # earlier again after saturation
    short = pump.fig2_scenario(n_z=3, n_tau=200, z_max_dimensionless=0.1)
    hs = cfsolver.evolve_phase1(short.scenario, short.grid)
    assert obs.normalized_map(hs.intensity, short.grid.tau).peak_time[1] == 0.0  # plain decay


def test_fit_peak_time_on_exact_shape():
    t = np.linspace(0, 6, 400)
    assert obs.fit_peak_time(t, t * np.exp(-t)) == pytest.approx(1.0, rel=1e-6)
    assert obs.fit_peak_time(t, t**2 * np.exp(-t)) == pytest.approx(2.0, rel=1e-6)


# --- spectra ------------------------------------------------------------------


def brute_force_power(G, h, omegas):
    n = G.shape[0]
    t = np.arange(n) * h
    out = []
    for w in omegas:
        v = np.exp(1j * w * t)
        out.append((v @ G @ v.conj()).real * h * h / (2 * math.pi))
    return np.array(out)


def test_spectrum_matches_quadratic_form():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(40, 40)) + 1j * rng.normal(size=(40, 40))
    G = X @ X.conj().T
    h = 0.1
    res = obs.spectrum(G, h, pad=3)
    pick = np.arange(0, res.omega_offsets.size, 7)
    ref = brute_force_power(G, h, res.omega_offsets[pick])
    np.testing.assert_allclose(res.power[pick], ref, rtol=1e-9, atol=1e-12 * np.abs(ref).max())


def test_spontaneous_kernel_is_lorentzian():
    gamma, h = 1.0, 0.01
    t = np.arange(0, 10 + h / 2, h)
    G = np.exp(-0.5 * gamma * (t[:, None] + t[None, :]))
    res = obs.spectrum(G, h, pad=8)
    assert obs.fwhm(res.omega_offsets, res.power) / 2 == pytest.approx(gamma / 2, rel=0.02)
    assert res.meta["parseval_rel_error"] < 0.01


def test_white_spectrum_and_parseval():
    res = obs.spectrum(np.eye(64), 0.5, pad=4)
    np.testing.assert_allclose(res.power, res.power[0], rtol=1e-12)
    assert res.power[0] == pytest.approx(64 * 0.25 / (2 * math.pi))
    assert res.meta["parseval_rel_error"] < 1e-12


def test_hann_window_recorded():
    res = obs.spectrum(np.eye(16), 1.0, window="hann")
    assert res.window == "hann" and res.meta["window"] == "hann"
    with pytest.raises(InvalidInput):
        obs.spectrum(np.eye(4), 1.0, window="kaiser")


def test_non_hermitian_rejected():
    G = np.eye(4, dtype=complex)
    G[0, 1] = 0.5
    with pytest.raises(InvalidInput, match="non-Hermitian input"):
        obs.spectrum(G, 1.0)


def test_time_unit_scales_frequency_axis():
    G = np.eye(8)
    a = obs.spectrum(G, 0.5)
    b = obs.spectrum(G, 0.5, time_unit=1e-15)
    np.testing.assert_allclose(b.omega_offsets, a.omega_offsets * 1e15)


def test_fwhm_of_triangle():
    w = np.linspace(-2, 2, 401)
    p = np.maximum(1 - np.abs(w), 0)
    assert obs.fwhm(w, p) == pytest.approx(1.0, rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(4, 30), rank=st.integers(1, 4))
def test_psd_input_gives_nonnegative_spectrum(seed, n, rank):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, rank)) + 1j * rng.normal(size=(n, rank))
    G = X @ X.conj().T
    res = obs.spectrum(G, 0.3, pad=4)
    assert res.power.min() >= -obs.PSD_TOL * res.power.max()
    assert res.meta["parseval_rel_error"] < 1e-10
