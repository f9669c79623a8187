"""Fit recovery on synthetic data plus a Gibbs-ensemble thermometer check."""

import numpy as np
import pytest

import oracles
from bosetherm.correlators import CorrelatorSpectrum, TwoTimeSeries, tau_grid, to_energy
from bosetherm.errors import (
    FitConvergenceError,
    GridMismatchError,
    ShortSeriesError,
)
from bosetherm.hamiltonian import HamiltonianParams
from bosetherm.thermofit import (
    fit_biexponential,
    fit_bose_einstein,
    fit_fdt_beta,
    fit_lorentzians,
    occupation_from_fdt,
    plateau_stats,
    temperature_timeline,
    window_weight_scale,
)


def lorentzian(energies, weight, center, width):
    return weight * (width / np.pi) / ((energies - center) ** 2 + width ** 2)


def spectrum_of(energies, values, kind="spectral", **kw):
    return CorrelatorSpectrum(kind, (0, 0), 0.0, energies,
                              np.asarray(values, dtype=complex), "hann", **kw)


def test_single_lorentzian_recovery_with_noise():
    energies = np.linspace(-5.0, 25.0, 601)
    rng = np.random.default_rng(2)
    height = 1.0 / (np.pi * 0.5)
    data = lorentzian(energies, 1.0, 10.0, 0.5) \
        + rng.normal(0.0, 0.01 * height, energies.size)
    peaks = fit_lorentzians(spectrum_of(energies, data), 1)
    assert abs(peaks.weights[0] - 1.0) < 0.03
    assert abs(peaks.centers[0] - 10.0) < 0.03 * 0.5
    assert abs(peaks.widths[0] - 0.5) < 0.03
    assert peaks.errors.shape == (3,)


def test_two_separated_peaks_recovered():
    energies = np.linspace(0.0, 30.0, 901)
    data = lorentzian(energies, 1.0, 8.0, 0.4) \
        + lorentzian(energies, 0.5, 18.0, 0.6)
    peaks = fit_lorentzians(spectrum_of(energies, data), 2)
    assert abs(peaks.centers[0] - 8.0) < 0.1 * 0.4
    assert abs(peaks.centers[1] - 18.0) < 0.1 * 0.6
    np.testing.assert_allclose(peaks.weights, [1.0, 0.5], rtol=1e-4)
    np.testing.assert_allclose(peaks.widths, [0.4, 0.6], rtol=1e-4)


def test_seed_centers_steer_the_fit():
    energies = np.linspace(0.0, 30.0, 901)
    data = lorentzian(energies, 1.0, 8.0, 0.4) \
        + lorentzian(energies, 0.5, 18.0, 0.6)
    peaks = fit_lorentzians(spectrum_of(energies, data), 2,
                            seed_centers=[7.0, 19.0])
    assert abs(peaks.centers[0] - 8.0) < 0.05
    with pytest.raises(ValueError):
        fit_lorentzians(spectrum_of(energies, data), 2, seed_centers=[8.0])


def test_window_mass_correction_recovers_level_weight():
    # one level of spectral mass 0.7; the corrected Lorentzian weight should
    # come back as 0.7 regardless of the window distortion
    tau = tau_grid(8.0, 0.05)
    series = TwoTimeSeries("spectral", (0, 0), 0.0, tau,
                           0.7 * np.exp(-1j * 3.0 * tau))
    lobe = 2.0 * np.pi / 8.0
    energies = np.linspace(3.0 - 8 * lobe, 3.0 + 8 * lobe, 641)
    spec = to_energy(series, energies, window="hann")
    peaks = fit_lorentzians(spec, 1, seed_centers=[3.0])
    assert peaks.window_scale != 1.0
    assert abs(peaks.weights[0] - 0.7) < 5e-3
    assert abs(peaks.centers[0] - 3.0) < 1e-6


def test_window_weight_scale_is_cached_free_and_positive():
    scale_hann = window_weight_scale(10.0, 0.01, "hann")
    scale_rect = window_weight_scale(10.0, 0.01, "rect")
    assert scale_hann > 0 and scale_rect > 0
    # rect keeps more window mass than hann
    assert scale_rect > scale_hann


def test_occupation_from_fdt_inversion():
    assert occupation_from_fdt(-3.0j, 1.0) == pytest.approx(1.0)
    assert occupation_from_fdt(-1.0j, 1.0) == pytest.approx(0.0)
    with pytest.warns(UserWarning, match="unphysical"):
        n = occupation_from_fdt(-0.5j, 1.0)
    assert n == pytest.approx(-0.25)
    with pytest.warns(UserWarning, match="imaginary residue"):
        occupation_from_fdt(-3.0j + 0.1, 1.0)
    with pytest.raises(ValueError):
        occupation_from_fdt(-3.0j, 0.0)


def test_bose_einstein_exact_inversion():
    energies = np.array([10.0, 20.0, 30.0, 40.0, 50.0])
    occupations = 1.0 / np.expm1(energies / 50.0)
    fit = fit_bose_einstein(energies, occupations)
    assert abs(fit.temperature - 50.0) < 50.0 * 1e-6
    assert fit.thermal and fit.points == 5
    weighted = fit_bose_einstein(energies, occupations,
                                 sigmas=np.full(5, 0.01))
    assert abs(weighted.temperature - 50.0) < 50.0 * 1e-6


def test_bose_einstein_input_validation():
    with pytest.raises(ValueError):
        fit_bose_einstein([10.0], [0.5])
    with pytest.raises(ValueError):
        fit_bose_einstein([-1.0, 2.0], [0.5, 0.3])
    with pytest.raises(FitConvergenceError):
        fit_bose_einstein([10.0, 20.0], [-0.5, -0.3])


def test_bose_einstein_inconsistent_points_still_fit():
    energies = np.array([10.0, 20.0])
    occupations = np.array([1.0 / np.expm1(10.0 / 30.0),
                            1.0 / np.expm1(20.0 / 300.0)])
    fit = fit_bose_einstein(energies, occupations)
    assert fit.thermal
    assert fit.residual > 0.01


def test_fdt_beta_synthetic_exact_ratio():
    energies = np.linspace(-30.0, 30.0, 241)
    beta = 1.0 / 200.0
    base = np.exp(-((energies / 15.0) ** 2)) + 0.01
    forward = spectrum_of(energies, base, kind="density_forward")
    reverse = spectrum_of(energies, base * np.exp(-beta * energies),
                          kind="density_reversed")
    fit = fit_fdt_beta(forward, reverse, (-25.0, 25.0))
    assert abs(fit.beta - beta) < 1e-4 * beta
    assert fit.thermal and abs(fit.temperature - 200.0) < 0.1


def test_fdt_beta_flags_and_errors():
    energies = np.linspace(-10.0, 10.0, 81)
    base = np.exp(-((energies / 5.0) ** 2)) + 0.01
    same = spectrum_of(energies, base, kind="density_forward")
    fit = fit_fdt_beta(same, spectrum_of(energies, base,
                                         kind="density_reversed"),
                       (-8.0, 8.0))
    assert fit.beta == 0.0 and not fit.thermal
    assert np.isinf(fit.temperature)
    assert "not thermal" in fit.detail
    sparse = base.copy()
    sparse[np.abs(energies) > 1.0] = -1.0
    with pytest.raises(ShortSeriesError):
        fit_fdt_beta(spectrum_of(energies, sparse),
                     spectrum_of(energies, sparse), (4.0, 8.0))
    other_grid = spectrum_of(energies + 0.1, base)
    with pytest.raises(GridMismatchError):
        fit_fdt_beta(same, other_grid, (-8.0, 8.0))
    with pytest.raises(ValueError):
        fit_fdt_beta(same, same, (8.0, -8.0))


def test_fdt_beta_on_gibbs_ensemble_recovers_temperature():
    # end-to-end: Lehmann-sum correlators of a mu=0 thermal ensemble,
    # windowed transform, detailed-balance regression; the recovered beta
    # must be positive and close to the ensemble value
    params = HamiltonianParams(num_modes=3, num_particles=1,
                               level_spacing=10.0, hopping=1.0,
                               u_intra=1.0, u_inter=0.1)
    beta = 0.05
    tau = tau_grid(30.0, 0.02)
    fwd_vals, rev_vals = oracles.gibbs_density_series(params, beta, 4, 0, 1,
                                                      tau)
    forward = TwoTimeSeries("density_forward", (0, 1), 0.0, tau, fwd_vals)
    reverse = TwoTimeSeries("density_reversed", (0, 1), 0.0, tau, rev_vals)
    energies = np.linspace(-30.0, 30.0, 1201)
    fit = fit_fdt_beta(to_energy(forward, energies),
                       to_energy(reverse, energies), (0.3, 28.0))
    assert fit.thermal
    assert abs(fit.beta - beta) < 0.05 * beta


def test_temperature_timeline_keeps_gaps():
    energies = np.linspace(-10.0, 10.0, 81)
    base = np.exp(-((energies / 5.0) ** 2)) + 0.01
    beta = 0.02
    thermal_pair = (spectrum_of(energies, base),
                    spectrum_of(energies, base * np.exp(-beta * energies)))
    flat_pair = (spectrum_of(energies, base), spectrum_of(energies, base))
    sparse = np.full_like(base, -1.0)
    sparse[:3] = 1.0
    sparse_pair = (spectrum_of(energies, sparse),
                   spectrum_of(energies, sparse))
    timeline = temperature_timeline([thermal_pair, flat_pair, sparse_pair],
                                    (-8.0, 8.0))
    assert len(timeline) == 3
    assert timeline[0].thermal and abs(timeline[0].beta - beta) < 1e-6
    assert not timeline[1].thermal and timeline[1].beta == 0.0
    assert not timeline[2].thermal and timeline[2].detail.startswith("gap:")


def test_biexponential_recovery_with_noise():
    rng = np.random.default_rng(9)
    times = np.linspace(0.0, 8.0, 161)
    true = (3.0, 0.4, 0.25, 1.5)
    deviation = true[0] * np.exp(-times / true[2]) \
        + true[1] * np.exp(-times / true[3])
    values = 5.15 + deviation * (1.0 + 0.02 * rng.normal(size=times.size))
    fit = fit_biexponential(times, values, plateau=5.15)
    assert fit.tau_fast <= fit.tau_slow
    assert abs(fit.amplitude_fast - true[0]) < 0.05 * true[0]
    assert abs(fit.amplitude_slow - true[1]) < 0.05 * true[1]
    assert abs(fit.tau_fast - true[2]) < 0.05 * true[2]
    assert abs(fit.tau_slow - true[3]) < 0.05 * true[3]
    assert fit.detail == ""


def test_biexponential_degenerate_single_exponential():
    times = np.linspace(0.0, 6.0, 121)
    values = 5.0 + 2.0 * np.exp(-times / 0.8)
    fit = fit_biexponential(times, values, plateau=5.0)
    assert fit.detail != ""
    assert abs(fit.amplitude_fast + fit.amplitude_slow - 2.0) < 0.02


def test_biexponential_needs_enough_samples():
    with pytest.raises(ShortSeriesError):
        fit_biexponential([0.0, 1.0, 2.0], [1.0, 0.5, 0.2], plateau=0.0)


def test_plateau_stats_basics():
    constant = np.full(100, 2.5)
    mean, std = plateau_stats(constant, tail_fraction=0.5)
    assert mean == 2.5 and std == 0.0
    rng = np.random.default_rng(4)
    noisy = rng.normal(3.0, 0.05, size=400)
    mean, std = plateau_stats(noisy, tail_fraction=0.25)
    assert abs(mean - 3.0) < 0.02
    assert abs(std - 0.05) < 0.2 * 0.05
    with pytest.raises(ShortSeriesError):
        plateau_stats(np.ones(20), tail_fraction=0.2)
    with pytest.raises(ValueError):
        plateau_stats(np.ones(100), tail_fraction=1.5)
