"""Statistical fits: spectral peaks, thermometry, relaxation time scales.

Two independent thermometers act on the spectra produced by the correlator
pipeline:

  * occupations: per-level Lorentzian weights of i G_K and A give
    i G_K / A = 2 n + 1, and the (E, n) points are fitted with a
    Bose-Einstein curve whose only parameter is the temperature;
  * detailed balance: for occupation correlators the two operator orderings
    satisfy ln f(E) - ln r(E) = beta E under the package transform
    f(E) = dtau sum w C exp(+i E tau), which fixes beta by weighted linear
    regression.

All nonlinear fits run scipy's least_squares on log-reparametrized positive
parameters, with a few deterministic restarts; standard errors come from the
Jacobian at the solution.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .correlators import CorrelatorSpectrum, tau_grid, window_values
from .errors import FitConvergenceError, GridMismatchError, ShortSeriesError

MAX_FIT_ITERATIONS = 500


@dataclass
class PeakSet:
    """Lorentzian decomposition of one spectrum, sorted by center."""

    centers: np.ndarray
    widths: np.ndarray
    weights: np.ndarray
    covariance: np.ndarray
    residual: float
    window_scale: float = 1.0

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=float)
        self.widths = np.asarray(self.widths, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if np.any(self.widths <= 0):
            raise ValueError("peak widths must be positive")
        if np.any(np.diff(self.centers) < 0):
            raise ValueError("peaks must be sorted by center")

    @property
    def errors(self) -> np.ndarray:
        """Per-parameter standard errors in (weight, center, width) triples."""
        return np.sqrt(np.abs(np.diag(self.covariance)))


@dataclass
class TemperatureFit:
    """Single-temperature fit result; thermal=False marks a flagged entry."""

    beta: float
    temperature: float
    beta_error: float
    temperature_error: float
    residual: float
    points: int
    thermal: bool
    window: tuple[float, float] | None = None
    time: float | None = None
    detail: str = ""


@dataclass
class RelaxationFit:
    """Bi-exponential relaxation toward a plateau."""

    amplitude_fast: float
    amplitude_slow: float
    tau_fast: float
    tau_slow: float
    plateau: float
    noise_floor: float
    errors: np.ndarray
    residual: float
    detail: str = ""

    def __post_init__(self):
        if self.tau_fast > self.tau_slow:
            raise ValueError("time constants must satisfy tau_fast <= tau_slow")


def _covariance(result) -> np.ndarray:
    """Parameter covariance from the Jacobian at the solution."""
    jac = result.jac
    m, n = jac.shape
    gram = jac.T @ jac
    try:
        inv = np.linalg.inv(gram)
    except np.linalg.LinAlgError:
        inv = np.linalg.pinv(gram)
    variance = 2.0 * result.cost / (m - n) if m > n else np.nan
    return inv * variance


def _lorentzian_model(params: np.ndarray, energies: np.ndarray) -> np.ndarray:
    total = np.zeros_like(energies)
    for p in range(params.size // 3):
        w, e0, log_g = params[3 * p:3 * p + 3]
        g = np.exp(log_g)
        total += w * (g / np.pi) / ((energies - e0) ** 2 + g ** 2)
    return total


def _raw_lorentzian_fit(energies: np.ndarray, data: np.ndarray,
                        starts: list[np.ndarray]):
    best = None
    for x0 in starts:
        res = least_squares(
            lambda p: _lorentzian_model(p, energies) - data, x0,
            max_nfev=MAX_FIT_ITERATIONS * x0.size, gtol=1e-12)
        if best is None or res.cost < best.cost:
            best = res
    if best is None or not best.success:
        cost = np.nan if best is None else best.cost
        raise FitConvergenceError(
            f"peak fit did not converge; best squared residual {cost:.3e}")
    return best


def _pick_peaks(energies: np.ndarray, data: np.ndarray, count: int,
                min_separation: float) -> np.ndarray:
    order = np.argsort(data)[::-1]
    chosen: list[float] = []
    for idx in order:
        e = energies[idx]
        if all(abs(e - c) >= min_separation for c in chosen):
            chosen.append(float(e))
        if len(chosen) == count:
            break
    while len(chosen) < count:
        # not enough distinct maxima; spread the rest over the grid
        chosen.append(float(np.interp(len(chosen) / count,
                                      [0, 1], [energies[0], energies[-1]])))
    return np.asarray(sorted(chosen))


def window_weight_scale(tau_max: float, tau_step: float,
                        window: str = "hann") -> float:
    """Fitted Lorentzian weight a unit-mass level acquires through the
    windowed transform; divide fitted weights by this to undo it."""
    tau = tau_grid(tau_max, tau_step)
    w = window_values(tau, window)
    lobe = 2.0 * np.pi / tau_max
    energies = np.linspace(-8.0 * lobe, 8.0 * lobe, 641)
    kernel = tau_step * (np.exp(1j * np.outer(energies, tau)) @ w).real
    gamma0 = 0.25 * lobe
    x0 = np.array([kernel.max() * np.pi * gamma0, 0.0, np.log(gamma0)])
    best = _raw_lorentzian_fit(energies, kernel, [x0])
    return float(best.x[0])


def fit_lorentzians(spectrum: CorrelatorSpectrum, peak_count: int,
                    seed_centers=None) -> PeakSet:
    """Nonlinear least squares of a sum of Lorentzians to Re(spectrum).

    Seed centers default to the tallest well-separated data maxima. Weights
    are window-mass corrected whenever the spectrum carries its tau grid.
    """
    if peak_count < 1:
        raise ValueError("peak_count must be at least 1")
    energies = spectrum.energies
    data = spectrum.values.real.astype(float)
    if energies.size < 3 * peak_count:
        raise ShortSeriesError(
            f"{energies.size} energy points cannot pin {3 * peak_count} "
            "parameters")
    grid_step = float(np.diff(energies).mean())
    if seed_centers is None:
        seed_centers = _pick_peaks(energies, data, peak_count,
                                   4.0 * grid_step)
    seed_centers = np.asarray(seed_centers, dtype=float)
    if seed_centers.size != peak_count:
        raise ValueError("seed_centers length must equal peak_count")

    gamma0 = 3.0 * grid_step
    x0 = np.empty(3 * peak_count)
    for p, e0 in enumerate(seed_centers):
        height = float(np.interp(e0, energies, data))
        x0[3 * p:3 * p + 3] = (max(height, 1e-12) * np.pi * gamma0, e0,
                               np.log(gamma0))
    starts = [x0]
    for shift, widen in ((0.5, 2.0), (-0.5, 0.5)):
        alt = x0.copy()
        alt[1::3] += shift * gamma0
        alt[2::3] += np.log(widen)
        starts.append(alt)
    best = _raw_lorentzian_fit(energies, data, starts)

    params = best.x.copy()
    cov = _covariance(best)
    # widths were fitted in log space; push covariance through gamma = e^x
    gammas = np.exp(params[2::3])
    jac_diag = np.ones_like(params)
    jac_diag[2::3] = gammas
    cov = cov * np.outer(jac_diag, jac_diag)
    params[2::3] = gammas

    scale = 1.0
    if spectrum.tau_max is not None and spectrum.tau_step is not None:
        scale = window_weight_scale(spectrum.tau_max, spectrum.tau_step,
                                    spectrum.window)
        params[0::3] /= scale
        correction = np.ones_like(jac_diag)
        correction[0::3] = 1.0 / scale
        cov = cov * np.outer(correction, correction)

    order = np.argsort(params[1::3])
    perm = np.concatenate([[3 * p, 3 * p + 1, 3 * p + 2] for p in order])
    params = params[perm]
    cov = cov[np.ix_(perm, perm)]
    residual = math.sqrt(2.0 * best.cost / energies.size)
    return PeakSet(centers=params[1::3], widths=params[2::3],
                   weights=params[0::3], covariance=cov, residual=residual,
                   window_scale=scale)


def occupation_from_fdt(k_weight: complex, a_weight: complex,
                        tolerance: float = 1e-3) -> float:
    """n = (ratio - 1)/2 with ratio = i k_weight / a_weight.

    k_weight is the fitted weight of G_K itself, which for a thermal
    diagonal spectrum is -i times a positive number. A ratio below
    1 - tolerance is reported as unphysical but never clamped.
    """
    if a_weight == 0:
        raise ValueError("spectral weight must be nonzero")
    ratio = 1j * complex(k_weight) / complex(a_weight)
    if abs(ratio.imag) > 1e-6 * max(1.0, abs(ratio.real)):
        warnings.warn(f"occupation ratio has imaginary residue {ratio.imag:.3e}",
                      stacklevel=2)
    occupation = (ratio.real - 1.0) / 2.0
    if ratio.real < 1.0 - tolerance:
        warnings.warn(
            f"unphysical occupation {occupation:.3e} from ratio "
            f"{ratio.real:.6f} < 1", stacklevel=2)
    return occupation


def fit_bose_einstein(energies, occupations, sigmas=None) -> TemperatureFit:
    """Weighted fit of n(E) = 1/(e^{E/T} - 1); T is the only parameter."""
    energies = np.asarray(energies, dtype=float)
    occupations = np.asarray(occupations, dtype=float)
    if energies.size != occupations.size or energies.size < 2:
        raise ValueError("need at least 2 matching (E, n) points")
    if np.any(energies <= 0):
        raise ValueError("energies must be positive")
    if np.all(occupations <= 0):
        raise FitConvergenceError("all occupations are nonpositive")
    weights = np.ones_like(energies)
    if sigmas is not None:
        sigmas = np.asarray(sigmas, dtype=float)
        if np.any(sigmas <= 0):
            raise ValueError("sigmas must be positive")
        weights = 1.0 / sigmas ** 2
    root_w = np.sqrt(weights)

    def model(log_t: float) -> np.ndarray:
        x = np.clip(energies * np.exp(-log_t), 1e-12, 700.0)
        return 1.0 / np.expm1(x)

    positive = occupations > 0
    guess = energies[positive] / np.log1p(1.0 / occupations[positive])
    x0 = np.array([np.log(np.median(guess))])
    res = least_squares(lambda p: root_w * (model(p[0]) - occupations), x0,
                        max_nfev=MAX_FIT_ITERATIONS, gtol=1e-12)
    if not res.success:
        raise FitConvergenceError(
            f"temperature fit did not converge; best squared residual "
            f"{res.cost:.3e}")
    temperature = float(np.exp(res.x[0]))
    cov = _covariance(res)
    log_t_error = float(np.sqrt(abs(cov[0, 0])))
    t_error = temperature * log_t_error
    residual = math.sqrt(2.0 * res.cost / weights.sum())
    return TemperatureFit(beta=1.0 / temperature, temperature=temperature,
                          beta_error=t_error / temperature ** 2,
                          temperature_error=t_error, residual=residual,
                          points=int(energies.size), thermal=True)


def fit_fdt_beta(forward: CorrelatorSpectrum, reverse: CorrelatorSpectrum,
                 e_window: tuple[float, float],
                 min_points: int = 5) -> TemperatureFit:
    """beta from ln f(E) - ln r(E) = beta E over one energy window.

    Only points where both spectra are positive enter; weights proportional
    to min(f, r) suppress noise-floor energies. beta <= 0 is returned
    flagged as not thermal rather than raised.
    """
    if forward.energies.shape != reverse.energies.shape or \
            np.abs(forward.energies - reverse.energies).max() > 1e-9:
        raise GridMismatchError("forward and reversed spectra grids differ")
    lo, hi = float(e_window[0]), float(e_window[1])
    if not lo < hi:
        raise ValueError("energy window must be ordered (low, high)")
    energies = forward.energies
    f = forward.values.real
    r = reverse.values.real
    span = float(energies.max() - energies.min())
    usable = ((energies >= lo) & (energies <= hi)
              & (np.abs(energies) > 1e-12 * max(span, 1.0))
              & (f > 0) & (r > 0))
    n = int(usable.sum())
    if n < min_points:
        raise ShortSeriesError(
            f"only {n} usable energy points in window ({lo}, {hi}); "
            f"need {min_points}")
    e = energies[usable]
    d = np.log(f[usable]) - np.log(r[usable])
    w = np.minimum(f[usable], r[usable])
    denom = float(np.sum(w * e * e))
    beta = float(np.sum(w * e * d) / denom)
    resid = d - beta * e
    scatter = float(np.sum(w * resid ** 2) / (n - 1)) if n > 1 else np.nan
    beta_error = math.sqrt(scatter / denom)
    residual = math.sqrt(float(np.sum(w * resid ** 2) / np.sum(w)))
    thermal = beta > 0
    if thermal:
        temperature = 1.0 / beta
        t_error = beta_error / beta ** 2
        detail = ""
    else:
        temperature = np.inf if beta == 0 else 1.0 / beta
        t_error = np.inf
        detail = "not thermal: fitted beta <= 0"
    return TemperatureFit(beta=beta, temperature=temperature,
                          beta_error=beta_error, temperature_error=t_error,
                          residual=residual, points=n, thermal=thermal,
                          window=(lo, hi), time=forward.com_time,
                          detail=detail)


def temperature_timeline(spectra_pairs, e_window) -> list[TemperatureFit]:
    """One detailed-balance fit per center-of-mass time.

    Times whose window holds too few usable points become flagged gap
    entries instead of failing the whole timeline.
    """
    timeline = []
    for forward, reverse in spectra_pairs:
        try:
            timeline.append(fit_fdt_beta(forward, reverse, e_window))
        except ShortSeriesError as exc:
            timeline.append(TemperatureFit(
                beta=np.nan, temperature=np.nan, beta_error=np.nan,
                temperature_error=np.nan, residual=np.nan, points=0,
                thermal=False, window=(float(e_window[0]),
                                       float(e_window[1])),
                time=forward.com_time, detail=f"gap: {exc}"))
    return timeline


def _biexp_model(params: np.ndarray, times: np.ndarray,
                 floor: float) -> np.ndarray:
    a1, a2, t1, t2 = np.exp(params)
    return a1 * np.exp(-times / t1) + a2 * np.exp(-times / t2) + floor


def fit_biexponential(times, values, plateau: float,
                      noise_floor: float = 0.0) -> RelaxationFit:
    """Fit |y - plateau| with a1 e^{-t/tau1} + a2 e^{-t/tau2} + floor.

    The objective compares logarithms so both decay scales carry weight.
    Near-degenerate results (tau1 ~ tau2 or one amplitude negligible) are
    reported in the detail field.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if times.size != values.size or times.size < 8:
        raise ShortSeriesError("need at least 8 matching samples")
    deviation = np.abs(values - float(plateau))
    keep = deviation > 0
    if noise_floor > 0:
        # points at or below the noise scale carry no decay information and
        # their logarithms would dominate the objective
        keep &= deviation > noise_floor
    t = times[keep]
    z = deviation[keep]
    if t.size < 8:
        raise ShortSeriesError(
            f"only {t.size} samples sit above the plateau noise floor")
    span = float(t.max() - t.min()) or 1.0
    z0 = float(z.max())

    def residual(p):
        return np.log(_biexp_model(p, t, noise_floor)) - np.log(z)

    starts = []
    for split, fast, slow in ((0.8, 0.05, 0.33), (0.5, 0.02, 0.2),
                              (0.9, 0.1, 0.5)):
        starts.append(np.log([split * z0, (1 - split) * z0,
                              fast * span, slow * span]))
    best = None
    for x0 in starts:
        res = least_squares(residual, x0,
                            max_nfev=MAX_FIT_ITERATIONS * 4, gtol=1e-12)
        if best is None or res.cost < best.cost:
            best = res
    if not best.success:
        raise FitConvergenceError(
            f"relaxation fit did not converge; best squared residual "
            f"{best.cost:.3e}")
    params = np.exp(best.x)
    cov = _covariance(best)
    errors = params * np.sqrt(np.abs(np.diag(cov)))
    if params[2] > params[3]:
        params = params[[1, 0, 3, 2]]
        errors = errors[[1, 0, 3, 2]]
    a1, a2, t1, t2 = params
    detail = ""
    if t2 < 1.05 * t1 or min(a1, a2) < 1e-3 * max(a1, a2):
        detail = "degenerate: a single exponential describes the data"
    residual_norm = math.sqrt(2.0 * best.cost / t.size)
    return RelaxationFit(amplitude_fast=a1, amplitude_slow=a2,
                         tau_fast=t1, tau_slow=t2, plateau=float(plateau),
                         noise_floor=float(noise_floor), errors=errors,
                         residual=residual_norm, detail=detail)


def plateau_stats(values, tail_fraction: float = 0.2) -> tuple[float, float]:
    """Mean and standard deviation over the final fraction of samples."""
    if not 0 < tail_fraction <= 1:
        raise ValueError("tail_fraction must sit in (0, 1]")
    values = np.asarray(values, dtype=float)
    count = int(round(tail_fraction * values.size))
    if count < 10:
        raise ShortSeriesError(
            f"tail holds {count} samples; need at least 10")
    tail = values[-count:]
    return float(tail.mean()), float(tail.std())
