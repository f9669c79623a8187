"""Two-time correlation functions along one evolving trajectory.

All correlators are taken at a center-of-mass time t with relative time tau,
t1 = t + tau/2 and t2 = t - tau/2. Single-particle functions walk through
the neighbor sectors:

    lesser  G<_ij(t, tau) = -i <b_j^dag(t2) b_i(t1)>   (N-1 sector inside)
    greater G>_ij(t, tau) = -i <b_i(t1) b_j^dag(t2)>   (N+1 sector inside)

Occupation correlators stay in the N sector. Every evaluation reduces to
ladder advances of state vectors, never matrix-matrix work: the trajectory
states psi(t + m*dtau/2) are built once by fine stepping, and each tau point
costs O(log tau) dense matrix-vector products.

The energy transform follows f(E) = dtau * sum_k w(tau_k) C(tau_k)
exp(+i E tau_k) with a Hann window by default.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .errors import AliasingError, GridMismatchError, SectorMismatchError
from .fock import FockBasis, StateVector
from .hamiltonian import build_hamiltonian
from .propagator import PropagatorLadder, build_ladder, choose_base_step

SERIES_KINDS = ("lesser", "greater", "keldysh", "spectral",
                "density_forward", "density_reversed")
WINDOW_KINDS = ("hann", "rect")


def tau_grid(tau_max: float, tau_step: float) -> np.ndarray:
    """Symmetric grid -tau_max..tau_max inclusive; tau_max must be a
    multiple of tau_step."""
    if tau_step <= 0 or tau_max <= 0:
        raise ValueError("tau_max and tau_step must be positive")
    count = int(round(tau_max / tau_step))
    if count < 1 or abs(count * tau_step - tau_max) > 1e-9 * tau_max:
        raise GridMismatchError(
            f"tau_max {tau_max} is not a multiple of tau_step {tau_step}")
    return tau_step * np.arange(-count, count + 1)


def _validate_tau(tau: np.ndarray) -> float:
    """Return the spacing of a uniform symmetric grid."""
    tau = np.asarray(tau, dtype=float)
    if tau.ndim != 1 or tau.size < 3 or tau.size % 2 == 0:
        raise GridMismatchError(
            "tau grid must be one-dimensional, symmetric, odd length >= 3")
    step = float(tau[1] - tau[0])
    if step <= 0:
        raise GridMismatchError("tau grid must be increasing")
    if np.abs(np.diff(tau) - step).max() > 1e-9 * step:
        raise GridMismatchError("tau grid must be uniform")
    if np.abs(tau + tau[::-1]).max() > 1e-9 * step:
        raise GridMismatchError("tau grid must be symmetric around zero")
    return step


@dataclass
class TwoTimeSeries:
    """One correlator over a symmetric relative-time grid."""

    kind: str
    pair: tuple[int, int]
    com_time: float
    tau: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.kind not in SERIES_KINDS:
            raise ValueError(f"unknown series kind {self.kind!r}")
        self.tau = np.asarray(self.tau, dtype=float)
        _validate_tau(self.tau)
        self.values = np.asarray(self.values, dtype=np.complex128)
        if self.values.shape != self.tau.shape:
            raise GridMismatchError("values and tau must have equal length")

    @property
    def tau_step(self) -> float:
        return float(self.tau[1] - self.tau[0])

    def at_equal_time(self) -> complex:
        return complex(self.values[self.values.size // 2])


@dataclass
class CorrelatorSpectrum:
    """Windowed Fourier transform of a TwoTimeSeries.

    tau_max and tau_step describe the grid the transform was taken on; they
    let weight fits undo the finite-window mass distortion.
    """

    kind: str
    pair: tuple[int, int] | None
    com_time: float
    energies: np.ndarray
    values: np.ndarray
    window: str
    tau_max: float | None = None
    tau_step: float | None = None

    def __post_init__(self):
        self.energies = np.asarray(self.energies, dtype=float)
        self.values = np.asarray(self.values, dtype=np.complex128)
        if self.energies.shape != self.values.shape:
            raise GridMismatchError("energies and values must match")


@dataclass(frozen=True)
class SectorLadders:
    """Propagators for the N and (when needed) N-1 / N+1 sectors.

    All ladders must share one base step so relative-time grids stay on a
    common lattice.
    """

    center: PropagatorLadder
    lower: PropagatorLadder | None = None
    upper: PropagatorLadder | None = None

    def __post_init__(self):
        n = self.center.basis.num_particles
        for lad, want, name in ((self.lower, n - 1, "lower"),
                                (self.upper, n + 1, "upper")):
            if lad is None:
                continue
            if lad.basis.num_particles != want:
                raise SectorMismatchError(
                    f"{name} ladder holds {lad.basis.num_particles} "
                    f"particles, expected {want}")
            if abs(lad.base_step - self.center.base_step) > \
                    1e-12 * self.center.base_step:
                raise GridMismatchError(
                    "sector ladders must share one base step")


def build_sector_ladders(params, horizon: float, tau_step: float | None = None,
                         target_error: float = 1e-8, neighbors: bool = True,
                         **config_kwargs) -> SectorLadders:
    """Ladders for N and (optionally) N-1, N+1 with one shared base step.

    The step is the tightest of the per-sector choices, aligned to half the
    relative-time step when one is given, so mixed-sector walks stay on a
    single lattice.
    """
    counts = [params.num_particles]
    if neighbors:
        if params.num_particles < 1:
            raise ValueError("neighbor sectors need at least one particle")
        counts += [params.num_particles - 1, params.num_particles + 1]
    align = None if tau_step is None else tau_step / 2.0
    ops = {n: build_hamiltonian(dataclasses.replace(params, num_particles=n))
           for n in counts}
    cfgs = [choose_base_step(ops[n], horizon, target_error=target_error,
                             align_to=align, **config_kwargs)
            for n in counts]
    # min of aligned steps is still an integer divisor of the alignment
    dt = min(c.base_step for c in cfgs)
    branching = cfgs[0].branching
    depth = 0
    while (branching ** (depth + 1) - 1) * dt < horizon:
        depth += 1
    shared = dataclasses.replace(cfgs[0], base_step=dt, depth=depth)
    ladders = {n: build_ladder(ops[n], shared) for n in counts}
    return SectorLadders(
        center=ladders[params.num_particles],
        lower=ladders.get(params.num_particles - 1),
        upper=ladders.get(params.num_particles + 1))


def _grid_steps(ladder: PropagatorLadder, tau: np.ndarray) -> tuple[int, int]:
    """(half-count K, base steps per half tau step)."""
    step = _validate_tau(np.asarray(tau, dtype=float))
    half = step / 2.0
    q2 = int(round(half / ladder.base_step))
    if q2 < 1 or abs(q2 * ladder.base_step - half) > 1e-9 * half:
        raise GridMismatchError(
            f"half tau step {half:.6e} is not a multiple of the ladder base "
            f"step {ladder.base_step:.6e}")
    return (len(tau) - 1) // 2, q2


def _trajectory_states(ladder: PropagatorLadder, psi0: StateVector,
                       com_steps: int, q2: int, count: int) -> np.ndarray:
    """Rows psi(t + m * dtau/2) for m = -count..count."""
    states = np.empty((2 * count + 1, ladder.basis.dim), dtype=np.complex128)
    cur = ladder.advance(psi0.amplitudes, com_steps - count * q2)
    states[0] = cur
    for s in range(1, 2 * count + 1):
        cur = ladder.advance(cur, q2)
        states[s] = cur
    return states


def _lower_block(basis: FockBasis, amps: np.ndarray, modes) -> np.ndarray:
    """Columns b_m |amps> over the (N-1)-sector."""
    src, dst, amp, target = basis.lowering_map(modes[0])
    out = np.zeros((target.dim, len(modes)), dtype=np.complex128)
    for c, m in enumerate(modes):
        src, dst, amp, _ = basis.lowering_map(m)
        out[dst, c] = amp * amps[src]
    return out


def _raise_block(basis: FockBasis, amps: np.ndarray, modes) -> np.ndarray:
    """Columns b_m^dag |amps> over the (N+1)-sector."""
    src, dst, amp, target = basis.raising_map(modes[0])
    out = np.zeros((target.dim, len(modes)), dtype=np.complex128)
    for c, m in enumerate(modes):
        src, dst, amp, _ = basis.raising_map(m)
        out[dst, c] = amp * amps[src]
    return out


def _check_modes(basis: FockBasis, pairs) -> list[tuple[int, int]]:
    clean = []
    for p in pairs:
        i, j = int(p[0]), int(p[1])
        if not (0 <= i < basis.num_modes and 0 <= j < basis.num_modes):
            raise ValueError(f"pair {p} outside 0..{basis.num_modes - 1}")
        clean.append((i, j))
    return clean


def single_particle_correlator_set(psi0: StateVector, ladders: SectorLadders,
                                   pairs, com_time: float,
                                   tau: np.ndarray):
    """Lesser and greater functions for several mode pairs in one sweep.

    Shares the trajectory states and batches the sector-walks over modes;
    returns {pair: (lesser, greater)}.
    """
    basis = ladders.center.basis
    if psi0.basis is not basis:
        raise SectorMismatchError("initial state is not in the center sector")
    if ladders.lower is None or ladders.upper is None:
        raise ValueError("single-particle functions need all three ladders")
    pairs = _check_modes(basis, pairs)
    tau = np.asarray(tau, dtype=float)
    k_half, q2 = _grid_steps(ladders.center, tau)
    q = 2 * q2
    com_steps, com_actual = ladders.center.snap(com_time)
    half = _trajectory_states(ladders.center, psi0, com_steps, q2, k_half)

    i_modes = sorted({p[0] for p in pairs})
    j_modes = sorted({p[1] for p in pairs})
    ipos = {m: c for c, m in enumerate(i_modes)}
    jpos = {m: c for c, m in enumerate(j_modes)}

    lesser = np.empty((len(pairs), tau.size), dtype=np.complex128)
    greater = np.empty_like(lesser)

    for k in range(k_half + 1):
        psi1 = half[k_half + k]
        psi2 = half[k_half - k]
        # tau >= 0: evolve the bra side in N-1, the ket side in N+1
        bj2 = _lower_block(basis, psi2, j_modes)
        bi1 = _lower_block(basis, psi1, i_modes)
        adv = ladders.lower.advance(bj2, k * q) if k else bj2
        cross_l = adv.conj().T @ bi1
        cj2 = _raise_block(basis, psi2, j_modes)
        ci1 = _raise_block(basis, psi1, i_modes)
        advu = ladders.upper.advance(cj2, k * q) if k else cj2
        cross_g = ci1.conj().T @ advu
        for p, (i, j) in enumerate(pairs):
            lesser[p, k_half + k] = -1j * cross_l[jpos[j], ipos[i]]
            greater[p, k_half + k] = -1j * cross_g[ipos[i], jpos[j]]
        if k == 0:
            continue
        # tau < 0: t1 sits below t2, the evolved side flips
        psi1m = half[k_half - k]
        psi2m = half[k_half + k]
        bi1m = _lower_block(basis, psi1m, i_modes)
        bj2m = _lower_block(basis, psi2m, j_modes)
        advm = ladders.lower.advance(bi1m, k * q)
        cross_lm = bj2m.conj().T @ advm
        ci1m = _raise_block(basis, psi1m, i_modes)
        cj2m = _raise_block(basis, psi2m, j_modes)
        advum = ladders.upper.advance(ci1m, k * q)
        cross_gm = advum.conj().T @ cj2m
        for p, (i, j) in enumerate(pairs):
            lesser[p, k_half - k] = -1j * cross_lm[jpos[j], ipos[i]]
            greater[p, k_half - k] = -1j * cross_gm[ipos[i], jpos[j]]

    return {pair: (TwoTimeSeries("lesser", pair, com_actual, tau, lesser[p]),
                   TwoTimeSeries("greater", pair, com_actual, tau, greater[p]))
            for p, pair in enumerate(pairs)}


def single_particle_correlators(psi0: StateVector, ladders: SectorLadders,
                                pair, com_time: float, tau: np.ndarray):
    """(lesser, greater) for one mode pair."""
    pair = tuple(int(v) for v in pair)
    return single_particle_correlator_set(psi0, ladders, [pair],
                                          com_time, tau)[pair]


def density_correlators(psi0: StateVector, ladders, pair, com_time: float,
                        tau: np.ndarray):
    """Occupation correlators (forward, reversed) for one mode pair.

    forward  = <n_i(t1) n_j(t2)>, reversed = <n_j(t2) n_i(t1)>. The two are
    computed through different advance chains, so agreement up to complex
    conjugation is a real consistency check, not an identity.
    """
    ladder = ladders.center if isinstance(ladders, SectorLadders) else ladders
    basis = ladder.basis
    if psi0.basis is not basis:
        raise SectorMismatchError("initial state is not in the ladder sector")
    (i, j), = _check_modes(basis, [pair])
    tau = np.asarray(tau, dtype=float)
    k_half, q2 = _grid_steps(ladder, tau)
    q = 2 * q2
    com_steps, com_actual = ladder.snap(com_time)
    half = _trajectory_states(ladder, psi0, com_steps, q2, k_half)
    occ_i = basis.states[:, i].astype(float)
    occ_j = basis.states[:, j].astype(float)

    forward = np.empty(tau.size, dtype=np.complex128)
    reverse = np.empty(tau.size, dtype=np.complex128)
    for k in range(k_half + 1):
        ni1 = half[k_half + k] * occ_i
        nj2 = half[k_half - k] * occ_j
        if k == 0:
            forward[k_half] = np.vdot(ni1, nj2)
            reverse[k_half] = np.vdot(nj2, ni1)
            continue
        forward[k_half + k] = np.vdot(ni1, ladder.advance(nj2, k * q))
        reverse[k_half + k] = np.vdot(nj2, ladder.advance(ni1, -k * q))
        ni1m = half[k_half - k] * occ_i
        nj2m = half[k_half + k] * occ_j
        forward[k_half - k] = np.vdot(ladder.advance(ni1m, k * q), nj2m)
        reverse[k_half - k] = np.vdot(nj2m, ladder.advance(ni1m, k * q))
    fwd = TwoTimeSeries("density_forward", (i, j), com_actual, tau, forward)
    rev = TwoTimeSeries("density_reversed", (i, j), com_actual, tau, reverse)
    return fwd, rev


def _require_same_grid(a: TwoTimeSeries, b: TwoTimeSeries) -> None:
    if a.tau.shape != b.tau.shape or \
            np.abs(a.tau - b.tau).max() > 1e-9 * a.tau_step:
        raise GridMismatchError("series grids differ")
    if abs(a.com_time - b.com_time) > 1e-9 * max(1.0, abs(a.com_time)):
        raise GridMismatchError("series center-of-mass times differ")
    if a.pair != b.pair:
        raise GridMismatchError(f"series pairs differ: {a.pair} vs {b.pair}")


def keldysh_and_spectral(lesser: TwoTimeSeries, greater: TwoTimeSeries):
    """G_K = G> + G<, A = i (G> - G<) on a shared grid."""
    if lesser.kind != "lesser" or greater.kind != "greater":
        raise ValueError("expected a (lesser, greater) pair")
    _require_same_grid(lesser, greater)
    keldysh = TwoTimeSeries("keldysh", lesser.pair, lesser.com_time,
                            lesser.tau, greater.values + lesser.values)
    spectral = TwoTimeSeries("spectral", lesser.pair, lesser.com_time,
                             lesser.tau,
                             1j * (greater.values - lesser.values))
    return keldysh, spectral


def window_values(tau: np.ndarray, window: str) -> np.ndarray:
    """Window weights on a symmetric grid; w(0) = 1."""
    if window not in WINDOW_KINDS:
        raise ValueError(f"unknown window {window!r}; pick from {WINDOW_KINDS}")
    tau = np.asarray(tau, dtype=float)
    if window == "rect":
        return np.ones_like(tau)
    tau_max = float(np.abs(tau).max())
    return 0.5 * (1.0 + np.cos(np.pi * tau / tau_max))


def to_energy(series: TwoTimeSeries, energies: np.ndarray,
              window: str = "hann") -> CorrelatorSpectrum:
    """f(E) = dtau * sum_k w(tau_k) C(tau_k) exp(+i E tau_k).

    Energies beyond the Nyquist limit pi/dtau are rejected.
    """
    energies = np.asarray(energies, dtype=float)
    step = series.tau_step
    emax = float(np.abs(energies).max()) if energies.size else 0.0
    if emax * step > np.pi * (1.0 + 1e-12):
        raise AliasingError(
            f"|E| up to {emax:.4f} exceeds the Nyquist limit "
            f"{np.pi / step:.4f} of a tau step {step:.4e}")
    w = window_values(series.tau, window)
    kernel = np.exp(1j * np.outer(energies, series.tau))
    vals = step * (kernel @ (w * series.values))
    return CorrelatorSpectrum(series.kind, series.pair, series.com_time,
                              energies, vals, window,
                              tau_max=float(np.abs(series.tau).max()),
                              tau_step=step)


def nyquist_energy_grid(tau: np.ndarray) -> np.ndarray:
    """The canonical conjugate grid: spacing 2 pi / (n dtau), n points.

    On this grid the discrete transform satisfies the two-sided sum rule
    (dE / 2 pi) * sum_m f(E_m) = w(0) C(0) exactly.
    """
    tau = np.asarray(tau, dtype=float)
    n = tau.size
    k = (n - 1) // 2
    de = 2.0 * np.pi / (n * float(tau[1] - tau[0]))
    return de * np.arange(-k, k + 1)


def trace_levels(spectra) -> CorrelatorSpectrum:
    """Sum spectra over levels (the trace over diagonal pairs)."""
    spectra = list(spectra)
    if not spectra:
        raise ValueError("nothing to trace")
    first = spectra[0]
    total = np.zeros_like(first.values)
    for s in spectra:
        if s.kind != first.kind or s.window != first.window:
            raise GridMismatchError("cannot trace spectra of mixed kind")
        if s.energies.shape != first.energies.shape or \
                np.abs(s.energies - first.energies).max() > 1e-9:
            raise GridMismatchError("spectra energy grids differ")
        if abs(s.com_time - first.com_time) > 1e-9 * max(1.0, abs(first.com_time)):
            raise GridMismatchError("spectra center-of-mass times differ")
        total += s.values
    return CorrelatorSpectrum(first.kind, None, first.com_time,
                              first.energies.copy(), total, first.window,
                              tau_max=first.tau_max, tau_step=first.tau_step)
