"""Exact dynamics and thermometry for small trapped Bose gases."""

from __future__ import annotations

import os as _os

__version__ = "0.1.0"

# Pin BLAS threading before anything pulls in numpy; a single worker keeps
# repeated runs byte-identical and is usually fastest at these matrix sizes.
_threads = _os.environ.get("BOSETHERM_THREADS")
if _threads and _threads.isdigit():
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                 "MKL_NUM_THREADS", "VECLIB_MAXIMUM_THREADS",
                 "NUMEXPR_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from .errors import (
    AliasingError,
    BosethermError,
    CapacityError,
    ConfigError,
    EmptyWindowError,
    FitConvergenceError,
    GridMismatchError,
    IntegrityError,
    NumericsError,
    SectorMismatchError,
    ShortSeriesError,
    StepTooLargeError,
    UnreachableTimeError,
)
from .fock import (
    DIM_CAP,
    FockBasis,
    StateVector,
    apply_annihilation,
    apply_creation,
    apply_number,
    enumerate_basis,
    overlap,
    sector_dimension,
)
from .hamiltonian import (
    ChaosReport,
    EigenSystem,
    HamiltonianParams,
    SectorOperator,
    apply_hamiltonian,
    build_hamiltonian,
    diagonalize,
    r_ratio,
)
from .propagator import (
    MAX_STEP_FACTOR,
    PropagatorConfig,
    PropagatorLadder,
    build_ladder,
    choose_base_step,
    estimate_spectral_radius,
    evolve_to,
)
from .states import (
    StateSpectrum,
    microcanonical_state,
    occupation_state,
    state_spectrum,
)
from .partition import (
    PartitionMap,
    ReducedDensityMatrix,
    build_partition,
    entanglement_entropy,
    mode_number_operator,
    reduced_density,
    subsystem_expectation,
    system_number_operator,
)
from .correlators import (
    SERIES_KINDS,
    WINDOW_KINDS,
    CorrelatorSpectrum,
    SectorLadders,
    TwoTimeSeries,
    build_sector_ladders,
    density_correlators,
    keldysh_and_spectral,
    nyquist_energy_grid,
    single_particle_correlators,
    single_particle_correlator_set,
    tau_grid,
    to_energy,
    trace_levels,
    window_values,
)
from .thermofit import (
    PeakSet,
    RelaxationFit,
    TemperatureFit,
    fit_biexponential,
    fit_bose_einstein,
    fit_fdt_beta,
    fit_lorentzians,
    occupation_from_fdt,
    plateau_stats,
    temperature_timeline,
    window_weight_scale,
)
from .runner import (
    STAGES,
    load_config,
    read_csv,
    resolve_times,
    run,
    validate_config,
    write_csv,
)

__all__ = [
    "AliasingError",
    "BosethermError",
    "CapacityError",
    "ChaosReport",
    "ConfigError",
    "CorrelatorSpectrum",
    "DIM_CAP",
    "EigenSystem",
    "EmptyWindowError",
    "FitConvergenceError",
    "FockBasis",
    "GridMismatchError",
    "HamiltonianParams",
    "IntegrityError",
    "MAX_STEP_FACTOR",
    "NumericsError",
    "PartitionMap",
    "PeakSet",
    "PropagatorConfig",
    "PropagatorLadder",
    "ReducedDensityMatrix",
    "RelaxationFit",
    "SERIES_KINDS",
    "STAGES",
    "SectorLadders",
    "SectorMismatchError",
    "SectorOperator",
    "ShortSeriesError",
    "StateSpectrum",
    "StateVector",
    "StepTooLargeError",
    "TemperatureFit",
    "TwoTimeSeries",
    "UnreachableTimeError",
    "WINDOW_KINDS",
    "apply_annihilation",
    "apply_creation",
    "apply_hamiltonian",
    "apply_number",
    "build_hamiltonian",
    "build_ladder",
    "build_partition",
    "build_sector_ladders",
    "choose_base_step",
    "density_correlators",
    "diagonalize",
    "entanglement_entropy",
    "enumerate_basis",
    "estimate_spectral_radius",
    "evolve_to",
    "fit_biexponential",
    "fit_bose_einstein",
    "fit_fdt_beta",
    "fit_lorentzians",
    "keldysh_and_spectral",
    "load_config",
    "microcanonical_state",
    "mode_number_operator",
    "nyquist_energy_grid",
    "occupation_from_fdt",
    "occupation_state",
    "overlap",
    "plateau_stats",
    "r_ratio",
    "read_csv",
    "reduced_density",
    "resolve_times",
    "run",
    "sector_dimension",
    "single_particle_correlator_set",
    "single_particle_correlators",
    "state_spectrum",
    "subsystem_expectation",
    "system_number_operator",
    "tau_grid",
    "temperature_timeline",
    "to_energy",
    "trace_levels",
    "validate_config",
    "window_values",
    "window_weight_scale",
    "write_csv",
    "__version__",
]
