"""Configuration-driven pipeline from couplings to temperature fits.

A run is one JSON file naming the model, the initial state, and the
measurements to take. Each pipeline stage writes plain artifacts (CSV and
JSON) into the output directory and records itself in manifest.json, so any
stage can be rerun later from what is already on disk. Numeric CSV fields
carry 17 significant digits; rerunning a stage with the same configuration
and seed rewrites byte-identical files. The manifest itself is the one
exception, since it holds wall-clock timings.

Stage order and artifacts:

    build-spectrum  spectrum.csv, eigenvectors.npy
    evolve          entropy.csv, occupations.csv, initial_state.json
    greens          green_*.csv, trace_*.csv, density_*.csv, greens_index.json
    thermometry     thermometry.json
    chaos           chaos.json
    fit             relaxation_fits.json

A stage that needs a missing artifact says which stage produces it. Mode
indices are zero-based everywhere, matching the library API.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import platform
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .errors import ConfigError, NumericsError
from .fock import DIM_CAP, StateVector, sector_dimension
from .hamiltonian import (EigenSystem, HamiltonianParams, build_hamiltonian,
                          diagonalize, r_ratio)
from .propagator import PropagatorConfig, build_ladder, choose_base_step
from .states import microcanonical_state, occupation_state, state_spectrum
from .partition import build_partition, entanglement_entropy, reduced_density
from .correlators import (WINDOW_KINDS, CorrelatorSpectrum, SectorLadders,
                          build_sector_ladders, density_correlators,
                          keldysh_and_spectral, single_particle_correlator_set,
                          tau_grid, to_energy, trace_levels)
from .thermofit import (fit_biexponential, fit_bose_einstein, fit_lorentzians,
                        occupation_from_fdt, plateau_stats,
                        temperature_timeline)

STAGES = ("build-spectrum", "evolve", "greens", "thermometry", "chaos", "fit")

OBSERVABLES = ("entropy", "occupations")

# adjacent-gap-ratio landmarks quoted alongside every chaos report
GOE_MEAN_RATIO = 0.5307
POISSON_MEAN_RATIO = 2.0 * math.log(2.0) - 1.0


# ---------------------------------------------------------------------------
# configuration


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


def _check_keys(block: dict, allowed, path: str) -> None:
    _require(isinstance(block, dict), f"{path} must be an object")
    for key in block:
        _require(key in allowed, f"unknown key '{key}' in {path}")


def _as_int(block: dict, key: str, path: str, default=None,
            minimum=None) -> int:
    value = block.get(key, default)
    _require(value is not None, f"{path}.{key} is required")
    _require(isinstance(value, int) and not isinstance(value, bool),
             f"{path}.{key} must be an integer")
    if minimum is not None:
        _require(value >= minimum, f"{path}.{key} must be >= {minimum}")
    return int(value)


def _as_float(block: dict, key: str, path: str, default=None) -> float:
    value = block.get(key, default)
    _require(value is not None, f"{path}.{key} is required")
    _require(isinstance(value, (int, float)) and not isinstance(value, bool)
             and math.isfinite(value), f"{path}.{key} must be a finite number")
    return float(value)


def _as_mode_list(values, num_modes: int, path: str) -> list[int]:
    _require(isinstance(values, list), f"{path} must be a list of modes")
    out = []
    for v in values:
        _require(isinstance(v, int) and not isinstance(v, bool)
                 and 0 <= v < num_modes,
                 f"{path} entries must be mode indices in [0, {num_modes})")
        out.append(int(v))
    return out


def _as_pair_list(values, num_modes: int, path: str) -> list[list[int]]:
    _require(isinstance(values, list), f"{path} must be a list of [i, j] pairs")
    out = []
    for v in values:
        _require(isinstance(v, list) and len(v) == 2,
                 f"{path} entries must be [i, j] pairs")
        out.append(_as_mode_list(v, num_modes, path))
    return out


def _validate_times(spec, path: str) -> dict:
    _require(isinstance(spec, dict), f"{path} must be an object")
    if "list" in spec:
        _check_keys(spec, {"list"}, path)
        values = spec["list"]
        _require(isinstance(values, list) and len(values) >= 1,
                 f"{path}.list must be a nonempty list")
        out = []
        for v in values:
            _require(isinstance(v, (int, float)) and not isinstance(v, bool)
                     and math.isfinite(v),
                     f"{path}.list entries must be finite numbers")
            out.append(float(v))
        return {"list": sorted(out)}
    _check_keys(spec, {"start", "stop", "count", "spacing", "include_zero"},
                path)
    start = _as_float(spec, "start", path)
    stop = _as_float(spec, "stop", path)
    count = _as_int(spec, "count", path, minimum=2)
    spacing = spec.get("spacing", "linear")
    _require(spacing in ("linear", "log"),
             f"{path}.spacing must be 'linear' or 'log'")
    include_zero = spec.get("include_zero", False)
    _require(isinstance(include_zero, bool),
             f"{path}.include_zero must be a boolean")
    _require(stop > start, f"{path}.stop must exceed {path}.start")
    if spacing == "log":
        _require(start > 0.0, f"{path}.start must be positive for log spacing")
    return {"start": start, "stop": stop, "count": count, "spacing": spacing,
            "include_zero": include_zero}


def resolve_times(spec: dict) -> np.ndarray:
    """Materialize a validated time-grid block as an ascending array."""
    if "list" in spec:
        return np.asarray(spec["list"], dtype=float)
    if spec["spacing"] == "log":
        times = np.geomspace(spec["start"], spec["stop"], spec["count"])
    else:
        times = np.linspace(spec["start"], spec["stop"], spec["count"])
    if spec.get("include_zero") and times[0] > 0.0:
        times = np.concatenate(([0.0], times))
    return times


def validate_config(raw: dict, stages=None) -> dict:
    """Normalize a raw configuration dict, applying defaults.

    Every complaint is a ConfigError naming the offending field and is
    raised before anything is allocated. stages overrides the config's own
    stage list for the cross-block requirement checks.
    """
    _check_keys(raw, {"model", "propagation", "initial_state", "measurement",
                      "fits", "chaos", "stages", "output_dir", "seed"},
                "configuration")
    cfg: dict = {}

    model = raw.get("model")
    _require(model is not None, "model block is required")
    _check_keys(model, {"num_modes", "num_particles", "level_spacing",
                        "hopping", "u_intra", "u_inter"}, "model")
    num_modes = _as_int(model, "num_modes", "model", minimum=1)
    num_particles = _as_int(model, "num_particles", "model", minimum=0)
    dim = sector_dimension(num_modes, num_particles)
    _require(dim <= DIM_CAP,
             f"model sector has dimension {dim}, above the cap {DIM_CAP}")
    cfg["model"] = {
        "num_modes": num_modes,
        "num_particles": num_particles,
        "level_spacing": _as_float(model, "level_spacing", "model", 10.0),
        "hopping": _as_float(model, "hopping", "model", 1.0),
        "u_intra": _as_float(model, "u_intra", "model", 1.0),
        "u_inter": _as_float(model, "u_inter", "model", 0.1),
    }

    prop = raw.get("propagation", {})
    _check_keys(prop, {"base_step", "target_error", "taylor_order",
                       "branching", "depth", "horizon"}, "propagation")
    base_step = prop.get("base_step", "auto")
    if base_step != "auto":
        base_step = _as_float(prop, "base_step", "propagation")
        _require(base_step > 0.0, "propagation.base_step must be positive")
    target_error = _as_float(prop, "target_error", "propagation", 1e-8)
    _require(0.0 < target_error < 1.0,
             "propagation.target_error must sit in (0, 1)")
    depth = prop.get("depth")
    if depth is not None:
        depth = _as_int(prop, "depth", "propagation", minimum=0)
    horizon = prop.get("horizon")
    if horizon is not None:
        horizon = _as_float(prop, "horizon", "propagation")
        _require(horizon > 0.0, "propagation.horizon must be positive")
    cfg["propagation"] = {
        "base_step": base_step,
        "target_error": target_error,
        "taylor_order": _as_int(prop, "taylor_order", "propagation", 4,
                                minimum=1),
        "branching": _as_int(prop, "branching", "propagation", 2, minimum=2),
        "depth": depth,
        "horizon": horizon,
    }

    state = raw.get("initial_state")
    if state is not None:
        _check_keys(state, {"kind", "occupation", "window", "random_phases"},
                    "initial_state")
        kind = state.get("kind")
        _require(kind in ("occupation", "microcanonical"),
                 "initial_state.kind must be 'occupation' or 'microcanonical'")
        if kind == "occupation":
            occ = state.get("occupation")
            _require(isinstance(occ, list) and len(occ) == num_modes,
                     "initial_state.occupation must list one count per mode")
            for v in occ:
                _require(isinstance(v, int) and not isinstance(v, bool)
                         and v >= 0,
                         "initial_state.occupation entries must be "
                         "nonnegative integers")
            _require(sum(occ) == num_particles,
                     f"initial_state.occupation must sum to {num_particles}")
            cfg["initial_state"] = {"kind": kind,
                                    "occupation": [int(v) for v in occ]}
        else:
            window = state.get("window")
            _require(isinstance(window, list) and len(window) == 2,
                     "initial_state.window must be [e_min, e_max]")
            lo = _as_float({"lo": window[0]}, "lo", "initial_state.window")
            hi = _as_float({"hi": window[1]}, "hi", "initial_state.window")
            _require(lo <= hi, "initial_state.window must be ordered")
            random_phases = state.get("random_phases", False)
            _require(isinstance(random_phases, bool),
                     "initial_state.random_phases must be a boolean")
            cfg["initial_state"] = {"kind": kind, "window": [lo, hi],
                                    "random_phases": random_phases}
    else:
        cfg["initial_state"] = None

    meas = raw.get("measurement", {})
    _check_keys(meas, {"system_modes", "observables", "times", "green_pairs",
                       "density_pairs", "com_times", "tau_max", "tau_step",
                       "energy_grid", "window"}, "measurement")
    system_modes = _as_mode_list(meas.get("system_modes", []), num_modes,
                                 "measurement.system_modes")
    observables = meas.get("observables", list(OBSERVABLES))
    _require(isinstance(observables, list) and
             all(o in OBSERVABLES for o in observables),
             f"measurement.observables entries must come from {OBSERVABLES}")
    times = meas.get("times")
    if times is not None:
        times = _validate_times(times, "measurement.times")
    green_pairs = meas.get("green_pairs")
    if green_pairs is None:
        green_pairs = [[m, m] for m in range(num_modes)]
    else:
        green_pairs = _as_pair_list(green_pairs, num_modes,
                                    "measurement.green_pairs")
    density_pairs = _as_pair_list(meas.get("density_pairs", []), num_modes,
                                  "measurement.density_pairs")
    com_times = meas.get("com_times", [])
    _require(isinstance(com_times, list), "measurement.com_times must be a list")
    com_times = [_as_float({"t": t}, "t", "measurement.com_times")
                 for t in com_times]
    tau_max = _as_float(meas, "tau_max", "measurement", 10.0)
    tau_step = _as_float(meas, "tau_step", "measurement", 0.05)
    _require(tau_max > 0.0 and tau_step > 0.0,
             "measurement.tau_max and tau_step must be positive")
    ratio = tau_max / tau_step
    _require(abs(ratio - round(ratio)) < 1e-9,
             "measurement.tau_max must be a multiple of tau_step")
    grid = meas.get("energy_grid", {})
    _check_keys(grid, {"start", "stop", "count"}, "measurement.energy_grid")
    e_start = _as_float(grid, "start", "measurement.energy_grid", -5.0)
    e_stop = _as_float(grid, "stop", "measurement.energy_grid", 5.0)
    e_count = _as_int(grid, "count", "measurement.energy_grid", 201, minimum=2)
    _require(e_stop > e_start,
             "measurement.energy_grid.stop must exceed start")
    e_top = max(abs(e_start), abs(e_stop))
    _require(e_top * tau_step <= math.pi * (1.0 + 1e-12),
             f"energy grid reaches |E| = {e_top:g} but the tau step only "
             f"resolves |E| <= {math.pi / tau_step:g}; shrink tau_step or "
             "the grid")
    window = meas.get("window", "hann")
    _require(window in WINDOW_KINDS,
             f"measurement.window must come from {WINDOW_KINDS}")
    cfg["measurement"] = {
        "system_modes": system_modes,
        "observables": list(observables),
        "times": times,
        "green_pairs": green_pairs,
        "density_pairs": density_pairs,
        "com_times": com_times,
        "tau_max": tau_max,
        "tau_step": tau_step,
        "energy_grid": {"start": e_start, "stop": e_stop, "count": e_count},
        "window": window,
    }

    fits = raw.get("fits", {})
    _check_keys(fits, {"peak_count", "seed_centers", "fdt_window",
                       "tail_fraction"}, "fits")
    peak_count = _as_int(fits, "peak_count", "fits", num_modes, minimum=1)
    seed_centers = fits.get("seed_centers")
    if seed_centers is not None:
        _require(isinstance(seed_centers, list)
                 and len(seed_centers) == peak_count,
                 "fits.seed_centers must list one center per peak")
        seed_centers = [_as_float({"c": c}, "c", "fits.seed_centers")
                        for c in seed_centers]
    fdt_window = fits.get("fdt_window")
    if fdt_window is not None:
        _require(isinstance(fdt_window, list) and len(fdt_window) == 2,
                 "fits.fdt_window must be [e_lo, e_hi]")
        w_lo = _as_float({"lo": fdt_window[0]}, "lo", "fits.fdt_window")
        w_hi = _as_float({"hi": fdt_window[1]}, "hi", "fits.fdt_window")
        _require(w_lo < w_hi, "fits.fdt_window must be ordered")
        fdt_window = [w_lo, w_hi]
    tail_fraction = _as_float(fits, "tail_fraction", "fits", 0.2)
    _require(0.0 < tail_fraction <= 1.0,
             "fits.tail_fraction must sit in (0, 1]")
    cfg["fits"] = {"peak_count": peak_count, "seed_centers": seed_centers,
                   "fdt_window": fdt_window, "tail_fraction": tail_fraction}

    chaos = raw.get("chaos", {})
    _check_keys(chaos, {"window"}, "chaos")
    c_window = chaos.get("window")
    if c_window is not None:
        _require(isinstance(c_window, list) and len(c_window) == 2,
                 "chaos.window must be [e_lo, e_hi]")
        c_lo = _as_float({"lo": c_window[0]}, "lo", "chaos.window")
        c_hi = _as_float({"hi": c_window[1]}, "hi", "chaos.window")
        _require(c_lo < c_hi, "chaos.window must be ordered")
        c_window = [c_lo, c_hi]
    cfg["chaos"] = {"window": c_window}

    stage_list = raw.get("stages", list(STAGES))
    _require(isinstance(stage_list, list) and
             all(s in STAGES for s in stage_list),
             f"stages entries must come from {STAGES}")
    _require(len(set(stage_list)) == len(stage_list),
             "stages must not repeat")
    cfg["stages"] = [s for s in STAGES if s in stage_list]

    output_dir = raw.get("output_dir")
    _require(isinstance(output_dir, str) and output_dir,
             "output_dir must be a nonempty string")
    cfg["output_dir"] = output_dir
    cfg["seed"] = _as_int(raw, "seed", "configuration", 1)

    active = cfg["stages"] if stages is None else list(stages)
    if "evolve" in active:
        _require(cfg["initial_state"] is not None,
                 "the evolve stage needs an initial_state block")
        _require(cfg["measurement"]["times"] is not None,
                 "the evolve stage needs measurement.times")
        _require("entropy" not in cfg["measurement"]["observables"]
                 or cfg["measurement"]["system_modes"],
                 "entropy needs a nonempty measurement.system_modes")
    if "greens" in active:
        _require(cfg["initial_state"] is not None,
                 "the greens stage needs an initial_state block")
        _require(cfg["measurement"]["com_times"],
                 "the greens stage needs at least one measurement.com_times "
                 "entry")
        _require(cfg["measurement"]["green_pairs"]
                 or cfg["measurement"]["density_pairs"],
                 "the greens stage needs green_pairs or density_pairs")
    if "thermometry" in active and cfg["measurement"]["density_pairs"]:
        _require(cfg["fits"]["fdt_window"] is not None,
                 "detailed-balance thermometry needs fits.fdt_window")
    return cfg


def load_config(path) -> dict:
    """Read and validate one JSON configuration file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"configuration file {path} does not exist")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    _require(isinstance(raw, dict), f"{path} must hold a JSON object")
    return validate_config(raw)


# ---------------------------------------------------------------------------
# artifact helpers


def write_csv(path, names, columns) -> None:
    """Comma-separated columns at 17 significant digits."""
    cols = [np.asarray(c, dtype=float) for c in columns]
    lines = [",".join(names)]
    for row in zip(*cols):
        lines.append(",".join(format(v, ".17g") for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_csv(path) -> dict:
    """Columns keyed by header name."""
    path = Path(path)
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != len(header):
        raise ConfigError(f"{path} rows do not match its header")
    return {name: data[:, k].copy() for k, name in enumerate(header)}


def _jsonify(value):
    """Make a value JSON-serializable; non-finite floats become null."""
    if isinstance(value, dict):
        return {str(k): _jsonify(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonify(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonify(v) for v in value.tolist()]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, (np.bool_,)):
        return bool(value)
    return value


def _write_json(path, payload) -> None:
    Path(path).write_text(
        json.dumps(_jsonify(payload), indent=2, sort_keys=True) + "\n")


def _read_json(path, producer: str) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(
            f"missing artifact {path.name}; run the {producer} stage first")
    return json.loads(path.read_text())


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _params(cfg: dict) -> HamiltonianParams:
    return HamiltonianParams(**cfg["model"])


def _load_eigensystem(outdir: Path, basis) -> EigenSystem:
    spath = outdir / "spectrum.csv"
    vpath = outdir / "eigenvectors.npy"
    for path in (spath, vpath):
        if not path.exists():
            raise ConfigError(f"missing artifact {path.name}; run the "
                              "build-spectrum stage first")
    energies = read_csv(spath)["E_over_J"]
    vectors = np.load(vpath)
    if vectors.shape != (basis.dim, energies.size):
        raise ConfigError(
            "spectrum artifacts do not match the configured model; rerun "
            "the build-spectrum stage")
    return EigenSystem(basis, energies, vectors)


def _initial_state(cfg: dict, outdir: Path, basis) -> StateVector:
    block = cfg["initial_state"]
    if block is None:
        raise ConfigError("this stage needs an initial_state block")
    if block["kind"] == "occupation":
        return occupation_state(basis, block["occupation"])
    eig = _load_eigensystem(outdir, basis)
    seed = cfg["seed"] if block["random_phases"] else None
    return microcanonical_state(eig, block["window"][0], block["window"][1],
                                phase_seed=seed)


def _rung_cap(dim: int) -> int:
    # validated models passed the sector-dimension cap, so size the rung
    # guard to the model instead of refusing large sectors outright
    return max(2 ** 31, 16 * dim * dim)


def _propagator_config(cfg: dict, op, horizon: float) -> PropagatorConfig:
    prop = cfg["propagation"]
    cap = _rung_cap(op.basis.dim)
    if prop["base_step"] == "auto":
        return choose_base_step(op, horizon,
                                target_error=prop["target_error"],
                                taylor_order=prop["taylor_order"],
                                branching=prop["branching"],
                                max_rung_bytes=cap)
    dt = prop["base_step"]
    branching = prop["branching"]
    depth = prop["depth"]
    if depth is None:
        depth = 0
        while (branching ** (depth + 1) - 1) * dt < horizon:
            depth += 1
    return PropagatorConfig(base_step=dt, depth=depth,
                            taylor_order=prop["taylor_order"],
                            branching=branching, max_rung_bytes=cap)


# ---------------------------------------------------------------------------
# stages


def _stage_build_spectrum(cfg: dict, outdir: Path):
    params = _params(cfg)
    op = build_hamiltonian(params)
    eig = diagonalize(op)
    write_csv(outdir / "spectrum.csv", ["level_index", "E_over_J"],
              [np.arange(eig.energies.size), eig.energies])
    np.save(outdir / "eigenvectors.npy", eig.vectors)
    diag = {"dimension": op.basis.dim,
            "ground_energy": eig.energies[0],
            "top_energy": eig.energies[-1]}
    return ["spectrum.csv", "eigenvectors.npy"], diag


def _stage_evolve(cfg: dict, outdir: Path):
    params = _params(cfg)
    op = build_hamiltonian(params)
    basis = op.basis
    meas = cfg["measurement"]
    times = resolve_times(meas["times"])
    horizon = max(float(np.abs(times).max()), 1e-9)
    if cfg["propagation"]["horizon"]:
        horizon = max(horizon, cfg["propagation"]["horizon"])
    pcfg = _propagator_config(cfg, op, horizon)
    ladder = build_ladder(op, pcfg)
    psi0 = _initial_state(cfg, outdir, basis)

    outputs = []
    if (outdir / "spectrum.csv").exists() and \
            (outdir / "eigenvectors.npy").exists():
        eig = _load_eigensystem(outdir, basis)
        summary = state_spectrum(eig, psi0)
        _write_json(outdir / "initial_state.json", {
            "kind": cfg["initial_state"]["kind"],
            "mean_energy": summary.mean_energy,
            "spectral_width": summary.spectral_width,
            "level_count": summary.level_count,
        })
        outputs.append("initial_state.json")

    pm = None
    if "entropy" in meas["observables"]:
        pm = build_partition(basis, meas["system_modes"])

    amps = psi0.amplitudes.copy()
    steps_done = 0
    snapped = np.empty(times.size)
    entropies = np.empty(times.size)
    occupations = np.empty((times.size, basis.num_modes))
    norms = np.empty(times.size)
    energies_t = np.empty(times.size)
    for k, t in enumerate(times):
        m, actual = ladder.snap(t)
        amps = ladder.advance(amps, m - steps_done)
        steps_done = m
        snapped[k] = actual
        weights = np.abs(amps) ** 2
        occupations[k] = weights @ basis.states
        norms[k] = np.linalg.norm(amps)
        energies_t[k] = np.vdot(amps, op.matrix @ amps).real
        if pm is not None:
            rdm = reduced_density(StateVector(basis, amps), pm)
            entropies[k] = entanglement_entropy(rdm)

    if pm is not None:
        bound = np.full(times.size, pm.max_entropy)
        write_csv(outdir / "entropy.csv", ["Jt", "entropy", "entropy_bound"],
                  [snapped, entropies, bound])
        outputs.append("entropy.csv")
    if "occupations" in meas["observables"]:
        names = ["Jt"] + [f"n_{m}" for m in range(basis.num_modes)]
        columns = [snapped] + [occupations[:, m]
                               for m in range(basis.num_modes)]
        if meas["system_modes"]:
            names.append("n_system")
            columns.append(occupations[:, meas["system_modes"]].sum(axis=1))
        write_csv(outdir / "occupations.csv", names, columns)
        outputs.append("occupations.csv")

    # echo the grid that actually ran; stepping resolution stays in the
    # stage diagnostics so later stages still see the configured intent
    cfg["measurement"]["times"] = {"list": [float(v) for v in snapped]}
    e_scale = max(1.0, abs(energies_t[0]))
    diag = {
        "dimension": basis.dim,
        "base_step": pcfg.base_step,
        "depth": pcfg.depth,
        "snap_defect": float(np.abs(times - snapped).max()),
        "norm_drift": float(np.abs(norms - 1.0).max()),
        "energy_drift": float(np.abs(energies_t - energies_t[0]).max()
                              / e_scale),
    }
    if pm is not None:
        diag["entropy_bound"] = pm.max_entropy
    return outputs, diag


def _greens_ladders(cfg: dict, params: HamiltonianParams, horizon: float,
                    neighbors: bool) -> SectorLadders:
    prop = cfg["propagation"]
    tau_step = cfg["measurement"]["tau_step"]
    if prop["base_step"] == "auto":
        top = params.num_particles + 1 if neighbors else params.num_particles
        cap = _rung_cap(sector_dimension(params.num_modes, top))
        return build_sector_ladders(params, horizon, tau_step=tau_step,
                                    target_error=prop["target_error"],
                                    neighbors=neighbors,
                                    taylor_order=prop["taylor_order"],
                                    branching=prop["branching"],
                                    max_rung_bytes=cap)
    counts = [params.num_particles]
    if neighbors:
        if params.num_particles < 1:
            raise ConfigError("single-particle functions need at least one "
                              "particle")
        counts += [params.num_particles - 1, params.num_particles + 1]
    cap = _rung_cap(max(sector_dimension(params.num_modes, n) for n in counts))
    ladders = {}
    shared = None
    for n in counts:
        op = build_hamiltonian(dataclasses.replace(params, num_particles=n))
        if shared is None:
            shared = dataclasses.replace(_propagator_config(cfg, op, horizon),
                                         max_rung_bytes=cap)
        ladders[n] = build_ladder(op, shared)
    return SectorLadders(center=ladders[params.num_particles],
                         lower=ladders.get(params.num_particles - 1),
                         upper=ladders.get(params.num_particles + 1))


def _stage_greens(cfg: dict, outdir: Path):
    params = _params(cfg)
    meas = cfg["measurement"]
    tau = tau_grid(meas["tau_max"], meas["tau_step"])
    grid = meas["energy_grid"]
    energies = np.linspace(grid["start"], grid["stop"], grid["count"])
    window = meas["window"]
    green_pairs = [tuple(p) for p in meas["green_pairs"]]
    density_pairs = [tuple(p) for p in meas["density_pairs"]]
    com_times = meas["com_times"]

    horizon = max(abs(t) for t in com_times) + meas["tau_max"] / 2.0 \
        + meas["tau_step"]
    if cfg["propagation"]["horizon"]:
        horizon = max(horizon, cfg["propagation"]["horizon"])
    ladders = _greens_ladders(cfg, params, horizon, bool(green_pairs))
    psi0 = _initial_state(cfg, outdir, ladders.center.basis)

    outputs = []
    entries = []
    equal_time_defect = 0.0
    conj_defect = 0.0

    def dump(spectrum: CorrelatorSpectrum, name: str) -> str:
        write_csv(outdir / name, ["E_over_J", "re", "im"],
                  [spectrum.energies, spectrum.values.real,
                   spectrum.values.imag])
        outputs.append(name)
        return name

    for k, t in enumerate(com_times):
        entry: dict = {"time_index": k, "green_files": {},
                       "density_files": {}, "trace_files": {}}
        com_actual = None
        if green_pairs:
            series = single_particle_correlator_set(psi0, ladders,
                                                    green_pairs, t, tau)
            diagonal_spectral = []
            diagonal_keldysh = []
            for (i, j), (lesser, greater) in series.items():
                com_actual = lesser.com_time
                gk, sp = keldysh_and_spectral(lesser, greater)
                files = {}
                for kind, ser in (("lesser", lesser), ("greater", greater),
                                  ("keldysh", gk), ("spectral", sp)):
                    spec = to_energy(ser, energies, window=window)
                    files[kind] = dump(spec, f"green_{kind}_{i}_{j}_t{k}.csv")
                    if i == j and kind == "spectral":
                        diagonal_spectral.append(spec)
                    if i == j and kind == "keldysh":
                        diagonal_keldysh.append(spec)
                entry["green_files"][f"{i},{j}"] = files
                if i == j:
                    defect = abs(sp.at_equal_time() - 1.0)
                    equal_time_defect = max(equal_time_defect, defect)
            if diagonal_spectral:
                entry["trace_files"]["spectral"] = dump(
                    trace_levels(diagonal_spectral), f"trace_spectral_t{k}.csv")
            if diagonal_keldysh:
                entry["trace_files"]["keldysh"] = dump(
                    trace_levels(diagonal_keldysh), f"trace_keldysh_t{k}.csv")
        for (i, j) in density_pairs:
            fwd, rev = density_correlators(psi0, ladders, (i, j), t, tau)
            com_actual = fwd.com_time
            defect = float(np.abs(fwd.values - rev.values.conj()).max())
            conj_defect = max(conj_defect, defect)
            entry["density_files"][f"{i},{j}"] = {
                "forward": dump(to_energy(fwd, energies, window=window),
                                f"density_forward_{i}_{j}_t{k}.csv"),
                "reversed": dump(to_energy(rev, energies, window=window),
                                 f"density_reversed_{i}_{j}_t{k}.csv"),
            }
        entry["com_time"] = com_actual
        entries.append(entry)

    index = {
        "window": window,
        "tau_max": meas["tau_max"],
        "tau_step": meas["tau_step"],
        "energy_grid": grid,
        "green_pairs": [list(p) for p in green_pairs],
        "density_pairs": [list(p) for p in density_pairs],
        "entries": entries,
    }
    _write_json(outdir / "greens_index.json", index)
    outputs.append("greens_index.json")

    cfg["measurement"]["com_times"] = [e["com_time"] for e in entries]
    diag = {"base_step": ladders.center.base_step,
            "depth": ladders.center.config.depth,
            "com_times": [e["com_time"] for e in entries]}
    if green_pairs:
        diag["equal_time_defect"] = equal_time_defect
    if density_pairs:
        diag["density_conjugation_defect"] = conj_defect
    return outputs, diag


def _load_spectrum_csv(outdir: Path, name: str, kind: str, pair,
                       com_time: float, index: dict) -> CorrelatorSpectrum:
    path = outdir / name
    if not path.exists():
        raise ConfigError(
            f"missing artifact {name}; run the greens stage first")
    cols = read_csv(path)
    values = cols["re"] + 1j * cols["im"]
    return CorrelatorSpectrum(kind, pair, com_time, cols["E_over_J"], values,
                              index["window"], tau_max=index["tau_max"],
                              tau_step=index["tau_step"])


def _fit_to_dict(fit) -> dict:
    return {"beta": fit.beta, "temperature": fit.temperature,
            "beta_error": fit.beta_error,
            "temperature_error": fit.temperature_error,
            "residual": fit.residual, "points": fit.points,
            "thermal": fit.thermal, "window": fit.window,
            "time": fit.time, "detail": fit.detail}


def _stage_thermometry(cfg: dict, outdir: Path):
    index = _read_json(outdir / "greens_index.json", "greens")
    fits = cfg["fits"]
    peak_count = fits["peak_count"]
    level_spacing = cfg["model"]["level_spacing"]

    diagonal_modes = sorted(i for i, j in index["green_pairs"] if i == j)
    seeds = fits["seed_centers"]
    if seeds is None and len(diagonal_modes) == peak_count:
        # bare dressed energies; the fit pulls in the interaction shifts
        seeds = [m * level_spacing for m in diagonal_modes]

    report: dict = {"bose": [], "fdt": {}}
    bose_temperatures = []
    for entry in index["entries"]:
        t = entry["com_time"]
        record: dict = {"time_index": entry["time_index"], "com_time": t}
        trace_files = entry.get("trace_files", {})
        if "spectral" in trace_files and "keldysh" in trace_files:
            spec_a = _load_spectrum_csv(outdir, trace_files["spectral"],
                                        "spectral", None, t, index)
            spec_k = _load_spectrum_csv(outdir, trace_files["keldysh"],
                                        "keldysh", None, t, index)
            # fit i G_K, whose thermal trace is a sum of positive peaks
            spec_k.values = 1j * spec_k.values
            try:
                peaks_a = fit_lorentzians(spec_a, peak_count,
                                          seed_centers=seeds)
                peaks_k = fit_lorentzians(spec_k, peak_count,
                                          seed_centers=peaks_a.centers)
                levels = []
                points_e, points_n = [], []
                for p in range(peak_count):
                    occ = occupation_from_fdt(-1j * peaks_k.weights[p],
                                              peaks_a.weights[p])
                    levels.append({"center": peaks_a.centers[p],
                                   "width": peaks_a.widths[p],
                                   "spectral_weight": peaks_a.weights[p],
                                   "keldysh_weight": peaks_k.weights[p],
                                   "occupation": occ})
                    if peaks_a.centers[p] > 0.0:
                        points_e.append(peaks_a.centers[p])
                        points_n.append(occ)
                record["levels"] = levels
                if len(points_e) >= 2:
                    bose = fit_bose_einstein(points_e, points_n)
                    record["bose"] = _fit_to_dict(bose)
                    record["bose"]["time"] = t
                    bose_temperatures.append(bose.temperature)
                else:
                    record["error"] = ("fewer than 2 positive-energy levels; "
                                       "no temperature fit")
            except NumericsError as exc:
                record["error"] = f"{type(exc).__name__}: {exc}"
        report["bose"].append(record)

    fdt_temperatures = {}
    for pair in index["density_pairs"]:
        key = f"{pair[0]},{pair[1]}"
        spectra_pairs = []
        for entry in index["entries"]:
            files = entry["density_files"].get(key)
            if files is None:
                continue
            t = entry["com_time"]
            fwd = _load_spectrum_csv(outdir, files["forward"],
                                     "density_forward", tuple(pair), t, index)
            rev = _load_spectrum_csv(outdir, files["reversed"],
                                     "density_reversed", tuple(pair), t, index)
            spectra_pairs.append((fwd, rev))
        if not spectra_pairs:
            continue
        timeline = temperature_timeline(spectra_pairs, fits["fdt_window"])
        report["fdt"][key] = [_fit_to_dict(f) for f in timeline]
        fdt_temperatures[key] = [f.temperature for f in timeline]

    _write_json(outdir / "thermometry.json", report)
    diag = {"bose_temperatures": bose_temperatures,
            "fdt_temperatures": fdt_temperatures}
    return ["thermometry.json"], diag


def _stage_chaos(cfg: dict, outdir: Path):
    path = outdir / "spectrum.csv"
    if not path.exists():
        raise ConfigError("missing artifact spectrum.csv; run the "
                          "build-spectrum stage first")
    energies = read_csv(path)["E_over_J"]
    window = cfg["chaos"]["window"]
    report = r_ratio(energies, None if window is None else tuple(window))
    payload = {"mean_ratio": report.mean_ratio,
               "gap_count": report.gap_count,
               "level_count": report.level_count,
               "window": window,
               "goe_mean_ratio": GOE_MEAN_RATIO,
               "poisson_mean_ratio": POISSON_MEAN_RATIO}
    _write_json(outdir / "chaos.json", payload)
    return ["chaos.json"], {"mean_ratio": report.mean_ratio}


def _relaxation_entry(times: np.ndarray, values: np.ndarray,
                      tail_fraction: float) -> dict:
    entry: dict = {}
    try:
        plateau, sigma = plateau_stats(values, tail_fraction)
        entry.update(plateau=plateau, plateau_std=sigma)
        fit = fit_biexponential(times, values, plateau, noise_floor=sigma)
        entry.update(amplitude_fast=fit.amplitude_fast,
                     amplitude_slow=fit.amplitude_slow,
                     tau_fast=fit.tau_fast, tau_slow=fit.tau_slow,
                     residual=fit.residual, detail=fit.detail)
    except NumericsError as exc:
        entry["error"] = f"{type(exc).__name__}: {exc}"
    return entry


def _stage_fit(cfg: dict, outdir: Path):
    tail_fraction = cfg["fits"]["tail_fraction"]
    report = {}
    epath = outdir / "entropy.csv"
    opath = outdir / "occupations.csv"
    if not epath.exists() and not opath.exists():
        raise ConfigError("missing artifacts entropy.csv and "
                          "occupations.csv; run the evolve stage first")
    if epath.exists():
        cols = read_csv(epath)
        report["entropy"] = _relaxation_entry(cols["Jt"], cols["entropy"],
                                              tail_fraction)
    if opath.exists():
        cols = read_csv(opath)
        if "n_system" in cols:
            report["system_occupation"] = _relaxation_entry(
                cols["Jt"], cols["n_system"], tail_fraction)
    _write_json(outdir / "relaxation_fits.json", report)
    diag = {name: entry.get("tau_slow") for name, entry in report.items()}
    return ["relaxation_fits.json"], diag


_STAGE_FUNCS = {
    "build-spectrum": _stage_build_spectrum,
    "evolve": _stage_evolve,
    "greens": _stage_greens,
    "thermometry": _stage_thermometry,
    "chaos": _stage_chaos,
    "fit": _stage_fit,
}


# ---------------------------------------------------------------------------
# orchestration


def _inventory(outdir: Path) -> dict:
    files = {}
    for path in sorted(outdir.rglob("*")):
        if path.is_file() and path.name != "manifest.json":
            rel = str(path.relative_to(outdir))
            files[rel] = {"sha256": _sha256(path),
                          "bytes": path.stat().st_size}
    return files


def run(config, stages=None) -> dict:
    """Execute pipeline stages and write manifest.json.

    config is a path to a JSON file or an already-validated dict. stages
    restricts the run to a subset (default: the config's stage list). A
    stage failure is recorded in the manifest together with whatever
    artifacts were already written, then re-raised.
    """
    if isinstance(config, (str, Path)):
        cfg = load_config(config)
    else:
        cfg = validate_config(config, stages=stages)
    if stages is None:
        stages = cfg["stages"]
    else:
        unknown = [s for s in stages if s not in STAGES]
        if unknown:
            raise ConfigError(f"unknown stages {unknown}")
        stages = [s for s in STAGES if s in stages]

    outdir = Path(cfg["output_dir"])
    outdir.mkdir(parents=True, exist_ok=True)

    manifest_path = outdir / "manifest.json"
    manifest: dict = {"stages": {}}
    if manifest_path.exists():
        try:
            previous = json.loads(manifest_path.read_text())
            manifest["stages"] = previous.get("stages", {})
        except (json.JSONDecodeError, OSError):
            pass

    failure = None
    for name in stages:
        started = time.perf_counter()
        try:
            outputs, diag = _STAGE_FUNCS[name](cfg, outdir)
        except Exception as exc:
            manifest["stages"][name] = {
                "status": "failed",
                "error": f"{type(exc).__name__}: {exc}",
                "seconds": round(time.perf_counter() - started, 3),
            }
            failure = exc
            break
        manifest["stages"][name] = {
            "status": "ok",
            "seconds": round(time.perf_counter() - started, 3),
            "outputs": outputs,
            "diagnostics": _jsonify(diag),
        }

    manifest["config"] = _jsonify(cfg)
    manifest["versions"] = {
        "bosetherm": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }
    manifest["files"] = _inventory(outdir)
    _write_json(manifest_path, manifest)
    if failure is not None:
        raise failure
    return manifest
