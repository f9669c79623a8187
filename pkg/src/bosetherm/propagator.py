"""Long-horizon propagation by recursive powering of a Taylor step.

The base propagator U0 = sum_{k<=k_max} (-i dt)^k H^k / k! is accurate for
dt * max|H_ij| <= 0.1 (enforced). A ladder of rungs U_r = (U_{r-1})^n then
spans n^r * dt each, so any lattice time m * dt is reached with O(log m)
dense matrix-vector products via the base-n digits of m. Negative times use
the adjoint rungs, which is exact for unitaries up to the Taylor truncation.

Truncation errors add up over the effective number of base steps, so the
base step must shrink with the horizon: choose_base_step picks dt from
horizon * rho^(k+1) * dt^k / (k+1)! <= target (rho estimated by power
iteration) intersected with the max-element rule above.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .errors import (
    CapacityError,
    SectorMismatchError,
    StepTooLargeError,
    UnreachableTimeError,
)
from .fock import StateVector
from .hamiltonian import SectorOperator

MAX_STEP_FACTOR = 0.1


@dataclass(frozen=True)
class PropagatorConfig:
    """Shape of the propagator ladder."""

    base_step: float
    depth: int
    taylor_order: int = 4
    branching: int = 2
    renormalize: bool = False
    strict_norm: bool = False  # check the step rule against rho, not max|H|
    max_rung_bytes: int = 2**31

    def __post_init__(self):
        if not (np.isfinite(self.base_step) and self.base_step > 0):
            raise ValueError("base_step must be positive and finite")
        if self.taylor_order < 1:
            raise ValueError("taylor_order must be at least 1")
        if self.branching < 2:
            raise ValueError("branching must be at least 2")
        if self.depth < 0:
            raise ValueError("depth must be nonnegative")

    @property
    def max_steps(self) -> int:
        """Largest lattice index reachable: n^(r+1) - 1 base steps."""
        return self.branching ** (self.depth + 1) - 1

    @property
    def span(self) -> float:
        return self.max_steps * self.base_step


def estimate_spectral_radius(matrix: np.ndarray, iterations: int = 60) -> float:
    """Power-iteration bound on max|eigenvalue|, deterministic start."""
    dim = matrix.shape[0]
    v = np.ones(dim) + 1e-3 * np.arange(dim) / max(dim - 1, 1)
    v /= np.linalg.norm(v)
    rho = 0.0
    for _ in range(iterations):
        w = matrix @ v
        rho = float(np.linalg.norm(w))
        if rho == 0.0:
            return 0.0
        v = w / rho
    return 1.05 * rho  # safety margin over the unconverged estimate


def _check_step_rule(op: SectorOperator, config: PropagatorConfig) -> None:
    scale = (estimate_spectral_radius(op.matrix) if config.strict_norm
             else op.max_element())
    if scale == 0.0:
        return
    limit = MAX_STEP_FACTOR / scale
    if config.base_step > limit * (1.0 + 1e-12):
        raise StepTooLargeError(
            f"base step {config.base_step:.3e} violates "
            f"dt * {'rho' if config.strict_norm else 'max|H|'} <= "
            f"{MAX_STEP_FACTOR}; largest admissible step is {limit:.3e}")


def base_step(op: SectorOperator, config: PropagatorConfig) -> np.ndarray:
    """Truncated Taylor propagator over one base step."""
    h = op.matrix
    defect = float(np.abs(h - h.conj().T).max())
    scale = float(np.abs(h).max()) or 1.0
    if defect > 1e-12 * scale:
        raise StepTooLargeError(
            f"propagator needs a Hermitian generator; defect {defect:.3e}")
    _check_step_rule(op, config)
    scaled = (-1j * config.base_step) * h
    u = np.eye(h.shape[0], dtype=np.complex128)
    term = np.eye(h.shape[0], dtype=np.complex128)
    for k in range(1, config.taylor_order + 1):
        term = (scaled @ term) / k
        u += term
    return u


def _unitary_projection(u: np.ndarray) -> np.ndarray:
    w, _, vh = la.svd(u)
    return w @ vh


class PropagatorLadder:
    """Rungs U0^(n^k) for k = 0..depth over one sector."""

    def __init__(self, basis, config: PropagatorConfig, rungs: list[np.ndarray]):
        self.basis = basis
        self.config = config
        self.rungs = rungs

    @property
    def base_step(self) -> float:
        return self.config.base_step

    @property
    def max_steps(self) -> int:
        return self.config.max_steps

    @property
    def span(self) -> float:
        return self.config.span

    def snap(self, t: float, strict: bool = False) -> tuple[int, float]:
        """Nearest lattice index and time for a requested time.

        strict=True raises when t is off-lattice instead of snapping.
        """
        dt = self.base_step
        m = int(round(t / dt))
        actual = m * dt
        if strict and abs(t - actual) > 1e-9 * max(abs(t), dt):
            below, above = math.floor(t / dt) * dt, math.ceil(t / dt) * dt
            raise UnreachableTimeError(
                f"time {t} is off the lattice (step {dt:.6e}); nearest "
                f"reachable times are {below:.12e} and {above:.12e}")
        if abs(m) > self.max_steps:
            raise UnreachableTimeError(
                f"time {actual:.6e} needs {abs(m)} base steps; ladder spans "
                f"{self.max_steps} (time {self.span:.6e})")
        return m, actual

    def advance(self, amplitudes: np.ndarray, steps: int) -> np.ndarray:
        """Apply U0^steps to a vector or the columns of a matrix.

        Negative steps apply the adjoint rungs (backward evolution).
        """
        if abs(steps) > self.max_steps:
            raise UnreachableTimeError(
                f"{abs(steps)} base steps exceed the ladder span "
                f"{self.max_steps}")
        out = np.array(amplitudes, dtype=np.complex128, copy=True)
        forward = steps >= 0
        m = abs(int(steps))
        n = self.config.branching
        for k in range(self.config.depth, -1, -1):
            count, m = divmod(m, n ** k)
            for _ in range(count):
                if forward:
                    out = self.rungs[k] @ out
                elif out.ndim == 1:
                    out = (out.conj() @ self.rungs[k]).conj()
                else:
                    out = (out.conj().T @ self.rungs[k]).conj().T
        return out

    def unitarity_defect(self, rung: int) -> float:
        """max|U^dag U - 1| for one rung; costs a full matmul."""
        u = self.rungs[rung]
        return float(np.abs(u.conj().T @ u - np.eye(u.shape[0])).max())

    def unitarity_probe(self) -> list[float]:
        """Cheap per-rung norm drift on a fixed probe vector."""
        dim = self.rungs[0].shape[0]
        v = np.ones(dim, dtype=np.complex128) / math.sqrt(dim)
        return [abs(float(np.linalg.norm(u @ v)) - 1.0) for u in self.rungs]


def build_ladder(op: SectorOperator, config: PropagatorConfig) -> PropagatorLadder:
    """Build all rungs; memory use is (depth + 1) dense matrices."""
    rung_bytes = 16 * op.basis.dim ** 2
    if rung_bytes > config.max_rung_bytes:
        raise CapacityError(
            f"one rung needs {rung_bytes} bytes > cap {config.max_rung_bytes}")
    rungs = [base_step(op, config)]
    for _ in range(config.depth):
        nxt = np.linalg.matrix_power(rungs[-1], config.branching)
        if config.renormalize:
            nxt = _unitary_projection(nxt)
        rungs.append(nxt)
    return PropagatorLadder(op.basis, config, rungs)


def evolve_to(ladder: PropagatorLadder, state: StateVector, t: float,
              snap: bool = True) -> StateVector:
    """Propagate a state to (the lattice time nearest) t."""
    if state.basis is not ladder.basis:
        raise SectorMismatchError(
            f"state sector {state.basis} does not match ladder sector "
            f"{ladder.basis}")
    m, _ = ladder.snap(t, strict=not snap)
    return StateVector(ladder.basis, ladder.advance(state.amplitudes, m))


def choose_base_step(op: SectorOperator, horizon: float,
                     target_error: float = 1e-8,
                     taylor_order: int = 4,
                     branching: int = 2,
                     align_to: float | None = None,
                     **config_kwargs) -> PropagatorConfig:
    """Pick a base step and depth for a given horizon and error budget.

    The error model is horizon * rho^(k+1) * dt^k / (k+1)! for Taylor order
    k, intersected with the hard rule dt * max|H| <= 0.1. align_to forces dt
    into an integer divisor of that interval so external grids stay on the
    lattice.
    """
    if not (np.isfinite(horizon) and horizon > 0):
        raise ValueError("horizon must be positive and finite")
    if not (0 < target_error < 1):
        raise ValueError("target_error must sit in (0, 1)")
    a = op.max_element()
    rho = estimate_spectral_radius(op.matrix)
    if a == 0.0 or rho == 0.0:
        dt = horizon if align_to is None else align_to
    else:
        dt_rule = MAX_STEP_FACTOR / a
        k = taylor_order
        dt_acc = (target_error * math.factorial(k + 1)
                  / (horizon * rho ** (k + 1))) ** (1.0 / k)
        dt = min(dt_rule, dt_acc)
    if align_to is not None:
        if not (np.isfinite(align_to) and align_to > 0):
            raise ValueError("align_to must be positive and finite")
        dt = align_to / math.ceil(align_to / dt)
    depth = 0
    while (branching ** (depth + 1) - 1) * dt < horizon:
        depth += 1
    return PropagatorConfig(base_step=dt, depth=depth,
                            taylor_order=taylor_order, branching=branching,
                            **config_kwargs)
