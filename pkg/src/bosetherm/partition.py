"""Mode bipartition of a fixed-N sector and reduced density matrices.

A fixed total particle number is not a tensor product of mode groups: the
system side carries every occupation pattern with total 0..N, and a pattern
with k system particles only ever pairs with reservoir patterns holding
N - k. Reduced density matrices are therefore block-diagonal in the system
particle number (coherences between different totals vanish identically),
and everything here works block by block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import IntegrityError, SectorMismatchError
from .fock import FockBasis, StateVector, enumerate_basis, sector_dimension


@dataclass(frozen=True)
class PartitionBlock:
    """One system-particle-number block of the partition."""

    particles: int      # particles on the system side
    offset: int         # first row of the block in the system enumeration
    size: int           # system configurations with this total
    reservoir_size: int


class PartitionMap:
    """Bookkeeping for one choice of system modes.

    System configurations are enumerated block by block: the system particle
    number k runs from N down to 0, and inside a block tuples follow the
    sector convention (lexicographically decreasing).
    """

    def __init__(self, basis: FockBasis, system_modes):
        sys_modes = tuple(sorted(set(int(m) for m in system_modes)))
        if not sys_modes:
            raise ValueError("system must contain at least one mode")
        if sys_modes[0] < 0 or sys_modes[-1] >= basis.num_modes:
            raise ValueError(
                f"system modes {sys_modes} outside 0..{basis.num_modes - 1}")
        if len(sys_modes) == basis.num_modes:
            raise ValueError("system must leave at least one reservoir mode")
        self.basis = basis
        self.system_modes = sys_modes
        self.reservoir_modes = tuple(m for m in range(basis.num_modes)
                                     if m not in sys_modes)

        n = basis.num_particles
        blocks = []
        offset = 0
        for k in range(n, -1, -1):
            size = sector_dimension(len(sys_modes), k)
            res = sector_dimension(len(self.reservoir_modes), n - k)
            blocks.append(PartitionBlock(particles=k, offset=offset,
                                         size=size, reservoir_size=res))
            offset += size
        self.blocks = blocks
        self.system_size = offset
        self.reservoir_size = sum(b.reservoir_size for b in blocks)

        # system configuration table, enumeration order
        rows = [enumerate_basis(len(sys_modes), b.particles).states
                for b in blocks]
        self.system_configs = np.vstack(rows)

        # per full-space index: which block, and local (row, col) in that
        # block's coefficient matrix
        sys_occ = basis.states[:, sys_modes]
        res_occ = basis.states[:, self.reservoir_modes]
        sys_totals = sys_occ.sum(axis=1)
        self._block_of = (n - sys_totals).astype(np.int64)  # block list index
        row = np.empty(basis.dim, dtype=np.int64)
        col = np.empty(basis.dim, dtype=np.int64)
        for bi, b in enumerate(blocks):
            members = np.nonzero(sys_totals == b.particles)[0]
            if members.size == 0:
                continue
            sys_basis = enumerate_basis(len(sys_modes), b.particles)
            res_basis = enumerate_basis(len(self.reservoir_modes),
                                        n - b.particles)
            row[members] = sys_basis.index_array(sys_occ[members])
            col[members] = res_basis.index_array(res_occ[members])
        self._row = row
        self._col = col

    @property
    def max_entropy(self) -> float:
        """ln of the smaller side's configuration count."""
        return math.log(min(self.system_size, self.reservoir_size))


def build_partition(basis: FockBasis, system_modes) -> PartitionMap:
    return PartitionMap(basis, system_modes)


@dataclass
class ReducedDensityMatrix:
    """System-side density matrix over the partition's configurations."""

    partition: PartitionMap
    matrix: np.ndarray

    def block(self, index: int) -> np.ndarray:
        b = self.partition.blocks[index]
        sl = slice(b.offset, b.offset + b.size)
        return self.matrix[sl, sl]

    def trace(self) -> float:
        return float(np.trace(self.matrix).real)


def reduced_density(state: StateVector, pm: PartitionMap) -> ReducedDensityMatrix:
    """Trace out the reservoir modes of a pure state."""
    if state.basis is not pm.basis:
        raise SectorMismatchError("state sector does not match the partition")
    rho = np.zeros((pm.system_size, pm.system_size), dtype=np.complex128)
    for bi, b in enumerate(pm.blocks):
        members = np.nonzero(pm._block_of == bi)[0]
        if members.size == 0:
            continue
        coeff = np.zeros((b.size, b.reservoir_size), dtype=np.complex128)
        coeff[pm._row[members], pm._col[members]] = state.amplitudes[members]
        sl = slice(b.offset, b.offset + b.size)
        rho[sl, sl] = coeff @ coeff.conj().T
    return ReducedDensityMatrix(pm, rho)


def entanglement_entropy(rdm: ReducedDensityMatrix) -> float:
    """Von Neumann entropy, block by block.

    The matrix is Hermitized first; eigenvalues below -1e-12 mean the input
    was not a density matrix and raise, weights below 1e-14 are dropped.
    """
    s = 0.0
    for bi in range(len(rdm.partition.blocks)):
        block = rdm.block(bi)
        if block.size == 0:
            continue
        lam = np.linalg.eigvalsh((block + block.conj().T) / 2.0)
        if lam.min() < -1e-12:
            raise IntegrityError(
                f"reduced density matrix has eigenvalue {lam.min():.3e}")
        lam = lam[lam > 1e-14]
        if lam.size:
            s -= float((lam * np.log(lam)).sum())
    return s


def subsystem_expectation(rdm: ReducedDensityMatrix,
                          operator: np.ndarray) -> complex:
    """tr(rho_S A) for an operator over system configurations."""
    op = np.asarray(operator)
    if op.shape != rdm.matrix.shape:
        raise ValueError(
            f"operator shape {op.shape} does not match the "
            f"{rdm.matrix.shape} reduced matrix")
    return complex(np.einsum("ij,ji->", rdm.matrix, op))


def system_number_operator(pm: PartitionMap) -> np.ndarray:
    """Total particle number on the system side, diagonal."""
    return np.diag(pm.system_configs.sum(axis=1).astype(float))


def mode_number_operator(pm: PartitionMap, mode: int) -> np.ndarray:
    """Occupation of one system mode, diagonal over system configurations."""
    if mode not in pm.system_modes:
        raise ValueError(f"mode {mode} is not a system mode {pm.system_modes}")
    slot = pm.system_modes.index(mode)
    return np.diag(pm.system_configs[:, slot].astype(float))
