import math

import numpy as np
import pytest

import oracles
from bosetherm import StateVector, apply_number, enumerate_basis, overlap
from bosetherm.errors import IntegrityError, SectorMismatchError
from bosetherm.partition import (
    ReducedDensityMatrix,
    build_partition,
    entanglement_entropy,
    mode_number_operator,
    reduced_density,
    subsystem_expectation,
    system_number_operator,
)
from bosetherm.states import occupation_state


def random_state(basis, seed):
    rng = np.random.default_rng(seed)
    amps = rng.normal(size=basis.dim) + 1j * rng.normal(size=basis.dim)
    return StateVector(basis, amps / np.linalg.norm(amps))


def test_configuration_counts_at_full_size():
    basis = enumerate_basis(5, 25)
    pm = build_partition(basis, (2, 3, 4))
    assert pm.system_size == 3276
    assert pm.reservoir_size == 351
    assert pm.max_entropy == pytest.approx(math.log(351))
    pm_small = build_partition(basis, (0, 1))
    assert pm_small.system_size == 351


def test_reduced_density_matches_brute_force():
    basis = enumerate_basis(4, 4)
    pm = build_partition(basis, (1, 3))
    psi = random_state(basis, 21)
    rho = reduced_density(psi, pm).matrix
    config_index = {tuple(int(v) for v in row): k
                    for k, row in enumerate(pm.system_configs)}
    ref = oracles.brute_partial_trace(basis.states, pm.system_modes,
                                      pm.reservoir_modes, psi.amplitudes,
                                      config_index)
    assert np.abs(rho - ref).max() < 1e-12


def test_trace_is_one():
    basis = enumerate_basis(4, 5)
    pm = build_partition(basis, (0, 2))
    rdm = reduced_density(random_state(basis, 3), pm)
    assert rdm.trace() == pytest.approx(1.0, abs=1e-12)


def test_cross_block_coherences_vanish_identically():
    basis = enumerate_basis(4, 4)
    pm = build_partition(basis, (2, 3))
    rho = reduced_density(random_state(basis, 5), pm).matrix
    for a in pm.blocks:
        for b in pm.blocks:
            if a.particles == b.particles:
                continue
            sub = rho[a.offset:a.offset + a.size, b.offset:b.offset + b.size]
            assert np.abs(sub).max() == 0.0


def test_product_state_has_zero_entropy():
    basis = enumerate_basis(4, 4)
    pm = build_partition(basis, (1, 2))
    psi = occupation_state(basis, (2, 1, 1, 0))
    assert entanglement_entropy(reduced_density(psi, pm)) == pytest.approx(
        0.0, abs=1e-12)


def test_entropy_equals_reservoir_entropy():
    basis = enumerate_basis(4, 5)
    psi = random_state(basis, 8)
    pm_s = build_partition(basis, (0, 2))
    pm_r = build_partition(basis, (1, 3))
    s_sys = entanglement_entropy(reduced_density(psi, pm_s))
    s_res = entanglement_entropy(reduced_density(psi, pm_r))
    assert s_sys == pytest.approx(s_res, abs=1e-10)
    assert s_sys <= pm_s.max_entropy + 1e-12


def test_maximally_entangled_pair_hits_the_bound():
    # two modes, one particle: (1,0) and (0,1) with equal weight
    basis = enumerate_basis(2, 1)
    pm = build_partition(basis, (0,))
    amps = np.array([1.0, 1.0]) / np.sqrt(2.0)
    s = entanglement_entropy(reduced_density(StateVector(basis, amps), pm))
    assert s == pytest.approx(math.log(2.0), abs=1e-12)


def test_entropy_rejects_negative_weights():
    basis = enumerate_basis(2, 1)
    pm = build_partition(basis, (0,))
    bad = ReducedDensityMatrix(pm, np.diag([1.5, -0.5]).astype(complex))
    with pytest.raises(IntegrityError):
        entanglement_entropy(bad)


def test_subsystem_expectations_match_full_state():
    basis = enumerate_basis(4, 5)
    pm = build_partition(basis, (1, 3))
    psi = random_state(basis, 13)
    rdm = reduced_density(psi, pm)
    for mode in pm.system_modes:
        via_rdm = subsystem_expectation(rdm, mode_number_operator(pm, mode))
        direct = overlap(psi, apply_number(mode, psi))
        assert via_rdm.real == pytest.approx(direct.real, abs=1e-10)
        assert abs(via_rdm.imag) < 1e-12
    total = subsystem_expectation(rdm, system_number_operator(pm))
    direct_total = sum(overlap(psi, apply_number(m, psi)).real
                       for m in pm.system_modes)
    assert total.real == pytest.approx(direct_total, abs=1e-10)


def test_partition_validation():
    basis = enumerate_basis(3, 2)
    with pytest.raises(ValueError):
        build_partition(basis, ())
    with pytest.raises(ValueError):
        build_partition(basis, (0, 1, 2))
    with pytest.raises(ValueError):
        build_partition(basis, (5,))
    pm = build_partition(basis, (1,))
    other = enumerate_basis(3, 3)
    with pytest.raises(SectorMismatchError):
        reduced_density(occupation_state(other, (3, 0, 0)), pm)


def test_mode_number_operator_needs_system_mode():
    basis = enumerate_basis(3, 2)
    pm = build_partition(basis, (1,))
    with pytest.raises(ValueError):
        mode_number_operator(pm, 0)
