"""Monte-Carlo engine: per-trajectory evolution, noise-averaged expectations
against analytic oracles, dataset generation, gate-fidelity verification.
"""

import numpy as np
import pytest

from grayqc.noise import OU, RTN, TimeGrid, analytic_free_coherence, match_spectrum, sample_rtn
from grayqc.pulses import A_MAX, PulseTrain, random_train
from grayqc.simulator import (
    SimConfig,
    dataset_record,
    derive_seed,
    evolve,
    expectations_mc,
    generate_dataset,
    simulate_gate_fidelity,
    step_exponential,
)
from grayqc.su2 import IDENTITY, SIGMA_X
from grayqc.whitebox import control_unitary

ZERO_TRAIN = PulseTrain(np.zeros((2, 5)))
IDENTITY_EXPECTATIONS = np.array(
    [
        [1.0, 0, 0],
        [-1.0, 0, 0],
        [0, 1.0, 0],
        [0, -1.0, 0],
        [0, 0, 1.0],
        [0, 0, -1.0],
    ]
)


def test_step_exponential_examples():
    assert np.allclose(step_exponential(0, 0, 0, 0.1), IDENTITY)
    dt = 0.05
    assert np.allclose(step_exponential(np.pi / (2 * dt), 0, 0, dt), -1j * SIGMA_X, atol=1e-12)


def test_evolve_identity_without_drive_or_noise():
    grid = TimeGrid(3.2, 200)
    beta = sample_rtn(1.0, grid, seed=4)
    U = evolve(ZERO_TRAIN, beta, 0.0, grid)
    assert np.allclose(U, IDENTITY, atol=1e-12)


def test_evolve_matches_control_unitary_without_noise(rng):
    grid = TimeGrid(3.2, 700)
    train = PulseTrain(rng.uniform(-A_MAX, A_MAX, (2, 5)))
    beta = sample_rtn(1.0, grid, seed=8)
    U_sim = evolve(train, beta, 0.0, grid)
    U_wb = control_unitary(train, steps=700)
    assert np.abs(U_sim - U_wb).max() < 1e-8


def test_evolve_pure_dephasing_is_diagonal_phase():
    grid = TimeGrid(3.2, 300)
    beta = sample_rtn(1.0, grid, seed=21)
    g = 0.37
    U = evolve(ZERO_TRAIN, beta, g, grid)
    phi = g * beta.values.sum() * grid.dt
    expected = np.diag([np.exp(-1j * phi), np.exp(1j * phi)])
    assert np.abs(U - expected).max() < 1e-10


def test_evolve_grid_mismatch_rejected():
    beta = sample_rtn(1.0, TimeGrid(3.2, 100), seed=1)
    with pytest.raises(ValueError):
        evolve(ZERO_TRAIN, beta, 0.1, TimeGrid(3.2, 200))


def test_evolutions_are_unitary(rng):
    grid = TimeGrid(3.2, 250)
    worst = 0.0
    for i in range(100):
        train = random_train(i)
        beta = sample_rtn(1.0, grid, seed=1000 + i)
        U = evolve(train, beta, rng.uniform(0, 0.5), grid)
        worst = max(worst, np.abs(U.conj().T @ U - IDENTITY).max())
    assert worst < 1e-10


def test_expectations_identity_for_no_coupling():
    config = SimConfig(RTN(1.0), 0.0, seed=1, grid=TimeGrid(3.2, 300), realizations=4)
    E = expectations_mc(ZERO_TRAIN, config)
    assert np.abs(E - IDENTITY_EXPECTATIONS).max() < 1e-12


def test_expectations_free_decay_matches_analytic_oracle():
    config = SimConfig(RTN(1.0), 0.5, seed=42, grid=TimeGrid(3.2, 1000), realizations=2000)
    E = expectations_mc(ZERO_TRAIN, config)
    pred = analytic_free_coherence(RTN(1.0), 0.5, 3.2)
    se = 1.0 / np.sqrt(config.realizations)  # per-trajectory values lie in [-1, 1]
    assert abs(E[0, 0] - pred) <= 3 * se
    assert np.all(np.abs(E) <= 1 + 1e-12)


def test_expectations_deterministic():
    config = SimConfig(OU(2.0, 4.0), 0.3, seed=5, grid=TimeGrid(3.2, 200), realizations=64)
    train = random_train(3)
    assert np.array_equal(expectations_mc(train, config), expectations_mc(train, config))


def test_monte_carlo_error_scales_inverse_sqrt_k():
    grid = TimeGrid(3.2, 200)
    estimates = {K: [] for K in (100, 400)}
    for K in estimates:
        for rep in range(20):
            config = SimConfig(RTN(1.0), 0.5, seed=derive_seed(7, K, rep), grid=grid, realizations=K)
            estimates[K].append(expectations_mc(ZERO_TRAIN, config)[0, 0])
    s100 = np.std(estimates[100], ddof=1)
    s400 = np.std(estimates[400], ddof=1)
    # quadrupling K should halve the spread (20 reps: allow a loose band)
    assert 1.2 < s100 / s400 < 3.5


def test_dataset_record_identity_labels():
    config = SimConfig(RTN(1.0), 0.0, seed=11, grid=TimeGrid(3.2, 300), realizations=4)
    rec = dataset_record(ZERO_TRAIN, config)
    assert rec.fidelities[0] == pytest.approx(1.0, abs=1e-6)  # gate I
    assert np.all(rec.fidelities >= 0) and np.all(rec.fidelities <= 1)


def test_generate_dataset_stream(rng):
    config = SimConfig(RTN(1.0), 0.1, seed=2, grid=TimeGrid(3.2, 200), realizations=50)
    records = list(generate_dataset(5, config, seed=77))
    assert len(records) == 5
    for rec in records:
        assert rec.normalized_input.shape == (10,)
        assert np.all(rec.fidelities >= 0) and np.all(rec.fidelities <= 1)
        assert np.all(rec.fidelities < 1 + 1e-12)
    # independently seeded pulse trains differ between records
    assert not np.allclose(records[0].normalized_input, records[1].normalized_input)


def test_generate_dataset_deterministic():
    config = SimConfig(OU(2.0, 4.0), 0.2, seed=3, grid=TimeGrid(3.2, 150), realizations=40)
    a = list(generate_dataset(3, config, seed=5))
    b = list(generate_dataset(3, config, seed=5))
    for ra, rb in zip(a, b):
        assert np.array_equal(ra.normalized_input, rb.normalized_input)
        assert np.array_equal(ra.expectations, rb.expectations)
        assert np.array_equal(ra.fidelities, rb.fidelities)


def test_simulate_gate_fidelity_identity():
    config = SimConfig(RTN(1.0), 0.0, seed=11, grid=TimeGrid(3.2, 300), realizations=4)
    assert simulate_gate_fidelity(ZERO_TRAIN, config, 0) == pytest.approx(1.0, abs=1e-6)
    for gi in range(6):
        f = simulate_gate_fidelity(random_train(gi), config, gi)
        assert 0.0 <= f <= 1.0 + 1e-9


def test_rtn_and_matched_ou_decohere_differently():
    # non-Gaussianity is observable: the two free-decay coherences differ by
    # more than the 3-sigma Monte-Carlo resolution at K = 1e4
    g, t = 0.5, 3.2
    k, D = match_spectrum(1.0)
    c_rtn = analytic_free_coherence(RTN(1.0), g, t)
    c_ou = analytic_free_coherence(OU(k, D), g, t)
    mc_3sigma = 3.0 / np.sqrt(10_000)
    assert abs(c_rtn - c_ou) > mc_3sigma


def test_sim_config_validation():
    with pytest.raises(ValueError):
        SimConfig(RTN(1.0), -0.1, seed=0)
    with pytest.raises(ValueError):
        SimConfig(RTN(1.0), 0.1, seed=0, realizations=0)
