"""Physics layers: control unitaries, V_O assembly, expectations, process
matrices and fidelities, all against independent direct-algebra oracles.
"""

import numpy as np
import pytest

from grayqc.pulses import PULSE_WIDTH, PulseTrain
from grayqc.su2 import IDENTITY, PAULIS, SIGMA_X
from grayqc.whitebox import (
    GATE_NAMES,
    GATES,
    PREP_STATES,
    VOParams,
    assemble_vo,
    control_unitary,
    control_unitary_adjoint,
    control_unitary_batch,
    expectation,
    expectation_grid,
    fidelity_affine_maps,
    noiseless_vo_params,
    process_fidelity,
    reconstruct_chi,
    target_chi,
    vo_closed_form,
)


def random_unitary(rng):
    z = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def unitary_expectations(U):
    """Direct-algebra oracle for the 18 expectations of the channel U . U^dag."""
    return np.array(
        [
            [np.trace(U @ rho @ U.conj().T @ PAULIS[o + 1]).real for o in range(3)]
            for rho in PREP_STATES
        ]
    )


# ---------------------------------------------------------------- control unitary


def test_control_unitary_identity_for_zero_pulses():
    U = control_unitary(PulseTrain(np.zeros((2, 5))), steps=500)
    assert np.allclose(U, IDENTITY, atol=1e-12)


def test_control_unitary_half_pi_x_rotation():
    # one x pulse with quadrature area pi/2 gives exp(-i pi/2 sigma_x) = -i sigma_x
    amps = np.zeros((2, 5))
    amps[0, 2] = (np.pi / 2) / (PULSE_WIDTH * np.sqrt(np.pi))
    U = control_unitary(PulseTrain(amps), steps=2000)
    assert np.abs(U - (-1j) * SIGMA_X).max() < 1e-6


def test_control_unitary_self_convergence(rng):
    train = PulseTrain(rng.uniform(-100, 100, (2, 5)))
    U1 = control_unitary(train, steps=2000)
    U2 = control_unitary(train, steps=4000)
    assert np.abs(U1 - U2).max() < 1e-6


def test_control_unitary_time_reversal_single_axis(rng):
    amps = np.zeros((2, 5))
    amps[0] = rng.uniform(-50, 50, 5)
    U = control_unitary(PulseTrain(amps), steps=800)
    U_neg = control_unitary(PulseTrain(-amps), steps=800)
    assert np.allclose(U_neg, U.conj().T, atol=1e-12)


def test_control_unitary_batch_matches_single(rng):
    amps = rng.uniform(-80, 80, (3, 2, 5))
    batch = control_unitary_batch(amps, steps=400)
    for b in range(3):
        assert np.allclose(batch[b], control_unitary(PulseTrain(amps[b]), steps=400), atol=1e-13)


def test_control_unitary_adjoint_matches_finite_differences(rng):
    amps = rng.uniform(-60, 60, (2, 5))
    w = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
    grad = control_unitary_adjoint(PulseTrain(amps), 300, w)

    def loss(a):
        return np.real(np.sum(np.conj(w) * control_unitary(PulseTrain(a), steps=300)))

    eps = 1e-5
    for i in range(2):
        for j in range(5):
            up, dn = amps.copy(), amps.copy()
            up[i, j] += eps
            dn[i, j] -= eps
            fd = (loss(up) - loss(dn)) / (2 * eps)
            assert fd == pytest.approx(grad[i, j], rel=1e-5, abs=1e-8)


# ---------------------------------------------------------------- V_O operator


@pytest.mark.parametrize("obs", [0, 1, 2])
def test_noiseless_vo_is_identity(obs):
    assert np.abs(assemble_vo(noiseless_vo_params(obs), obs) - IDENTITY).max() < 1e-12


def test_vo_unit_mu_zero_angles_for_sigma_z():
    # (mu=1, angles 0) diagonalizes sigma_z, so V_{sigma_z} = sigma_z sigma_z = I
    assert np.allclose(assemble_vo(VOParams(1.0, 0.0, 0.0, 0.0), 2), IDENTITY)


def test_vo_vanishes_at_mu_zero(rng):
    for obs in range(3):
        v = assemble_vo(VOParams(0.0, rng.normal(), rng.normal(), rng.normal()), obs)
        assert np.abs(v).max() == 0.0


def test_vo_core_eigenvalues_are_plus_minus_mu(rng):
    p = VOParams(rng.uniform(0, 1), rng.normal(), rng.normal(), rng.normal())
    core = PAULIS[3] @ assemble_vo(p, 2)  # O^-1 V = Q D Q^dag
    eigs = np.sort(np.linalg.eigvals(core).real)
    assert np.allclose(eigs, [-p.mu, p.mu], atol=1e-12)
    assert np.abs(np.linalg.eigvals(core).imag).max() < 1e-12


def test_vo_closed_form_matches_literal_assembly(rng):
    for obs in range(3):
        p = VOParams(rng.uniform(0, 1), rng.normal(), rng.normal(), rng.normal())
        V, _ = vo_closed_form(p.mu, p.theta, p.psi, obs)
        assert np.abs(V[0] - assemble_vo(p, obs)).max() < 1e-14


def test_vo_partials_match_finite_differences(rng):
    eps = 1e-6
    for obs in range(3):
        p = VOParams(rng.uniform(0.1, 0.9), rng.normal(), rng.normal(), rng.normal())
        _, dV = vo_closed_form(p.mu, p.theta, p.psi, obs)
        for ix, name in enumerate(("mu", "theta", "psi")):
            kw = {"mu": p.mu, "theta": p.theta, "psi": p.psi, "delta": p.delta}
            up = dict(kw)
            dn = dict(kw)
            up[name] += eps
            dn[name] -= eps
            fd = (assemble_vo(VOParams(**up), obs) - assemble_vo(VOParams(**dn), obs)) / (2 * eps)
            assert np.abs(fd - dV[0, ix]).max() < 1e-6
        # delta phases cancel inside Q D Q^dag, so the delta derivative is zero
        up = dict(kw)
        dn = dict(kw)
        up["delta"] += eps
        dn["delta"] -= eps
        fd = (assemble_vo(VOParams(**up), obs) - assemble_vo(VOParams(**dn), obs)) / (2 * eps)
        assert np.abs(fd).max() < 1e-6


def test_vo_operator_norm_bounded(rng):
    for _ in range(50):
        p = VOParams(rng.uniform(0, 1), rng.normal(), rng.normal(), rng.normal())
        obs = rng.integers(0, 3)
        v = assemble_vo(p, obs)
        assert np.linalg.svd(v, compute_uv=False).max() <= 1.0 + 1e-9


def test_vo_mu_out_of_range_rejected():
    with pytest.raises(ValueError):
        VOParams(1.2, 0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        VOParams(-0.1, 0.0, 0.0, 0.0)


# ---------------------------------------------------------------- expectations


def test_expectation_identity_channel_values():
    assert expectation(IDENTITY, IDENTITY, 4, 2) == pytest.approx(1.0)  # |0_z>, sigma_z
    assert expectation(IDENTITY, IDENTITY, 4, 0) == pytest.approx(0.0)  # |0_z>, sigma_x


def test_expectation_matches_direct_algebra(rng):
    U = random_unitary(rng)
    direct = unitary_expectations(U)
    for prep in range(6):
        for obs in range(3):
            assert expectation(IDENTITY, U, prep, obs) == pytest.approx(
                direct[prep, obs], abs=1e-12
            )


def test_expectation_grid_matches_scalar(rng):
    U = random_unitary(rng)
    vo = np.stack(
        [
            assemble_vo(VOParams(rng.uniform(0, 1), rng.normal(), rng.normal(), 0.0), o)
            for o in range(3)
        ]
    )
    grid_vals = expectation_grid(vo, U)
    for prep in range(6):
        for obs in range(3):
            assert grid_vals[prep, obs] == pytest.approx(
                expectation(vo[obs], U, prep, obs), abs=1e-12
            )


def test_expectation_bounded_for_contractive_vo(rng):
    for _ in range(30):
        p = VOParams(rng.uniform(0, 1), rng.normal(), rng.normal(), rng.normal())
        obs = int(rng.integers(0, 3))
        val = expectation(assemble_vo(p, obs), random_unitary(rng), int(rng.integers(0, 6)), obs)
        assert -1 - 1e-9 <= val <= 1 + 1e-9


# ---------------------------------------------------------------- process matrix


def test_chi_of_identity_channel():
    chi = reconstruct_chi(unitary_expectations(IDENTITY))
    expected = np.zeros((4, 4))
    expected[0, 0] = 1.0
    assert np.abs(chi - expected).max() < 1e-12
    assert process_fidelity(chi, target_chi(0)) == pytest.approx(1.0)


def test_chi_of_x_channel():
    chi = reconstruct_chi(unitary_expectations(SIGMA_X))
    expected = np.zeros((4, 4))
    expected[1, 1] = 1.0
    assert np.abs(chi - expected).max() < 1e-12


def test_chi_round_trip_over_random_unitaries(rng):
    for _ in range(100):
        U = random_unitary(rng)
        chi = reconstruct_chi(unitary_expectations(U))
        g = np.einsum("mij,ji->m", PAULIS, U) / 2.0
        fid = np.trace(chi.conj().T @ np.outer(g, g.conj())).real
        assert abs(fid - 1.0) < 1e-9


def test_chi_hermitian_unit_trace_for_arbitrary_input(rng):
    E = rng.uniform(-1, 1, (6, 3))
    chi = reconstruct_chi(E)
    assert np.abs(chi - chi.conj().T).max() < 1e-9
    assert np.trace(chi).real == pytest.approx(1.0, abs=1e-9)
    assert abs(np.trace(chi).imag) < 1e-9


def test_target_chi_values():
    chi_i = target_chi(0)
    assert chi_i[0, 0] == pytest.approx(1.0)
    assert np.abs(chi_i).sum() == pytest.approx(1.0)

    g_h = np.array([0.0, 1 / np.sqrt(2), 0.0, 1 / np.sqrt(2)])
    assert np.abs(target_chi(4) - np.outer(g_h, g_h)).max() < 1e-12

    g_rx = np.array([np.cos(np.pi / 8), -1j * np.sin(np.pi / 8), 0.0, 0.0])
    assert np.abs(target_chi(5) - np.outer(g_rx, g_rx.conj())).max() < 1e-12


def test_gate_set_is_unitary():
    assert GATE_NAMES == ("I", "X", "Y", "Z", "H", "RX_PI_4")
    for G in GATES:
        assert np.abs(G @ G.conj().T - IDENTITY).max() < 1e-12


def test_process_fidelity_extremes(rng):
    U = random_unitary(rng)
    g = np.einsum("mij,ji->m", PAULIS, U) / 2.0
    chi_u = np.outer(g, g.conj())
    assert process_fidelity(chi_u, chi_u) == pytest.approx(1.0)
    assert process_fidelity(target_chi(1), target_chi(0)) == pytest.approx(0.0)


def test_process_fidelity_dephasing_vs_z():
    # full dephasing: x and y Bloch components destroyed, z preserved
    E = np.zeros((6, 3))
    E[4, 2], E[5, 2] = 1.0, -1.0
    assert process_fidelity(reconstruct_chi(E), target_chi(3)) == pytest.approx(0.5)


def test_fidelity_affine_maps_match_pipeline(rng):
    W, C = fidelity_affine_maps()
    E = rng.uniform(-1, 1, (6, 3))
    chi = reconstruct_chi(E)
    for gi in range(6):
        direct = np.trace(chi.conj().T @ target_chi(gi)).real
        assert W[gi] @ E.ravel() + C[gi] == pytest.approx(direct, abs=1e-12)


def test_expectation_imag_residual(rng):
    from grayqc.whitebox import expectation_imag_residual

    U = random_unitary(rng)
    # physical (contraction-normal) V_O gives negligible imaginary residue
    vo = assemble_vo(VOParams(0.7, 0.3, -0.2, 0.1), 2)
    assert expectation_imag_residual(vo, U, 0, 2) < 1e-12
    # a deliberately non-physical operator leaves a visible residue
    bogus = np.array([[1.0, 1j], [0.0, 1.0]])
    residues = [expectation_imag_residual(bogus, U, p, 0) for p in range(6)]
    assert max(residues) > 1e-3
