"""Fixed physics layers: control unitary, V_O operator, expectations,
process-matrix reconstruction and process fidelity.

The noise-averaged evolution of one observable O is captured by the operator
V_O = O^{-1} Q D Q^dag parameterized by (mu, theta, psi, delta); expectation
values are Re tr[V_O U_ctrl rho U_ctrl^dag O]. A tomographically complete set
of 18 expectations (6 Pauli eigenstate preparations x 3 Pauli measurements)
determines the process matrix chi in the Pauli basis (trace-1 convention),
assuming a unital trace-preserving map, which holds exactly for classically
noise-averaged unitary evolution.

All operations here have closed-form derivatives; the *_adjoint helpers
propagate reverse-mode gradients using the convention
Z_bar = dL/dRe(Z) + i dL/dIm(Z) for a real loss L.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .noise import TimeGrid
from .pulses import TOTAL_TIME, PulseTrain, gaussian_basis, render
from .su2 import (
    IDENTITY,
    PAULIS,
    SIGMA_X,
    SIGMA_Y,
    SIGMA_Z,
    chain_adjoints,
    product_chain,
    step_matrices,
    step_partials,
)

__all__ = [
    "GATES",
    "GATE_NAMES",
    "PREP_STATES",
    "VOParams",
    "noiseless_vo_params",
    "assemble_vo",
    "vo_closed_form",
    "control_unitary",
    "control_unitary_batch",
    "control_unitary_adjoint",
    "expectation",
    "expectation_imag_residual",
    "expectation_grid",
    "expectation_grid_adjoint",
    "reconstruct_chi",
    "target_chi",
    "process_fidelity",
    "fidelity_affine_maps",
]

logger = logging.getLogger(__name__)

# Preparation states: eigenstates of sigma_x, sigma_y, sigma_z in the order
# |0_x>, |1_x>, |0_y>, |1_y>, |0_z>, |1_z>; rho = (I + r . sigma)/2.
PREP_AXES = np.array([0, 0, 1, 1, 2, 2])
PREP_SIGNS = np.array([1.0, -1.0, 1.0, -1.0, 1.0, -1.0])
PREP_STATES = np.stack(
    [(IDENTITY + s * PAULIS[a + 1]) / 2.0 for a, s in zip(PREP_AXES, PREP_SIGNS)]
)

_RX = np.array(
    [
        [np.cos(np.pi / 8), -1j * np.sin(np.pi / 8)],
        [-1j * np.sin(np.pi / 8), np.cos(np.pi / 8)],
    ]
)
GATES = np.stack(
    [
        IDENTITY,
        SIGMA_X,
        SIGMA_Y,
        SIGMA_Z,
        (SIGMA_X + SIGMA_Z) / np.sqrt(2.0),
        _RX,
    ]
)
GATE_NAMES = ("I", "X", "Y", "Z", "H", "RX_PI_4")


@dataclass(frozen=True)
class VOParams:
    """Four-parameter noise operator: contraction mu in [0,1], three angles."""

    mu: float
    theta: float
    psi: float
    delta: float

    def __post_init__(self):
        if not 0.0 <= self.mu <= 1.0:
            raise ValueError(f"mu must lie in [0, 1], got {self.mu}")


def noiseless_vo_params(observable_index: int) -> VOParams:
    """Parameters for which V_O is the identity (no decoherence)."""
    return (
        VOParams(1.0, -np.pi / 4, 0.0, 0.0),
        VOParams(1.0, -np.pi / 4, -np.pi / 4, 0.0),
        VOParams(1.0, 0.0, 0.0, 0.0),
    )[observable_index]


def assemble_vo(params: VOParams, observable_index: int) -> np.ndarray:
    """V_O = O^{-1} Q D Q^dag with D = diag(mu, -mu) and
    Q = diag(e^{i psi}, e^{-i psi}) R(theta) diag(e^{i delta}, e^{-i delta}).
    """
    if not 0 <= observable_index <= 2:
        raise ValueError(f"observable_index must be 0..2, got {observable_index}")
    O = PAULIS[observable_index + 1]  # O^{-1} = O for Paulis
    D = np.diag([params.mu, -params.mu]).astype(complex)
    P = np.diag([np.exp(1j * params.psi), np.exp(-1j * params.psi)])
    R = np.array(
        [
            [np.cos(params.theta), np.sin(params.theta)],
            [-np.sin(params.theta), np.cos(params.theta)],
        ],
        dtype=complex,
    )
    E = np.diag([np.exp(1j * params.delta), np.exp(-1j * params.delta)])
    Q = P @ R @ E
    return O @ Q @ D @ Q.conj().T


def vo_closed_form(mu, theta, psi, observable_index: int):
    """Batched V_O and its partials w.r.t. (mu, theta, psi).

    Q D Q^dag reduces to mu * [[cos 2t, -e^{2i p} sin 2t],
    [-e^{-2i p} sin 2t, -cos 2t]] (the delta phases cancel), so V_O and its
    derivatives are cheap closed forms. Returns (V, dV) with V of shape
    (..., 2, 2) and dV of shape (..., 3, 2, 2) ordered (mu, theta, psi).
    """
    mu, theta, psi = np.broadcast_arrays(*np.atleast_1d(mu, theta, psi))
    O = PAULIS[observable_index + 1]
    c2 = np.cos(2.0 * theta)
    s2 = np.sin(2.0 * theta)
    ep = np.exp(2j * psi)
    em = np.conj(ep)
    shape = mu.shape

    def _mat(a00, a01, a10, a11):
        out = np.empty(shape + (2, 2), dtype=complex)
        out[..., 0, 0] = a00
        out[..., 0, 1] = a01
        out[..., 1, 0] = a10
        out[..., 1, 1] = a11
        return out

    W = _mat(c2, -ep * s2, -em * s2, -c2)
    V = mu[..., None, None] * (O @ W)
    dV = np.empty(shape + (3, 2, 2), dtype=complex)
    dV[..., 0, :, :] = O @ W
    dV[..., 1, :, :] = mu[..., None, None] * (
        O @ _mat(-2.0 * s2, -2.0 * c2 * ep, -2.0 * c2 * em, 2.0 * s2)
    )
    dV[..., 2, :, :] = mu[..., None, None] * (
        O @ _mat(np.zeros(shape), -2j * ep * s2, 2j * em * s2, np.zeros(shape))
    )
    return V, dV


def control_unitary(train: PulseTrain, steps: int = 2000) -> np.ndarray:
    """Time-ordered product of midpoint step exponentials of
    H_ctrl(t_k) = f_x(t_k) sigma_x + f_y(t_k) sigma_y.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    grid = TimeGrid(train.total_time, steps)
    wf = render(train, grid)
    E = step_matrices(wf.f_x, wf.f_y, 0.0, grid.dt)
    return product_chain(E)


def control_unitary_batch(amplitudes: np.ndarray, steps: int = 2000) -> np.ndarray:
    """Control unitaries for a (B, 2, N) amplitude stack, shape (B, 2, 2)."""
    amplitudes = np.asarray(amplitudes, dtype=float)
    grid = TimeGrid(TOTAL_TIME, steps)
    basis = gaussian_basis(grid)  # (M, N)
    fx = amplitudes[:, 0, :] @ basis.T  # (B, M)
    fy = amplitudes[:, 1, :] @ basis.T
    E = step_matrices(fx, fy, np.zeros_like(fx), grid.dt)  # (B, M, 2, 2)
    return product_chain(E)


def control_unitary_adjoint(train: PulseTrain, steps: int, u_bar: np.ndarray) -> np.ndarray:
    """dL/dA for the control unitary, given U_bar; shape (2, N).

    Recomputes the step chain, distributes U_bar onto every factor, and
    contracts with the analytic step partials and the Gaussian basis.
    """
    grid = TimeGrid(train.total_time, steps)
    wf = render(train, grid)
    E, dE = step_partials(wf.f_x, wf.f_y, np.zeros_like(wf.f_x), grid.dt)
    e_bar = chain_adjoints(E, u_bar)  # (M, 2, 2)
    # dL/dh_a(t_k) = Re sum_ij conj(E_bar) dE/dh_a, for a = x, y
    dh = np.einsum("mij,maij->ma", np.conj(e_bar), dE[..., :2, :, :]).real  # (M, 2)
    basis = gaussian_basis(grid)  # (M, N)
    return dh.T @ basis  # (2, N)


def expectation(vo: np.ndarray, u_ctrl: np.ndarray, prep_index: int, observable_index: int) -> float:
    """Re tr[V_O U rho_0 U^dag O] for one preparation/observable pair."""
    if not 0 <= prep_index <= 5:
        raise ValueError(f"prep_index must be 0..5, got {prep_index}")
    if not 0 <= observable_index <= 2:
        raise ValueError(f"observable_index must be 0..2, got {observable_index}")
    rho = PREP_STATES[prep_index]
    O = PAULIS[observable_index + 1]
    return float(np.trace(vo @ u_ctrl @ rho @ u_ctrl.conj().T @ O).real)


def expectation_imag_residual(
    vo: np.ndarray, u_ctrl: np.ndarray, prep_index: int, observable_index: int
) -> float:
    """|Im tr[V_O U rho_0 U^dag O]|, a diagnostic for learned V_O parameters.

    The physical expectation is real; a learned V_O can inject a spurious
    imaginary part, which `expectation` discards and this reports.
    """
    rho = PREP_STATES[prep_index]
    O = PAULIS[observable_index + 1]
    return float(abs(np.trace(vo @ u_ctrl @ rho @ u_ctrl.conj().T @ O).imag))


def expectation_grid(vo: np.ndarray, u_ctrl: np.ndarray) -> np.ndarray:
    """All 18 expectations at once; vo is (..., 3, 2, 2), u_ctrl (..., 2, 2).

    Returns (..., 6, 3) ordered (preparation, observable).
    """
    evolved = np.einsum(
        "...ij,pjk,...lk->...pil", u_ctrl, PREP_STATES, np.conj(u_ctrl)
    )  # U rho U^dag
    return np.einsum("...oij,...pjk,oki->...po", vo, evolved, PAULIS[1:]).real


def expectation_grid_adjoint(
    vo: np.ndarray, u_ctrl: np.ndarray, e_bar: np.ndarray, need_u_bar: bool = False
):
    """Adjoints (vo_bar, u_bar) of expectation_grid given e_bar (..., 6, 3)."""
    evolved = np.einsum("...ij,pjk,...lk->...pil", u_ctrl, PREP_STATES, np.conj(u_ctrl))
    # V_bar[o] = sum_p e_bar[p,o] (evolved_p sigma_o)^dag
    w = np.einsum("...pij,ojk->...poik", evolved, PAULIS[1:])
    vo_bar = np.einsum("...po,...poik->...oki", e_bar, np.conj(w))
    if not need_u_bar:
        return vo_bar, None
    # U_bar = sum_{p,o} e_bar[p,o] (V_o^dag sigma_o + sigma_o V_o) U rho_p
    vs = np.einsum("...oji,ojk->...oik", np.conj(vo), PAULIS[1:]) + np.einsum(
        "oij,...ojk->...oik", PAULIS[1:], vo
    )
    coeff = np.einsum("...po,...oik,...kl,plm->...im", e_bar, vs, u_ctrl, PREP_STATES)
    return vo_bar, coeff


def _pauli_change_of_basis() -> np.ndarray:
    """Inverse of the linear map chi -> Pauli transfer matrix R."""
    B = np.empty((16, 16), dtype=complex)
    for a in range(4):
        for b in range(4):
            for m in range(4):
                for n in range(4):
                    B[4 * a + b, 4 * m + n] = np.trace(
                        PAULIS[a] @ PAULIS[m] @ PAULIS[b] @ PAULIS[n]
                    ) / 2.0
    return np.linalg.inv(B)


_CHI_FROM_R = _pauli_change_of_basis()


def reconstruct_chi(expectations: np.ndarray) -> np.ndarray:
    """Process matrix chi (Pauli basis, tr chi = 1) from the 18 expectations.

    Builds the 3x3 Pauli-transfer block R[a, b] = (E[sigma_a | 0_b] -
    E[sigma_a | 1_b]) / 2, extends it to 4x4 assuming a unital
    trace-preserving map, inverts the linear change of representation to the
    chi matrix, and symmetrizes.
    """
    E = np.asarray(expectations, dtype=float)
    if E.shape != (6, 3):
        raise ValueError(f"expectations must have shape (6, 3), got {E.shape}")
    R = np.zeros((4, 4))
    R[0, 0] = 1.0
    R[1:, 1:] = (E[0::2, :] - E[1::2, :]).T / 2.0
    chi = (_CHI_FROM_R @ R.ravel()).reshape(4, 4)
    return (chi + chi.conj().T) / 2.0


def target_chi(gate_index: int) -> np.ndarray:
    """Rank-1 chi matrix g g^dag of a target unitary G = sum_m g_m sigma_m."""
    if not 0 <= gate_index <= 5:
        raise ValueError(f"gate_index must be 0..5, got {gate_index}")
    G = GATES[gate_index]
    g = np.einsum("mij,ji->m", PAULIS, G) / 2.0
    return np.outer(g, g.conj())


def process_fidelity(actual: np.ndarray, target: np.ndarray) -> float:
    """Re tr(chi_actual^dag chi_target), clamped to [0, 1]."""
    val = float(np.trace(actual.conj().T @ target).real)
    if val > 1.0 + 1e-6 or val < -1e-6:
        logger.warning("process fidelity %.3e outside [0, 1]; clamping", val)
    return float(np.clip(val, 0.0, 1.0))


def fidelity_affine_maps() -> tuple[np.ndarray, np.ndarray]:
    """Per-gate affine maps F_g(E) = W[g] . E_flat + C[g] before clamping.

    reconstruct_chi and the fidelity trace are linear/affine in the 18
    expectations (flattened row-major over (preparation, observable)), so the
    whole fidelity layer collapses to six fixed affine maps. Derived by
    probing reconstruct_chi, hence exactly consistent with it.
    """
    targets = [target_chi(g) for g in range(6)]

    def overlap(E):
        chi = reconstruct_chi(E)
        return np.array([np.trace(chi.conj().T @ t).real for t in targets])

    C = overlap(np.zeros((6, 3)))
    W = np.empty((6, 18))
    for i in range(18):
        probe = np.zeros(18)
        probe[i] = 1.0
        W[:, i] = overlap(probe.reshape(6, 3)) - C
    return W, C
