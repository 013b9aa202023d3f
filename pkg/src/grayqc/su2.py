"""Closed-form 2x2 unitary steps exp(-i (h . sigma) dt) and their products.

Everything is vectorized over leading axes so trajectory ensembles and sample
batches evolve without per-element Python overhead. The adjoint helpers
implement reverse-mode differentiation through an ordered product of steps.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "SIGMA_X",
    "SIGMA_Y",
    "SIGMA_Z",
    "IDENTITY",
    "PAULIS",
    "step_matrices",
    "step_exponential",
    "step_partial_coeffs",
    "product_chain",
    "prefix_suffix_products",
    "chain_adjoints",
]

SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SIGMA_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
IDENTITY = np.eye(2, dtype=complex)
PAULIS = np.stack([IDENTITY, SIGMA_X, SIGMA_Y, SIGMA_Z])


def step_matrices(hx, hy, hz, dt: float) -> np.ndarray:
    """exp(-i (hx sx + hy sy + hz sz) dt) for broadcastable field arrays.

    Uses cos(|h| dt) I - i sin(|h| dt) (h/|h| . sigma) with the |h| -> 0
    limit handled exactly through sinc.
    """
    hx, hy, hz = np.broadcast_arrays(*np.atleast_1d(hx, hy, hz))
    r = np.sqrt(hx * hx + hy * hy + hz * hz)
    phi = r * dt
    c = np.cos(phi)
    s = dt * np.sinc(phi / np.pi)  # sin(|h| dt)/|h|, finite at |h|=0
    out = np.empty(hx.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = c - 1j * s * hz
    out[..., 1, 1] = c + 1j * s * hz
    out[..., 0, 1] = -1j * s * hx - s * hy
    out[..., 1, 0] = -1j * s * hx + s * hy
    return out


def step_exponential(hx: float, hy: float, hz: float, dt: float) -> np.ndarray:
    """Single 2x2 step unitary for scalar fields."""
    return step_matrices(hx, hy, hz, dt)[0]


def step_partial_coeffs(hx, hy, hz, dt: float):
    """Coefficients (s, q) for the step derivative w.r.t. a field component.

    dE/dh_a = -dt * s * h_a * I - i * q * h_a * (h . sigma) - i * s * sigma_a
    with s = sin(phi)/|h| and q = (dt cos(phi) - s)/|h|^2, phi = |h| dt.
    Both are finite at |h| = 0 (q -> -dt^3/3).
    """
    hx, hy, hz = np.broadcast_arrays(*np.atleast_1d(hx, hy, hz))
    r2 = hx * hx + hy * hy + hz * hz
    r = np.sqrt(r2)
    phi = r * dt
    c = np.cos(phi)
    s = dt * np.sinc(phi / np.pi)
    small = phi < 1e-4
    r2_safe = np.where(small, 1.0, r2)
    q = np.where(small, -(dt**3) / 3.0 * (1.0 - phi * phi / 10.0), (dt * c - s) / r2_safe)
    return s, q


def step_partials(hx, hy, hz, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Step matrices and their derivatives w.r.t. (hx, hy, hz).

    Returns (E, dE) with E of shape (..., 2, 2) and dE of shape (..., 3, 2, 2).
    """
    hx, hy, hz = np.broadcast_arrays(*np.atleast_1d(hx, hy, hz))
    E = step_matrices(hx, hy, hz, dt)
    s, q = step_partial_coeffs(hx, hy, hz, dt)
    h_sigma = (
        hx[..., None, None] * SIGMA_X
        + hy[..., None, None] * SIGMA_Y
        + hz[..., None, None] * SIGMA_Z
    )
    dE = np.empty(hx.shape + (3, 2, 2), dtype=complex)
    for a, (h_a, sigma_a) in enumerate(zip((hx, hy, hz), (SIGMA_X, SIGMA_Y, SIGMA_Z))):
        ha = h_a[..., None, None]
        dE[..., a, :, :] = (
            -dt * s[..., None, None] * ha * IDENTITY
            - 1j * q[..., None, None] * ha * h_sigma
            - 1j * s[..., None, None] * sigma_a
        )
    return E, dE


def product_chain(steps: np.ndarray) -> np.ndarray:
    """Ordered product U = E_{M-1} ... E_1 E_0 (earliest factor rightmost).

    `steps` has shape (..., M, 2, 2); the product runs over the M axis.
    """
    M = steps.shape[-3]
    U = np.broadcast_to(IDENTITY, steps.shape[:-3] + (2, 2)).copy()
    for k in range(M):
        U = steps[..., k, :, :] @ U
    return U


def prefix_suffix_products(steps: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Partial products around each factor of the ordered chain.

    Returns (P, S) with P[k] = E_{M-1}...E_{k+1} and S[k] = E_{k-1}...E_0,
    so that U = P[k] @ E_k @ S[k] for every k. Shapes match `steps`.
    """
    M = steps.shape[-3]
    S = np.empty_like(steps)
    P = np.empty_like(steps)
    acc = np.broadcast_to(IDENTITY, steps.shape[:-3] + (2, 2)).copy()
    for k in range(M):
        S[..., k, :, :] = acc
        acc = steps[..., k, :, :] @ acc
    acc = np.broadcast_to(IDENTITY, steps.shape[:-3] + (2, 2)).copy()
    for k in range(M - 1, -1, -1):
        P[..., k, :, :] = acc
        acc = acc @ steps[..., k, :, :]
    return P, S


def chain_adjoints(steps: np.ndarray, u_bar: np.ndarray) -> np.ndarray:
    """Adjoints of every step factor of U = E_{M-1} ... E_0.

    `u_bar` is dL/dRe(U) + i dL/dIm(U) for a real-valued loss L; the result
    has the same convention per factor: E_bar[k] = P[k]^dag u_bar S[k]^dag.
    """
    P, S = prefix_suffix_products(steps)
    Ph = np.conj(np.swapaxes(P, -1, -2))
    Sh = np.conj(np.swapaxes(S, -1, -2))
    return Ph @ u_bar[..., None, :, :] @ Sh
