"""Gaussian control-pulse trains on the x and y axes.

Each drive f_alpha(t) = sum_k A_{k,alpha} exp(-(t - tau_k)^2 / sigma^2) with
N = 5 pulses, fixed centers tau_k = k T / (N + 1) and width sigma = T / (12 N).
Only the 2 x 5 amplitudes vary; they are the trainable inputs of the model.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .noise import TimeGrid, derive_rng

__all__ = [
    "N_PULSES",
    "TOTAL_TIME",
    "A_MAX",
    "PULSE_WIDTH",
    "PULSE_CENTERS",
    "PulseTrain",
    "Waveforms",
    "gaussian_basis",
    "render",
    "normalize",
    "denormalize",
    "random_train",
]

N_PULSES = 5
TOTAL_TIME = 3.2  # us
A_MAX = 100.0  # rad/us amplitude range of each pulse
PULSE_WIDTH = TOTAL_TIME / (12 * N_PULSES)
PULSE_CENTERS = np.array([(k + 1) * TOTAL_TIME / (N_PULSES + 1) for k in range(N_PULSES)])


@dataclass(frozen=True)
class PulseTrain:
    """2 x N amplitude matrix (row 0 = x axis, row 1 = y axis), rad/us."""

    amplitudes: np.ndarray
    total_time: float = TOTAL_TIME

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=float)
        if amps.shape != (2, N_PULSES):
            raise ValueError(f"amplitudes must have shape (2, {N_PULSES}), got {amps.shape}")
        if np.any(np.abs(amps) > A_MAX * (1 + 1e-12)):
            raise ValueError(f"amplitudes must satisfy |A| <= {A_MAX}")
        if not self.total_time > 0:
            raise ValueError("total_time must be positive")
        object.__setattr__(self, "amplitudes", amps)

    @property
    def positions(self) -> np.ndarray:
        return np.array([(k + 1) * self.total_time / (N_PULSES + 1) for k in range(N_PULSES)])

    @property
    def width(self) -> float:
        return self.total_time / (12 * N_PULSES)


@dataclass(frozen=True)
class Waveforms:
    """Discretized drive fields on a grid, rad/us."""

    f_x: np.ndarray
    f_y: np.ndarray
    grid: TimeGrid


@lru_cache(maxsize=16)
def _basis_cached(t_end: float, steps: int) -> np.ndarray:
    grid = TimeGrid(t_end, steps)
    t = grid.times()
    width = t_end / (12 * N_PULSES)
    centers = np.array([(k + 1) * t_end / (N_PULSES + 1) for k in range(N_PULSES)])
    return np.exp(-((t[:, None] - centers[None, :]) ** 2) / width**2)


def gaussian_basis(grid: TimeGrid) -> np.ndarray:
    """(steps, N) matrix of unit-amplitude pulse shapes at the grid midpoints.

    Waveforms are basis @ amplitudes; the same matrix is the Jacobian
    d f_alpha(t_k) / d A_{j,alpha} used for gradients.
    """
    return _basis_cached(grid.t_end, grid.steps)


def render(train: PulseTrain, grid: TimeGrid) -> Waveforms:
    """Evaluate the two Gaussian sums at the grid midpoints."""
    if not np.isclose(grid.t_end, train.total_time, rtol=0, atol=1e-12):
        raise ValueError(
            f"grid t_end {grid.t_end} does not match train total_time {train.total_time}"
        )
    basis = gaussian_basis(grid)
    return Waveforms(basis @ train.amplitudes[0], basis @ train.amplitudes[1], grid)


def normalize(train: PulseTrain) -> np.ndarray:
    """Map amplitudes to 10 values in [0, 1], ordered (A_1x..A_5x, A_1y..A_5y)."""
    return ((train.amplitudes + A_MAX) / (2.0 * A_MAX)).ravel()


def denormalize(values: np.ndarray) -> PulseTrain:
    """Inverse of normalize; restores the fixed positions and width."""
    values = np.asarray(values, dtype=float)
    if values.shape != (2 * N_PULSES,):
        raise ValueError(f"expected {2 * N_PULSES} values, got shape {values.shape}")
    if np.any(values < -1e-12) or np.any(values > 1 + 1e-12):
        raise ValueError("normalized values must lie in [0, 1]")
    return PulseTrain(values.reshape(2, N_PULSES) * (2.0 * A_MAX) - A_MAX)


def random_train(seed) -> PulseTrain:
    """Pulse train with 10 i.i.d. uniform amplitudes on [-A_MAX, A_MAX]."""
    rng = derive_rng(seed)
    return PulseTrain(rng.uniform(-A_MAX, A_MAX, size=(2, N_PULSES)))
