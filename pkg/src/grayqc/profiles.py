"""Named run profiles.

"paper" reproduces the published experiment scales (hours of compute);
"desk" is the CI/acceptance scale that finishes in minutes. Tests and the
CLI share these exact settings.
"""

from __future__ import annotations

from dataclasses import dataclass

__all__ = ["Profile", "PROFILES"]


@dataclass(frozen=True)
class Profile:
    sim_steps: int
    realizations: int
    dataset_count: int
    dataset_count_strong: int  # used at the largest coupling (g = 0.5)
    epochs: int
    batch_size: int
    peak_lr: float
    restarts: int
    max_iterations: int
    verify_realizations: int
    dropout_rate: float


PROFILES = {
    "paper": Profile(
        sim_steps=3000,
        realizations=2000,
        dataset_count=5000,
        dataset_count_strong=10000,
        epochs=200,
        batch_size=64,
        peak_lr=1e-3,
        restarts=8,
        max_iterations=200,
        verify_realizations=2000,
        dropout_rate=0.0,
    ),
    "desk": Profile(
        sim_steps=1000,
        realizations=500,
        dataset_count=500,
        dataset_count_strong=500,
        epochs=50,
        batch_size=64,
        peak_lr=1e-3,
        restarts=8,
        max_iterations=150,
        verify_realizations=2000,
        dropout_rate=0.0,
    ),
}
