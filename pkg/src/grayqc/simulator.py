"""Monte-Carlo ground truth: qubit evolution under control drives plus
classical dephasing noise, noise-averaged expectations, and dataset generation.

H(t) = f_x(t) sigma_x + f_y(t) sigma_y + g beta(t) sigma_z, with beta sampled
from an RTN or OU process. Observables are averaged over K independent noise
realizations; expectations feed the whitebox reconstruction to produce the
gate-fidelity labels used for training.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np

from .noise import NoiseModel, TimeGrid, Trajectory, sample_ensemble
from .pulses import PulseTrain, random_train, render, normalize
from .su2 import product_chain, step_exponential, step_matrices
from .whitebox import PAULIS, PREP_STATES, process_fidelity, reconstruct_chi, target_chi

__all__ = [
    "SimConfig",
    "DatasetRecord",
    "derive_seed",
    "step_exponential",
    "evolve",
    "expectations_mc",
    "dataset_record",
    "generate_dataset",
    "simulate_gate_fidelity",
]

_CHUNK = 256  # fixed trajectory chunk; keeps reductions order-stable


def derive_seed(seed: int, *indices: int) -> int:
    """Well-mixed 64-bit child seed for (master seed, index path)."""
    words = np.random.SeedSequence((int(seed),) + tuple(int(i) for i in indices)).generate_state(2)
    return int(words[0]) | (int(words[1]) << 32)


@dataclass(frozen=True)
class SimConfig:
    """Monte-Carlo settings: grid, realization count, coupling, noise, seed."""

    noise: NoiseModel
    coupling: float
    seed: int
    grid: TimeGrid = field(default_factory=lambda: TimeGrid(3.2, 3000))
    realizations: int = 2000

    def __post_init__(self):
        if self.realizations < 1:
            raise ValueError(f"realizations must be >= 1, got {self.realizations}")
        if self.coupling < 0:
            raise ValueError(f"coupling must be >= 0, got {self.coupling}")


@dataclass(frozen=True)
class DatasetRecord:
    """One supervised example: pulse input, MC expectations, fidelity labels."""

    normalized_input: np.ndarray  # (10,) in [0, 1]
    expectations: np.ndarray  # (6, 3)
    fidelities: np.ndarray  # (6,) in [0, 1], gate order (I, X, Y, Z, H, RX_PI_4)
    coupling: float
    noise: NoiseModel
    seed: int


def evolve(train: PulseTrain, beta: Trajectory, g: float, grid: TimeGrid) -> np.ndarray:
    """Unitary for one noise realization: ordered product of midpoint steps."""
    if beta.grid != grid:
        raise ValueError("trajectory grid does not match evolution grid")
    wf = render(train, grid)
    steps = step_matrices(wf.f_x, wf.f_y, g * beta.values, grid.dt)
    return product_chain(steps)


def _evolve_chunk(fx, fy, hz_chunk, dt) -> np.ndarray:
    """Unitaries for a (n, M) block of noise fields; shape (n, 2, 2)."""
    steps = step_matrices(
        np.broadcast_to(fx, hz_chunk.shape), np.broadcast_to(fy, hz_chunk.shape), hz_chunk, dt
    )
    return product_chain(steps)


def expectations_mc(train: PulseTrain, config: SimConfig) -> np.ndarray:
    """Noise-averaged expectations tr[U rho_p U^dag sigma_o], shape (6, 3).

    Averages over config.realizations trajectories with per-trajectory seeds
    derived from (config.seed, trajectory index), accumulated in fixed chunk
    order, so the result is deterministic and independent of scheduling.
    """
    grid = config.grid
    wf = render(train, grid)
    total = np.zeros((6, 3))
    K = config.realizations
    for start in range(0, K, _CHUNK):
        n = min(_CHUNK, K - start)
        betas = sample_ensemble(config.noise, grid, n, config.seed, start=start)
        U = _evolve_chunk(wf.f_x, wf.f_y, config.coupling * betas, grid.dt)
        E = np.einsum(
            "kij,pjl,kml,omi->kpo", U, PREP_STATES, np.conj(U), PAULIS[1:]
        ).real
        total += E.sum(axis=0)
    return total / K


def dataset_record(train: PulseTrain, config: SimConfig) -> DatasetRecord:
    """Simulate one pulse train and attach whitebox fidelity labels."""
    E = expectations_mc(train, config)
    chi = reconstruct_chi(E)
    fids = np.array([process_fidelity(chi, target_chi(gi)) for gi in range(6)])
    return DatasetRecord(
        normalized_input=normalize(train),
        expectations=E,
        fidelities=fids,
        coupling=config.coupling,
        noise=config.noise,
        seed=config.seed,
    )


def _make_record(args) -> DatasetRecord:
    index, config, seed = args
    train = random_train(derive_seed(seed, index, 0))
    return dataset_record(train, replace(config, seed=derive_seed(seed, index, 1)))


def generate_dataset(count: int, config: SimConfig, seed: int) -> Iterator[DatasetRecord]:
    """Stream `count` records with independently seeded random pulse trains.

    Records are yielded in index order. With GRAYQC_WORKERS > 1 the Monte
    Carlo work is spread over processes; per-record seeds make the output
    identical to the serial run.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    workers = int(os.environ.get("GRAYQC_WORKERS", "1"))
    jobs = [(i, config, seed) for i in range(count)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            yield from pool.map(_make_record, jobs, chunksize=8)
    else:
        for job in jobs:
            yield _make_record(job)


def simulate_gate_fidelity(train: PulseTrain, config: SimConfig, gate_index: int) -> float:
    """Monte-Carlo process fidelity of the pulse train against one target gate."""
    if not 0 <= gate_index <= 5:
        raise ValueError(f"gate_index must be 0..5, got {gate_index}")
    chi = reconstruct_chi(expectations_mc(train, config))
    return process_fidelity(chi, target_chi(gate_index))
