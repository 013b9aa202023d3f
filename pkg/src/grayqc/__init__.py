"""Graybox modeling and optimal control of a qubit under classical dephasing.

Pipeline: Monte-Carlo simulation of a driven qubit with RTN or
Ornstein-Uhlenbeck dephasing noise -> supervised training of a
physics-constrained transformer model predicting six gate fidelities from
pulse amplitudes -> gradient-based pulse optimization on the trained model,
verified against the simulator.
"""

from .blackbox import ModelConfig, ModelParameters, load_checkpoint, save_checkpoint
from .control import ControlProblem, ControlResult, optimize, optimize_and_verify
from .estimator import GrayboxRegressor
from .noise import OU, RTN, TimeGrid, analytic_free_coherence, match_spectrum
from .pulses import A_MAX, PulseTrain, denormalize, normalize, random_train
from .simulator import SimConfig, expectations_mc, generate_dataset, simulate_gate_fidelity
from .training import Metrics, TrainConfig, train
from .whitebox import GATE_NAMES, process_fidelity, reconstruct_chi, target_chi

__version__ = "0.1.0"

__all__ = [
    "A_MAX",
    "ControlProblem",
    "ControlResult",
    "GATE_NAMES",
    "GrayboxRegressor",
    "Metrics",
    "ModelConfig",
    "ModelParameters",
    "OU",
    "PulseTrain",
    "RTN",
    "SimConfig",
    "TimeGrid",
    "TrainConfig",
    "analytic_free_coherence",
    "denormalize",
    "expectations_mc",
    "generate_dataset",
    "load_checkpoint",
    "match_spectrum",
    "normalize",
    "optimize",
    "optimize_and_verify",
    "process_fidelity",
    "random_train",
    "reconstruct_chi",
    "save_checkpoint",
    "simulate_gate_fidelity",
    "target_chi",
    "train",
]
