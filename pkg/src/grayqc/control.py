"""Gradient-based pulse optimization on the trained graybox emulator.

Minimizes J = 1 - F_gate over the 10 normalized amplitudes with L-BFGS and a
strong-Wolfe line search, multi-start restarts, and a smooth sigmoid
reparameterization that keeps every evaluated point strictly inside the
[0, 1]^10 box. Optimized pulses are verified against the Monte-Carlo
simulator; the verified fidelity is the authoritative number.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import line_search

try:
    from scipy.optimize._linesearch import LineSearchWarning
except ImportError:  # scipy < 1.8 module layout
    from scipy.optimize.linesearch import LineSearchWarning

from .blackbox import ModelParameters, NonFiniteActivation, backward, forward
from .noise import derive_rng
from .pulses import denormalize
from .simulator import SimConfig, simulate_gate_fidelity

__all__ = [
    "ControlProblem",
    "RestartTrace",
    "ControlResult",
    "ControlError",
    "objective",
    "optimize",
    "optimize_and_verify",
]


class ControlError(RuntimeError):
    """All restarts failed before taking a single step."""


@dataclass(frozen=True)
class ControlProblem:
    """Optimization task: trained model, target gate, optimizer settings."""

    params: ModelParameters
    gate_index: int
    restarts: int = 8
    max_iterations: int = 200
    grad_tol: float = 1e-6
    memory: int = 10

    def __post_init__(self):
        if not 0 <= self.gate_index <= 5:
            raise ValueError(f"gate_index must be 0..5, got {self.gate_index}")
        if self.restarts < 1:
            raise ValueError(f"restarts must be >= 1, got {self.restarts}")


@dataclass
class RestartTrace:
    """Objective values at accepted iterates plus the termination reason."""

    objective_history: list[float]
    iterations: int
    reason: str

    @property
    def final_objective(self) -> float:
        return self.objective_history[-1]


@dataclass
class ControlResult:
    gate_index: int
    input: np.ndarray  # best normalized amplitudes, (10,)
    emulator_fidelity: float
    restarts: list[RestartTrace]
    verified_fidelity: float | None = None


def objective(params: ModelParameters, gate_index: int, x: np.ndarray) -> tuple[float, np.ndarray]:
    """Infidelity J = 1 - F_gate and its gradient w.r.t. the 10 inputs."""
    trace = forward(params, np.asarray(x, dtype=float), mode="eval")
    direction = np.zeros(6)
    direction[gate_index] = 1.0
    _, input_grad = backward(trace, direction, with_input_grad=True)
    J = 1.0 - float(trace.fidelities_batch[0, gate_index])
    return J, -input_grad


def _lbfgs(fun, x0: np.ndarray, max_iter: int, grad_tol: float, memory: int) -> tuple[np.ndarray, RestartTrace]:
    """L-BFGS two-loop recursion with scipy's strong-Wolfe line search."""
    x = np.asarray(x0, dtype=float)
    f, g = fun(x)
    history: list[float] = [f]
    s_list: list[np.ndarray] = []
    y_list: list[np.ndarray] = []
    rho_list: list[float] = []
    reason = "max_iterations"
    iterations = 0

    for it in range(max_iter):
        if np.max(np.abs(g)) <= grad_tol:
            reason = "gradient_tolerance"
            break
        # two-loop recursion for d = -H g
        d = -g.copy()
        alphas = []
        for s, y, rho in zip(reversed(s_list), reversed(y_list), reversed(rho_list)):
            a = rho * (s @ d)
            alphas.append(a)
            d -= a * y
        if y_list:
            d *= (s_list[-1] @ y_list[-1]) / (y_list[-1] @ y_list[-1])
        for (s, y, rho), a in zip(zip(s_list, y_list, rho_list), reversed(alphas)):
            b = rho * (y @ d)
            d += (a - b) * s
        if d @ g >= 0:  # safeguard: fall back to steepest descent
            d = -g.copy()
            s_list, y_list, rho_list = [], [], []

        with warnings.catch_warnings():
            warnings.simplefilter("ignore", LineSearchWarning)
            alpha, _, _, f_new, _, _ = line_search(
                lambda z: fun(z)[0],
                lambda z: fun(z)[1],
                x,
                d,
                gfk=g,
                old_fval=f,
                maxiter=30,
            )
        if alpha is None:
            reason = "line_search_failure"
            break
        x_new = x + alpha * d
        g_new = fun(x_new)[1]
        s = x_new - x
        y = g_new - g
        if s @ y > 1e-12:
            s_list.append(s)
            y_list.append(y)
            rho_list.append(1.0 / (s @ y))
            if len(s_list) > memory:
                s_list.pop(0)
                y_list.pop(0)
                rho_list.pop(0)
        x, f, g = x_new, float(f_new), g_new
        history.append(f)
        iterations = it + 1

    return x, RestartTrace(history, iterations, reason)


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def optimize(problem: ControlProblem, seed: int) -> ControlResult:
    """Multi-start L-BFGS in the unconstrained sigmoid coordinates.

    Restart r draws its initial point from the stream (seed, r); the best
    final objective wins. Restarts whose very first evaluation is non-finite
    are skipped; if every restart fails this way a ControlError is raised.
    """

    cache: dict[bytes, tuple[float, np.ndarray]] = {}

    def wrapped(z):
        key = np.asarray(z, dtype=float).tobytes()
        if key not in cache:
            x = _sigmoid(z)
            J, gx = objective(problem.params, problem.gate_index, x)
            if len(cache) > 64:
                cache.clear()
            cache[key] = (J, gx * x * (1.0 - x))
        return cache[key]

    traces: list[RestartTrace] = []
    best = None
    for r in range(problem.restarts):
        x0 = derive_rng(seed, r).uniform(0.0, 1.0, size=10)
        x0 = np.clip(x0, 1e-3, 1.0 - 1e-3)
        z0 = np.log(x0 / (1.0 - x0))
        try:
            z_star, trace = _lbfgs(
                wrapped, z0, problem.max_iterations, problem.grad_tol, problem.memory
            )
        except NonFiniteActivation as exc:
            traces.append(RestartTrace([np.inf], 0, f"error:{exc.layer}"))
            continue
        traces.append(trace)
        if best is None or trace.final_objective < best[1]:
            best = (_sigmoid(z_star), trace.final_objective)
    if best is None:
        raise ControlError("every restart failed before the first step")
    return ControlResult(
        gate_index=problem.gate_index,
        input=best[0],
        emulator_fidelity=1.0 - best[1],
        restarts=traces,
    )


def optimize_and_verify(problem: ControlProblem, sim_config: SimConfig, seed: int) -> ControlResult:
    """Optimize on the emulator, then verify with the Monte-Carlo simulator."""
    result = optimize(problem, seed)
    verified = simulate_gate_fidelity(
        denormalize(result.input), sim_config, problem.gate_index
    )
    return replace(result, verified_fidelity=verified)
