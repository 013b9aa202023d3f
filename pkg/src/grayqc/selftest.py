"""Release-gate oracle suite: fast statistical and algebraic checks that the
core physics and gradients are sound. Run via `grayqc selftest`.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import whitebox
from .blackbox import ModelConfig, ModelParameters, backward, forward
from .noise import (
    OU,
    RTN,
    TimeGrid,
    analytic_free_coherence,
    match_spectrum,
    sample_ensemble,
)
from .pulses import PulseTrain, random_train
from .simulator import SimConfig, expectations_mc
from .su2 import step_exponential

__all__ = ["CheckResult", "run_all"]

_N_TRAJ = 20_000


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def _ensemble_coherence(model, g: float, grid: TimeGrid, n: int, seed: int) -> tuple[float, float]:
    """Mean and standard error of cos(2 g int beta dt) over n trajectories."""
    phases = np.empty(n)
    chunk = 5000
    for start in range(0, n, chunk):
        m = min(chunk, n - start)
        betas = sample_ensemble(model, grid, m, seed, start=start)
        phases[start : start + m] = 2.0 * g * betas.sum(axis=1) * grid.dt
    vals = np.cos(phases)
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(n))


def _check_rtn_autocorrelation(seed=1001) -> tuple[bool, str]:
    gamma = 1.0
    grid = TimeGrid(3.2, 320)
    lags_us = [0.1, 0.5, 1.0]
    vals = np.empty((_N_TRAJ, 1 + len(lags_us)))
    cols = [0] + [int(round(tau / grid.dt)) for tau in lags_us]
    for start in range(0, _N_TRAJ, 5000):
        m = min(5000, _N_TRAJ - start)
        betas = sample_ensemble(RTN(gamma), grid, m, seed, start=start)
        vals[start : start + m] = betas[:, cols]
    msgs = []
    ok = True
    for j, tau in enumerate(lags_us):
        prod = vals[:, 0] * vals[:, 1 + j]
        mean = prod.mean()
        se = prod.std(ddof=1) / np.sqrt(_N_TRAJ)
        expect = np.exp(-2.0 * gamma * (cols[1 + j] * grid.dt))
        dev = abs(mean - expect) / se
        ok &= dev <= 3.0
        msgs.append(f"tau={tau}: {dev:.2f} sigma")
    return ok, "; ".join(msgs)


def _check_ou_statistics(seed=1002) -> tuple[bool, str]:
    k, D = 2.0, 4.0
    grid = TimeGrid(3.2, 320)
    betas = np.concatenate(
        [sample_ensemble(OU(k, D), grid, 5000, seed, start=s) for s in range(0, _N_TRAJ, 5000)]
    )
    var = betas[:, 0].var(ddof=1)
    se_var = np.sqrt(2.0 / (_N_TRAJ - 1)) * (D / (2 * k))
    ok = abs(var - D / (2 * k)) <= 3.0 * se_var
    msgs = [f"var: {abs(var - 1.0) / se_var:.2f} sigma"]
    for tau in (0.25, 0.5):
        lag = int(round(tau / grid.dt))
        prod = betas[:, 0] * betas[:, lag]
        dev = abs(prod.mean() - (D / (2 * k)) * np.exp(-k * lag * grid.dt))
        dev /= prod.std(ddof=1) / np.sqrt(_N_TRAJ)
        ok &= dev <= 3.0
        msgs.append(f"tau={tau}: {dev:.2f} sigma")
    return ok, "; ".join(msgs)


def _check_coherence_oracles(seed=1003) -> tuple[bool, str]:
    grid = TimeGrid(3.2, 320)
    k, D = match_spectrum(1.0)
    msgs = []
    ok = True
    for model in (RTN(1.0), OU(k, D)):
        for g in (0.1, 0.5):
            mc, se = _ensemble_coherence(model, g, grid, _N_TRAJ, seed)
            pred = analytic_free_coherence(model, g, grid.t_end)
            dev = abs(mc - pred) / se
            ok &= dev <= 3.0
            msgs.append(f"{type(model).__name__} g={g}: {dev:.2f} sigma")
    return ok, "; ".join(msgs)


def _check_unitarity(seed=1004) -> tuple[bool, str]:
    from .noise import derive_rng, sample_trajectory

    rng = derive_rng(seed)
    grid = TimeGrid(3.2, 400)
    worst = 0.0
    from .simulator import evolve

    for i in range(200):
        train = random_train(derive_rng(seed, i, 0))
        beta = sample_trajectory(RTN(1.0), grid, derive_rng(seed, i, 1))
        U = evolve(train, beta, rng.uniform(0, 0.5), grid)
        worst = max(worst, np.abs(U.conj().T @ U - np.eye(2)).max())
    return worst < 1e-10, f"max |U^dag U - I| = {worst:.2e}"


def _check_step_vs_taylor(seed=1005) -> tuple[bool, str]:
    from .noise import derive_rng

    rng = derive_rng(seed)
    from .su2 import PAULIS

    worst = 0.0
    for _ in range(50):
        # keep |h| dt below ~1 rad so the truncated series is itself 1e-10 accurate
        h = rng.uniform(-10, 10, 3)
        dt = rng.uniform(0.001, 0.05)
        A = -1j * dt * (h[0] * PAULIS[1] + h[1] * PAULIS[2] + h[2] * PAULIS[3])
        term = np.eye(2, dtype=complex)
        total = np.eye(2, dtype=complex)
        for n in range(1, 13):
            term = term @ A / n
            total += term
        worst = max(worst, np.abs(step_exponential(h[0], h[1], h[2], dt) - total).max())
    return worst < 1e-10, f"max |step - taylor12| = {worst:.2e}"


def _check_chi_round_trip(seed=1006) -> tuple[bool, str]:
    """Noiseless V_O -> expectations -> chi must recover each random unitary."""
    from .noise import derive_rng

    rng = derive_rng(seed)
    worst = 0.0
    for _ in range(100):
        z = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
        q, r = np.linalg.qr(z)
        U = q * (np.diag(r) / np.abs(np.diag(r)))
        E = np.empty((6, 3))
        for o in range(3):
            vo = whitebox.assemble_vo(whitebox.noiseless_vo_params(o), o)
            for p in range(6):
                E[p, o] = whitebox.expectation(vo, U, p, o)
        chi = whitebox.reconstruct_chi(E)
        g = np.einsum("mij,ji->m", whitebox.PAULIS, U) / 2.0
        chi_u = np.outer(g, g.conj())
        f = float(np.trace(chi.conj().T @ chi_u).real)
        worst = max(worst, abs(f - 1.0))
    return worst < 1e-9, f"max |F - 1| = {worst:.2e}"


def _check_vo_noiseless(seed=0) -> tuple[bool, str]:
    worst = 0.0
    for o in range(3):
        vo = whitebox.assemble_vo(whitebox.noiseless_vo_params(o), o)
        worst = max(worst, np.abs(vo - np.eye(2)).max())
    return worst < 1e-12, f"max |V_O - I| = {worst:.2e}"


def _check_gradients(seed=1007) -> tuple[bool, str]:
    from .noise import derive_rng

    cfg = ModelConfig(
        d_model=8, n_heads=2, ff_dim=16, branch_hidden=(8, 4), refine_hidden=8, whitebox_steps=200
    )
    rng = derive_rng(seed)
    worst = 0.0
    for point in range(3):
        params = ModelParameters.initialize(cfg, derive_rng(seed, point))
        for g in range(6):
            params.arrays[f"refine_{g}_w2"] = rng.normal(0, 0.05, (cfg.refine_hidden, 18))
        x = rng.uniform(0.05, 0.95, 10)
        w = rng.standard_normal(6)
        trace = forward(params, x, mode="eval")
        grad, input_grad = backward(trace, w, with_input_grad=True)
        flat = params.to_flat()
        h = 1e-5

        def loss_at(vec=None, xv=None):
            p = params if vec is None else ModelParameters.from_flat(cfg, vec)
            return float(w @ forward(p, x if xv is None else xv, mode="eval").fidelities_batch[0])

        for i in rng.choice(flat.size, 40, replace=False):
            up, dn = flat.copy(), flat.copy()
            up[i] += h
            dn[i] -= h
            fd = (loss_at(up) - loss_at(dn)) / (2 * h)
            worst = max(worst, abs(fd - grad[i]) / max(1e-8, abs(fd), abs(grad[i])))
        for j in range(10):
            xp, xm = x.copy(), x.copy()
            xp[j] += h
            xm[j] -= h
            fd = (loss_at(xv=xp) - loss_at(xv=xm)) / (2 * h)
            worst = max(worst, abs(fd - input_grad[j]) / max(1e-8, abs(fd), abs(input_grad[j])))
    return worst < 1e-5, f"max rel grad error = {worst:.2e}"


def _check_mc_vs_analytic(seed=1008) -> tuple[bool, str]:
    """Full simulator path (zero controls) against the analytic oracle."""
    zero = PulseTrain(np.zeros((2, 5)))
    cfg = SimConfig(RTN(1.0), 0.5, seed=seed, grid=TimeGrid(3.2, 1000), realizations=2000)
    E = expectations_mc(zero, cfg)
    pred = analytic_free_coherence(RTN(1.0), 0.5, 3.2)
    # MC standard error bound: per-trajectory values lie in [-1, 1]
    se = 1.0 / np.sqrt(cfg.realizations)
    dev = abs(E[0, 0] - pred) / se
    return dev <= 3.0, f"free-decay <sx>: {dev:.2f} sigma (bound)"


_CHECKS = [
    ("rtn_autocorrelation", _check_rtn_autocorrelation),
    ("ou_statistics", _check_ou_statistics),
    ("coherence_analytic_vs_mc", _check_coherence_oracles),
    ("simulator_vs_analytic", _check_mc_vs_analytic),
    ("unitarity", _check_unitarity),
    ("step_vs_taylor", _check_step_vs_taylor),
    ("chi_round_trip", _check_chi_round_trip),
    ("vo_noiseless_identity", _check_vo_noiseless),
    ("gradient_check", _check_gradients),
]


def run_all(verbose: bool = True) -> list[CheckResult]:
    results = []
    for name, fn in _CHECKS:
        t0 = time.time()
        try:
            passed, detail = fn()
        except Exception as exc:  # a crash is a failure, not an abort
            passed, detail = False, f"exception: {exc!r}"
        res = CheckResult(name, passed, detail, time.time() - t0)
        results.append(res)
        if verbose:
            status = "PASS" if res.passed else "FAIL"
            print(f"[{status}] {name:28s} {res.seconds:6.1f}s  {detail}")
    return results
