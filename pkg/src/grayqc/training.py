"""Supervised training of the graybox: summed per-gate MSE loss, Adam with
linear warmup and cosine decay, deterministic 80:20 split, per-gate metrics.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .blackbox import ModelConfig, ModelParameters, backward, forward
from .noise import derive_rng
from .pulses import A_MAX, N_PULSES
from .simulator import DatasetRecord
from .whitebox import control_unitary_batch

__all__ = [
    "TrainConfig",
    "Metrics",
    "TrainingDiverged",
    "loss",
    "loss_and_grad",
    "lr_schedule",
    "AdamState",
    "adam_step",
    "split_indices",
    "train",
]


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and schedule settings."""

    batch_size: int = 64
    epochs: int = 200
    peak_lr: float = 1e-3
    warmup_fraction: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    split_ratio: float = 0.8
    shuffle_seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.split_ratio < 1.0:
            raise ValueError(f"split_ratio must lie in (0, 1), got {self.split_ratio}")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ValueError(
                f"warmup_fraction must lie in [0, 1), got {self.warmup_fraction}"
            )
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")


@dataclass
class Metrics:
    """Per-gate train/test MSE plus the aggregate prediction error."""

    train_mse: np.ndarray  # (6,)
    test_mse: np.ndarray  # (6,)
    prediction_error: float  # sqrt(mean test MSE over gates)
    loss_history: list[float]
    n_train: int
    n_test: int
    seed: int
    shuffle_seed: int

    def to_dict(self) -> dict:
        return {
            "train_mse": [float(v) for v in self.train_mse],
            "test_mse": [float(v) for v in self.test_mse],
            "prediction_error": float(self.prediction_error),
            "loss_history": [float(v) for v in self.loss_history],
            "n_train": self.n_train,
            "n_test": self.n_test,
            "seed": self.seed,
            "shuffle_seed": self.shuffle_seed,
        }


class TrainingDiverged(RuntimeError):
    """Raised on NaN loss; carries the last finite parameters."""

    def __init__(self, epoch: int, step: int, parameters: ModelParameters):
        super().__init__(f"loss became non-finite at epoch {epoch}, step {step}")
        self.epoch = epoch
        self.step = step
        self.parameters = parameters


def loss(predicted: np.ndarray, label: np.ndarray) -> float:
    """Sum over gates of the per-gate batch-mean squared error."""
    predicted = np.atleast_2d(predicted)
    label = np.atleast_2d(label)
    return float(((predicted - label) ** 2).mean(axis=0).sum())


def loss_and_grad(predicted: np.ndarray, label: np.ndarray) -> tuple[float, np.ndarray]:
    predicted = np.atleast_2d(predicted)
    label = np.atleast_2d(label)
    diff = predicted - label
    return float((diff**2).mean(axis=0).sum()), 2.0 * diff / diff.shape[0]


def lr_schedule(step: int, total_steps: int, config: TrainConfig) -> float:
    """Linear ramp to peak_lr over the warmup steps, then cosine decay to 0."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    warmup = config.warmup_fraction * total_steps
    if warmup > 0 and step < warmup:
        return config.peak_lr * step / warmup
    denom = max(total_steps - warmup, 1e-12)
    progress = (step - warmup) / denom
    return config.peak_lr * 0.5 * (1.0 + np.cos(np.pi * progress))


@dataclass
class AdamState:
    """First/second moment accumulators for a flat parameter vector."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def initialize(cls, n_params: int, config: TrainConfig | None = None) -> "AdamState":
        cfg = config or TrainConfig()
        return cls(
            m=np.zeros(n_params),
            v=np.zeros(n_params),
            beta1=cfg.beta1,
            beta2=cfg.beta2,
            epsilon=cfg.epsilon,
        )


def adam_step(
    params: np.ndarray, grads: np.ndarray, state: AdamState, lr: float
) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update on flat vectors."""
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValueError("params, grads and state must have matching shapes")
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    v = state.beta2 * state.v + (1.0 - state.beta2) * grads**2
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_params = params - lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return new_params, AdamState(m, v, t, state.beta1, state.beta2, state.epsilon)


def split_indices(n: int, split_ratio: float, shuffle_seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic disjoint and exhaustive train/test index split."""
    perm = derive_rng(shuffle_seed, 0xD5).permutation(n)
    n_train = int(round(split_ratio * n))
    n_train = min(max(n_train, 1), n - 1) if n >= 2 else n
    return perm[:n_train], perm[n_train:]


def _as_arrays(dataset) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(dataset, tuple) and len(dataset) == 2:
        X, y = np.asarray(dataset[0], dtype=float), np.asarray(dataset[1], dtype=float)
    else:
        records: Sequence[DatasetRecord] = list(dataset)
        X = np.array([r.normalized_input for r in records])
        y = np.array([r.fidelities for r in records])
    if X.ndim != 2 or X.shape[1] != 2 * N_PULSES:
        raise ValueError(f"inputs must have shape (n, {2 * N_PULSES}), got {X.shape}")
    if y.shape != (X.shape[0], 6):
        raise ValueError(f"labels must have shape ({X.shape[0]}, 6), got {y.shape}")
    if X.shape[0] == 0:
        raise ValueError("dataset is empty")
    return X, y


def _gate_mse(params, X, y, u_cache) -> np.ndarray:
    pred = forward(params, X, mode="eval", u_ctrl=u_cache).fidelities_batch
    return ((pred - y) ** 2).mean(axis=0)


def train(
    dataset, model_config: ModelConfig, train_config: TrainConfig, seed: int
) -> tuple[ModelParameters, Metrics]:
    """Mini-batch Adam training; deterministic given (dataset, seeds, configs).

    The control unitaries depend only on the inputs, so they are computed
    once per record and cached across epochs. Loss history records the
    eval-mode loss on the training split after every epoch.
    """
    X, y = _as_arrays(dataset)
    n = X.shape[0]
    amplitudes = X.reshape(n, 2, N_PULSES) * (2.0 * A_MAX) - A_MAX
    u_cache = control_unitary_batch(amplitudes, model_config.whitebox_steps)

    train_idx, test_idx = split_indices(n, train_config.split_ratio, train_config.shuffle_seed)
    X_tr, y_tr, u_tr = X[train_idx], y[train_idx], u_cache[train_idx]
    X_te, y_te, u_te = X[test_idx], y[test_idx], u_cache[test_idx]

    params = ModelParameters.initialize(model_config, derive_rng(seed, 0))
    flat = params.to_flat()
    state = AdamState.initialize(flat.size, train_config)
    order_rng = derive_rng(seed, 1)
    dropout_rng = derive_rng(seed, 2)

    n_train = X_tr.shape[0]
    batches_per_epoch = max(1, int(np.ceil(n_train / train_config.batch_size)))
    total_steps = train_config.epochs * batches_per_epoch
    step = 0
    loss_history: list[float] = []
    last_good = ModelParameters.from_flat(model_config, flat)

    for epoch in range(train_config.epochs):
        perm = order_rng.permutation(n_train)
        for start in range(0, n_train, train_config.batch_size):
            idx = perm[start : start + train_config.batch_size]
            trace = forward(
                params, X_tr[idx], mode="train", seed=dropout_rng, u_ctrl=u_tr[idx]
            )
            value, grad_f = loss_and_grad(trace.fidelities_batch, y_tr[idx])
            if not np.isfinite(value):
                raise TrainingDiverged(epoch, step, last_good)
            grad_flat, _ = backward(trace, grad_f, with_input_grad=False)
            lr = lr_schedule(step, total_steps, train_config)
            flat, state = adam_step(flat, grad_flat, state, lr)
            params = ModelParameters.from_flat(model_config, flat)
            step += 1
        epoch_loss = loss(
            forward(params, X_tr, mode="eval", u_ctrl=u_tr).fidelities_batch, y_tr
        )
        if not np.isfinite(epoch_loss):
            raise TrainingDiverged(epoch, step, last_good)
        loss_history.append(epoch_loss)
        last_good = ModelParameters.from_flat(model_config, flat)

    metrics = Metrics(
        train_mse=_gate_mse(params, X_tr, y_tr, u_tr),
        test_mse=_gate_mse(params, X_te, y_te, u_te),
        prediction_error=0.0,
        loss_history=loss_history,
        n_train=int(n_train),
        n_test=int(X_te.shape[0]),
        seed=int(seed),
        shuffle_seed=int(train_config.shuffle_seed),
    )
    metrics.prediction_error = float(np.sqrt(metrics.test_mse.mean()))
    return params, metrics
