"""scikit-learn style estimator wrapping the graybox model.

X rows are the 10 normalized pulse amplitudes in [0, 1]; y rows are the six
gate fidelities. `fit` runs the full training loop, `predict` evaluates the
trained model, and hyperparameters follow sklearn get_params/set_params
conventions so the estimator composes with pipelines and model selection.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .blackbox import ModelConfig, forward
from .pulses import A_MAX, N_PULSES
from .training import TrainConfig, train
from .whitebox import control_unitary_batch

__all__ = ["GrayboxRegressor", "validate_normalized_inputs"]


def validate_normalized_inputs(X, allow_1d: bool = False) -> np.ndarray:
    """check_array plus the [0, 1] range constraint of normalized amplitudes."""
    X = check_array(np.atleast_2d(X) if allow_1d else X, dtype=float)
    if X.shape[1] != 2 * N_PULSES:
        raise ValueError(f"expected {2 * N_PULSES} features, got {X.shape[1]}")
    if X.min() < -1e-9 or X.max() > 1 + 1e-9:
        raise ValueError("normalized pulse amplitudes must lie in [0, 1]")
    return X


class GrayboxRegressor(BaseEstimator, RegressorMixin):
    """Physics-constrained regressor from pulse amplitudes to gate fidelities.

    Parameters mirror ModelConfig and TrainConfig; `random_state` seeds
    initialization, batch order, dropout and the train/test split, making
    fit deterministic.
    """

    def __init__(
        self,
        d_model: int = 32,
        n_heads: int = 2,
        ff_dim: int = 64,
        dropout_rate: float = 0.1,
        branch_hidden: tuple[int, int] = (32, 16),
        refine_hidden: int = 32,
        whitebox_steps: int = 2000,
        batch_size: int = 64,
        epochs: int = 200,
        peak_lr: float = 1e-3,
        warmup_fraction: float = 0.1,
        split_ratio: float = 0.8,
        random_state: int = 0,
    ):
        self.d_model = d_model
        self.n_heads = n_heads
        self.ff_dim = ff_dim
        self.dropout_rate = dropout_rate
        self.branch_hidden = branch_hidden
        self.refine_hidden = refine_hidden
        self.whitebox_steps = whitebox_steps
        self.batch_size = batch_size
        self.epochs = epochs
        self.peak_lr = peak_lr
        self.warmup_fraction = warmup_fraction
        self.split_ratio = split_ratio
        self.random_state = random_state

    def _model_config(self) -> ModelConfig:
        return ModelConfig(
            d_model=self.d_model,
            n_heads=self.n_heads,
            ff_dim=self.ff_dim,
            dropout_rate=self.dropout_rate,
            branch_hidden=tuple(self.branch_hidden),
            refine_hidden=self.refine_hidden,
            whitebox_steps=self.whitebox_steps,
        )

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size,
            epochs=self.epochs,
            peak_lr=self.peak_lr,
            warmup_fraction=self.warmup_fraction,
            split_ratio=self.split_ratio,
            shuffle_seed=self.random_state,
        )

    def fit(self, X, y):
        X, y = check_X_y(X, y, multi_output=True, dtype=float)
        X = validate_normalized_inputs(X)
        if y.ndim != 2 or y.shape[1] != 6:
            raise ValueError(f"y must have shape (n, 6), got {y.shape}")
        self.params_, self.metrics_ = train(
            (X, y), self._model_config(), self._train_config(), seed=self.random_state
        )
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        X = validate_normalized_inputs(X)
        amplitudes = X.reshape(len(X), 2, N_PULSES) * (2.0 * A_MAX) - A_MAX
        u = control_unitary_batch(amplitudes, self.params_.config.whitebox_steps)
        return forward(self.params_, X, mode="eval", u_ctrl=u).fidelities_batch
