"""Trainable graybox model: a small transformer encoder mapping the 10
normalized pulse amplitudes to three V_O parameter sets (one per Pauli
observable) plus six per-gate refinement heads, composed with the whitebox
layers into a single differentiable map from pulses to six gate fidelities.

Forward and reverse passes are written directly in numpy; the ForwardTrace
caches every intermediate needed for exact reverse-mode gradients with
respect to all parameters and, optionally, the 10 inputs (the latter chains
through the control-unitary product as well).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import erf

from .pulses import A_MAX, N_PULSES, PulseTrain
from .whitebox import (
    VOParams,
    control_unitary_adjoint,
    control_unitary_batch,
    expectation_grid,
    expectation_grid_adjoint,
    fidelity_affine_maps,
    vo_closed_form,
)

__all__ = [
    "ModelConfig",
    "ModelParameters",
    "ForwardTrace",
    "NonFiniteActivation",
    "tokenize",
    "attention",
    "forward",
    "backward",
    "save_checkpoint",
    "load_checkpoint",
]

N_TOKENS = N_PULSES
TOKEN_FEATURES = 4
_TOKEN_POS = (np.arange(N_TOKENS) + 1.0) / (N_TOKENS + 1.0)  # tau_k / T
_TOKEN_WIDTH = 1.0 / (12.0 * N_TOKENS)  # sigma / T
_OBS = ("x", "y", "z")
_LN_EPS = 1e-12

_FID_W, _FID_C = fidelity_affine_maps()


class NonFiniteActivation(RuntimeError):
    """Raised when a forward pass produces NaN/Inf; carries the layer name."""

    def __init__(self, layer: str):
        super().__init__(f"non-finite activation in layer '{layer}'")
        self.layer = layer


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters of the blackbox."""

    d_model: int = 32
    n_heads: int = 2
    ff_dim: int = 64
    dropout_rate: float = 0.1
    branch_hidden: tuple[int, int] = (32, 16)
    refine_hidden: int = 32
    whitebox_steps: int = 2000

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model {self.d_model} must be divisible by n_heads {self.n_heads}"
            )
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.ff_dim < 1 or self.refine_hidden < 1 or self.whitebox_steps < 1:
            raise ValueError("ff_dim, refine_hidden and whitebox_steps must be positive")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads


def parameter_layout(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Canonical (name, shape) list; fixes the flat-vector ordering."""
    d, f = config.d_model, config.ff_dim
    h1, h2 = config.branch_hidden
    rh = config.refine_hidden
    layout = [
        ("proj_w", (TOKEN_FEATURES, d)),
        ("proj_b", (d,)),
        ("attn_wq", (d, d)),
        ("attn_bq", (d,)),
        ("attn_wk", (d, d)),
        ("attn_bk", (d,)),
        ("attn_wv", (d, d)),
        ("attn_bv", (d,)),
        ("attn_wo", (d, d)),
        ("attn_bo", (d,)),
        ("ffn_w1", (d, f)),
        ("ffn_b1", (f,)),
        ("ffn_w2", (f, d)),
        ("ffn_b2", (d,)),
        ("ln1_g", (d,)),
        ("ln1_b", (d,)),
        ("ln2_g", (d,)),
        ("ln2_b", (d,)),
    ]
    for o in _OBS:
        layout += [
            (f"branch_{o}_w1", (d, h1)),
            (f"branch_{o}_b1", (h1,)),
            (f"branch_{o}_w2", (h1, h2)),
            (f"branch_{o}_b2", (h2,)),
            (f"branch_{o}_w_ang", (h2, 3)),
            (f"branch_{o}_b_ang", (3,)),
            (f"branch_{o}_w_mu", (h2, 1)),
            (f"branch_{o}_b_mu", (1,)),
        ]
    for g in range(6):
        layout += [
            (f"refine_{g}_w1", (18, rh)),
            (f"refine_{g}_b1", (rh,)),
            (f"refine_{g}_w2", (rh, 18)),
            (f"refine_{g}_b2", (18,)),
        ]
    return layout


def parameter_count(config: ModelConfig) -> int:
    return sum(int(np.prod(shape)) for _, shape in parameter_layout(config))


@dataclass
class ModelParameters:
    """All trainable weights, with a canonical flat-vector view."""

    config: ModelConfig
    arrays: dict[str, np.ndarray]

    @classmethod
    def initialize(cls, config: ModelConfig, seed) -> "ModelParameters":
        """Glorot-uniform weights, zero biases, unit layer-norm gains.

        The final layer of every refinement head is zero-initialized so the
        untrained heads are exact identities and the model starts from the
        pure whitebox prediction.
        """
        from .noise import derive_rng

        rng = derive_rng(seed)
        arrays = {}
        for name, shape in parameter_layout(config):
            if name.endswith(("_g",)) and len(shape) == 1:
                arrays[name] = np.ones(shape)
            elif len(shape) == 1:
                arrays[name] = np.zeros(shape)
            elif name.startswith("refine_") and name.endswith("_w2"):
                arrays[name] = np.zeros(shape)
            else:
                limit = np.sqrt(6.0 / (shape[0] + shape[1]))
                arrays[name] = rng.uniform(-limit, limit, size=shape)
        return cls(config, arrays)

    @classmethod
    def zeros(cls, config: ModelConfig) -> "ModelParameters":
        return cls(config, {n: np.zeros(s) for n, s in parameter_layout(config)})

    def to_flat(self) -> np.ndarray:
        return np.concatenate(
            [self.arrays[name].ravel() for name, _ in parameter_layout(self.config)]
        )

    @classmethod
    def from_flat(cls, config: ModelConfig, flat: np.ndarray) -> "ModelParameters":
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (parameter_count(config),):
            raise ValueError(
                f"flat vector has {flat.shape}, expected ({parameter_count(config)},)"
            )
        arrays = {}
        offset = 0
        for name, shape in parameter_layout(config):
            size = int(np.prod(shape))
            arrays[name] = flat[offset : offset + size].reshape(shape).copy()
            offset += size
        return cls(config, arrays)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]


def tokenize(x: np.ndarray) -> np.ndarray:
    """(…, 10) normalized inputs -> (…, 5, 4) tokens.

    Token k carries (A_bar_{k,x}, A_bar_{k,y}, tau_k/T, sigma/T); the last
    two features are fixed experiment constants.
    """
    x = np.asarray(x, dtype=float)
    tokens = np.empty(x.shape[:-1] + (N_TOKENS, TOKEN_FEATURES))
    tokens[..., 0] = x[..., :N_TOKENS]
    tokens[..., 1] = x[..., N_TOKENS:]
    tokens[..., 2] = _TOKEN_POS
    tokens[..., 3] = _TOKEN_WIDTH
    return tokens


def _softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def attention(q: np.ndarray, k: np.ndarray, v: np.ndarray, scale: float) -> np.ndarray:
    """Scaled dot-product attention softmax(q k^T * scale) v (row-wise)."""
    return _softmax(q @ np.swapaxes(k, -1, -2) * scale) @ v


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def _gelu_grad(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + erf(x / np.sqrt(2.0))) + x * np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)


def _layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray):
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = (x - mean) * inv
    return xhat * gain + bias, xhat, inv


def _layer_norm_backward(y_bar, xhat, inv, gain):
    dxhat = y_bar * gain
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    g_grad = (y_bar * xhat).reshape(-1, xhat.shape[-1]).sum(axis=0)
    b_grad = y_bar.reshape(-1, xhat.shape[-1]).sum(axis=0)
    return dx, g_grad, b_grad


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    B, n, d = x.shape
    return x.reshape(B, n, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    B, H, n, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, n, H * dh)


@dataclass
class ForwardTrace:
    """Cached activations of one forward pass (batch-first shapes)."""

    config: ModelConfig
    params: ModelParameters
    x: np.ndarray  # (B, 10)
    mode: str
    u_ctrl: np.ndarray  # (B, 2, 2)
    tokens: np.ndarray
    proj: np.ndarray
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    att: np.ndarray
    merged: np.ndarray
    res1: np.ndarray
    xhat1: np.ndarray
    inv1: np.ndarray
    y1: np.ndarray
    ffn_a1: np.ndarray
    ffn_h1: np.ndarray
    res2: np.ndarray
    xhat2: np.ndarray
    inv2: np.ndarray
    y2: np.ndarray
    pooled: np.ndarray
    dropout_mask: np.ndarray | None
    pooled_d: np.ndarray
    branch: dict
    vo: np.ndarray  # (B, 3, 2, 2)
    vo_partials: np.ndarray  # (B, 3, 3, 2, 2) ordered (mu, theta, psi)
    raw_flat: np.ndarray  # (B, 18)
    refine: dict
    refined: np.ndarray  # (B, 6, 18)
    fid_pre: np.ndarray  # (B, 6)
    fidelities_batch: np.ndarray  # (B, 6)

    @property
    def batch_size(self) -> int:
        return self.x.shape[0]

    @property
    def fidelities(self) -> np.ndarray:
        """(6,) for a single sample, (B, 6) otherwise."""
        return self.fidelities_batch[0] if self.batch_size == 1 else self.fidelities_batch

    @property
    def raw_expectations(self) -> np.ndarray:
        out = self.raw_flat.reshape(-1, 6, 3)
        return out[0] if self.batch_size == 1 else out

    @property
    def refined_expectations(self) -> np.ndarray:
        out = self.refined.reshape(-1, 6, 6, 3)
        return out[0] if self.batch_size == 1 else out

    @property
    def vo_params(self) -> list[VOParams] | list[list[VOParams]]:
        per_sample = [
            [
                VOParams(
                    float(self.branch["mu"][b, o]),
                    float(self.branch["theta"][b, o]),
                    float(self.branch["psi"][b, o]),
                    float(self.branch["delta"][b, o]),
                )
                for o in range(3)
            ]
            for b in range(self.batch_size)
        ]
        return per_sample[0] if self.batch_size == 1 else per_sample


def _check_finite(name: str, *arrays: np.ndarray):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFiniteActivation(name)


def forward(
    params: ModelParameters,
    x: np.ndarray,
    mode: str = "eval",
    seed=0,
    u_ctrl: np.ndarray | None = None,
) -> ForwardTrace:
    """Run the graybox model on one input (10,) or a batch (B, 10).

    In eval mode the pass is deterministic; in train mode the dropout mask is
    derived from `seed`. `u_ctrl` may supply precomputed control unitaries
    (they depend only on the inputs, so training caches them per record).
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    cfg = params.config
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != 2 * N_PULSES:
        raise ValueError(f"input must have {2 * N_PULSES} features, got {x.shape[1]}")
    B = x.shape[0]
    p = params.arrays

    tokens = tokenize(x)
    proj = tokens @ p["proj_w"] + p["proj_b"]

    q = _split_heads(proj @ p["attn_wq"] + p["attn_bq"], cfg.n_heads)
    k = _split_heads(proj @ p["attn_wk"] + p["attn_bk"], cfg.n_heads)
    v = _split_heads(proj @ p["attn_wv"] + p["attn_bv"], cfg.n_heads)
    att = _softmax(q @ np.swapaxes(k, -1, -2) / np.sqrt(cfg.head_dim))
    merged = _merge_heads(att @ v)
    mha = merged @ p["attn_wo"] + p["attn_bo"]

    res1 = proj + mha
    y1, xhat1, inv1 = _layer_norm(res1, p["ln1_g"], p["ln1_b"])
    ffn_a1 = y1 @ p["ffn_w1"] + p["ffn_b1"]
    ffn_h1 = _gelu(ffn_a1)
    res2 = y1 + (ffn_h1 @ p["ffn_w2"] + p["ffn_b2"])
    y2, xhat2, inv2 = _layer_norm(res2, p["ln2_g"], p["ln2_b"])

    pooled = y2.mean(axis=1)
    _check_finite("encoder", pooled)
    if mode == "train" and cfg.dropout_rate > 0.0:
        from .noise import derive_rng

        rng = derive_rng(seed) if not isinstance(seed, np.random.Generator) else seed
        keep = 1.0 - cfg.dropout_rate
        dropout_mask = (rng.random(pooled.shape) < keep) / keep
        pooled_d = pooled * dropout_mask
    else:
        dropout_mask = None
        pooled_d = pooled

    branch = {
        "a1": np.empty((B, 3, cfg.branch_hidden[0])),
        "h1": np.empty((B, 3, cfg.branch_hidden[0])),
        "a2": np.empty((B, 3, cfg.branch_hidden[1])),
        "h2": np.empty((B, 3, cfg.branch_hidden[1])),
        "mu": np.empty((B, 3)),
        "theta": np.empty((B, 3)),
        "psi": np.empty((B, 3)),
        "delta": np.empty((B, 3)),
    }
    vo = np.empty((B, 3, 2, 2), dtype=complex)
    vo_partials = np.empty((B, 3, 3, 2, 2), dtype=complex)
    for o, name in enumerate(_OBS):
        a1 = pooled_d @ p[f"branch_{name}_w1"] + p[f"branch_{name}_b1"]
        h1 = _gelu(a1)
        a2 = h1 @ p[f"branch_{name}_w2"] + p[f"branch_{name}_b2"]
        h2 = _gelu(a2)
        ang = h2 @ p[f"branch_{name}_w_ang"] + p[f"branch_{name}_b_ang"]  # (psi, theta, delta)
        mu = 1.0 / (1.0 + np.exp(-(h2 @ p[f"branch_{name}_w_mu"] + p[f"branch_{name}_b_mu"])))
        branch["a1"][:, o], branch["h1"][:, o] = a1, h1
        branch["a2"][:, o], branch["h2"][:, o] = a2, h2
        branch["psi"][:, o] = ang[:, 0]
        branch["theta"][:, o] = ang[:, 1]
        branch["delta"][:, o] = ang[:, 2]
        branch["mu"][:, o] = mu[:, 0]
        vo[:, o], vo_partials[:, o] = vo_closed_form(
            branch["mu"][:, o], branch["theta"][:, o], branch["psi"][:, o], o
        )
    _check_finite("vo_branches", branch["mu"], branch["theta"], branch["psi"], branch["delta"])

    if u_ctrl is None:
        amplitudes = x.reshape(B, 2, N_PULSES) * (2.0 * A_MAX) - A_MAX
        u_ctrl = control_unitary_batch(amplitudes, cfg.whitebox_steps)
    else:
        u_ctrl = np.asarray(u_ctrl, dtype=complex).reshape(B, 2, 2)

    raw = expectation_grid(vo, u_ctrl)  # (B, 6, 3)
    raw_flat = raw.reshape(B, 18)
    _check_finite("expectations", raw_flat)

    refine = {
        "a1": np.empty((B, 6, cfg.refine_hidden)),
        "h1": np.empty((B, 6, cfg.refine_hidden)),
    }
    refined = np.empty((B, 6, 18))
    for g in range(6):
        a1 = raw_flat @ p[f"refine_{g}_w1"] + p[f"refine_{g}_b1"]
        h1 = _gelu(a1)
        refined[:, g] = raw_flat + h1 @ p[f"refine_{g}_w2"] + p[f"refine_{g}_b2"]
        refine["a1"][:, g], refine["h1"][:, g] = a1, h1
    fid_pre = np.einsum("gj,bgj->bg", _FID_W, refined) + _FID_C
    fidelities = np.clip(fid_pre, 0.0, 1.0)
    _check_finite("fidelity", fidelities)

    return ForwardTrace(
        config=cfg,
        params=params,
        x=x,
        mode=mode,
        u_ctrl=u_ctrl,
        tokens=tokens,
        proj=proj,
        q=q,
        k=k,
        v=v,
        att=att,
        merged=merged,
        res1=res1,
        xhat1=xhat1,
        inv1=inv1,
        y1=y1,
        ffn_a1=ffn_a1,
        ffn_h1=ffn_h1,
        res2=res2,
        xhat2=xhat2,
        inv2=inv2,
        y2=y2,
        pooled=pooled,
        dropout_mask=dropout_mask,
        pooled_d=pooled_d,
        branch=branch,
        vo=vo,
        vo_partials=vo_partials,
        raw_flat=raw_flat,
        refine=refine,
        refined=refined,
        fid_pre=fid_pre,
        fidelities_batch=fidelities,
    )


def backward(
    trace: ForwardTrace, loss_gradient: np.ndarray, with_input_grad: bool = True
) -> tuple[np.ndarray, np.ndarray | None]:
    """Exact reverse-mode gradients from dL/dfidelities.

    Returns (param_gradient, input_gradient): the flat parameter gradient in
    canonical order and, if requested, the (B, 10) gradient w.r.t. the
    normalized inputs (squeezed for single samples). The input gradient
    includes both the token path and the control-unitary path.
    """
    cfg = trace.config
    p = trace.params.arrays
    B = trace.batch_size
    f_bar = np.atleast_2d(np.asarray(loss_gradient, dtype=float))
    if f_bar.shape != (B, 6):
        raise ValueError(f"loss_gradient must have shape {(B, 6)}, got {f_bar.shape}")
    grads = {name: np.zeros(shape) for name, shape in parameter_layout(cfg)}

    # fidelity clamp + affine map
    active = (trace.fid_pre > 0.0) & (trace.fid_pre < 1.0)
    f_bar = f_bar * active
    refined_bar = f_bar[:, :, None] * _FID_W[None, :, :]  # (B, 6, 18)

    # refinement heads (residual MLPs)
    raw_bar = np.zeros((B, 18))
    for g in range(6):
        out_bar = refined_bar[:, g]
        raw_bar += out_bar
        h1 = trace.refine["h1"][:, g]
        grads[f"refine_{g}_w2"] = h1.T @ out_bar
        grads[f"refine_{g}_b2"] = out_bar.sum(axis=0)
        a1_bar = (out_bar @ p[f"refine_{g}_w2"].T) * _gelu_grad(trace.refine["a1"][:, g])
        grads[f"refine_{g}_w1"] = trace.raw_flat.T @ a1_bar
        grads[f"refine_{g}_b1"] = a1_bar.sum(axis=0)
        raw_bar += a1_bar @ p[f"refine_{g}_w1"].T

    # expectations -> (V_O, U)
    vo_bar, u_bar = expectation_grid_adjoint(
        trace.vo, trace.u_ctrl, raw_bar.reshape(B, 6, 3), need_u_bar=with_input_grad
    )

    # V_O parameters -> branch heads
    pooled_d_bar = np.zeros_like(trace.pooled_d)
    for o, name in enumerate(_OBS):
        par_bar = np.einsum(
            "bij,bpij->bp", np.conj(vo_bar[:, o]), trace.vo_partials[:, o]
        ).real  # (B, 3) for (mu, theta, psi)
        mu = trace.branch["mu"][:, o]
        mu_pre_bar = par_bar[:, 0] * mu * (1.0 - mu)
        ang_bar = np.zeros((B, 3))  # head order (psi, theta, delta)
        ang_bar[:, 0] = par_bar[:, 2]
        ang_bar[:, 1] = par_bar[:, 1]
        h2 = trace.branch["h2"][:, o]
        grads[f"branch_{name}_w_mu"] = h2.T @ mu_pre_bar[:, None]
        grads[f"branch_{name}_b_mu"] = np.array([mu_pre_bar.sum()])
        grads[f"branch_{name}_w_ang"] = h2.T @ ang_bar
        grads[f"branch_{name}_b_ang"] = ang_bar.sum(axis=0)
        h2_bar = mu_pre_bar[:, None] @ p[f"branch_{name}_w_mu"].T + ang_bar @ p[f"branch_{name}_w_ang"].T
        a2_bar = h2_bar * _gelu_grad(trace.branch["a2"][:, o])
        h1 = trace.branch["h1"][:, o]
        grads[f"branch_{name}_w2"] = h1.T @ a2_bar
        grads[f"branch_{name}_b2"] = a2_bar.sum(axis=0)
        a1_bar = (a2_bar @ p[f"branch_{name}_w2"].T) * _gelu_grad(trace.branch["a1"][:, o])
        grads[f"branch_{name}_w1"] = trace.pooled_d.T @ a1_bar
        grads[f"branch_{name}_b1"] = a1_bar.sum(axis=0)
        pooled_d_bar += a1_bar @ p[f"branch_{name}_w1"].T

    # dropout and pooling
    pooled_bar = (
        pooled_d_bar * trace.dropout_mask if trace.dropout_mask is not None else pooled_d_bar
    )
    y2_bar = np.repeat(pooled_bar[:, None, :] / N_TOKENS, N_TOKENS, axis=1)

    # encoder block, in reverse
    res2_bar, g2, b2 = _layer_norm_backward(y2_bar, trace.xhat2, trace.inv2, p["ln2_g"])
    grads["ln2_g"], grads["ln2_b"] = g2, b2
    f_out_bar = res2_bar
    grads["ffn_w2"] = np.einsum("bnf,bnd->fd", trace.ffn_h1, f_out_bar)
    grads["ffn_b2"] = f_out_bar.sum(axis=(0, 1))
    a1_bar = (f_out_bar @ p["ffn_w2"].T) * _gelu_grad(trace.ffn_a1)
    grads["ffn_w1"] = np.einsum("bnd,bnf->df", trace.y1, a1_bar)
    grads["ffn_b1"] = a1_bar.sum(axis=(0, 1))
    y1_bar = res2_bar + a1_bar @ p["ffn_w1"].T

    res1_bar, g1, b1 = _layer_norm_backward(y1_bar, trace.xhat1, trace.inv1, p["ln1_g"])
    grads["ln1_g"], grads["ln1_b"] = g1, b1
    mha_bar = res1_bar
    grads["attn_wo"] = np.einsum("bnd,bne->de", trace.merged, mha_bar)
    grads["attn_bo"] = mha_bar.sum(axis=(0, 1))
    merged_bar = _split_heads(mha_bar @ p["attn_wo"].T, cfg.n_heads)

    v_bar = np.swapaxes(trace.att, -1, -2) @ merged_bar
    att_bar = merged_bar @ np.swapaxes(trace.v, -1, -2)
    scores_bar = trace.att * (att_bar - (att_bar * trace.att).sum(axis=-1, keepdims=True))
    scale = 1.0 / np.sqrt(cfg.head_dim)
    q_bar = scores_bar @ trace.k * scale
    k_bar = np.swapaxes(scores_bar, -1, -2) @ trace.q * scale

    proj_bar = res1_bar
    for mats_bar, w_name, b_name in (
        (q_bar, "attn_wq", "attn_bq"),
        (k_bar, "attn_wk", "attn_bk"),
        (v_bar, "attn_wv", "attn_bv"),
    ):
        flat = _merge_heads(mats_bar)
        grads[w_name] = np.einsum("bnd,bne->de", trace.proj, flat)
        grads[b_name] = flat.sum(axis=(0, 1))
        proj_bar = proj_bar + flat @ p[w_name].T

    grads["proj_w"] = np.einsum("bnf,bnd->fd", trace.tokens, proj_bar)
    grads["proj_b"] = proj_bar.sum(axis=(0, 1))
    tokens_bar = proj_bar @ p["proj_w"].T

    input_grad = None
    if with_input_grad:
        input_grad = np.zeros((B, 2 * N_PULSES))
        input_grad[:, :N_PULSES] = tokens_bar[..., 0]
        input_grad[:, N_PULSES:] = tokens_bar[..., 1]
        # control-unitary path: dA = adjoint chain, dx = 2 A_MAX dA
        for b in range(B):
            amps = trace.x[b].reshape(2, N_PULSES) * (2.0 * A_MAX) - A_MAX
            dA = control_unitary_adjoint(PulseTrain(amps), cfg.whitebox_steps, u_bar[b])
            input_grad[b] += 2.0 * A_MAX * dA.ravel()
        if B == 1:
            input_grad = input_grad[0]

    flat_grad = np.concatenate([grads[name].ravel() for name, _ in parameter_layout(cfg)])
    return flat_grad, input_grad


_CHECKPOINT_MAGIC = b"GQCK"
_CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: ModelParameters, metadata: dict | None = None) -> None:
    """Versioned binary container: magic, version, JSON header, float64 LE data.

    Layout: 4-byte magic 'GQCK', uint32 LE version, uint64 LE header length,
    UTF-8 JSON header {model_config, param_count, metadata}, then the flat
    parameter vector as little-endian float64.
    """
    header = json.dumps(
        {
            "model_config": {
                "d_model": params.config.d_model,
                "n_heads": params.config.n_heads,
                "ff_dim": params.config.ff_dim,
                "dropout_rate": params.config.dropout_rate,
                "branch_hidden": list(params.config.branch_hidden),
                "refine_hidden": params.config.refine_hidden,
                "whitebox_steps": params.config.whitebox_steps,
            },
            "param_count": parameter_count(params.config),
            "metadata": metadata or {},
        },
        sort_keys=True,
    ).encode()
    with open(path, "wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", _CHECKPOINT_VERSION))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        fh.write(params.to_flat().astype("<f8").tobytes())


def load_checkpoint(path) -> tuple[ModelParameters, dict]:
    """Read a checkpoint written by save_checkpoint."""
    raw = Path(path).read_bytes()
    if raw[:4] != _CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a model checkpoint")
    version = struct.unpack("<I", raw[4:8])[0]
    if version != _CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    hlen = struct.unpack("<Q", raw[8:16])[0]
    header = json.loads(raw[16 : 16 + hlen].decode())
    mc = header["model_config"]
    mc["branch_hidden"] = tuple(mc["branch_hidden"])
    config = ModelConfig(**mc)
    flat = np.frombuffer(raw[16 + hlen :], dtype="<f8")
    params = ModelParameters.from_flat(config, flat)
    return params, header.get("metadata", {})
