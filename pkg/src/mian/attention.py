"""Attention kernels: scaled dot-product, inverse attention, gating,
multi-head wrapper, encoder block, and sinusoidal positional encodings.

Every kernel is a pure function of its inputs plus named parameters pulled
from a flat ``params`` dict by path prefix, so parameter layouts stay
checkpointable and inspectable.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import (
    MaskError, ShapeError, Tensor,
    add, clip, concat_last_dim, constant, layer_norm, matmul, mul,
    relu, scale, sigmoid, softmax_rows, sub, transpose,
)

ROW_SUM_TOL = 1e-4  # guard for inverse attention consuming raw scores


@dataclass
class AttentionResult:
    """Row-stochastic weights together with the attended output."""
    weights: Tensor
    output: Tensor


@dataclass(frozen=True)
class MultiHeadConfig:
    d_model: int
    n_heads: int
    n_layers: int = 1

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ShapeError(
                f"n_heads={self.n_heads} must divide d_model={self.d_model}")

    @property
    def d_k(self) -> int:
        return self.d_model // self.n_heads


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor,
                         key_mask=None) -> AttentionResult:
    """softmax(Q K^T / sqrt(d_k)) V with an optional boolean key mask."""
    if q.shape[1] != k.shape[1]:
        raise ShapeError(
            f"scaled_dot_attention: query width {q.shape} != key width {k.shape}")
    if k.shape[0] != v.shape[0]:
        raise ShapeError(
            f"scaled_dot_attention: key count {k.shape} != value count {v.shape}")
    if key_mask is not None:
        key_mask = np.asarray(key_mask, dtype=bool)
        if not key_mask.any():
            raise MaskError("scaled_dot_attention: every key is masked")
    dk = q.shape[1]
    scores = scale(matmul(q, transpose(k)), 1.0 / math.sqrt(dk))
    weights = softmax_rows(scores, key_mask)
    return AttentionResult(weights=weights, output=matmul(weights, v))


def inverse_attention(weights: Tensor, v: Tensor, key_mask=None,
                      a_value: float = 1.0) -> AttentionResult:
    """Re-normalized complement softmax(A - weights): emphasizes the keys the
    input attention de-emphasized. The constant A only shifts the softmax, so
    the output is independent of its value; it is kept configurable anyway.

    Rejects inputs whose rows do not sum to 1 within tolerance -- this kernel
    consumes post-softmax weights, never raw scores.
    """
    row_sums = weights.data.sum(axis=1)
    if np.abs(row_sums - 1.0).max() > ROW_SUM_TOL:
        raise ValueError(
            "inverse_attention expects row-stochastic weights; "
            f"row sums deviate by up to {np.abs(row_sums - 1.0).max():.3g}")
    shifted = sub(constant(np.full(weights.shape, float(a_value))), weights)
    inv_weights = softmax_rows(shifted, key_mask)
    return AttentionResult(weights=inv_weights, output=matmul(inv_weights, v))


def gate_combine(r_cons: Tensor, r_incons: Tensor,
                 w_g: Tensor, b_g: Tensor) -> Tensor:
    """Sigmoid-gated convex combination of consistency/inconsistency features."""
    if r_cons.shape != r_incons.shape:
        raise ShapeError(
            f"gate_combine: shapes differ, {r_cons.shape} vs {r_incons.shape}")
    g = sigmoid(add(matmul(concat_last_dim(r_cons, r_incons), w_g), b_g))
    one_minus_g = sub(constant(np.ones(g.shape)), g)
    return add(mul(g, r_cons), mul(one_minus_g, r_incons))


def multi_head_attention(x_q: Tensor, x_kv: Tensor, cfg: MultiHeadConfig,
                         params: dict, prefix: str, key_mask=None,
                         with_inverse: bool = False, a_value: float = 1.0,
                         trace: dict | None = None) -> Tensor:
    """Multi-head attention with an optional per-head inverse branch.

    Per head: standard scaled dot-product attention; when ``with_inverse``,
    an inverse-attention pass over the same weight matrix, merged with the
    consistency output by a per-head gate. Heads are concatenated and
    projected by a single shared output matrix.
    """
    head_outputs = []
    for i in range(cfg.n_heads):
        hp = f"{prefix}.head{i}"
        q = matmul(x_q, params[f"{hp}.wq"])
        k = matmul(x_kv, params[f"{hp}.wk"])
        v = matmul(x_kv, params[f"{hp}.wv"])
        att = scaled_dot_attention(q, k, v, key_mask)
        if trace is not None:
            trace[f"{hp}.att"] = att.weights.data.copy()
        out = att.output
        if with_inverse:
            inv = inverse_attention(att.weights, v, key_mask, a_value)
            if trace is not None:
                trace[f"{hp}.inv_att"] = inv.weights.data.copy()
            out = gate_combine(out, inv.output,
                               params[f"{hp}.gate.wg"], params[f"{hp}.gate.bg"])
        head_outputs.append(out)
    concat = head_outputs[0] if len(head_outputs) == 1 \
        else concat_last_dim(*head_outputs)
    return matmul(concat, params[f"{prefix}.wcat"])


def transformer_block(x: Tensor, attended: Tensor, params: dict,
                      prefix: str) -> Tensor:
    """Residual + feedforward half of an encoder layer.

    R1 = LN(x + attended W1); out = LN(R1 + ReLU(R1 W2 + b)).
    """
    if x.shape != attended.shape:
        raise ShapeError(
            f"transformer_block: shapes differ, {x.shape} vs {attended.shape}")
    r1 = layer_norm(add(x, matmul(attended, params[f"{prefix}.ffn.w1"])),
                    params[f"{prefix}.ln1.gain"], params[f"{prefix}.ln1.bias"])
    hidden = relu(add(matmul(r1, params[f"{prefix}.ffn.w2"]),
                      params[f"{prefix}.ffn.b"]))
    return layer_norm(add(r1, hidden),
                      params[f"{prefix}.ln2.gain"], params[f"{prefix}.ln2.bias"])


def positional_encoding(n_positions: int, d: int) -> np.ndarray:
    """Sinusoidal encodings: PE[p, 2i] = sin(p / 10000^(2i/d)),
    PE[p, 2i+1] = cos(p / 10000^(2i/d))."""
    if d % 2 != 0:
        raise ShapeError(f"positional_encoding: width must be even, got {d}")
    pos = np.arange(n_positions, dtype=np.float64)[:, None]
    i2 = np.arange(0, d, 2, dtype=np.float64)
    angle = pos / np.power(10000.0, i2 / d)
    pe = np.empty((n_positions, d), dtype=np.float64)
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe
