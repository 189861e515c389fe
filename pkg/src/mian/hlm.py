"""Hierarchical learning module: per-modality Local-to-Local and
Local-to-Global blocks producing enhanced unimodal sequences."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import (
    MultiHeadConfig, gate_combine, multi_head_attention, transformer_block,
)
from .tensor import (
    MaskError, Tensor, concat_last_dim, constant, masked_mean_rows, matmul,
    mul, scale_rows, softmax_rows, sub, tanh, transpose,
)


@dataclass
class ModalitySequence:
    """One modality branch: token/patch matrix, encoder summary, validity mask."""
    tokens: Tensor          # n x d
    cls: Tensor             # 1 x d encoder summary vector
    mask: np.ndarray        # (n,) bool, True = valid position


@dataclass
class HlmOutput:
    seq: Tensor                         # fused hierarchical sequence, n x d
    ll: Tensor                          # local-to-local branch, n x d
    lg_weights: Tensor | None           # 1 x n global-guided weights
    lg_tokens: Tensor | None            # per-token reweighted locals, n x d


def local_to_local(seq: ModalitySequence, cfg: MultiHeadConfig, params: dict,
                   prefix: str, with_inverse: bool, a_value: float = 1.0,
                   trace: dict | None = None) -> Tensor:
    """Stacked self-attention + encoder-block rounds over the token sequence."""
    x = seq.tokens
    for layer in range(cfg.n_layers):
        lp = f"{prefix}.layer{layer}"
        attended = multi_head_attention(
            x, x, cfg, params, lp, key_mask=seq.mask,
            with_inverse=with_inverse, a_value=a_value, trace=trace)
        x = transformer_block(x, attended, params, lp)
    return x


def global_feature(seq: ModalitySequence) -> Tensor:
    """Concatenation of the mean of unmasked tokens and the summary vector."""
    if not seq.mask.any():
        raise MaskError("global_feature: no unmasked tokens")
    g_mean = masked_mean_rows(seq.tokens, seq.mask)
    return concat_last_dim(g_mean, seq.cls)


def local_to_global(seq: ModalitySequence, g: Tensor, params: dict,
                    prefix: str, with_inverse: bool, a_value: float = 1.0,
                    trace: dict | None = None) -> tuple[Tensor, Tensor]:
    """Global-vector-guided token weighting.

    h = tanh(tokens W1) * tanh(g W2) per row; raw scores h W3 are softmaxed
    over unmasked positions; tokens are rescaled by the weights. The inverse
    branch reweights by softmax(A - weights) and the two token sets are merged
    by a gate.
    """
    h = mul(tanh(matmul(seq.tokens, params[f"{prefix}.w1"])),
            tanh(matmul(g, params[f"{prefix}.w2"])))
    raw = transpose(matmul(h, params[f"{prefix}.w3"]))  # 1 x n
    mask_row = seq.mask.reshape(1, -1)
    weights = softmax_rows(raw, mask_row)
    if trace is not None:
        trace[f"{prefix}.att"] = weights.data.copy()
    tokens_out = scale_rows(seq.tokens, weights)
    if with_inverse:
        shifted = sub(constant(np.full(weights.shape, float(a_value))), weights)
        inv_weights = softmax_rows(shifted, mask_row)
        if trace is not None:
            trace[f"{prefix}.inv_att"] = inv_weights.data.copy()
        inv_tokens = scale_rows(seq.tokens, inv_weights)
        tokens_out = gate_combine(tokens_out, inv_tokens,
                                  params[f"{prefix}.gate.wg"],
                                  params[f"{prefix}.gate.bg"])
    return weights, tokens_out


def hlm_forward(seq: ModalitySequence, cfg: MultiHeadConfig, params: dict,
                prefix: str, use_lg: bool = True, ll_inverse: bool = True,
                lg_inverse: bool = True, a_value: float = 1.0,
                trace: dict | None = None) -> HlmOutput:
    """Full hierarchical branch: ll and lg outputs fused by a 2d -> d
    projection; with the Local-to-Global block disabled the output is the
    Local-to-Local sequence unchanged."""
    ll = local_to_local(seq, cfg, params, f"{prefix}.l2l", ll_inverse,
                        a_value, trace)
    if not use_lg:
        return HlmOutput(seq=ll, ll=ll, lg_weights=None, lg_tokens=None)
    g = global_feature(seq)
    lg_weights, lg_tokens = local_to_global(
        seq, g, params, f"{prefix}.l2g", lg_inverse, a_value, trace)
    fused = matmul(concat_last_dim(ll, lg_tokens), params[f"{prefix}.wfuse"])
    return HlmOutput(seq=fused, ll=ll, lg_weights=lg_weights,
                     lg_tokens=lg_tokens)
