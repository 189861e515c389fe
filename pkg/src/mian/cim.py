"""Cross-modal interaction module: bidirectional co-attention between the
enhanced text and image sequences, with an inverse-attention branch per head.

Queries come from the target modality, keys/values from the source modality;
each direction carries its own parameter set.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import MultiHeadConfig, multi_head_attention, transformer_block
from .tensor import Tensor


@dataclass
class CimOutput:
    text_enriched: Tensor               # m x d
    image_enriched: Tensor              # u x d
    co_weights_t: np.ndarray            # m x u, head-averaged, last layer
    co_weights_o: np.ndarray            # u x m
    inv_weights_t: np.ndarray | None
    inv_weights_o: np.ndarray | None


def _head_mean(trace: dict, prefix: str, n_heads: int, kind: str):
    mats = [trace.get(f"{prefix}.head{i}.{kind}") for i in range(n_heads)]
    if any(m is None for m in mats):
        return None
    return np.mean(mats, axis=0)


def co_attend(target: Tensor, source: Tensor, source_mask, cfg: MultiHeadConfig,
              params: dict, prefix: str, with_inverse: bool,
              a_value: float = 1.0, trace: dict | None = None,
              ) -> tuple[Tensor, np.ndarray, np.ndarray | None]:
    """Stacked cross-attention rounds enriching ``target`` with ``source``.

    Returns the enriched sequence plus the (head-averaged, last-layer)
    consistency and inverse weight matrices.
    """
    if target.shape[1] != source.shape[1]:
        raise ValueError(
            f"co_attend: feature widths differ, {target.shape} vs {source.shape}")
    local_trace: dict = {} if trace is None else trace
    x = target
    last_prefix = prefix
    for layer in range(cfg.n_layers):
        last_prefix = f"{prefix}.layer{layer}"
        attended = multi_head_attention(
            x, source, cfg, params, last_prefix, key_mask=source_mask,
            with_inverse=with_inverse, a_value=a_value, trace=local_trace)
        x = transformer_block(x, attended, params, last_prefix)
    weights = _head_mean(local_trace, last_prefix, cfg.n_heads, "att")
    inv_weights = _head_mean(local_trace, last_prefix, cfg.n_heads, "inv_att") \
        if with_inverse else None
    return x, weights, inv_weights


def cim_forward(text: Tensor, image: Tensor, text_mask, cfg: MultiHeadConfig,
                params: dict, with_inverse: bool = True, a_value: float = 1.0,
                trace: dict | None = None) -> CimOutput:
    """Both co-attention directions; text positions respect the padding mask
    when they act as keys for the image branch."""
    text_enriched, w_t, iw_t = co_attend(
        text, image, None, cfg, params, "cim.text", with_inverse,
        a_value, trace)
    image_enriched, w_o, iw_o = co_attend(
        image, text, text_mask, cfg, params, "cim.image", with_inverse,
        a_value, trace)
    return CimOutput(text_enriched=text_enriched, image_enriched=image_enriched,
                     co_weights_t=w_t, co_weights_o=w_o,
                     inv_weights_t=iw_t, inv_weights_o=iw_o)
