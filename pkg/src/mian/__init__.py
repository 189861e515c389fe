"""Multimodal inverse-attention network with a gradient-verified numeric core."""

from .tensor import Tensor, Tape, grad_check
from .attention import (
    AttentionResult, MultiHeadConfig, scaled_dot_attention, inverse_attention,
    gate_combine, multi_head_attention, transformer_block, positional_encoding,
)
from .model import (
    ModelConfig, Prediction, init_params, forward, loss, predict_label,
    save_checkpoint, load_checkpoint,
)
from .data import (
    NewsSample, SynthSpec, generate, write_embeddings, read_embeddings, split,
)
from .train import (
    TrainConfig, MetricsReport, lr_at, evaluate, run_ablation_suite,
)
from . import train  # noqa: F401  keep the submodule reachable as mian.train

__version__ = "0.1.0"
