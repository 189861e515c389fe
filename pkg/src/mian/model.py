"""Full model assembly: positional encoding, hierarchical branches,
cross-modal interaction, pooled news representation, classifier, and loss,
plus path-addressable parameters with binary checkpointing."""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .attention import MultiHeadConfig, positional_encoding
from .cim import CimOutput, cim_forward
from .data import NewsSample, FormatError
from .hlm import HlmOutput, ModalitySequence, hlm_forward
from .tensor import Tensor

CKPT_MAGIC = b"MIANCKPT"
CKPT_VERSION = 1

ABLATIONS = ("intra_lg", "intra_lg_ic", "intra_ll_ic", "inter_ic")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture configuration. Defaults follow the reference setup
    (sequence length 196, 14x14 patches, 2 layers of 12 heads); desk-scale
    experiments override them."""
    d_model: int = 768
    n_heads: int = 12
    n_layers: int = 2
    m: int = 196
    u: int = 196
    classifier_hidden: int = 0  # 0 means "same as d_model"
    a_value: float = 1.0
    seed: int = 0
    ablation: frozenset = frozenset()

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"n_heads={self.n_heads} must divide d_model={self.d_model}")
        if self.m < 1 or self.u < 1:
            raise ValueError("sequence lengths m and u must be positive")
        bad = set(self.ablation) - set(ABLATIONS)
        if bad:
            raise ValueError(f"unknown ablation flags: {sorted(bad)}")

    @property
    def hidden(self) -> int:
        return self.classifier_hidden or self.d_model

    @property
    def mha(self) -> MultiHeadConfig:
        return MultiHeadConfig(self.d_model, self.n_heads, self.n_layers)

    def fingerprint(self) -> int:
        key = (f"{self.d_model},{self.n_heads},{self.n_layers},"
               f"{self.m},{self.u},{self.hidden}")
        return int.from_bytes(
            hashlib.blake2b(key.encode(), digest_size=8).digest(), "little")


@dataclass
class Prediction:
    y_hat: float
    logit: float
    r_n: Tensor
    y_hat_t: Tensor  # scalar tensor, differentiable handle for the loss


# ---------------------------------------------------------------------------
# parameters


def _glorot(rng, fan_in: int, fan_out: int, shape) -> np.ndarray:
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=shape)


def init_params(cfg: ModelConfig) -> dict[str, Tensor]:
    """Create every learnable tensor, addressable by stable path names.

    All blocks are instantiated regardless of ablation flags so that variants
    share shapes; disabled blocks simply receive zero gradient.
    """
    rng = np.random.default_rng(cfg.seed)
    d, dk, h = cfg.d_model, cfg.mha.d_k, cfg.hidden
    params: dict[str, Tensor] = {}

    def w(path: str, fan_in: int, fan_out: int, shape=None):
        shape = shape or (fan_in, fan_out)
        params[path] = Tensor(_glorot(rng, fan_in, fan_out, shape),
                              requires_grad=True)

    def zeros(path: str, shape):
        params[path] = Tensor(np.zeros(shape), requires_grad=True)

    def ones(path: str, shape):
        params[path] = Tensor(np.ones(shape), requires_grad=True)

    def mha_layer(prefix: str):
        for i in range(cfg.n_heads):
            hp = f"{prefix}.head{i}"
            w(f"{hp}.wq", d, dk)
            w(f"{hp}.wk", d, dk)
            w(f"{hp}.wv", d, dk)
            w(f"{hp}.gate.wg", 2 * dk, dk)
            zeros(f"{hp}.gate.bg", (dk,))
        w(f"{prefix}.wcat", d, d)
        w(f"{prefix}.ffn.w1", d, d)
        w(f"{prefix}.ffn.w2", d, d)
        zeros(f"{prefix}.ffn.b", (d,))
        ones(f"{prefix}.ln1.gain", (d,))
        zeros(f"{prefix}.ln1.bias", (d,))
        ones(f"{prefix}.ln2.gain", (d,))
        zeros(f"{prefix}.ln2.bias", (d,))

    for br in ("text", "image"):
        for layer in range(cfg.n_layers):
            mha_layer(f"hlm.{br}.l2l.layer{layer}")
        w(f"hlm.{br}.l2g.w1", d, d)
        w(f"hlm.{br}.l2g.w2", 2 * d, d)
        w(f"hlm.{br}.l2g.w3", d, 1)
        w(f"hlm.{br}.l2g.gate.wg", 2 * d, d)
        zeros(f"hlm.{br}.l2g.gate.bg", (d,))
        w(f"hlm.{br}.wfuse", 2 * d, d)
    for tgt in ("text", "image"):
        for layer in range(cfg.n_layers):
            mha_layer(f"cim.{tgt}.layer{layer}")
    w("clf.w1", 4 * d, h)
    zeros("clf.b1", (h,))
    w("clf.w2", h, 1)
    zeros("clf.b2", (1,))
    return params


# ---------------------------------------------------------------------------
# forward / loss


def forward(sample: NewsSample, cfg: ModelConfig, params: dict[str, Tensor],
            trace: dict | None = None,
            ) -> tuple[Prediction, HlmOutput, HlmOutput, CimOutput]:
    """End-to-end forward pass on one news sample."""
    m, d = sample.text_tokens.shape
    u = sample.image_patches.shape[0]
    if (m, u, d) != (cfg.m, cfg.u, cfg.d_model):
        raise T.ShapeError(
            f"sample dims (m={m}, u={u}, d={d}) do not match config "
            f"(m={cfg.m}, u={cfg.u}, d={cfg.d_model})")

    text_tokens = T.constant(sample.text_tokens + positional_encoding(m, d))
    image_patches = T.constant(sample.image_patches + positional_encoding(u, d))
    text = ModalitySequence(tokens=text_tokens,
                            cls=T.constant(sample.text_cls.reshape(1, -1)),
                            mask=sample.text_mask)
    image = ModalitySequence(tokens=image_patches,
                             cls=T.constant(sample.image_cls.reshape(1, -1)),
                             mask=np.ones(u, dtype=bool))

    ab = cfg.ablation
    hlm_kwargs = dict(use_lg="intra_lg" not in ab,
                      ll_inverse="intra_ll_ic" not in ab,
                      lg_inverse="intra_lg_ic" not in ab,
                      a_value=cfg.a_value, trace=trace)
    hlm_t = hlm_forward(text, cfg.mha, params, "hlm.text", **hlm_kwargs)
    hlm_o = hlm_forward(image, cfg.mha, params, "hlm.image", **hlm_kwargs)

    cim = cim_forward(hlm_t.seq, hlm_o.seq, sample.text_mask, cfg.mha, params,
                      with_inverse="inter_ic" not in ab,
                      a_value=cfg.a_value, trace=trace)

    r_n = T.concat_last_dim(
        T.masked_mean_rows(hlm_t.seq, sample.text_mask),
        T.masked_mean_rows(hlm_o.seq),
        T.masked_mean_rows(cim.text_enriched, sample.text_mask),
        T.masked_mean_rows(cim.image_enriched))

    hidden = T.relu(T.add(T.matmul(r_n, params["clf.w1"]), params["clf.b1"]))
    logit = T.add(T.matmul(hidden, params["clf.w2"]), params["clf.b2"])
    y_hat = T.sigmoid(logit)
    pred = Prediction(y_hat=y_hat.item(), logit=logit.item(), r_n=r_n,
                      y_hat_t=y_hat)
    return pred, hlm_t, hlm_o, cim


def loss(y_hat: Tensor, y: int) -> Tensor:
    """Binary cross-entropy on a scalar confidence, clamped before the logs."""
    if y not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {y}")
    p = T.clip(y_hat, 1e-12, 1.0 - 1e-12)
    one_minus = T.sub(T.constant(np.ones(p.shape)), p)
    if y == 1:
        return T.scale(T.sum_all(T.log(p)), -1.0)
    return T.scale(T.sum_all(T.log(one_minus)), -1.0)


def predict_label(y_hat: float, threshold: float = 0.5) -> int:
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    return 1 if y_hat >= threshold else 0


# ---------------------------------------------------------------------------
# checkpointing


def save_checkpoint(params: dict[str, Tensor], cfg: ModelConfig, path) -> None:
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<IQI", CKPT_VERSION, cfg.fingerprint(),
                             len(params)))
        for name in params:
            p = params[name]
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", p.data.ndim))
            fh.write(struct.pack(f"<{p.data.ndim}I", *p.data.shape))
            fh.write(p.data.astype("<f8").tobytes())


def load_checkpoint(path, cfg: ModelConfig) -> dict[str, Tensor]:
    with open(path, "rb") as fh:
        buf = fh.read()
    off = 0

    def take(n: int, what: str) -> bytes:
        nonlocal off
        if off + n > len(buf):
            raise FormatError(f"truncated checkpoint while reading {what}", off)
        chunk = buf[off:off + n]
        off += n
        return chunk

    magic = take(8, "magic")
    if magic != CKPT_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {CKPT_MAGIC!r}", 0)
    version, fp, count = struct.unpack("<IQI", take(16, "header"))
    if version != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 8)
    if fp != cfg.fingerprint():
        raise FormatError(
            "checkpoint config fingerprint does not match the supplied config")
    params: dict[str, Tensor] = {}
    for i in range(count):
        (name_len,) = struct.unpack("<H", take(2, f"param {i} path length"))
        name = take(name_len, f"param {i} path").decode("utf-8")
        (rank,) = struct.unpack("<I", take(4, f"param {i} rank"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, f"param {i} dims"))
        size = int(np.prod(dims)) if rank else 1
        raw = take(8 * size, f"param {i} values")
        data = np.frombuffer(raw, dtype="<f8").reshape(dims)
        if not np.isfinite(data).all():
            raise FormatError(f"non-finite value in parameter {name!r}")
        if name in params:
            raise FormatError(f"duplicate parameter path {name!r}")
        params[name] = Tensor(data, requires_grad=True)
    if off != len(buf):
        raise FormatError(f"{len(buf) - off} trailing bytes after last parameter",
                          off)
    return params
