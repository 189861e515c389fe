"""Encoder backends.

Every encoder maps one manifest row's media to fixed-width embeddings:

    encode_text(text)  -> (tokens [n x d], cls [d], n_valid)
    encode_image(path) -> (patches [u x d], cls [d])

``HashEncoder`` is a dependency-free deterministic backend for tests and dry
runs: token vectors are seeded from a content hash, image patches are a fixed
random projection of raw 16x16 pixel blocks. ``HfTextEncoder`` and
``HfImageEncoder`` wrap locally available transformer checkpoints (frozen,
no fine-tuning).
"""
from __future__ import annotations

import hashlib
import re

import numpy as np
from PIL import Image

IMAGE_SIZE = 224
PATCH_SIZE = 16


class Encoder:
    """Interface; see module docstring for the contract."""

    d: int

    def encode_text(self, text: str):
        raise NotImplementedError

    def encode_image(self, path):
        raise NotImplementedError


def _load_image(path) -> np.ndarray:
    """Decode, convert to RGB, resize to 224x224; float32 in [0, 1]."""
    with Image.open(path) as img:
        rgb = img.convert("RGB").resize((IMAGE_SIZE, IMAGE_SIZE),
                                        Image.BILINEAR)
    return np.asarray(rgb, dtype=np.float32) / 255.0


class HashEncoder(Encoder):
    """Deterministic content-hash encoder; no model weights involved."""

    def __init__(self, d: int = 32):
        self.d = d
        rng = np.random.default_rng(0)
        # fixed projection from one flattened RGB patch to the embedding dim
        self._patch_proj = rng.normal(
            size=(PATCH_SIZE * PATCH_SIZE * 3, d)).astype(np.float64)
        self._patch_proj /= np.sqrt(PATCH_SIZE * PATCH_SIZE * 3)

    def _token_vector(self, token: str) -> np.ndarray:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8)
        seed = int.from_bytes(digest.digest(), "little")
        return np.random.default_rng(seed).normal(size=self.d)

    def encode_text(self, text: str):
        tokens = re.findall(r"\w+|[^\w\s]", text.lower())
        if not tokens:
            tokens = [""]
        mat = np.stack([self._token_vector(t) for t in tokens])
        return mat, mat.mean(axis=0), len(tokens)

    def encode_image(self, path):
        pixels = _load_image(path)
        n_side = IMAGE_SIZE // PATCH_SIZE
        patches = pixels.reshape(n_side, PATCH_SIZE, n_side, PATCH_SIZE, 3)
        patches = patches.transpose(0, 2, 1, 3, 4).reshape(n_side * n_side, -1)
        mat = patches.astype(np.float64) @ self._patch_proj
        return mat, mat.mean(axis=0)


class HfTextEncoder(Encoder):
    """Frozen transformer text encoder (torch + transformers backends)."""

    def __init__(self, model_name_or_path: str):
        import torch
        from transformers import AutoModel, AutoTokenizer
        self._torch = torch
        self.tokenizer = AutoTokenizer.from_pretrained(model_name_or_path)
        self.model = AutoModel.from_pretrained(model_name_or_path)
        self.model.eval()
        self.d = self.model.config.hidden_size

    def encode_text(self, text: str):
        enc = self.tokenizer(text, return_tensors="pt", truncation=True)
        with self._torch.no_grad():
            out = self.model(**enc).last_hidden_state[0]
        tokens = out.numpy().astype(np.float64)
        # position 0 is the summary token; the rest are content tokens
        return tokens[1:], tokens[0], tokens.shape[0] - 1


class HfImageEncoder(Encoder):
    """Frozen patch-based vision transformer encoder."""

    def __init__(self, model_name_or_path: str):
        import torch
        from transformers import AutoImageProcessor, AutoModel
        self._torch = torch
        self.processor = AutoImageProcessor.from_pretrained(model_name_or_path)
        self.model = AutoModel.from_pretrained(model_name_or_path)
        self.model.eval()
        self.d = self.model.config.hidden_size

    def encode_image(self, path):
        with Image.open(path) as img:
            enc = self.processor(images=img.convert("RGB"),
                                 return_tensors="pt")
        with self._torch.no_grad():
            out = self.model(**enc).last_hidden_state[0]
        patches = out.numpy().astype(np.float64)
        return patches[1:], patches[0]


class PairedEncoder(Encoder):
    """Route text and image to two separate backends of equal width."""

    def __init__(self, text_encoder: Encoder, image_encoder: Encoder):
        if text_encoder.d != image_encoder.d:
            raise ValueError(
                f"encoder widths differ: text {text_encoder.d}, "
                f"image {image_encoder.d}")
        self.d = text_encoder.d
        self._text = text_encoder
        self._image = image_encoder

    def encode_text(self, text: str):
        return self._text.encode_text(text)

    def encode_image(self, path):
        return self._image.encode_image(path)
