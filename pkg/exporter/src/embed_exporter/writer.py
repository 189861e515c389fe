"""MIANEMB1 writer, implemented against the published byte layout.

Layout (little-endian):
    magic "MIANEMB1" (8 bytes)
    u32 version = 1, u32 record count, u32 m, u32 u, u32 d
    per record:
        u8 label, u8 fake_type, u32 n_valid
        f32[d] text_cls, f32[m*d] text tokens (row-major),
        f32[d] image_cls, f32[u*d] image patches
"""
from __future__ import annotations

import struct

import numpy as np

MAGIC = b"MIANEMB1"
VERSION = 1


def write_mianemb1(records, m: int, u: int, d: int, path) -> None:
    """records: iterable of (label, fake_type, n_valid, text_cls, tokens,
    image_cls, patches) with tokens (m x d) and patches (u x d)."""
    records = list(records)
    if not records:
        raise ValueError("write_mianemb1: no records")
    body = [MAGIC, struct.pack("<IIIII", VERSION, len(records), m, u, d)]
    for i, (label, fake_type, n_valid, text_cls, tokens, image_cls,
            patches) in enumerate(records):
        if tokens.shape != (m, d) or patches.shape != (u, d):
            raise ValueError(f"record {i}: shape mismatch")
        if not 1 <= n_valid <= m:
            raise ValueError(f"record {i}: n_valid {n_valid} outside [1, {m}]")
        arrays = (text_cls, tokens, image_cls, patches)
        if any(not np.isfinite(a).all() for a in arrays):
            raise ValueError(f"record {i}: non-finite embedding value")
        body.append(struct.pack("<BBI", label, fake_type, n_valid))
        for a in arrays:
            body.append(np.ascontiguousarray(a, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(body))
