"""Manifest -> MIANEMB1 export pipeline."""
from __future__ import annotations

import logging

import numpy as np

from .encoders import Encoder
from .manifest import ManifestRow
from .writer import write_mianemb1

log = logging.getLogger(__name__)


class ExportError(RuntimeError):
    pass


def _fit_tokens(tokens: np.ndarray, n_valid: int, m: int, d: int):
    """Truncate to m or zero-pad, returning the padded matrix and count."""
    if n_valid > m:
        return tokens[:m].copy(), m
    out = np.zeros((m, d))
    out[:n_valid] = tokens[:n_valid]
    return out, n_valid


def _fit_patches(patches: np.ndarray, u: int, row_index: int) -> np.ndarray:
    if patches.shape[0] != u:
        raise ExportError(
            f"row {row_index}: image encoder produced {patches.shape[0]} "
            f"patches, expected {u}")
    return patches


def export(rows: list[ManifestRow], out_path, encoder: Encoder,
           m: int = 196, u: int = 196) -> int:
    """Encode every manifest row and write the embedding file.

    Rows whose image fails to decode are skipped with a warning naming the
    manifest index. Returns the number of records written; raises
    ExportError when none survive. Embeddings are exported frozen, in
    manifest order.
    """
    if not rows:
        raise ExportError("empty manifest")
    d = encoder.d
    records = []
    for i, row in enumerate(rows):
        try:
            patches, image_cls = encoder.encode_image(row.image_path)
        except (OSError, ValueError) as e:
            log.warning("skipping row %d (%s): %s", i, row.image_path, e)
            continue
        patches = _fit_patches(patches, u, i)
        tokens, text_cls, n_valid = encoder.encode_text(row.text)
        tokens, n_valid = _fit_tokens(tokens, n_valid, m, d)
        records.append((row.label, row.fake_type, n_valid,
                        text_cls, tokens, image_cls, patches))
    if not records:
        raise ExportError("no exportable rows: every image failed to decode")
    write_mianemb1(records, m, u, d, out_path)
    return len(records)
