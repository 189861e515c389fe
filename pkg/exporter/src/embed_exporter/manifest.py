"""Manifest loading: CSV or JSONL rows of (text, image_path, label[, fake_type])."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

FAKE_TYPE_UNKNOWN = 255


class ManifestError(ValueError):
    pass


@dataclass
class ManifestRow:
    text: str
    image_path: str
    label: int
    fake_type: int = FAKE_TYPE_UNKNOWN


def _validate(row: dict, where: str) -> ManifestRow:
    missing = {"text", "image_path", "label"} - set(row)
    if missing:
        raise ManifestError(f"{where}: missing field(s) {sorted(missing)}")
    text = str(row["text"]).strip()
    if not text:
        raise ManifestError(f"{where}: empty text")
    try:
        label = int(row["label"])
    except (TypeError, ValueError):
        raise ManifestError(f"{where}: label must be 0 or 1, "
                            f"got {row['label']!r}") from None
    if label not in (0, 1):
        raise ManifestError(f"{where}: label must be 0 or 1, got {label}")
    raw_type = row.get("fake_type", "")
    if raw_type in ("", None):
        fake_type = FAKE_TYPE_UNKNOWN
    else:
        fake_type = int(raw_type)
        if fake_type not in (0, 1, 2, 3, FAKE_TYPE_UNKNOWN):
            raise ManifestError(f"{where}: invalid fake_type {fake_type}")
    return ManifestRow(text=text, image_path=str(row["image_path"]),
                       label=label, fake_type=fake_type)


def read_manifest(path) -> list[ManifestRow]:
    """Load a .csv (with header) or .jsonl manifest, preserving row order."""
    path = Path(path)
    rows: list[ManifestRow] = []
    if path.suffix.lower() == ".jsonl":
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as e:
                    raise ManifestError(f"{path}:{lineno}: bad JSON: {e}") \
                        from e
                rows.append(_validate(obj, f"{path}:{lineno}"))
    elif path.suffix.lower() == ".csv":
        with open(path, encoding="utf-8", newline="") as fh:
            for i, record in enumerate(csv.DictReader(fh), start=2):
                rows.append(_validate(record, f"{path}:{i}"))
    else:
        raise ManifestError(f"unsupported manifest type {path.suffix!r}; "
                            "expected .csv or .jsonl")
    if not rows:
        raise ManifestError(f"{path}: manifest is empty")
    return rows
