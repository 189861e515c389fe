"""Synthetic embedding generator and the MIANEMB1 binary interchange format.

Fake-news taxonomy realized by the generator:
  0 real              -- text and image drawn around one shared topic
  1 fabricated_text   -- a fraction of text tokens swapped to a foreign topic
  2 fabricated_image  -- same manipulation on image patches
  3 mismatched        -- authentic text and image around different topics
  255 unknown         -- reserved for imported (non-synthetic) data
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"MIANEMB1"
VERSION = 1

FAKE_TYPE_NAMES = {
    0: "real", 1: "fabricated_text", 2: "fabricated_image",
    3: "mismatched", 255: "unknown",
}


class FormatError(ValueError):
    """Raised on any malformed embedding or checkpoint file."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


@dataclass
class NewsSample:
    text_tokens: np.ndarray   # m x d float64
    text_cls: np.ndarray      # (d,)
    text_mask: np.ndarray     # (m,) bool, True = valid
    image_patches: np.ndarray  # u x d
    image_cls: np.ndarray     # (d,)
    label: int                # 0 fake, 1 real
    fake_type: int


@dataclass
class SynthSpec:
    n_samples: int = 2000
    m: int = 16
    u: int = 16
    d: int = 32
    n_topics: int = 8
    noise_sigma: float = 0.1
    corrupt_fraction: float = 0.25
    topic_similarity: float = 0.7   # cosine between a topic and its twin
    camouflage_fraction: float = 0.3  # mismatched-image patches that echo the text topic
    class_mix: dict = field(default_factory=lambda: {0: 0.25, 1: 0.25,
                                                     2: 0.25, 3: 0.25})
    seed: int = 0

    def validate(self) -> None:
        if self.n_topics < 2:
            raise ValueError("n_topics must be at least 2 to define a mismatch")
        if not 0.0 < self.corrupt_fraction < 1.0:
            raise ValueError("corrupt_fraction must lie in (0, 1)")
        if not 0.0 <= self.topic_similarity < 1.0:
            raise ValueError("topic_similarity must lie in [0, 1)")
        if not 0.0 <= self.camouflage_fraction < 1.0:
            raise ValueError("camouflage_fraction must lie in [0, 1)")
        if abs(sum(self.class_mix.values()) - 1.0) > 1e-9:
            raise ValueError("class_mix proportions must sum to 1")
        for t in self.class_mix:
            if t not in (0, 1, 2, 3):
                raise ValueError(f"unknown fake_type {t} in class_mix")


def _type_counts(spec: SynthSpec) -> dict[int, int]:
    # largest-remainder allocation keeps every count within 1 of its target
    types = sorted(spec.class_mix)
    exact = {t: spec.class_mix[t] * spec.n_samples for t in types}
    counts = {t: int(exact[t]) for t in types}
    leftover = spec.n_samples - sum(counts.values())
    by_frac = sorted(types, key=lambda t: exact[t] - counts[t], reverse=True)
    for t in by_frac[:leftover]:
        counts[t] += 1
    return counts


def _draw_topics(rng, n_topics: int, d: int, similarity: float) -> np.ndarray:
    """Unit topic vectors arranged in twin pairs.

    Topics 2i and 2i+1 have cosine ~ ``similarity``; topics from different
    pairs are independent random directions (near-orthogonal in high
    dimension). Similarity 0 makes all topics independent. Mismatched
    samples pair a topic with its twin, so raising the similarity makes the
    cross-modal disagreement subtler without affecting how visible a
    fabricated token swap is.
    """
    n_pairs = (n_topics + 1) // 2
    anchors = rng.normal(size=(n_pairs, d))
    anchors /= np.linalg.norm(anchors, axis=1, keepdims=True)
    twists = rng.normal(size=(n_pairs, d))
    # orthogonalize each twist against its own anchor
    twists -= np.sum(twists * anchors, axis=1, keepdims=True) * anchors
    twists /= np.linalg.norm(twists, axis=1, keepdims=True)
    twins = similarity * anchors + np.sqrt(1.0 - similarity ** 2) * twists
    topics = np.empty((2 * n_pairs, d))
    topics[0::2] = anchors
    topics[1::2] = twins
    return topics[:n_topics]


def _twin(topic: int, n_topics: int) -> int:
    partner = topic ^ 1
    return partner if partner < n_topics else (topic - 1) % n_topics


def generate(spec: SynthSpec) -> list[NewsSample]:
    """Draw a deterministic synthetic embedding set per the taxonomy above.

    All values pass through float32 so that MIANEMB1 round-trips are
    bit-exact.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    topics = _draw_topics(rng, spec.n_topics, spec.d, spec.topic_similarity)

    counts = _type_counts(spec)
    schedule = np.concatenate([np.full(c, t, dtype=np.int64)
                               for t, c in sorted(counts.items())])
    rng.shuffle(schedule)

    samples = []
    for fake_type in schedule:
        topic_a = int(rng.integers(spec.n_topics))
        # fabrication borrows from outside topic_a's twin pair when possible
        pair = {topic_a, _twin(topic_a, spec.n_topics)}
        outside = [t for t in range(spec.n_topics) if t not in pair]
        pool = outside if outside else sorted(pair - {topic_a})
        topic_b = pool[int(rng.integers(len(pool)))]
        n_text = int(rng.integers(spec.m // 2, spec.m + 1))

        text = topics[topic_a] + rng.normal(scale=spec.noise_sigma,
                                            size=(n_text, spec.d))
        image_topic = _twin(topic_a, spec.n_topics) if fake_type == 3 \
            else topic_a
        image = topics[image_topic] + rng.normal(scale=spec.noise_sigma,
                                                 size=(spec.u, spec.d))
        if fake_type == 1:
            k = int(np.ceil(spec.corrupt_fraction * n_text))
            idx = rng.choice(n_text, size=k, replace=False)
            text[idx] = topics[topic_b] + rng.normal(
                scale=spec.noise_sigma, size=(k, spec.d))
        elif fake_type == 2:
            k = int(np.ceil(spec.corrupt_fraction * spec.u))
            idx = rng.choice(spec.u, size=k, replace=False)
            image[idx] = topics[topic_b] + rng.normal(
                scale=spec.noise_sigma, size=(k, spec.d))
        elif fake_type == 3 and spec.camouflage_fraction > 0.0:
            # a mismatched image keeps a few patches that echo the text
            # topic -- the decoy detail a reused image is chosen for. These
            # patches dominate text-conditioned attention, so the
            # disagreement lives in the patches attention ignores.
            k = int(np.ceil(spec.camouflage_fraction * spec.u))
            idx = rng.choice(spec.u, size=k, replace=False)
            image[idx] = topics[topic_a] + rng.normal(
                scale=spec.noise_sigma, size=(k, spec.d))

        text_tokens = np.zeros((spec.m, spec.d))
        text_tokens[:n_text] = text
        mask = np.zeros(spec.m, dtype=bool)
        mask[:n_text] = True
        text_cls = text.mean(axis=0) + rng.normal(scale=spec.noise_sigma,
                                                  size=spec.d)
        image_cls = image.mean(axis=0) + rng.normal(scale=spec.noise_sigma,
                                                    size=spec.d)
        samples.append(NewsSample(
            text_tokens=text_tokens.astype(np.float32).astype(np.float64),
            text_cls=text_cls.astype(np.float32).astype(np.float64),
            text_mask=mask,
            image_patches=image.astype(np.float32).astype(np.float64),
            image_cls=image_cls.astype(np.float32).astype(np.float64),
            label=1 if fake_type == 0 else 0,
            fake_type=int(fake_type),
        ))
    return samples


# ---------------------------------------------------------------------------
# MIANEMB1 serialization (little-endian, f32 payload)


def write_embeddings(samples: list[NewsSample], path) -> None:
    if not samples:
        raise ValueError("write_embeddings: empty sample list")
    m, d = samples[0].text_tokens.shape
    u = samples[0].image_patches.shape[0]
    for s in samples:
        if s.text_tokens.shape != (m, d) or s.image_patches.shape != (u, d):
            raise ValueError("write_embeddings: inconsistent sample shapes")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIIII", VERSION, len(samples), m, u, d))
        for s in samples:
            n_valid = int(s.text_mask.sum())
            fh.write(struct.pack("<BBI", s.label, s.fake_type, n_valid))
            fh.write(s.text_cls.astype("<f4").tobytes())
            fh.write(s.text_tokens.astype("<f4").tobytes())
            fh.write(s.image_cls.astype("<f4").tobytes())
            fh.write(s.image_patches.astype("<f4").tobytes())


def _take(buf: bytes, offset: int, n: int, what: str) -> tuple[bytes, int]:
    if offset + n > len(buf):
        raise FormatError(f"truncated file while reading {what}", offset)
    return buf[offset:offset + n], offset + n


def _floats(buf: bytes, offset: int, count: int, what: str):
    raw, offset = _take(buf, offset, 4 * count, what)
    arr = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    if not np.isfinite(arr).all():
        raise FormatError(f"non-finite value in {what}", offset - 4 * count)
    return arr, offset


def read_embeddings(path) -> list[NewsSample]:
    with open(path, "rb") as fh:
        buf = fh.read()
    off = 0
    magic, off = _take(buf, off, 8, "magic")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    header, off = _take(buf, off, 20, "header")
    version, n, m, u, d = struct.unpack("<IIIII", header)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 8)
    samples = []
    for rec in range(n):
        rec_off = off
        head, off = _take(buf, off, 6, f"record {rec} header")
        label, fake_type, n_valid = struct.unpack("<BBI", head)
        if label not in (0, 1):
            raise FormatError(f"record {rec}: invalid label {label}", rec_off)
        if fake_type not in FAKE_TYPE_NAMES:
            raise FormatError(
                f"record {rec}: invalid fake_type {fake_type}", rec_off + 1)
        if n_valid < 1 or n_valid > m:
            raise FormatError(
                f"record {rec}: n_valid {n_valid} outside [1, {m}]", rec_off + 2)
        text_cls, off = _floats(buf, off, d, f"record {rec} text_cls")
        tokens, off = _floats(buf, off, m * d, f"record {rec} text tokens")
        image_cls, off = _floats(buf, off, d, f"record {rec} image_cls")
        patches, off = _floats(buf, off, u * d, f"record {rec} image patches")
        mask = np.zeros(m, dtype=bool)
        mask[:n_valid] = True
        tokens = tokens.reshape(m, d)
        tokens[~mask] = 0.0  # padding rows are all-zero by contract
        samples.append(NewsSample(
            text_tokens=tokens, text_cls=text_cls, text_mask=mask,
            image_patches=patches.reshape(u, d), image_cls=image_cls,
            label=int(label), fake_type=int(fake_type)))
    if off != len(buf):
        raise FormatError(
            f"record count mismatch: header says {n} records but "
            f"{len(buf) - off} trailing bytes remain", off)
    return samples


def split(samples: list[NewsSample], train_fraction: float,
          seed: int) -> tuple[list[NewsSample], list[NewsSample]]:
    """Stratified-by-fake_type deterministic split."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0, 1)")
    by_type: dict[int, list[int]] = {}
    for i, s in enumerate(samples):
        by_type.setdefault(s.fake_type, []).append(i)
    rng = np.random.default_rng(seed)
    types = sorted(by_type)
    for t in types:
        if len(by_type[t]) < 2:
            raise ValueError(
                f"fake_type {t} has {len(by_type[t])} sample(s); "
                "need at least 2 to split")
    # largest-remainder allocation: per-type proportions stay within one
    # sample of the target while the global train size is exact
    total_train = int(round(train_fraction * len(samples)))
    quota = {t: train_fraction * len(by_type[t]) for t in types}
    k = {t: max(1, min(len(by_type[t]) - 1, int(quota[t]))) for t in types}
    leftover = total_train - sum(k.values())
    by_frac = sorted(types, key=lambda t: quota[t] - int(quota[t]), reverse=True)
    for t in by_frac:
        if leftover <= 0:
            break
        if k[t] < len(by_type[t]) - 1:
            k[t] += 1
            leftover -= 1
    train_idx: list[int] = []
    test_idx: list[int] = []
    for t in types:
        idx = np.array(by_type[t])
        rng.shuffle(idx)
        train_idx.extend(idx[:k[t]])
        test_idx.extend(idx[k[t]:])
    return ([samples[i] for i in sorted(train_idx)],
            [samples[i] for i in sorted(test_idx)])
