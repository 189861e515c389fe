import numpy as np
import numpy.testing as npt
import pytest

from mian import data as D
from mian.data import FormatError, NewsSample, SynthSpec


def samples_equal(a: NewsSample, b: NewsSample) -> bool:
    return (np.array_equal(a.text_tokens, b.text_tokens)
            and np.array_equal(a.text_cls, b.text_cls)
            and np.array_equal(a.text_mask, b.text_mask)
            and np.array_equal(a.image_patches, b.image_patches)
            and np.array_equal(a.image_cls, b.image_cls)
            and a.label == b.label and a.fake_type == b.fake_type)


class TestGenerate:
    def test_degenerate_mix_all_real(self):
        spec = SynthSpec(n_samples=20, m=6, u=6, d=8, n_topics=2,
                         class_mix={0: 1.0}, seed=0)
        for s in D.generate(spec):
            assert s.label == 1 and s.fake_type == 0

    def test_label_matches_fake_type(self):
        for s in D.generate(SynthSpec(n_samples=40, m=6, u=6, d=8, seed=1)):
            assert (s.label == 1) == (s.fake_type == 0)

    def test_camouflage_pulls_some_patches_toward_text_topic(self):
        base = dict(n_samples=30, m=8, u=10, d=16, n_topics=4,
                    noise_sigma=0.0, topic_similarity=0.0,
                    class_mix={3: 1.0}, seed=20)
        plain = D.generate(SynthSpec(**base, camouflage_fraction=0.0))
        camo = D.generate(SynthSpec(**base, camouflage_fraction=0.3))
        k = int(np.ceil(0.3 * 10))
        for s in plain:
            t = s.text_tokens[s.text_mask].mean(axis=0)
            t /= np.linalg.norm(t)
            sims = s.image_patches @ t
            # orthogonal topics, zero noise: no patch aligns with the text
            assert (np.abs(sims) < 0.5).all()
        for s in camo:
            t = s.text_tokens[s.text_mask].mean(axis=0)
            t /= np.linalg.norm(t)
            sims = s.image_patches @ t
            # exactly k patches echo the text topic, the rest do not
            assert (sims > 0.9).sum() == k
            assert (np.abs(sims) < 0.5).sum() == s.image_patches.shape[0] - k

    def test_noiseless_mismatch_exposes_topic_pair(self):
        spec = SynthSpec(n_samples=10, m=8, u=8, d=16, n_topics=4,
                         noise_sigma=0.0, camouflage_fraction=0.0,
                         class_mix={3: 1.0}, seed=2)
        for s in D.generate(spec):
            t = s.text_tokens[s.text_mask].mean(axis=0)
            o = s.image_patches.mean(axis=0)
            cos = t @ o / (np.linalg.norm(t) * np.linalg.norm(o))
            assert cos < 0.999  # distinct topics, never the same direction

    def test_default_counts_within_one_of_quarter(self):
        samples = D.generate(SynthSpec(seed=3))
        counts = {t: sum(1 for s in samples if s.fake_type == t)
                  for t in range(4)}
        for t in range(4):
            assert abs(counts[t] - 500) <= 1

    def test_masked_rows_zero_and_length_range(self):
        spec = SynthSpec(n_samples=50, m=12, u=6, d=8, seed=4)
        for s in D.generate(spec):
            n_valid = int(s.text_mask.sum())
            assert 6 <= n_valid <= 12
            npt.assert_array_equal(s.text_tokens[~s.text_mask], 0.0)

    def test_deterministic_under_seed(self):
        a = D.generate(SynthSpec(n_samples=10, m=6, u=6, d=8, seed=5))
        b = D.generate(SynthSpec(n_samples=10, m=6, u=6, d=8, seed=5))
        assert all(samples_equal(x, y) for x, y in zip(a, b))
        c = D.generate(SynthSpec(n_samples=10, m=6, u=6, d=8, seed=6))
        assert not all(samples_equal(x, y) for x, y in zip(a, c))

    def test_single_topic_rejected(self):
        with pytest.raises(ValueError, match="n_topics"):
            D.generate(SynthSpec(n_topics=1))

    def test_fabricated_dispersion_exceeds_real(self):
        spec = SynthSpec(n_samples=1000, m=8, u=8, d=16, noise_sigma=0.1,
                         class_mix={0: 0.5, 1: 0.5}, seed=7)
        disp = {0: [], 1: []}
        for s in D.generate(spec):
            toks = s.text_tokens[s.text_mask]
            centroid = toks.mean(axis=0)
            disp[s.fake_type].append(
                np.linalg.norm(toks - centroid, axis=1).mean())
        assert np.mean(disp[1]) > np.mean(disp[0])


class TestEmbeddingFormat:
    @pytest.fixture
    def samples(self):
        return D.generate(SynthSpec(n_samples=12, m=6, u=5, d=8, seed=8))

    def test_round_trip_bitwise(self, samples, tmp_path):
        path = tmp_path / "data.emb"
        D.write_embeddings(samples, path)
        loaded = D.read_embeddings(path)
        assert len(loaded) == len(samples)
        assert all(samples_equal(a, b) for a, b in zip(samples, loaded))

    def test_rewrite_is_byte_identical(self, samples, tmp_path):
        p1, p2 = tmp_path / "a.emb", tmp_path / "b.emb"
        D.write_embeddings(samples, p1)
        D.write_embeddings(D.read_embeddings(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic_offset_zero(self, samples, tmp_path):
        path = tmp_path / "data.emb"
        D.write_embeddings(samples, path)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"XXXX"
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="offset 0") as ei:
            D.read_embeddings(path)
        assert ei.value.offset == 0

    def test_bad_version(self, samples, tmp_path):
        path = tmp_path / "data.emb"
        D.write_embeddings(samples, path)
        raw = bytearray(path.read_bytes())
        raw[8] = 99
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="version"):
            D.read_embeddings(path)

    def test_truncation(self, samples, tmp_path):
        path = tmp_path / "data.emb"
        D.write_embeddings(samples, path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-10])
        with pytest.raises(FormatError, match="truncated"):
            D.read_embeddings(path)

    def test_record_count_mismatch(self, samples, tmp_path):
        path = tmp_path / "data.emb"
        D.write_embeddings(samples, path)
        raw = bytearray(path.read_bytes())
        # claim fewer records than are present -> trailing bytes
        import struct
        raw[12:16] = struct.pack("<I", len(samples) - 2)
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="record count mismatch"):
            D.read_embeddings(path)

    def test_nan_payload(self, samples, tmp_path):
        path = tmp_path / "data.emb"
        D.write_embeddings(samples, path)
        raw = bytearray(path.read_bytes())
        import struct
        # first float of record 0's text_cls sits right after its 6-byte head
        off = 28 + 6
        raw[off:off + 4] = struct.pack("<f", float("nan"))
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="non-finite"):
            D.read_embeddings(path)

    def test_empty_list_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            D.write_embeddings([], tmp_path / "x.emb")


class TestGoldenFile:
    """Byte-level regression anchor for the on-disk format."""

    GOLDEN = __import__("pathlib").Path(__file__).parent / "golden/tiny.emb"
    SPEC = SynthSpec(n_samples=4, m=5, u=3, d=6, n_topics=2, noise_sigma=0.2,
                     corrupt_fraction=0.4, topic_similarity=0.5,
                     camouflage_fraction=0.0, seed=42)

    def test_generator_reproduces_golden_bytes(self, tmp_path):
        out = tmp_path / "tiny.emb"
        D.write_embeddings(D.generate(self.SPEC), out)
        assert out.read_bytes() == self.GOLDEN.read_bytes()

    def test_golden_parses(self):
        samples = D.read_embeddings(self.GOLDEN)
        assert len(samples) == 4
        assert samples[0].text_tokens.shape == (5, 6)
        assert all((s.label == 1) == (s.fake_type == 0) for s in samples)


class TestSplit:
    def test_nine_to_one_sizes(self):
        samples = D.generate(SynthSpec(n_samples=100, m=6, u=6, d=8, seed=9))
        train, test = D.split(samples, 0.9, seed=0)
        assert len(train) == 90 and len(test) == 10

    def test_deterministic(self):
        samples = D.generate(SynthSpec(n_samples=60, m=6, u=6, d=8, seed=10))
        a = D.split(samples, 0.9, seed=1)
        b = D.split(samples, 0.9, seed=1)
        assert all(samples_equal(x, y) for x, y in zip(a[0], b[0]))
        assert all(samples_equal(x, y) for x, y in zip(a[1], b[1]))

    def test_disjoint_and_exhaustive(self):
        samples = D.generate(SynthSpec(n_samples=40, m=6, u=6, d=8, seed=11))
        train, test = D.split(samples, 0.8, seed=2)
        assert len(train) + len(test) == len(samples)
        ids = [id(s) for s in train] + [id(s) for s in test]
        assert len(set(ids)) == len(samples)

    def test_stratification_within_one(self):
        samples = D.generate(SynthSpec(n_samples=200, m=6, u=6, d=8, seed=12))
        train, _ = D.split(samples, 0.9, seed=3)
        for t in range(4):
            total = sum(1 for s in samples if s.fake_type == t)
            got = sum(1 for s in train if s.fake_type == t)
            assert abs(got - 0.9 * total) <= 1

    def test_tiny_class_rejected(self):
        samples = D.generate(SynthSpec(n_samples=20, m=6, u=6, d=8,
                                       class_mix={0: 1.0}, seed=13))
        samples[0].fake_type = 3
        with pytest.raises(ValueError, match="at least 2"):
            D.split(samples, 0.9, seed=0)

    def test_bad_fraction(self):
        with pytest.raises(ValueError):
            D.split([], 1.0, seed=0)
