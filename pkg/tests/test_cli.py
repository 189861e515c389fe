import json

import numpy as np
import pytest

from mian import cli
from mian import data as D
from mian.cli import ConfigError, main, parse_kv_file


@pytest.fixture
def tiny_files(tmp_path):
    """Spec and run config matched to an 8-dim model plus a tiny data file."""
    spec = tmp_path / "synth.cfg"
    spec.write_text(
        "n_samples = 24\n"
        "m = 4\n"
        "u = 4\n"
        "d = 8\n"
        "n_topics = 3\n"
        "seed = 7\n")
    run = tmp_path / "run.cfg"
    run.write_text(
        "model.d_model = 8\n"
        "model.n_heads = 2\n"
        "model.m = 4\n"
        "model.u = 4\n"
        "model.classifier_hidden = 8\n"
        "train.epochs = 2\n"
        "train.batch_size = 8\n"
        "seed = 7\n")
    data = tmp_path / "data.emb"
    assert main(["synth", "--spec", str(spec), "--out", str(data)]) == 0
    return spec, run, data


class TestConfigParsing:
    def test_defaults_and_comments(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("# comment only\nseed = 3  # trailing\n\n")
        values = parse_kv_file(p, cli.RUN_SCHEMA)
        assert values["seed"] == 3
        assert values["model.d_model"] == 32
        assert values["train.lr0"] == 1e-3

    def test_unknown_key(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("model.width = 8\n")
        with pytest.raises(ConfigError, match="unknown key"):
            parse_kv_file(p, cli.RUN_SCHEMA)

    def test_bad_value(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("seed = banana\n")
        with pytest.raises(ConfigError, match="bad value"):
            parse_kv_file(p, cli.RUN_SCHEMA)

    def test_missing_equals(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("just a line\n")
        with pytest.raises(ConfigError, match="key=value"):
            parse_kv_file(p, cli.RUN_SCHEMA)

    def test_unknown_key_exit_code(self, tmp_path, capsys):
        p = tmp_path / "c.cfg"
        p.write_text("nope = 1\n")
        assert main(["gradcheck", "--config", str(p)]) == 2
        assert "unknown key" in capsys.readouterr().err


class TestSynth:
    def test_deterministic_output_bytes(self, tmp_path, tiny_files):
        spec, _, data = tiny_files
        again = tmp_path / "again.emb"
        main(["synth", "--spec", str(spec), "--out", str(again)])
        assert data.read_bytes() == again.read_bytes()

    def test_seed_override_changes_bytes(self, tmp_path, tiny_files):
        spec, _, data = tiny_files
        other = tmp_path / "other.emb"
        main(["synth", "--spec", str(spec), "--out", str(other),
              "--seed", "99"])
        assert data.read_bytes() != other.read_bytes()

    def test_reports_counts(self, tiny_files, capsys, tmp_path):
        spec, _, _ = tiny_files
        main(["synth", "--spec", str(spec), "--out", str(tmp_path / "x.emb")])
        out = capsys.readouterr().out
        assert "wrote 24 samples" in out
        assert "mismatched" in out

    def test_missing_spec_file(self, tmp_path):
        assert main(["synth", "--spec", str(tmp_path / "absent.cfg"),
                     "--out", str(tmp_path / "x.emb")]) == 2


class TestTrainEval:
    def test_train_writes_artifacts(self, tiny_files, tmp_path, capsys):
        _, run, data = tiny_files
        ckpt = tmp_path / "m.ckpt"
        metrics = tmp_path / "metrics.jsonl"
        rc = main(["train", "--config", str(run), "--data", str(data),
                   "--out-checkpoint", str(ckpt), "--metrics", str(metrics)])
        assert rc == 0
        assert ckpt.read_bytes()[:8] == b"MIANCKPT"
        lines = metrics.read_text().splitlines()
        assert len(lines) == 4  # train + test per epoch
        for line in lines:
            obj = json.loads(line)
            assert obj["split"] in ("train", "test")
        assert "final test acc" in capsys.readouterr().out

    def test_train_determinism_bitwise(self, tiny_files, tmp_path):
        _, run, data = tiny_files
        outs = []
        for tag in ("a", "b"):
            ckpt = tmp_path / f"{tag}.ckpt"
            metrics = tmp_path / f"{tag}.jsonl"
            main(["train", "--config", str(run), "--data", str(data),
                  "--out-checkpoint", str(ckpt), "--metrics", str(metrics)])
            outs.append((ckpt.read_bytes(), metrics.read_bytes()))
        assert outs[0] == outs[1]

    def test_ablation_override(self, tiny_files, tmp_path, capsys):
        _, run, data = tiny_files
        rc = main(["train", "--config", str(run), "--data", str(data),
                   "--out-checkpoint", str(tmp_path / "m.ckpt"),
                   "--metrics", str(tmp_path / "m.jsonl"),
                   "--ablation", "inter_ic"])
        assert rc == 0
        assert "variant=inter_ic" in capsys.readouterr().out

    def test_bad_ablation_flag(self, tiny_files, tmp_path):
        _, run, data = tiny_files
        rc = main(["train", "--config", str(run), "--data", str(data),
                   "--out-checkpoint", str(tmp_path / "m.ckpt"),
                   "--metrics", str(tmp_path / "m.jsonl"),
                   "--ablation", "bogus"])
        assert rc == 2

    def test_eval_round_trip(self, tiny_files, tmp_path, capsys):
        _, run, data = tiny_files
        ckpt = tmp_path / "m.ckpt"
        main(["train", "--config", str(run), "--data", str(data),
              "--out-checkpoint", str(ckpt),
              "--metrics", str(tmp_path / "m.jsonl")])
        capsys.readouterr()
        metrics = tmp_path / "eval.jsonl"
        rc = main(["eval", "--config", str(run), "--checkpoint", str(ckpt),
                   "--data", str(data), "--metrics", str(metrics)])
        assert rc == 0
        obj = json.loads(metrics.read_text())
        assert obj["split"] == "eval"
        assert 0.0 <= obj["acc"] <= 1.0

    def test_eval_config_mismatch(self, tiny_files, tmp_path):
        _, run, data = tiny_files
        ckpt = tmp_path / "m.ckpt"
        main(["train", "--config", str(run), "--data", str(data),
              "--out-checkpoint", str(ckpt),
              "--metrics", str(tmp_path / "m.jsonl")])
        other = tmp_path / "other.cfg"
        other.write_text(run.read_text().replace("model.d_model = 8",
                                                 "model.d_model = 16"))
        rc = main(["eval", "--config", str(other), "--checkpoint", str(ckpt),
                   "--data", str(data),
                   "--metrics", str(tmp_path / "e.jsonl")])
        assert rc == 2

    def test_corrupt_data_file(self, tiny_files, tmp_path):
        _, run, data = tiny_files
        bad = tmp_path / "bad.emb"
        bad.write_bytes(b"NOTMAGIC" + data.read_bytes()[8:])
        rc = main(["train", "--config", str(run), "--data", str(bad),
                   "--out-checkpoint", str(tmp_path / "m.ckpt"),
                   "--metrics", str(tmp_path / "m.jsonl")])
        assert rc == 2


class TestGradcheck:
    def test_passes_on_tiny_model(self, tiny_files, capsys):
        _, run, _ = tiny_files
        assert main(["gradcheck", "--config", str(run)]) == 0
        out = capsys.readouterr().out
        assert "max relative error" in out

    def test_fails_exit_4(self, tiny_files, monkeypatch, capsys):
        _, run, _ = tiny_files
        monkeypatch.setattr(cli, "grad_check",
                            lambda fn, params: {"clf.w1": 0.5})
        assert main(["gradcheck", "--config", str(run)]) == 4
        assert "FAIL" in capsys.readouterr().err


class TestInspect:
    def test_csv_rows_are_stochastic(self, tiny_files, tmp_path, capsys):
        _, run, data = tiny_files
        ckpt = tmp_path / "m.ckpt"
        main(["train", "--config", str(run), "--data", str(data),
              "--out-checkpoint", str(ckpt),
              "--metrics", str(tmp_path / "m.jsonl")])
        out_dir = tmp_path / "sites"
        rc = main(["inspect", "--config", str(run), "--checkpoint", str(ckpt),
                   "--data", str(data), "--sample", "0",
                   "--out", str(out_dir)])
        assert rc == 0
        csvs = sorted(out_dir.glob("*.csv"))
        assert csvs
        for f in csvs:
            mat = np.loadtxt(f, delimiter=",", ndmin=2)
            sums = mat.sum(axis=1)
            # each dumped attention row is a distribution over its keys
            np.testing.assert_allclose(sums, 1.0, atol=1e-9)

    def test_sample_out_of_range(self, tiny_files, tmp_path):
        _, run, data = tiny_files
        ckpt = tmp_path / "m.ckpt"
        main(["train", "--config", str(run), "--data", str(data),
              "--out-checkpoint", str(ckpt),
              "--metrics", str(tmp_path / "m.jsonl")])
        rc = main(["inspect", "--config", str(run), "--checkpoint", str(ckpt),
                   "--data", str(data), "--sample", "999",
                   "--out", str(tmp_path / "sites")])
        assert rc == 2


class TestAblate:
    def test_writes_json_and_markdown(self, tiny_files, tmp_path, capsys):
        _, run, data = tiny_files
        out_dir = tmp_path / "ablation"
        rc = main(["ablate", "--config", str(run), "--data", str(data),
                   "--out", str(out_dir)])
        assert rc == 0
        payload = json.loads((out_dir / "ablation.json").read_text())
        assert [row["variant"] for row in payload] == [
            "MIAN", "w/o intra-lg", "w/o intra-lg-ic", "w/o intra-ll-ic",
            "w/o inter-ic"]
        md = (out_dir / "ablation.md").read_text()
        assert md.startswith("| Variant |")
        assert md.count("\n") == 7  # header, rule, five variant rows
