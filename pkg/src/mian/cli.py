"""Command-line surface: data synthesis, training, evaluation, gradient
checking, attention inspection, and the ablation experiment driver.

Exit codes: 0 success, 2 usage/config error, 3 training divergence,
4 failed verification (gradcheck over tolerance).
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import data as D
from . import model as M
from . import train as TR
from .tensor import grad_check
from .model import ABLATIONS


class ConfigError(ValueError):
    pass


def _parse_bool(s):
    if s.lower() in ("true", "1", "yes"):
        return True
    if s.lower() in ("false", "0", "no"):
        return False
    raise ConfigError(f"expected a boolean, got {s!r}")


# key -> (parser, default); every key has a documented default
RUN_SCHEMA = {
    "model.d_model": (int, 32),
    "model.n_heads": (int, 4),
    "model.n_layers": (int, 1),
    "model.m": (int, 16),
    "model.u": (int, 16),
    "model.classifier_hidden": (int, 0),
    "model.a_value": (float, 1.0),
    "train.epochs": (int, 50),
    "train.batch_size": (int, 32),
    "train.lr0": (float, 1e-3),
    "train.optimizer": (str, "adam"),
    "train.step_size": (int, 20),
    "train.gamma": (float, 0.5),
    "train.threshold": (float, 0.5),
    "data.path": (str, ""),
    "seed": (int, 0),
    "ablation": (str, ""),
}

SYNTH_SCHEMA = {
    "n_samples": (int, 2000),
    "m": (int, 16),
    "u": (int, 16),
    "d": (int, 32),
    "n_topics": (int, 8),
    "noise_sigma": (float, 0.1),
    "corrupt_fraction": (float, 0.25),
    "topic_similarity": (float, 0.7),
    "camouflage_fraction": (float, 0.3),
    "mix_real": (float, 0.25),
    "mix_fabricated_text": (float, 0.25),
    "mix_fabricated_image": (float, 0.25),
    "mix_mismatched": (float, 0.25),
    "seed": (int, 0),
}


def parse_kv_file(path, schema: dict) -> dict:
    """Flat key=value UTF-8 config with '#' comments; unknown keys are errors."""
    values = {k: default for k, (_, default) in schema.items()}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in schema:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        parser = schema[key][0]
        try:
            values[key] = parser(val)
        except (ValueError, ConfigError) as e:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {e}") from e
    return values


def _ablation_set(spec: str) -> frozenset:
    flags = frozenset(f.strip() for f in spec.split(",") if f.strip())
    bad = flags - set(ABLATIONS)
    if bad:
        raise ConfigError(f"unknown ablation flags: {sorted(bad)}; "
                          f"valid: {ABLATIONS}")
    return flags


def _model_cfg(values: dict, ablation_override: str | None = None) -> M.ModelConfig:
    ablation = _ablation_set(ablation_override if ablation_override is not None
                             else values["ablation"])
    return M.ModelConfig(
        d_model=values["model.d_model"], n_heads=values["model.n_heads"],
        n_layers=values["model.n_layers"], m=values["model.m"],
        u=values["model.u"], classifier_hidden=values["model.classifier_hidden"],
        a_value=values["model.a_value"], seed=values["seed"], ablation=ablation)


def _train_cfg(values: dict) -> TR.TrainConfig:
    return TR.TrainConfig(
        epochs=values["train.epochs"], batch_size=values["train.batch_size"],
        lr0=values["train.lr0"], optimizer=values["train.optimizer"],
        step_size=values["train.step_size"], gamma=values["train.gamma"],
        threshold=values["train.threshold"], seed=values["seed"])


def _synth_spec(values: dict, seed: int | None = None) -> D.SynthSpec:
    return D.SynthSpec(
        n_samples=values["n_samples"], m=values["m"], u=values["u"],
        d=values["d"], n_topics=values["n_topics"],
        noise_sigma=values["noise_sigma"],
        corrupt_fraction=values["corrupt_fraction"],
        topic_similarity=values["topic_similarity"],
        camouflage_fraction=values["camouflage_fraction"],
        class_mix={0: values["mix_real"], 1: values["mix_fabricated_text"],
                   2: values["mix_fabricated_image"],
                   3: values["mix_mismatched"]},
        seed=values["seed"] if seed is None else seed)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    values = parse_kv_file(args.spec, SYNTH_SCHEMA)
    spec = _synth_spec(values, args.seed)
    samples = D.generate(spec)
    D.write_embeddings(samples, args.out)
    counts: dict[int, int] = {}
    for s in samples:
        counts[s.fake_type] = counts.get(s.fake_type, 0) + 1
    for t in sorted(counts):
        print(f"{D.FAKE_TYPE_NAMES[t]}: {counts[t]}")
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


def cmd_train(args) -> int:
    values = parse_kv_file(args.config, RUN_SCHEMA)
    model_cfg = _model_cfg(values, args.ablation)
    train_cfg = _train_cfg(values)
    samples = D.read_embeddings(args.data)
    train_s, test_s = D.split(samples, 0.9, values["seed"])
    params = M.init_params(model_cfg)
    try:
        params, history = TR.train(model_cfg, params, train_s, test_s, train_cfg)
    except TR.DivergenceError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    M.save_checkpoint(params, model_cfg, args.out_checkpoint)
    variant = ",".join(sorted(model_cfg.ablation)) or "full"
    with open(args.metrics, "w", encoding="utf-8") as fh:
        for r in history:
            fh.write(r.to_json_line() + "\n")
    final = [r for r in history if r.split == "test"][-1]
    print(f"variant={variant} final test acc={final.accuracy:.4f}")
    return 0


def cmd_eval(args) -> int:
    values = parse_kv_file(args.config, RUN_SCHEMA)
    model_cfg = _model_cfg(values)
    params = M.load_checkpoint(args.checkpoint, model_cfg)
    samples = D.read_embeddings(args.data)
    report = TR.evaluate(model_cfg, params, samples,
                         values["train.threshold"], split="eval")
    line = report.to_json_line()
    with open(args.metrics, "w", encoding="utf-8") as fh:
        fh.write(line + "\n")
    print(line)
    return 0


def cmd_gradcheck(args) -> int:
    values = parse_kv_file(args.config, RUN_SCHEMA)
    model_cfg = _model_cfg(values)
    spec = D.SynthSpec(n_samples=2, m=model_cfg.m, u=model_cfg.u,
                       d=model_cfg.d_model, n_topics=2,
                       class_mix={0: 0.5, 3: 0.5}, seed=values["seed"])
    sample = D.generate(spec)[0]
    params = M.init_params(model_cfg)

    def loss_fn():
        pred, *_ = M.forward(sample, model_cfg, params)
        return M.loss(pred.y_hat_t, sample.label)

    report = grad_check(loss_fn, params)
    worst = max(report.values())
    width = max(len(k) for k in report)
    for name in report:
        print(f"{name:<{width}}  {report[name]:.3e}")
    print(f"max relative error: {worst:.3e}")
    if worst > 1e-4:
        print("FAIL: gradient check exceeded 1e-4", file=sys.stderr)
        return 4
    return 0


def cmd_inspect(args) -> int:
    values = parse_kv_file(args.config, RUN_SCHEMA)
    model_cfg = _model_cfg(values)
    params = M.load_checkpoint(args.checkpoint, model_cfg)
    samples = D.read_embeddings(args.data)
    if not 0 <= args.sample < len(samples):
        print(f"error: sample index {args.sample} out of range "
              f"(0..{len(samples) - 1})", file=sys.stderr)
        return 2
    trace: dict = {}
    M.forward(samples[args.sample], model_cfg, params, trace=trace)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for site, mat in sorted(trace.items()):
        dest = out_dir / (site.replace(".", "_") + ".csv")
        np.savetxt(dest, np.atleast_2d(mat), delimiter=",", fmt="%.17g")
    print(f"wrote {len(trace)} attention sites to {out_dir}")
    return 0


def cmd_ablate(args) -> int:
    values = parse_kv_file(args.config, RUN_SCHEMA)
    model_cfg = _model_cfg(values)
    train_cfg = _train_cfg(values)
    samples = D.read_embeddings(args.data)
    train_s, test_s = D.split(samples, 0.9, values["seed"])
    rows = TR.run_ablation_suite(train_s, test_s, model_cfg, train_cfg)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = [{
        "variant": name, "acc": r.accuracy,
        "fake_f1": r.fake.f1, "real_f1": r.real.f1,
        "by_type": {str(t): a for t, a in sorted(r.by_type.items())},
    } for name, r in rows]
    (out_dir / "ablation.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    lines = ["| Variant | Acc. | Fake F1 | Real F1 |",
             "|---|---|---|---|"]
    for row in payload:
        lines.append(f"| {row['variant']} | {row['acc']:.3f} | "
                     f"{row['fake_f1']:.3f} | {row['real_f1']:.3f} |")
    (out_dir / "ablation.md").write_text("\n".join(lines) + "\n",
                                         encoding="utf-8")
    for row in payload:
        print(f"{row['variant']:<18} acc={row['acc']:.3f} "
              f"fake_f1={row['fake_f1']:.3f} real_f1={row['real_f1']:.3f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mian")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic MIANEMB1 file")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="train and write checkpoint + metrics")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out-checkpoint", required=True)
    p.add_argument("--metrics", required=True)
    p.add_argument("--ablation", default=None,
                   help="comma list overriding the config's ablation key")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a data file")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--metrics", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("gradcheck",
                       help="finite-difference check of every parameter")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("inspect",
                       help="dump attention weight matrices for one sample")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--sample", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_inspect)

    p = sub.add_parser("ablate", help="train the five-variant comparison")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_ablate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, D.FormatError, ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
