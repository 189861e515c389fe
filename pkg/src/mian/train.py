"""Optimization loop, StepLR schedule, metrics, and the ablation driver."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import model as M
from .data import NewsSample
from .tensor import Tape, Tensor


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    lr0: float = 1e-3          # desk-scale default; the reference setup for
    optimizer: str = "adam"    # fine-tuning large encoders uses lr0 = 2e-6
    step_size: int = 20
    gamma: float = 0.5
    seed: int = 0
    threshold: float = 0.5
    target_accuracy: float | None = None  # optional early stop on test acc

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class ClassMetrics:
    precision: float = 0.0
    recall: float = 0.0
    f1: float = 0.0


@dataclass
class MetricsReport:
    epoch: int
    split: str
    accuracy: float
    fake: ClassMetrics = field(default_factory=ClassMetrics)
    real: ClassMetrics = field(default_factory=ClassMetrics)
    by_type: dict[int, float] = field(default_factory=dict)

    def to_json_line(self) -> str:
        return json.dumps({
            "epoch": self.epoch, "split": self.split,
            "acc": self.accuracy,
            "fake": {"pre": self.fake.precision, "rec": self.fake.recall,
                     "f1": self.fake.f1},
            "real": {"pre": self.real.precision, "rec": self.real.recall,
                     "f1": self.real.f1},
            "by_type": {str(t): a for t, a in sorted(self.by_type.items())},
        }, sort_keys=True)


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """StepLR: lr0 * gamma^floor(epoch / step_size)."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    return cfg.lr0 * cfg.gamma ** (epoch // cfg.step_size)


def _prf(tp: int, fp: int, fn: int) -> ClassMetrics:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return ClassMetrics(precision=p, recall=r, f1=f1)


def evaluate(cfg: M.ModelConfig, params: dict[str, Tensor],
             samples: list[NewsSample], threshold: float = 0.5,
             epoch: int = 0, split: str = "test") -> MetricsReport:
    if not samples:
        raise ValueError("evaluate: empty sample set")
    preds = []
    for s in samples:
        pred, *_ = M.forward(s, cfg, params)
        preds.append(M.predict_label(pred.y_hat, threshold))
    labels = [s.label for s in samples]
    correct = [p == y for p, y in zip(preds, labels)]
    acc = sum(correct) / len(samples)
    # "fake" is the positive class label 0, "real" is label 1
    tp_f = sum(1 for p, y in zip(preds, labels) if p == 0 and y == 0)
    fp_f = sum(1 for p, y in zip(preds, labels) if p == 0 and y == 1)
    fn_f = sum(1 for p, y in zip(preds, labels) if p == 1 and y == 0)
    tp_r = sum(1 for p, y in zip(preds, labels) if p == 1 and y == 1)
    fp_r = fn_f
    fn_r = fp_f
    by_type: dict[int, float] = {}
    for t in sorted({s.fake_type for s in samples}):
        idx = [i for i, s in enumerate(samples) if s.fake_type == t]
        by_type[t] = sum(correct[i] for i in idx) / len(idx)
    return MetricsReport(epoch=epoch, split=split, accuracy=acc,
                         fake=_prf(tp_f, fp_f, fn_f),
                         real=_prf(tp_r, fp_r, fn_r), by_type=by_type)


class _Adam:
    def __init__(self, params: dict[str, Tensor],
                 beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, params: dict[str, Tensor], grads: dict[str, np.ndarray],
             lr: float) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for k in params:  # dict order is creation order: deterministic
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            params[k].data -= lr * (self.m[k] / b1t) / (
                np.sqrt(self.v[k] / b2t) + self.eps)


class _Sgd:
    def step(self, params, grads, lr):
        for k in params:
            params[k].data -= lr * grads[k]


def train(model_cfg: M.ModelConfig, params: dict[str, Tensor],
          train_samples: list[NewsSample], test_samples: list[NewsSample],
          cfg: TrainConfig,
          ) -> tuple[dict[str, Tensor], list[MetricsReport]]:
    """Deterministic mini-batch training on the cross-entropy objective.

    Emits a train and a test report per epoch. Aborts with DivergenceError on
    a non-finite loss. When ``target_accuracy`` is set, stops after the first
    epoch whose test accuracy reaches it.
    """
    if not train_samples:
        raise ValueError("train: empty training set")
    opt = _Adam(params) if cfg.optimizer == "adam" else _Sgd()
    rng = np.random.default_rng(cfg.seed)
    history: list[MetricsReport] = []
    n = len(train_samples)
    for epoch in range(cfg.epochs):
        lr = lr_at(epoch, cfg)
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            for p in params.values():
                p.zero_grad()
            batch_loss = 0.0
            for j in sorted(batch):  # fixed accumulation order
                s = train_samples[j]
                with Tape() as tape:
                    pred, *_ = M.forward(s, model_cfg, params)
                    l = M.loss(pred.y_hat_t, s.label)
                    tape.backward(l)
                batch_loss += l.item()
            if not np.isfinite(batch_loss):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}, batch start {start}")
            scale = 1.0 / len(batch)
            grads = {k: (p.grad * scale if p.grad is not None
                         else np.zeros_like(p.data))
                     for k, p in params.items()}
            opt.step(params, grads, lr)
        history.append(evaluate(model_cfg, params, train_samples,
                                cfg.threshold, epoch, "train"))
        test_report = evaluate(model_cfg, params, test_samples,
                               cfg.threshold, epoch, "test")
        history.append(test_report)
        if (cfg.target_accuracy is not None
                and test_report.accuracy >= cfg.target_accuracy):
            break
    return params, history


ABLATION_VARIANTS: tuple[tuple[str, frozenset], ...] = (
    ("MIAN", frozenset()),
    ("w/o intra-lg", frozenset({"intra_lg"})),
    ("w/o intra-lg-ic", frozenset({"intra_lg_ic"})),
    ("w/o intra-ll-ic", frozenset({"intra_ll_ic"})),
    ("w/o inter-ic", frozenset({"inter_ic"})),
)


def run_ablation_suite(train_samples: list[NewsSample],
                       test_samples: list[NewsSample],
                       model_cfg: M.ModelConfig, train_cfg: TrainConfig,
                       ) -> list[tuple[str, MetricsReport]]:
    """Train the full model and the four ablations under identical seeds and
    data order; returns one final test report per variant."""
    types = {s.fake_type for s in train_samples}
    if not {0, 1, 2, 3} <= types:
        raise ValueError(
            f"ablation suite needs all four fake types, got {sorted(types)}")
    rows = []
    for name, flags in ABLATION_VARIANTS:
        cfg_v = replace(model_cfg, ablation=flags)
        params = M.init_params(cfg_v)
        params, history = train(cfg_v, params, train_samples, test_samples,
                                train_cfg)
        final_test = [r for r in history if r.split == "test"][-1]
        rows.append((name, final_test))
    return rows
