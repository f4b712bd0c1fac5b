"""Splitting, Adam, the mini-batch training loop and contract-level evaluation."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from bytescan import model as M
from bytescan import tokenizer
from bytescan.corpus.records import ContractRecord, class_names
from bytescan.errors import DatasetDegenerate, EmptyDataset, LabelMismatch, ShapeError
from bytescan.window import MAX, WindowConfig, aggregate, make_windows

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 0.0005
    epochs: int = 50
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    # stop once contract-level validation accuracy reaches this value
    target_val_accuracy: float | None = None

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.68
    val_fraction: float = 0.15

    def __post_init__(self) -> None:
        if self.train_fraction < 0 or self.val_fraction < 0 or self.train_fraction + self.val_fraction >= 1:
            raise ValueError("train_fraction + val_fraction must be < 1")

    def sizes(self, n: int) -> tuple[int, int, int]:
        # exact rational arithmetic: 0.68 * 25 must floor to 17, not 16
        n_train = math.floor(Fraction(repr(self.train_fraction)) * n)
        n_val = math.floor(Fraction(repr(self.val_fraction)) * n)
        return n_train, n_val, n - n_train - n_val


def split(records: Sequence, spec: SplitSpec = SplitSpec(), seed: int = 0) -> tuple[list, list, list]:
    """Seeded shuffle, then floor(train), floor(val) and the remainder as test."""
    if len(records) == 0:
        raise EmptyDataset("cannot split an empty dataset")
    n_train, n_val, _ = spec.sizes(len(records))
    perm = np.random.default_rng(seed).permutation(len(records))
    shuffled = [records[i] for i in perm]
    return shuffled[:n_train], shuffled[n_train : n_train + n_val], shuffled[n_train + n_val :]


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState, cfg: TrainConfig):
    """One bias-corrected Adam update. Returns new parameter and state objects."""
    t = state.t + 1
    b1, b2 = cfg.beta1, cfg.beta2
    new_p, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = b1 * state.m.get(name, 0.0) + (1.0 - b1) * g
        v = b2 * state.v.get(name, 0.0) + (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        new_p[name] = p - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon)
        new_m[name] = m
        new_v[name] = v
    return new_p, AdamState(new_m, new_v, t)


# ---------------------------------------------------------------------------
# windowed data
# ---------------------------------------------------------------------------


@dataclass
class WindowedSet:
    ids: np.ndarray  # [N, W]
    targets: np.ndarray  # [N] class index inherited from the contract
    contract: np.ndarray  # [N] contract index
    starts: np.ndarray  # [N]
    contract_targets: np.ndarray  # [C]
    addresses: list[str]
    num_classes: int

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def n_contracts(self) -> int:
        return len(self.contract_targets)


def encode_records(
    records: Sequence[ContractRecord], vocab: tokenizer.Vocabulary, num_classes: int, wcfg: WindowConfig
) -> WindowedSet:
    ids, targets, contract, starts = [], [], [], []
    ctargets = []
    for ci, rec in enumerate(records):
        t = rec.label.class_index(num_classes)
        batch = make_windows(tokenizer.encode(rec.hex_tokens, vocab), wcfg, rec.address)
        ids.append(batch.ids)
        starts.append(batch.starts)
        targets.append(np.full(len(batch), t, dtype=np.int64))
        contract.append(np.full(len(batch), ci, dtype=np.int64))
        ctargets.append(t)
    w = wcfg.window_size
    return WindowedSet(
        np.concatenate(ids) if ids else np.empty((0, w), dtype=np.int64),
        np.concatenate(targets) if targets else np.empty(0, dtype=np.int64),
        np.concatenate(contract) if contract else np.empty(0, dtype=np.int64),
        np.concatenate(starts) if starts else np.empty(0, dtype=np.int64),
        np.asarray(ctargets, dtype=np.int64),
        [r.address for r in records],
        num_classes,
    )


def _onehot(targets: np.ndarray, c: int) -> np.ndarray:
    out = np.zeros((len(targets), c))
    out[np.arange(len(targets)), targets] = 1.0
    return out


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


@dataclass
class EvalReport:
    confusion: np.ndarray  # rows = true class, columns = predicted
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    accuracy: float
    loss: float = float("nan")
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        assert (self.confusion >= 0).all()
        assert (self.confusion.sum(axis=1) == self.support).all()
        total = self.confusion.sum()
        assert total == 0 or self.accuracy == np.trace(self.confusion) / total

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "loss": self.loss,
            "total": self.total,
            "classes": [
                {
                    "class": name,
                    "precision": float(self.precision[i]),
                    "recall": float(self.recall[i]),
                    "f1": float(self.f1[i]),
                    "support": int(self.support[i]),
                }
                for i, name in enumerate(self.class_names)
            ],
            "confusion": self.confusion.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def format_table(self) -> str:
        width = max(len(n) for n in self.class_names + ["class"])
        lines = [f"{'class':<{width}}  precision  recall  f1-score  support"]
        for i, name in enumerate(self.class_names):
            lines.append(
                f"{name:<{width}}  {self.precision[i]:9.2f}  {self.recall[i]:6.2f}  {self.f1[i]:8.2f}  {int(self.support[i]):7d}"
            )
        lines.append(f"accuracy {self.accuracy:.4f} over {self.total} contracts")
        lines.append("confusion (rows true, columns predicted):")
        lines += ["  " + " ".join(f"{v:6d}" for v in row) for row in self.confusion.tolist()]
        return "\n".join(lines)


def build_report(labels, predictions, num_classes: int, loss: float = float("nan")) -> EvalReport:
    labels = np.asarray(labels, dtype=np.int64)
    predictions = np.asarray(predictions, dtype=np.int64)
    conf = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(conf, (labels, predictions), 1)
    tp = np.diag(conf).astype(np.float64)
    predicted = conf.sum(axis=0)
    support = conf.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(predicted > 0, tp / predicted, 0.0)
        recall = np.where(support > 0, tp / support, 0.0)
        f1 = np.where(precision + recall > 0, 2 * precision * recall / (precision + recall), 0.0)
    total = conf.sum()
    acc = float(np.trace(conf) / total) if total else 0.0
    return EvalReport(conf, precision, recall, f1, support, acc, loss, class_names(num_classes))


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    val_contract_acc: float = float("nan")

    def line(self) -> str:
        return (
            f"epoch={self.epoch} train_loss={self.train_loss:.6f} train_acc={self.train_acc:.6f} "
            f"val_loss={self.val_loss:.6f} val_acc={self.val_acc:.6f} val_contract_acc={self.val_contract_acc:.6f}"
        )


@dataclass
class TrainHistory:
    epochs: list[EpochRecord] = field(default_factory=list)
    steps: int = 0

    def to_csv(self) -> str:
        rows = ["epoch,train_loss,train_acc,val_loss,val_acc,val_contract_acc"]
        rows += [
            f"{e.epoch},{e.train_loss!r},{e.train_acc!r},{e.val_loss!r},{e.val_acc!r},{e.val_contract_acc!r}"
            for e in self.epochs
        ]
        return "\n".join(rows) + "\n"


def window_metrics(params, cfg: M.ModelConfig, data: WindowedSet, batch_size: int = 32) -> tuple[float, float]:
    """Inference-mode mean cross-entropy and accuracy over windows."""
    if len(data) == 0:
        return float("nan"), float("nan")
    return _window_scores(M.predict_proba(params, cfg, data.ids, batch_size), data.targets)


def _window_scores(probs: np.ndarray, targets: np.ndarray) -> tuple[float, float]:
    picked = probs[np.arange(len(targets)), targets]
    loss = float(-np.mean(np.log(np.clip(picked, 1e-300, None))))
    return loss, float(np.mean(probs.argmax(axis=1) == targets))


def _aggregate_contracts(probs: np.ndarray, data: WindowedSet, strategy: str) -> np.ndarray:
    out = np.empty((data.n_contracts, probs.shape[1]))
    for ci in range(data.n_contracts):
        out[ci] = aggregate(probs[data.contract == ci], strategy)
    return out


def _validate(params, cfg: M.ModelConfig, data: WindowedSet | None, strategy: str) -> tuple[float, float, float]:
    if data is None or len(data) == 0:
        return float("nan"), float("nan"), float("nan")
    probs = M.predict_proba(params, cfg, data.ids)
    loss, acc = _window_scores(probs, data.targets)
    agg = _aggregate_contracts(probs, data, strategy)
    return loss, acc, float(np.mean(agg.argmax(axis=1) == data.contract_targets))


def train(
    model_cfg: M.ModelConfig,
    train_set: WindowedSet,
    val_set: WindowedSet | None,
    cfg: TrainConfig,
    on_epoch: Callable[[EpochRecord], None] | None = None,
    params: dict[str, np.ndarray] | None = None,
    aggregation: str = MAX,
) -> tuple[dict[str, np.ndarray], TrainHistory]:
    """Mini-batch Adam on windows with inherited contract labels.

    The model kind follows the config type. All randomness (initialisation,
    shuffling, dropout) comes from one generator seeded with ``cfg.seed``.
    After each epoch the validation windows are scored, and their
    probabilities are aggregated per contract with ``aggregation``; training
    stops early once that accuracy reaches ``cfg.target_val_accuracy``.
    """
    if len(train_set) == 0:
        raise EmptyDataset("no training windows")
    rng = np.random.default_rng(cfg.seed)
    if params is None:
        params = M.init_params(model_cfg, rng)
    state = AdamState()
    history = TrainHistory()
    c = model_cfg.num_classes
    n = len(train_set)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        total_loss = 0.0
        correct = 0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            tgt = train_set.targets[idx]
            loss, grads, probs = M.loss_and_grads(params, model_cfg, train_set.ids[idx], _onehot(tgt, c), True, rng)
            params, state = adam_step(params, grads, state, cfg)
            history.steps += 1
            total_loss += loss * len(idx)
            correct += int((probs.argmax(axis=1) == tgt).sum())
        rec = EpochRecord(epoch, total_loss / n, correct / n, *_validate(params, model_cfg, val_set, aggregation))
        history.epochs.append(rec)
        log.info(rec.line())
        if on_epoch is not None:
            on_epoch(rec)
        if cfg.target_val_accuracy is not None and rec.val_contract_acc >= cfg.target_val_accuracy:
            break
    return params, history


def contract_probabilities(params, cfg: M.ModelConfig, data: WindowedSet, wcfg: WindowConfig, batch_size: int = 32) -> np.ndarray:
    return _aggregate_contracts(M.predict_proba(params, cfg, data.ids, batch_size), data, wcfg.aggregation)


def evaluate(params, cfg: M.ModelConfig, data: WindowedSet, wcfg: WindowConfig) -> EvalReport:
    """Contract-level report: aggregate window probabilities, then argmax."""
    if data.n_contracts == 0:
        raise EmptyDataset("nothing to evaluate")
    agg = contract_probabilities(params, cfg, data, wcfg)
    picked = agg[np.arange(data.n_contracts), data.contract_targets]
    loss = float(-np.mean(np.log(np.clip(picked, 1e-300, None))))
    return build_report(data.contract_targets, agg.argmax(axis=1), cfg.num_classes, loss)


# ---------------------------------------------------------------------------
# pipelines
# ---------------------------------------------------------------------------


def with_vocab_size(cfg: M.ModelConfig, vocab_size: int) -> M.ModelConfig:
    return M.config_from_dict(M.kind_of(cfg), {**cfg.to_dict(), "vocab_size": vocab_size})


@dataclass
class RunResult:
    params: dict[str, np.ndarray]
    model_cfg: M.ModelConfig
    vocab: tokenizer.Vocabulary
    history: TrainHistory
    report: EvalReport
    split_sizes: tuple[int, int, int] = (0, 0, 0)


def check_classes(records: Sequence[ContractRecord], num_classes: int) -> None:
    present = {r.label.class_index(num_classes) for r in records}
    if len(present) < 2:
        raise DatasetDegenerate(f"dataset holds a single class ({sorted(present)}); need at least two")


def train_pipeline(
    records: Sequence[ContractRecord],
    model_cfg: M.ModelConfig,
    train_cfg: TrainConfig,
    wcfg: WindowConfig,
    spec: SplitSpec = SplitSpec(),
    capacity: int = tokenizer.DEFAULT_CAPACITY,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> RunResult:
    """Split, fit the vocabulary on the training part, train, evaluate on test."""
    check_classes(records, model_cfg.num_classes)
    tr, va, te = split(records, spec, train_cfg.seed)
    vocab = tokenizer.fit((r.hex_tokens for r in tr), capacity)
    model_cfg = with_vocab_size(model_cfg, capacity)
    c = model_cfg.num_classes
    params, history = train(model_cfg, encode_records(tr, vocab, c, wcfg), encode_records(va, vocab, c, wcfg), train_cfg, on_epoch, aggregation=wcfg.aggregation)
    report = evaluate(params, model_cfg, encode_records(te, vocab, c, wcfg), wcfg) if te else build_report([], [], c)
    return RunResult(params, model_cfg, vocab, history, report, (len(tr), len(va), len(te)))


def cross_dataset_run(
    train_records: Sequence[ContractRecord],
    test_records: Sequence[ContractRecord],
    model_cfg: M.ModelConfig,
    train_cfg: TrainConfig,
    wcfg: WindowConfig,
    capacity: int = tokenizer.DEFAULT_CAPACITY,
) -> RunResult:
    """Train on every record of one dataset, evaluate on every record of another."""
    c = model_cfg.num_classes
    if not test_records:
        raise EmptyDataset("empty test dataset")
    seen = {r.label.class_index(c) for r in train_records}
    unseen = {r.label.class_index(c) for r in test_records} - seen
    if unseen:
        raise LabelMismatch(f"test classes {sorted(unseen)} never occur in the training dataset")
    check_classes(train_records, c)
    vocab = tokenizer.fit((r.hex_tokens for r in train_records), capacity)
    model_cfg = with_vocab_size(model_cfg, capacity)
    params, history = train(model_cfg, encode_records(train_records, vocab, c, wcfg), None, train_cfg, aggregation=wcfg.aggregation)
    report = evaluate(params, model_cfg, encode_records(test_records, vocab, c, wcfg), wcfg)
    return RunResult(params, model_cfg, vocab, history, report, (len(train_records), 0, len(test_records)))
