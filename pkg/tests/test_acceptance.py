"""Acceptance gate: one test (or parametrized family) per criterion.

The summary at the end of the pytest run prints one PASS/FAIL line per
criterion, collected by the hook in ``conftest.py``.
"""

from __future__ import annotations

import dataclasses
import time

import numpy as np
import pytest

from bytescan import checkpoint as ckpt_io
from bytescan import model as M
from bytescan import tokenizer
from bytescan import training as T
from bytescan.cli import main as cli_main
from bytescan.corpus import ContractRecord, SynthConfig, VulnLabel, load_csv, parse_label, render_label, synthesize_corpus, write_csv
from bytescan.evm import disassemble, parse_hex, to_hex_tokens
from bytescan.window import WindowConfig, make_windows

import reference


def criterion(number: int, title: str):
    return pytest.mark.criterion(number, title)


# ---------------------------------------------------------------------------
# 1. disassembly fidelity
# ---------------------------------------------------------------------------

HELLO = "60806040523480156200001157600080fd5b5060405162000bf23803"


@criterion(1, "disassembly fidelity")
def test_disassembly_fidelity(record_property):
    t0 = time.perf_counter()
    seq = disassemble(parse_hex(HELLO))
    tokens = " ".join(to_hex_tokens(parse_hex(HELLO)))
    elapsed = time.perf_counter() - t0
    first = [(i.mnemonic, i.immediate.hex()) for i in seq.instructions[:3]]
    assert first == [("PUSH1", "80"), ("PUSH1", "40"), ("MSTORE", "")]
    assert tokens.startswith("60 80 60 40 52 34 80 15 62 00 00 11 57 60 00")
    assert elapsed < 1.0
    record_property("detail", f"{elapsed * 1e3:.2f} ms")


# ---------------------------------------------------------------------------
# 2. parameter counts
# ---------------------------------------------------------------------------


@criterion(2, "parameter-count fidelity")
def test_parameter_counts(record_property):
    cfg = M.TransformerConfig(vocab_size=1000, num_classes=2)
    counts = M.param_count(M.init_params(cfg, np.random.default_rng(0)))
    got = (counts["embedding"], counts["attention"], counts["pooling_projection"], counts["output_linear"])
    record_property("detail", "embedding={} attention={} pooling={} output={}".format(*got))
    assert got == (128_000, 65_536, 16_384, 258)


# ---------------------------------------------------------------------------
# 3. gradient correctness
# ---------------------------------------------------------------------------

GC_TRANSFORMER = M.TransformerConfig(vocab_size=16, max_length=6, embedding_dim=8, num_heads=2, head_size=8, ff_dim=16)
GC_LSTM = M.LstmConfig(vocab_size=16, max_length=6, embedding_dim=8, hidden_size=12)
GC_FLOOR = 1e-8  # entries this small carry no relative information


def worst_relative_error(kind: str, cfg, seed: int) -> float:
    rng = np.random.default_rng(seed)
    params = M.init_params(cfg, rng)
    ids = rng.integers(1, 16, size=(3, 6))
    ids[1, 4:] = 0  # exercise masking
    onehot = np.eye(2)[rng.integers(0, 2, size=3)]
    _, grads, _ = M.loss_and_grads(params, cfg, ids, onehot, False, None)
    numeric = reference.numeric_grad(lambda q: reference.loss(kind, q, cfg, ids, onehot), params)
    assert set(grads) == set(numeric)
    worst = 0.0
    for name, analytic in grads.items():
        approx = numeric[name].astype(np.float64)
        scale = np.maximum(np.abs(analytic), np.abs(approx))
        sel = scale > GC_FLOOR
        if sel.any():
            worst = max(worst, float((np.abs(analytic - approx)[sel] / scale[sel]).max()))
    return worst


@criterion(3, "gradient correctness")
@pytest.mark.parametrize("seed", range(3))
def test_gradient_correctness(seed, record_property):
    t0 = time.perf_counter()
    errs = {kind: worst_relative_error(kind, cfg, seed) for kind, cfg in (("transformer", GC_TRANSFORMER), ("lstm", GC_LSTM))}
    elapsed = time.perf_counter() - t0
    record_property("detail", f"seed {seed}: transformer {errs['transformer']:.1e}, lstm {errs['lstm']:.1e}, {elapsed:.0f}s")
    assert max(errs.values()) <= 1e-6
    assert elapsed < 40  # three seeds within two minutes


# ---------------------------------------------------------------------------
# 4. attention / pooling normalization
# ---------------------------------------------------------------------------


@criterion(4, "attention/pooling normalization")
def test_attention_normalization(record_property):
    rng = np.random.default_rng(0)
    cfg = M.TransformerConfig(vocab_size=50, max_length=24, embedding_dim=16, num_heads=4, head_size=16, ff_dim=32)
    params = M.init_params(cfg, rng)
    worst_sum, worst_masked = 0.0, 0.0
    for _ in range(100):
        length = int(rng.integers(1, 25))
        ids = np.zeros((1, 24), dtype=np.int64)
        ids[0, :length] = rng.integers(1, 50, size=length)
        keep = ids != 0
        _, trace = M.forward_with_trace(params, cfg, ids)
        keys = np.broadcast_to(keep[:, None, None, :], trace.attention.shape)
        worst_sum = max(worst_sum, np.abs(np.where(keys, trace.attention, 0).sum(-1) - 1).max())
        worst_sum = max(worst_sum, np.abs(np.where(keep, trace.pooling, 0).sum(-1) - 1).max())
        masked = np.concatenate([trace.attention[~keys], trace.pooling[~keep]])
        if masked.size:
            worst_masked = max(worst_masked, masked.max())
    record_property("detail", f"row-sum error {worst_sum:.1e}, masked weight {worst_masked:.1e}")
    assert worst_sum <= 1e-9 and worst_masked <= 1e-12


# ---------------------------------------------------------------------------
# 5. sliding-window law
# ---------------------------------------------------------------------------


@criterion(5, "sliding-window law")
def test_sliding_window_law(record_property):
    cfg = WindowConfig()
    assert cfg.stride == 1536
    rng = np.random.default_rng(0)
    lengths = rng.integers(1, 50_001, size=1000)
    for length in lengths:
        batch = make_windows(np.ones(int(length), dtype=np.int64), cfg)
        starts = batch.starts
        assert np.array_equal(starts, 1536 * np.arange(len(starts)))
        covered = np.zeros(length, dtype=bool)
        for s in starts:
            covered[s : s + 2048] = True
        assert covered.all()
        full = [s for s in starts if s + 2048 <= length]
        for a, b in zip(full, full[1:]):
            assert a + 2048 - b == 512
        if length <= 2048:
            assert len(starts) == 1
    assert make_windows(np.ones(3000, dtype=np.int64), cfg).starts.tolist() == [0, 1536]
    record_property("detail", f"{len(lengths)} lengths")


# ---------------------------------------------------------------------------
# 6. split fidelity
# ---------------------------------------------------------------------------


@criterion(6, "split fidelity")
def test_split_fidelity(record_property):
    tr, va, te = T.split(list(range(1915)), T.SplitSpec(), seed=0)
    record_property("detail", f"{len(tr)}/{len(va)}/{len(te)}")
    assert (len(tr), len(va), len(te)) == (1302, 287, 326)
    assert sorted(tr + va + te) == list(range(1915))


# ---------------------------------------------------------------------------
# 7. learnability
# ---------------------------------------------------------------------------

LEARN_BUDGET_S = 30 * 60
LEARN_WINDOW = WindowConfig(256, 0.25)
LEARN_TRANSFORMER = M.TransformerConfig(
    vocab_size=1000, max_length=256, embedding_dim=32, num_heads=4, head_size=32, ff_dim=128
)
LEARN_LSTM = M.LstmConfig(vocab_size=1000, max_length=256, embedding_dim=32, hidden_size=64)
LEARN_TRAIN = T.TrainConfig(epochs=50, seed=0, learning_rate=3e-3, target_val_accuracy=0.98)


class BudgetExceeded(Exception):
    pass


def _budget_guard(deadline: float, log: list[str]):
    def on_epoch(rec: T.EpochRecord) -> None:
        log.append(rec.line())
        print(rec.line(), flush=True)
        if time.perf_counter() > deadline:
            raise BudgetExceeded(f"runtime budget exhausted after epoch {rec.epoch}")

    return on_epoch


@criterion(7, "learnability on the synthetic motif corpus")
@pytest.mark.slow
def test_learnability(record_property):
    records = synthesize_corpus(1000, SynthConfig(200, 3000), seed=0)
    assert {r.label for r in records} == {VulnLabel.NORMAL, VulnLabel.GREEDY}
    t0 = time.perf_counter()
    deadline = t0 + LEARN_BUDGET_S
    log: list[str] = []
    try:
        run = T.train_pipeline(records, LEARN_TRANSFORMER, LEARN_TRAIN, LEARN_WINDOW, on_epoch=_budget_guard(deadline, log))
    except BudgetExceeded as exc:
        record_property("detail", f"transformer: {exc}; last {log[-1] if log else 'none'}")
        pytest.fail(str(exc))
    t_transformer = time.perf_counter() - t0
    epochs = len(run.history.epochs)
    record_property("detail", f"transformer test acc {run.report.accuracy:.4f} after {epochs} epochs, {t_transformer:.0f}s")

    # the baseline gets the identical protocol and the same epoch budget the transformer used
    lstm_train = dataclasses.replace(LEARN_TRAIN, epochs=epochs)
    try:
        baseline = T.train_pipeline(records, LEARN_LSTM, lstm_train, LEARN_WINDOW, on_epoch=_budget_guard(deadline, log))
    except BudgetExceeded as exc:
        record_property("detail", f"lstm: {exc}")
        pytest.fail(str(exc))
    total = time.perf_counter() - t0
    record_property("detail", f"lstm test acc {baseline.report.accuracy:.4f}; combined {total:.0f}s")
    print(run.report.format_table())
    print(baseline.report.format_table())

    assert run.split_sizes == baseline.split_sizes
    assert baseline.report.total == run.report.total
    assert baseline.report.class_names == run.report.class_names
    assert run.report.accuracy >= 0.95
    assert total < LEARN_BUDGET_S


# ---------------------------------------------------------------------------
# 8. metric oracle
# ---------------------------------------------------------------------------


def brute_force(labels, preds, c):
    rows = []
    for k in range(c):
        tp = fp = fn = 0
        for y, p in zip(labels, preds):
            tp += y == k and p == k
            fp += y != k and p == k
            fn += y == k and p != k
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        rows.append((prec, rec, f1))
    return rows, sum(y == p for y, p in zip(labels, preds)) / len(labels)


@criterion(8, "metric oracle")
def test_metric_oracle(record_property):
    rng = np.random.default_rng(8)
    for _ in range(100):
        c = int(rng.choice([2, 4]))
        n = int(rng.integers(1, 200))
        labels, preds = rng.integers(0, c, n).tolist(), rng.integers(0, c, n).tolist()
        rep = T.build_report(labels, preds, c)
        rows, acc = brute_force(labels, preds, c)
        assert rep.accuracy == acc
        for k, (prec, rec, f1) in enumerate(rows):
            assert (rep.precision[k], rep.recall[k], rep.f1[k]) == (prec, rec, f1)
    record_property("detail", "100 sets, exact")


# ---------------------------------------------------------------------------
# 9. determinism
# ---------------------------------------------------------------------------


@criterion(9, "determinism of cmd_train")
@pytest.mark.parametrize("kind", ["transformer", "lstm"])
def test_train_determinism(tmp_path, kind, record_property):
    data = tmp_path / "corpus.csv"
    write_csv(synthesize_corpus(40, SynthConfig(60, 200), seed=1), data)
    if kind == "transformer":
        flags = ["--config", "embedding_dim=16", "--config", "head_size=16", "--config", "num_heads=2", "--config", "ff_dim=32"]
    else:
        flags = ["--model", "lstm", "--config", "embedding_dim=16", "--config", "head_dim=16"]
    flags += ["--window-size", "64", "--epochs", "2", "--seed", "7"]
    for out in ("a", "b"):
        assert cli_main(["train", str(data), "--out", str(tmp_path / out), *flags]) == 0
    for name in ("model.ckpt", "metrics.log"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
    record_property("detail", f"{kind}: identical checkpoint and metrics log")


# ---------------------------------------------------------------------------
# 10. data roundtrips
# ---------------------------------------------------------------------------


@criterion(10, "data roundtrips")
def test_data_roundtrips(tmp_path, record_property):
    rng = np.random.default_rng(10)
    records = [
        ContractRecord.labeled(
            "0x" + rng.bytes(20).hex(),
            tuple(f"{b:02x}" for b in rng.integers(0, 256, int(rng.integers(1, 60)))),
            VulnLabel(int(rng.integers(0, 4))),
        )
        for _ in range(50)
    ]
    path = tmp_path / "d.csv"
    write_csv(records, path)
    assert load_csv(path) == records

    for label in VulnLabel:
        assert parse_label(render_label(label)) is label

    cfg = M.TransformerConfig(vocab_size=64, max_length=32, embedding_dim=16, num_heads=2, head_size=16, ff_dim=32)
    params = M.init_params(cfg, rng)
    vocab = tokenizer.fit([r.hex_tokens for r in records], capacity=64)
    ck_path = tmp_path / "m.ckpt"
    ckpt_io.save(ckpt_io.Checkpoint("transformer", cfg, params, vocab, WindowConfig(32)), ck_path)
    back = ckpt_io.load(ck_path)
    ids = rng.integers(1, 64, size=(8, 32))
    diff = float(np.max(np.abs(M.forward(params, cfg, ids) - M.forward(back.params, back.config, ids))))
    record_property("detail", f"csv 50 records, 4 labels, checkpoint forward diff {diff:.1e}")
    assert diff <= 1e-15
