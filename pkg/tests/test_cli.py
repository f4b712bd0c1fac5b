from __future__ import annotations

import json

import numpy as np
import pytest

from bytescan import checkpoint as ckpt_io
from bytescan import model as M
from bytescan import tokenizer
from bytescan.cli import EXIT_ERROR, EXIT_FLAGGED, EXIT_OK, build_configs, build_parser, main
from bytescan.corpus import SynthConfig, VulnLabel, load_csv, synthesize_corpus, write_csv
from bytescan.window import WindowConfig

TINY_FLAGS = [
    "--config", "embedding_dim=16",
    "--config", "head_size=16",
    "--config", "num_heads=2",
    "--config", "ff_dim=32",
    "--window-size", "64",
    "--epochs", "1",
]


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "train.csv"
    write_csv(synthesize_corpus(30, SynthConfig(60, 150), seed=0), path)
    return path


@pytest.fixture(scope="module")
def trained(tmp_path_factory, corpus):
    out = tmp_path_factory.mktemp("run")
    assert main(["train", str(corpus), "--out", str(out), *TINY_FLAGS]) == EXIT_OK
    return out


def constant_checkpoint(path, vulnerable: bool, window: int = 2048):
    """A model whose output bias decides every verdict."""
    cfg = M.TransformerConfig(max_length=window, embedding_dim=8, num_heads=2, head_size=8, ff_dim=8)
    params = {k: np.zeros_like(v) for k, v in M.init_params(cfg, np.random.default_rng(0)).items()}
    params["output.b"] = np.array([0.0, 5.0] if vulnerable else [5.0, 0.0])
    vocab = tokenizer.fit([["60", "80"]])
    ckpt_io.save(ckpt_io.Checkpoint("transformer", cfg, params, vocab, WindowConfig(window)), path)
    return path


def test_synth_writes_loadable_csv(tmp_path):
    out = tmp_path / "s.csv"
    assert main(["synth", "100", "--seed", "3", "--out", str(out)]) == EXIT_OK
    recs = load_csv(out)
    assert len(recs) == 100
    assert sum(r.label is VulnLabel.GREEDY for r in recs) == 50
    out4 = tmp_path / "s4.csv"
    assert main(["synth", "40", "--classes", "4", "--min-length", "80", "--max-length", "120", "--out", str(out4)]) == 0
    assert {r.label for r in load_csv(out4)} == set(VulnLabel)


def test_disasm_listing(tmp_path, capsys):
    src = tmp_path / "code.hex"
    src.write_text("0x6080604052\n")
    assert main(["disasm", str(src)]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "0000: PUSH1 0x80"
    assert lines[2] == "0004: MSTORE"


def test_scan_exit_codes(tmp_path, capsys):
    inputs = tmp_path / "in.txt"
    inputs.write_text("6080604052\n\n60016002\n")
    clean = constant_checkpoint(tmp_path / "clean.ckpt", vulnerable=False)
    flagged = constant_checkpoint(tmp_path / "flag.ckpt", vulnerable=True)
    assert main(["scan", str(inputs), "--checkpoint", str(clean)]) == EXIT_OK
    captured = capsys.readouterr()
    reports = [json.loads(line) for line in captured.out.splitlines()]
    assert [r["address"] for r in reports] == ["in.txt:1", "in.txt:3"]
    assert "scanned 2 contracts: 0 flagged, 0 errors" in captured.err
    out = tmp_path / "report.json"
    assert main(["scan", str(inputs), "--checkpoint", str(flagged), "--out", str(out)]) == EXIT_FLAGGED
    saved = json.loads(out.read_text())
    assert all(r["vulnerable"] and r["predicted"] == "vulnerable" for r in saved)
    assert saved[0]["checkpoint"] == ckpt_io.fingerprint(flagged)
    assert main(["scan", str(inputs), "--checkpoint", str(tmp_path / "missing.ckpt")]) == EXIT_ERROR


def test_scan_reports_windows_and_bad_rows(tmp_path, capsys):
    ck = constant_checkpoint(tmp_path / "c.ckpt", vulnerable=False)
    inputs = tmp_path / "in.txt"
    inputs.write_text("00" * 3000 + "\nzz\n")
    assert main(["scan", str(inputs), "--checkpoint", str(ck)]) == EXIT_OK
    first, second = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert [w["start"] for w in first["windows"]] == [0, 1536]
    assert second["error"] and second["windows"] == []
    assert main(["scan", str(inputs), "--checkpoint", str(ck), "--strict"]) == EXIT_ERROR


def test_train_outputs(trained):
    names = {p.name for p in trained.iterdir()}
    assert {"model.ckpt", "vocab.tsv", "history.csv", "report.json", "metrics.log"} <= names
    log = (trained / "metrics.log").read_text().splitlines()
    assert log[0] == "split train=20 val=4 test=6"
    assert log[1].startswith("epoch=1 ")
    ck = ckpt_io.load(trained / "model.ckpt")
    assert ck.config.embedding_dim == 16 and ck.config.max_length == 64 and ck.window.window_size == 64
    assert json.loads((trained / "report.json").read_text())["total"] == 6


def test_train_is_deterministic(tmp_path, corpus, trained):
    again = tmp_path / "again"
    assert main(["train", str(corpus), "--out", str(again), *TINY_FLAGS]) == EXIT_OK
    for name in ("model.ckpt", "metrics.log", "history.csv", "report.json", "vocab.tsv"):
        assert (again / name).read_bytes() == (trained / name).read_bytes(), name


def test_train_lstm(tmp_path, corpus):
    flags = ["--model", "lstm", "--config", "embedding_dim=8", "--config", "head_dim=8", "--window-size", "64", "--epochs", "1"]
    assert main(["train", str(corpus), "--out", str(tmp_path), *flags]) == EXIT_OK
    assert ckpt_io.load(tmp_path / "model.ckpt").kind == "lstm"


def test_eval(tmp_path, corpus, trained, capsys):
    out = tmp_path / "eval.json"
    assert main(["eval", str(corpus), "--checkpoint", str(trained / "model.ckpt"), "--out", str(out)]) == EXIT_OK
    assert json.loads(out.read_text())["total"] == 30
    assert main(["eval", str(corpus), "--checkpoint", str(trained / "model.ckpt"), "--classes", "4"]) == EXIT_ERROR
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    assert main(["eval", str(empty), "--checkpoint", str(trained / "model.ckpt")]) == EXIT_ERROR


def test_ingest_without_network(tmp_path):
    addrs = tmp_path / "a.txt"
    addrs.write_text("0x" + "ab" * 20 + "\n")
    code = main(["ingest", str(addrs), str(tmp_path / "o.csv"), "--api-key", "K", "--api-url", "http://127.0.0.1:9/api"])
    assert code == EXIT_ERROR


def test_config_flags():
    parser = build_parser()
    args = parser.parse_args(["train", "d.csv", "--config", "learning_rate=0.001", "--config", "dropout=0.1", "--window-size", "256"])
    model_cfg, train_cfg, wcfg = build_configs(args)
    assert model_cfg.max_length == 256 and model_cfg.dropout_rate == 0.1
    assert train_cfg.learning_rate == 0.001 and wcfg.stride == 192
    lstm = build_configs(parser.parse_args(["train", "d.csv", "--model", "lstm", "--config", "head_dim=64"]))[0]
    assert lstm.hidden_size == 64 and lstm.max_length == 2048
    assert main(["train", "d.csv", "--config", "nonsense=1"]) == EXIT_ERROR
    assert main(["train", "d.csv", "--config", "max_length=32", "--window-size", "64"]) == EXIT_ERROR
