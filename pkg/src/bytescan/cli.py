"""``bytescan`` command-line entry point.

Exit codes are a stable contract for automation: 0 clean, 1 operational
error, 2 at least one contract flagged vulnerable by ``scan``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from bytescan import __version__
from bytescan import checkpoint as ckpt_io
from bytescan import model as M
from bytescan import tokenizer, training
from bytescan.corpus import (
    BalancePolicy,
    ContractRecord,
    SynthConfig,
    VulnLabel,
    class_names,
    filter_and_balance,
    heuristic_label,
    load_csv,
    synthesize_corpus,
    write_csv,
)
from bytescan.corpus import etherscan
from bytescan.errors import BytescanError, LabelMismatch, RowError
from bytescan.evm import disassemble, parse_hex, to_hex_tokens, tokens_to_bytes
from bytescan.window import MAX, MEAN, WindowConfig, aggregate, make_windows

log = logging.getLogger("bytescan")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_FLAGGED = 2

# --config keys, by the name used in the hyperparameter table
MODEL_KEYS = {
    M.TRANSFORMER: {
        "max_length": "max_length",
        "embedding_dim": "embedding_dim",
        "head_size": "head_size",
        "num_heads": "num_heads",
        "ff_dim": "ff_dim",
        "dropout": "dropout_rate",
    },
    M.LSTM: {
        "max_length": "max_length",
        "embedding_dim": "embedding_dim",
        "head_dim": "hidden_size",
        "dropout": "dropout_rate",
    },
}
TRAIN_KEYS = {"batch_size": int, "learning_rate": float}


class UsageError(BytescanError):
    pass


# ---------------------------------------------------------------------------
# flag handling
# ---------------------------------------------------------------------------


def _parse_overrides(pairs: Sequence[str]) -> dict[str, str]:
    out = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep or not key.strip():
            raise UsageError(f"--config expects key=value, got {pair!r}")
        out[key.strip()] = value.strip()
    return out


def _number(text: str) -> int | float:
    try:
        return int(text)
    except ValueError:
        return float(text)


def build_configs(args: argparse.Namespace) -> tuple[M.ModelConfig, training.TrainConfig, WindowConfig]:
    """Model, training and window configs from the shared flags.

    The window size and the model's ``max_length`` move together: setting one
    sets the other unless both are given.
    """
    overrides = _parse_overrides(args.config)
    keys = MODEL_KEYS[args.model]
    model_kw: dict = {"num_classes": args.classes}
    train_kw: dict = {"seed": args.seed}
    for key, raw in overrides.items():
        if key in keys:
            model_kw[keys[key]] = _number(raw)
        elif key in TRAIN_KEYS:
            train_kw[key] = TRAIN_KEYS[key](raw)
        else:
            raise UsageError(f"unknown --config key {key!r} for model {args.model}")
    if args.epochs is not None:
        train_kw["epochs"] = args.epochs
    if getattr(args, "target_accuracy", None) is not None:
        train_kw["target_val_accuracy"] = args.target_accuracy
    if args.window_size is not None:
        model_kw.setdefault("max_length", args.window_size)
    window = args.window_size if args.window_size is not None else model_kw.get("max_length", 2048)
    try:
        model_cfg = M.config_from_dict(args.model, model_kw)
        train_cfg = training.TrainConfig(**train_kw)
        wcfg = WindowConfig(window, args.overlap, args.agg)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    if wcfg.window_size > model_cfg.max_length:
        raise UsageError(f"window size {wcfg.window_size} exceeds max_length {model_cfg.max_length}")
    return model_cfg, train_cfg, wcfg


def _add_shared(p: argparse.ArgumentParser, classes: int | None = 2) -> None:
    p.add_argument("--seed", type=int, default=0, help="seed for every random choice (default 0)")
    p.add_argument("--config", action="append", default=[], metavar="KEY=VALUE", help="hyperparameter override")
    p.add_argument("--model", choices=M.MODEL_KINDS, default=M.TRANSFORMER)
    p.add_argument("--classes", type=int, choices=(2, 4), default=classes)
    p.add_argument("--window-size", type=int, default=None)
    p.add_argument("--overlap", type=float, default=0.25)
    p.add_argument("--agg", choices=(MAX, MEAN), default=MAX)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--out", default=None, help="output path (file or directory, per subcommand)")


def _write_json(path: str | Path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _labeled(records: list[ContractRecord]) -> list[ContractRecord]:
    return filter_and_balance(records, BalancePolicy(drop_empty=True))


# ---------------------------------------------------------------------------
# scan
# ---------------------------------------------------------------------------


@dataclass
class WindowScore:
    start: int
    probabilities: list[float]


@dataclass
class ScanReport:
    address: str
    probabilities: list[float]
    predicted: str
    vulnerable: bool
    windows: list[WindowScore]
    checkpoint: str
    error: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ScanTarget:
    address: str
    tokens: tuple[str, ...] = ()
    error: str | None = None


def _scan_targets(path: Path) -> list[ScanTarget]:
    """Contracts to scan: rows of a dataset CSV, or one hex string per line."""
    if path.suffix.lower() == ".csv":
        errors: list[RowError] = []
        good = load_csv(path, skip_bad_rows=True, allow_multi_flag=True, errors=errors)
        out = [ScanTarget(r.address, r.hex_tokens) for r in good]
        out += [ScanTarget(f"{path.name}:{e.line}", error=str(e)) for e in errors]
        return out
    out = []
    for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        name = f"{path.name}:{n}"
        try:
            out.append(ScanTarget(name, tuple(to_hex_tokens(parse_hex(line)))))
        except BytescanError as exc:
            out.append(ScanTarget(name, error=str(exc)))
    return out


def scan_tokens(ck: ckpt_io.Checkpoint, tokens: Sequence[str], address: str, ck_id: str) -> ScanReport:
    ids = tokenizer.encode(tokens, ck.vocab)
    batch = make_windows(ids, ck.window, address)
    probs = M.predict_proba(ck.params, ck.config, batch.ids)
    agg = aggregate(probs, ck.window)
    names = class_names(ck.config.num_classes)
    k = int(np.argmax(agg))
    windows = [WindowScore(int(s), [float(x) for x in p]) for s, p in zip(batch.starts, probs)]
    return ScanReport(address, [float(x) for x in agg], names[k], k != 0, windows, ck_id)


def cmd_scan(args: argparse.Namespace) -> int:
    ck = ckpt_io.load(args.checkpoint)
    ck_id = ckpt_io.fingerprint(args.checkpoint)
    if args.agg != ck.window.aggregation or args.overlap != ck.window.overlap:
        ck.window = WindowConfig(ck.window.window_size, args.overlap, args.agg)
    reports: list[ScanReport] = []
    for target in _scan_targets(Path(args.input)):
        if target.error is None and not target.tokens:
            target.error = "empty bytecode"
        if target.error is not None:
            reports.append(ScanReport(target.address, [], "", False, [], ck_id, target.error))
        else:
            reports.append(scan_tokens(ck, target.tokens, target.address, ck_id))
        print(json.dumps(reports[-1].to_dict(), sort_keys=True))
    n_err = sum(r.error is not None for r in reports)
    n_vuln = sum(r.vulnerable for r in reports)
    print(f"scanned {len(reports)} contracts: {n_vuln} flagged, {n_err} errors", file=sys.stderr)
    if args.out:
        _write_json(args.out, [r.to_dict() for r in reports])
    if n_err and args.strict:
        return EXIT_ERROR
    return EXIT_FLAGGED if n_vuln else EXIT_OK


# ---------------------------------------------------------------------------
# train / eval
# ---------------------------------------------------------------------------


def cmd_train(args: argparse.Namespace) -> int:
    model_cfg, train_cfg, wcfg = build_configs(args)
    records = _labeled(load_csv(args.dataset, allow_multi_flag=True))
    out = Path(args.out or "run")
    out.mkdir(parents=True, exist_ok=True)
    log_lines: list[str] = []

    def on_epoch(rec: training.EpochRecord) -> None:
        log_lines.append(rec.line())
        print(rec.line(), file=sys.stderr)

    sizes = training.SplitSpec().sizes(len(records))
    split_line = f"split train={sizes[0]} val={sizes[1]} test={sizes[2]}"
    print(split_line, file=sys.stderr)
    run = training.train_pipeline(records, model_cfg, train_cfg, wcfg, capacity=args.capacity, on_epoch=on_epoch)
    meta = {"seed": args.seed, "split": list(run.split_sizes), "epochs_run": len(run.history.epochs)}
    ck = ckpt_io.Checkpoint(M.kind_of(run.model_cfg), run.model_cfg, run.params, run.vocab, wcfg, meta)
    ckpt_io.save(ck, out / "model.ckpt")
    run.vocab.save(out / "vocab.tsv")
    (out / "history.csv").write_text(run.history.to_csv(), encoding="utf-8")
    (out / "report.json").write_text(run.report.to_json() + "\n", encoding="utf-8")
    table = run.report.format_table()
    (out / "metrics.log").write_text("\n".join([split_line, *log_lines, table]) + "\n", encoding="utf-8")
    print(table)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    ck = ckpt_io.load(args.checkpoint)
    c = ck.config.num_classes
    if args.classes is not None and args.classes != c:
        raise LabelMismatch(f"checkpoint predicts {c} classes, --classes asks for {args.classes}")
    records = _labeled(load_csv(args.dataset, allow_multi_flag=True))
    data = training.encode_records(records, ck.vocab, c, ck.window)
    report = training.evaluate(ck.params, ck.config, data, ck.window)
    print(report.format_table())
    if args.out:
        Path(args.out).write_text(report.to_json() + "\n", encoding="utf-8")
    return EXIT_OK


# ---------------------------------------------------------------------------
# corpus plumbing
# ---------------------------------------------------------------------------


def cmd_ingest(args: argparse.Namespace) -> int:
    addresses = [a.strip() for a in Path(args.addresses).read_text(encoding="utf-8").splitlines() if a.strip()]
    client = etherscan.EtherscanClient(args.api_key, url=args.api_url)
    records: list[ContractRecord] = []
    for i, address in enumerate(addresses, 1):
        got = client.fetch_verified(address, args.sources_dir)
        if isinstance(got, etherscan.Skip):
            print(f"[{i}/{len(addresses)}] {address}: skipped ({got.reason})", file=sys.stderr)
            continue
        label = heuristic_label(disassemble(tokens_to_bytes(list(got.hex_tokens))))
        records.append(got.with_label(label))
        print(f"[{i}/{len(addresses)}] {address}: {label.name.lower()}", file=sys.stderr)
    write_csv(records, args.output)
    print(f"wrote {len(records)} of {len(addresses)} contracts to {args.output}", file=sys.stderr)
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    vulnerable = (VulnLabel.GREEDY,) if args.classes == 2 else (VulnLabel.SUICIDAL, VulnLabel.PRODIGAL, VulnLabel.GREEDY)
    cfg = SynthConfig(args.min_length, args.max_length, vulnerable)
    records = synthesize_corpus(args.n, cfg, seed=args.seed)
    out = args.out or "synthetic.csv"
    write_csv(records, out)
    print(f"wrote {len(records)} contracts to {out}", file=sys.stderr)
    return EXIT_OK


def cmd_disasm(args: argparse.Namespace) -> int:
    text = sys.stdin.read() if args.input == "-" else Path(args.input).read_text(encoding="utf-8")
    print(disassemble(parse_hex(text)).listing())
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bytescan", description="EVM bytecode vulnerability scanner")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scan", help="score contracts with a trained checkpoint")
    p.add_argument("input", help="dataset CSV or file with one bytecode hex string per line")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--strict", action="store_true", help="exit 1 when any input record is malformed")
    _add_shared(p)
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("train", help="split, train and evaluate on a labeled CSV")
    p.add_argument("dataset")
    p.add_argument("--capacity", type=int, default=tokenizer.DEFAULT_CAPACITY, help="vocabulary capacity")
    p.add_argument("--target-accuracy", type=float, default=None, help="stop once validation accuracy reaches this")
    _add_shared(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on every record of a labeled CSV")
    p.add_argument("dataset")
    p.add_argument("--checkpoint", required=True)
    _add_shared(p, classes=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ingest", help="fetch verified contracts and label them heuristically")
    p.add_argument("addresses", help="file with one contract address per line")
    p.add_argument("output", help="CSV to write")
    p.add_argument("--api-key", default=None, help=f"defaults to ${etherscan.API_KEY_ENV}")
    p.add_argument("--api-url", default=etherscan.API_URL)
    p.add_argument("--sources-dir", default=None, help="save fetched sources here")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="write a synthetic labeled corpus")
    p.add_argument("n", type=int)
    p.add_argument("--min-length", type=int, default=200)
    p.add_argument("--max-length", type=int, default=3000)
    _add_shared(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("disasm", help="print the instruction listing of a hex bytecode file")
    p.add_argument("input", help="hex file, or - for stdin")
    p.set_defaults(func=cmd_disasm)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (BytescanError, OSError, ValueError) as exc:
        print(f"bytescan {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
