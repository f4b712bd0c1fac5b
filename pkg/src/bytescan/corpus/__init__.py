from bytescan.corpus.heuristics import heuristic_label
from bytescan.corpus.preprocess import BalancePolicy, DatasetStats, dedup, filter_and_balance, stats
from bytescan.corpus.records import (
    ContractRecord,
    VulnLabel,
    class_names,
    dumps_csv,
    load_csv,
    parse_flags,
    parse_label,
    render_label,
    write_csv,
)
from bytescan.corpus.synth import SynthConfig, synthesize_corpus

__all__ = [
    "BalancePolicy",
    "ContractRecord",
    "DatasetStats",
    "SynthConfig",
    "VulnLabel",
    "class_names",
    "dedup",
    "dumps_csv",
    "filter_and_balance",
    "heuristic_label",
    "load_csv",
    "parse_flags",
    "parse_label",
    "render_label",
    "stats",
    "synthesize_corpus",
    "write_csv",
]
