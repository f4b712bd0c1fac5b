"""Deduplication, exclusion/balancing and length statistics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from bytescan.corpus.records import ContractRecord, VulnLabel


def dedup(records: Iterable[ContractRecord]) -> list[ContractRecord]:
    """Keep the first record for each distinct hex-token stream."""
    seen: set[tuple[str, ...]] = set()
    out = []
    for rec in records:
        if rec.hex_tokens in seen:
            continue
        seen.add(rec.hex_tokens)
        out.append(rec)
    return out


@dataclass(frozen=True)
class BalancePolicy:
    exclude_multi_flag: bool = True
    exclude_classes: frozenset[VulnLabel] = frozenset()
    drop_empty: bool = True
    caps: Mapping[VulnLabel, int] = field(default_factory=dict)
    seed: int = 0


def filter_and_balance(records: Iterable[ContractRecord], policy: BalancePolicy = BalancePolicy()) -> list[ContractRecord]:
    """Apply exclusion rules, then down-sample each capped class without replacement.

    Unlabeled records are dropped. Surviving records keep their input order.
    A cap larger than its class keeps the whole class.
    """
    kept: list[ContractRecord] = []
    for rec in records:
        if rec.flags is None:
            continue
        if policy.drop_empty and not rec.hex_tokens:
            continue
        if not rec.is_one_hot:
            if policy.exclude_multi_flag or sum(rec.flags) == 0:
                continue
        if rec.is_one_hot and rec.label in policy.exclude_classes:
            continue
        kept.append(rec)
    if not policy.caps:
        return kept
    rng = np.random.default_rng(policy.seed)
    drop: set[int] = set()
    for label in sorted(policy.caps):
        cap = policy.caps[label]
        members = [i for i, r in enumerate(kept) if r.is_one_hot and r.label is label]
        if len(members) > cap:
            chosen = set(rng.choice(len(members), size=cap, replace=False).tolist())
            drop.update(m for j, m in enumerate(members) if j not in chosen)
    return [r for i, r in enumerate(kept) if i not in drop]


@dataclass
class DatasetStats:
    counts: dict[VulnLabel, int]
    bin_width: int
    histogram: dict[int, int]  # bin start -> count
    mean_length: float
    total: int

    def render(self) -> str:
        lines = [f"records: {self.total}  mean length: {self.mean_length:.1f}"]
        lines += [f"  {lab.name.lower():<9} {n}" for lab, n in self.counts.items()]
        lines.append(f"length histogram (bin width {self.bin_width}):")
        lines += [f"  [{lo}, {lo + self.bin_width}): {n}" for lo, n in self.histogram.items()]
        return "\n".join(lines)


def stats(records: Iterable[ContractRecord], bin_width: int = 500) -> DatasetStats:
    if bin_width < 1:
        raise ValueError("bin_width must be >= 1")
    records = list(records)
    counts = {lab: 0 for lab in VulnLabel}
    hist: dict[int, int] = {}
    lengths = []
    for rec in records:
        counts[rec.label] += 1
        n = len(rec.hex_tokens)
        lengths.append(n)
        lo = (n // bin_width) * bin_width
        hist[lo] = hist.get(lo, 0) + 1
    mean = float(np.mean(lengths)) if lengths else 0.0
    return DatasetStats(counts, bin_width, dict(sorted(hist.items())), mean, len(records))
