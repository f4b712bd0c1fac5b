"""Label encoding, contract records and the three-column dataset CSV."""

from __future__ import annotations

import csv
import enum
import io
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from bytescan.errors import MalformedLabel, RowError

ADDRESS_RE = re.compile(r"^0x[0-9a-fA-F]{40}$")
_TOKEN_RE = re.compile(r"^[0-9a-f]{2}$")


class VulnLabel(enum.IntEnum):
    NORMAL = 0
    SUICIDAL = 1
    PRODIGAL = 2
    GREEDY = 3

    @property
    def bits(self) -> tuple[int, int, int, int]:
        return tuple(int(i == self.value) for i in range(4))  # type: ignore[return-value]

    def render(self) -> str:
        return " ".join(str(b) for b in self.bits)

    @property
    def vulnerable(self) -> bool:
        return self is not VulnLabel.NORMAL

    def class_index(self, num_classes: int) -> int:
        """Target index under the binary (2) or four-way (4) taxonomy."""
        if num_classes == 4:
            return int(self)
        return int(self.vulnerable)


def class_names(num_classes: int) -> list[str]:
    if num_classes == 2:
        return ["normal", "vulnerable"]
    return [lab.name.lower() for lab in VulnLabel]


def parse_flags(text: str) -> tuple[int, ...]:
    """Four space-separated 0/1 flags, not necessarily one-hot."""
    parts = text.split()
    if len(parts) != 4 or any(p not in ("0", "1") for p in parts):
        raise MalformedLabel(f"expected four 0/1 flags, got {text!r}")
    return tuple(int(p) for p in parts)


def parse_label(text: str) -> VulnLabel:
    flags = parse_flags(text)
    if sum(flags) != 1:
        raise MalformedLabel(f"label {text!r} is not one-hot")
    return VulnLabel(flags.index(1))


def render_label(label: VulnLabel) -> str:
    return label.render()


@dataclass(frozen=True)
class ContractRecord:
    address: str
    hex_tokens: tuple[str, ...]
    flags: tuple[int, ...] | None  # raw label bits; None when unlabeled
    source: str | None = None

    @classmethod
    def labeled(cls, address: str, hex_tokens: Sequence[str], label: VulnLabel, source: str | None = None):
        return cls(address, tuple(hex_tokens), label.bits, source)

    @property
    def is_one_hot(self) -> bool:
        return self.flags is not None and sum(self.flags) == 1

    @property
    def label(self) -> VulnLabel:
        if not self.is_one_hot:
            raise MalformedLabel(f"{self.address}: label flags {self.flags} are not one-hot")
        return VulnLabel(self.flags.index(1))

    def with_label(self, label: VulnLabel) -> "ContractRecord":
        return ContractRecord(self.address, self.hex_tokens, label.bits, self.source)

    def __len__(self) -> int:
        return len(self.hex_tokens)


def _parse_row(row: list[str], line: int, allow_multi_flag: bool) -> ContractRecord:
    if len(row) != 3:
        raise RowError(f"expected 3 columns, got {len(row)}", line)
    address, tokens, label = (c.strip() for c in row)
    if not ADDRESS_RE.match(address):
        raise RowError(f"invalid address {address!r}", line)
    toks = tuple(tokens.split())
    bad = next((t for t in toks if not _TOKEN_RE.match(t)), None)
    if bad is not None:
        raise RowError(f"invalid hex token {bad!r}", line)
    try:
        flags = parse_flags(label)
        if not allow_multi_flag and sum(flags) != 1:
            raise MalformedLabel(f"label {label!r} is not one-hot")
    except MalformedLabel as exc:
        raise RowError(str(exc), line) from None
    return ContractRecord(address, toks, flags)


HEADER = ("address", "opcode", "label")


def load_csv(
    path: str | Path,
    *,
    skip_bad_rows: bool = False,
    allow_multi_flag: bool = False,
    header: bool | None = None,
    errors: list[RowError] | None = None,
) -> list[ContractRecord]:
    """Read the address / hex-token / label CSV.

    ``header=None`` auto-detects a leading header row. With ``skip_bad_rows``
    malformed rows are dropped (and appended to ``errors`` when given) instead
    of raising :class:`RowError`.
    """
    records: list[ContractRecord] = []
    with open(path, newline="", encoding="utf-8") as fh:
        for line, row in enumerate(csv.reader(fh), 1):
            if not row:
                continue
            if line == 1 and header is not False:
                if header or row[0].strip().lower() == HEADER[0]:
                    continue
            try:
                records.append(_parse_row(row, line, allow_multi_flag))
            except RowError as exc:
                if not skip_bad_rows:
                    raise
                if errors is not None:
                    errors.append(exc)
    return records


def _render_flags(rec: ContractRecord) -> str:
    if rec.flags is None:
        raise MalformedLabel(f"{rec.address}: cannot write an unlabeled record")
    return " ".join(str(b) for b in rec.flags)


def dumps_csv(records: Iterable[ContractRecord], header: bool = False) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if header:
        writer.writerow(HEADER)
    for rec in records:
        writer.writerow((rec.address, " ".join(rec.hex_tokens), _render_flags(rec)))
    return buf.getvalue()


def write_csv(records: Iterable[ContractRecord], path: str | Path, header: bool = False) -> None:
    Path(path).write_text(dumps_csv(records, header), encoding="utf-8", newline="")
