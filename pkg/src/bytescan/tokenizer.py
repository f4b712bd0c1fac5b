"""Frequency-ranked vocabulary over hex tokens."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from bytescan.errors import InvalidCapacity, UnknownId

PAD = 0
OOV = 1
PAD_TOKEN = "<PAD>"
OOV_TOKEN = "<OOV>"
DEFAULT_CAPACITY = 1000  # 128,000 embedding parameters / 128 dims


@dataclass(frozen=True)
class Vocabulary:
    id_to_token: tuple[str, ...]
    capacity: int = DEFAULT_CAPACITY
    token_to_id: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.id_to_token[:2] != (PAD_TOKEN, OOV_TOKEN):
            raise ValueError("vocabulary must start with the reserved PAD and OOV entries")
        if len(set(self.id_to_token)) != len(self.id_to_token):
            raise ValueError("vocabulary tokens are not unique")
        if len(self.id_to_token) > self.capacity:
            raise ValueError(f"vocabulary size {len(self.id_to_token)} exceeds capacity {self.capacity}")
        object.__setattr__(self, "token_to_id", {t: i for i, t in enumerate(self.id_to_token)})

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def __len__(self) -> int:
        return self.size

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id and self.token_to_id[token] > OOV

    def save(self, path: str | Path) -> None:
        lines = [f"# capacity\t{self.capacity}"]
        lines += [f"{tok}\t{i}" for i, tok in enumerate(self.id_to_token)]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        capacity = DEFAULT_CAPACITY
        pairs: list[tuple[str, int]] = []
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line:
                continue
            tok, _, idx = line.partition("\t")
            if tok == "# capacity":
                capacity = int(idx)
                continue
            try:
                pairs.append((tok, int(idx)))
            except ValueError:
                raise ValueError(f"{path}:{lineno}: expected 'token<TAB>id'") from None
        ids = [i for _, i in pairs]
        if ids != list(range(len(pairs))):
            raise ValueError(f"{path}: ids are not contiguous from 0 in file order")
        return cls(tuple(t for t, _ in pairs), capacity=capacity)

    @classmethod
    def from_tokens(cls, tokens: Iterable[str], capacity: int = DEFAULT_CAPACITY) -> "Vocabulary":
        return cls((PAD_TOKEN, OOV_TOKEN, *tokens), capacity=capacity)


def fit(corpus: Iterable[Sequence[str]], capacity: int = DEFAULT_CAPACITY) -> Vocabulary:
    """Rank tokens by descending frequency, ties lexicographic; keep ``capacity - 2``."""
    if capacity < 2:
        raise InvalidCapacity(f"capacity must be >= 2, got {capacity}")
    counts: Counter[str] = Counter()
    for tokens in corpus:
        counts.update(tokens)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary.from_tokens((tok for tok, _ in ranked[: capacity - 2]), capacity=capacity)


def encode(tokens: Sequence[str], vocab: Vocabulary) -> np.ndarray:
    lut = vocab.token_to_id
    return np.fromiter((lut.get(t, OOV) if t not in (PAD_TOKEN, OOV_TOKEN) else OOV for t in tokens),
                       dtype=np.int64, count=len(tokens))


def decode(ids: Iterable[int], vocab: Vocabulary) -> list[str]:
    out = []
    for i in ids:
        i = int(i)
        if not 0 <= i < vocab.size:
            raise UnknownId(f"id {i} outside vocabulary of size {vocab.size}")
        out.append(vocab.id_to_token[i])
    return out
