"""Overlapping fixed-size windows over long id sequences, and verdict aggregation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from bytescan.errors import EmptyBatch, EmptyContract
from bytescan.tokenizer import PAD

MAX = "max"
MEAN = "mean"


@dataclass(frozen=True)
class WindowConfig:
    window_size: int = 2048
    overlap: float = 0.25
    aggregation: str = MAX

    def __post_init__(self) -> None:
        if self.window_size < 1:
            raise ValueError(f"window_size must be >= 1, got {self.window_size}")
        if not 0.0 <= self.overlap < 1.0:
            raise ValueError(f"overlap must lie in [0, 1), got {self.overlap}")
        if self.aggregation not in (MAX, MEAN):
            raise ValueError(f"aggregation must be 'max' or 'mean', got {self.aggregation!r}")
        if self.stride < 1:
            raise ValueError("window_size * (1 - overlap) rounds down to a zero stride")

    @property
    def stride(self) -> int:
        return int(math.floor(self.window_size * (1.0 - self.overlap)))


@dataclass
class WindowBatch:
    address: str
    starts: np.ndarray  # [M]
    ids: np.ndarray  # [M, window_size], PAD-filled at the tail
    mask: np.ndarray  # [M, window_size], True on real tokens
    length: int

    def __len__(self) -> int:
        return len(self.starts)


def window_starts(length: int, cfg: WindowConfig) -> np.ndarray:
    """Stride-grid starts up to the first window reaching the end of the sequence."""
    if length <= cfg.window_size:
        return np.zeros(1, dtype=np.int64)
    m = -(-(length - cfg.window_size) // cfg.stride)
    return np.arange(m + 1, dtype=np.int64) * cfg.stride


def make_windows(ids: Sequence[int] | np.ndarray, cfg: WindowConfig, address: str = "") -> WindowBatch:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size == 0:
        raise EmptyContract(f"contract {address or '<unnamed>'} has no tokens")
    length = len(ids)
    starts = window_starts(length, cfg)
    w = cfg.window_size
    padded = np.full(int(starts[-1]) + w, PAD, dtype=np.int64)
    padded[:length] = ids
    idx = starts[:, None] + np.arange(w)[None, :]
    return WindowBatch(address, starts, padded[idx], idx < length, length)


def aggregate(per_window, cfg: WindowConfig | str = MAX):
    """Reduce per-window probabilities to one contract verdict.

    Scalars (class-1 probability) reduce to a scalar. Class vectors reduce
    elementwise; under MAX the result is renormalised to sum to one.
    """
    strategy = cfg.aggregation if isinstance(cfg, WindowConfig) else cfg
    arr = np.asarray(per_window, dtype=np.float64)
    if arr.size == 0 or arr.shape[0] == 0:
        raise EmptyBatch("no window predictions to aggregate")
    if strategy == MEAN:
        out = arr.mean(axis=0)
    elif strategy == MAX:
        out = arr.max(axis=0)
        if arr.ndim == 2:
            out = out / out.sum()
    else:
        raise ValueError(f"unknown aggregation {strategy!r}")
    return float(out) if arr.ndim == 1 else out
