from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bytescan.errors import EmptyBatch, EmptyContract
from bytescan.tokenizer import PAD
from bytescan.window import MAX, MEAN, WindowConfig, aggregate, make_windows, window_starts

DEFAULT = WindowConfig()


def test_defaults():
    assert DEFAULT.window_size == 2048 and DEFAULT.overlap == 0.25 and DEFAULT.aggregation == MAX
    assert DEFAULT.stride == 1536


def test_known_lengths():
    assert window_starts(3000, DEFAULT).tolist() == [0, 1536]
    assert window_starts(2048, DEFAULT).tolist() == [0]
    assert window_starts(1, DEFAULT).tolist() == [0]
    assert window_starts(2049, DEFAULT).tolist() == [0, 1536]
    assert window_starts(3584, DEFAULT).tolist() == [0, 1536]
    assert window_starts(3585, DEFAULT).tolist() == [0, 1536, 3072]


def test_short_contract_is_padded():
    batch = make_windows([5, 6, 7], WindowConfig(8, 0.25))
    assert batch.ids.tolist() == [[5, 6, 7, PAD, PAD, PAD, PAD, PAD]]
    assert batch.mask.sum() == 3 and batch.length == 3


def test_config_validation():
    with pytest.raises(ValueError):
        WindowConfig(2048, 1.0)
    with pytest.raises(ValueError):
        WindowConfig(0)
    with pytest.raises(ValueError):
        WindowConfig(2048, 0.25, "median")
    with pytest.raises(ValueError):
        WindowConfig(1, 0.5)
    with pytest.raises(EmptyContract):
        make_windows([], DEFAULT)


def check_window_law(length: int, cfg: WindowConfig) -> None:
    ids = np.arange(1, length + 1)
    batch = make_windows(ids, cfg)
    starts = batch.starts
    assert starts[0] == 0 and np.all(starts % cfg.stride == 0)
    assert np.all(np.diff(starts) == cfg.stride)
    covered = np.zeros(length, dtype=bool)
    for s, row, keep in zip(starts, batch.ids, batch.mask):
        covered[s : s + cfg.window_size] = True
        real = ids[s : s + cfg.window_size]
        np.testing.assert_array_equal(row[keep], real)
        assert np.all(row[~keep] == PAD)
    assert covered.all()
    if length <= cfg.window_size:
        assert len(starts) == 1
    else:
        # minimal: the previous window stops short of the end
        assert starts[-2] + cfg.window_size < length <= starts[-1] + cfg.window_size
    for a, b in zip(starts[:-2], starts[1:-1]):
        assert a + cfg.window_size - b == cfg.window_size - cfg.stride


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 50_000))
def test_window_law_default(length):
    check_window_law(length, DEFAULT)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 3000), st.integers(4, 300), st.sampled_from([0.0, 0.1, 0.25, 0.5, 0.75]))
def test_window_law_any_config(length, size, overlap):
    check_window_law(length, WindowConfig(size, overlap))


def test_aggregate_strategies():
    probs = np.array([[0.9, 0.1], [0.2, 0.8], [0.6, 0.4]])
    np.testing.assert_allclose(aggregate(probs, MAX), np.array([0.9, 0.8]) / 1.7)
    np.testing.assert_allclose(aggregate(probs, MEAN), [1.7 / 3, 1.3 / 3])
    assert aggregate([0.2, 0.7, 0.4], MAX) == 0.7
    assert aggregate([0.2, 0.7, 0.4], WindowConfig(aggregation=MEAN)) == pytest.approx(1.3 / 3)
    with pytest.raises(EmptyBatch):
        aggregate(np.empty((0, 2)), MAX)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=20), st.randoms(use_true_random=False))
def test_aggregate_is_order_invariant(values, rnd):
    shuffled = list(values)
    rnd.shuffle(shuffled)
    assert aggregate(values, MAX) == aggregate(shuffled, MAX)
    assert aggregate(values, MEAN) == pytest.approx(aggregate(shuffled, MEAN), abs=1e-15)
