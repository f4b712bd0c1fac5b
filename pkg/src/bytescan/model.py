"""Transformer classifier and LSTM baseline as functions of named parameters.

Both models read ``[B, L]`` integer id batches (PAD = 0 marks padding) and
produce class logits. Parameters are plain ``dict[str, np.ndarray]``; each
forward pass lifts them into a fresh :class:`~bytescan.autodiff.Graph`.

Transformer layer order: embedding + sinusoidal positions -> one post-norm
encoder block -> additive attention pooling -> dropout -> dense ReLU ->
dropout -> linear -> softmax.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np

from bytescan import autodiff as ad
from bytescan.autodiff import Graph, Tensor
from bytescan.errors import EmptyWindow, ShapeError, UnknownId
from bytescan.tokenizer import DEFAULT_CAPACITY, PAD

TRANSFORMER = "transformer"
LSTM = "lstm"
MODEL_KINDS = (TRANSFORMER, LSTM)


@dataclass(frozen=True)
class TransformerConfig:
    vocab_size: int = DEFAULT_CAPACITY
    max_length: int = 2048
    embedding_dim: int = 128
    num_heads: int = 4
    head_size: int = 128  # total attention width across heads
    ff_dim: int = 4 * 128
    dropout_rate: float = 0.2
    num_classes: int = 2

    def __post_init__(self) -> None:
        if self.head_size % self.num_heads:
            raise ValueError(f"head_size {self.head_size} not divisible by num_heads {self.num_heads}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.num_classes not in (2, 4):
            raise ValueError(f"num_classes must be 2 or 4, got {self.num_classes}")
        if self.embedding_dim % 2:
            raise ValueError("embedding_dim must be even for sinusoidal positions")
        if min(self.vocab_size, self.max_length, self.ff_dim) < 1:
            raise ValueError("vocab_size, max_length and ff_dim must be positive")

    @property
    def head_dim(self) -> int:
        return self.head_size // self.num_heads

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LstmConfig:
    vocab_size: int = DEFAULT_CAPACITY
    max_length: int = 2048
    embedding_dim: int = 128
    hidden_size: int = 256
    dropout_rate: float = 0.2
    num_classes: int = 2

    def __post_init__(self) -> None:
        if self.hidden_size <= 0:
            raise ValueError("hidden_size must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.num_classes not in (2, 4):
            raise ValueError(f"num_classes must be 2 or 4, got {self.num_classes}")

    def to_dict(self) -> dict:
        return asdict(self)


ModelConfig = TransformerConfig | LstmConfig


def kind_of(cfg: ModelConfig) -> str:
    return TRANSFORMER if isinstance(cfg, TransformerConfig) else LSTM


def config_from_dict(kind: str, data: dict) -> ModelConfig:
    if kind == TRANSFORMER:
        return TransformerConfig(**data)
    if kind == LSTM:
        return LstmConfig(**data)
    raise ValueError(f"unknown model kind {kind!r}")


@dataclass
class AttentionTrace:
    attention: np.ndarray  # [B, heads, L, L]
    pooling: np.ndarray  # [B, L]


# ---------------------------------------------------------------------------
# parameter layout
# ---------------------------------------------------------------------------


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    if isinstance(cfg, TransformerConfig):
        d, hs, ff, c = cfg.embedding_dim, cfg.head_size, cfg.ff_dim, cfg.num_classes
        return {
            "embedding": (cfg.vocab_size, d),
            "attention.wq": (d, hs),
            "attention.wk": (d, hs),
            "attention.wv": (d, hs),
            "attention.wo": (hs, d),
            "norm1.gain": (d,),
            "norm1.shift": (d,),
            "ffn.w1": (d, ff),
            "ffn.b1": (ff,),
            "ffn.w2": (ff, d),
            "ffn.b2": (d,),
            "norm2.gain": (d,),
            "norm2.shift": (d,),
            "pooling.proj": (d, d),
            "pooling.context": (d,),
            "hidden.w": (d, d),
            "hidden.b": (d,),
            "output.w": (d, c),
            "output.b": (c,),
        }
    e, h, c = cfg.embedding_dim, cfg.hidden_size, cfg.num_classes
    return {
        "embedding": (cfg.vocab_size, e),
        "lstm.w": (e, 4 * h),
        "lstm.u": (h, 4 * h),
        "lstm.b": (4 * h,),
        "hidden.w": (h, h),
        "hidden.b": (h,),
        "output.w": (h, c),
        "output.b": (c,),
    }


_GROUPS = {
    "embedding": "embedding",
    "attention": "attention",
    "ffn": "feed_forward",
    "norm1": "layer_norm",
    "norm2": "layer_norm",
    "pooling.proj": "pooling_projection",
    "pooling.context": "pooling_context",
    "lstm": "lstm",
    "hidden": "hidden_dense",
    "output": "output_linear",
}


def _group(name: str) -> str:
    return _GROUPS.get(name) or _GROUPS[name.split(".")[0]]


def param_count(params: dict[str, np.ndarray]) -> dict[str, int]:
    """Exact parameter counts per layer group, plus ``total``."""
    report: dict[str, int] = {}
    for name, value in params.items():
        key = _group(name)
        report[key] = report.get(key, 0) + int(np.prod(np.shape(value)))
    report["total"] = sum(report.values())
    return report


def expected_param_count(cfg: ModelConfig) -> dict[str, int]:
    return param_count({n: np.empty(s, dtype=np.uint8) for n, s in param_shapes(cfg).items()})


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Initial weights: N(0, 1) embeddings, U(+-1/sqrt(fan_in)) matrices, zero biases, unit gains."""
    params: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if name == "embedding":
            params[name] = rng.standard_normal(shape)
        elif leaf == "gain":
            params[name] = np.ones(shape)
        elif leaf in ("shift", "b", "b1", "b2"):
            params[name] = np.zeros(shape)
        elif name == "lstm.u" or name == "lstm.w":
            lim = 1.0 / math.sqrt(cfg.hidden_size)
            params[name] = rng.uniform(-lim, lim, shape)
        else:
            lim = 1.0 / math.sqrt(shape[0])
            params[name] = rng.uniform(-lim, lim, shape)
    return params


def lift(graph: Graph, params: dict[str, np.ndarray], trainable: bool) -> dict[str, Tensor]:
    make = graph.param if trainable else (lambda _n, v: graph.constant(v))
    return {name: make(name, value) for name, value in params.items()}


# ---------------------------------------------------------------------------
# transformer pieces
# ---------------------------------------------------------------------------


@lru_cache(maxsize=16)
def _pe_cached(length: int, d: int) -> np.ndarray:
    pos = np.arange(length, dtype=np.float64)[:, None]
    rates = np.power(10000.0, np.arange(0, d, 2, dtype=np.float64) / d)
    pe = np.empty((length, d))
    pe[:, 0::2] = np.sin(pos / rates)
    pe[:, 1::2] = np.cos(pos / rates)
    pe.setflags(write=False)
    return pe


def positional_encoding(length: int, d: int) -> np.ndarray:
    """Sinusoidal table: sin at even columns, cos at odd, wavelength base 10000."""
    if d % 2:
        raise ShapeError(f"positional encoding dimension must be even, got {d}")
    return _pe_cached(int(length), int(d))


def _pad_mask(ids: np.ndarray) -> np.ndarray:
    return ids != PAD


def self_attention(x: Tensor, p: dict[str, Tensor], mask: np.ndarray, cfg: TransformerConfig) -> tuple[Tensor, np.ndarray]:
    """Multi-head scaled dot-product attention over ``x[B, L, d]``.

    Padded keys (``mask`` False) are excluded. Returns the projected output and
    the attention weights ``[B, heads, L, L]``.
    """
    b, length, _ = x.shape
    if mask.shape != (b, length):
        raise ShapeError(f"mask shape {mask.shape} does not match input {(b, length)}")
    h, dh = cfg.num_heads, cfg.head_dim

    def heads(t: Tensor) -> Tensor:
        return ad.transpose(ad.reshape(t, (b, length, h, dh)), (0, 2, 1, 3))

    # scaling q rather than the [B, h, L, L] scores is cheaper and equivalent
    q = heads(ad.scale(x @ p["attention.wq"], 1.0 / math.sqrt(dh)))
    k = ad.transpose(ad.reshape(x @ p["attention.wk"], (b, length, h, dh)), (0, 2, 3, 1))
    v = heads(x @ p["attention.wv"])
    weights = ad.softmax(q @ k, mask[:, None, None, :])
    ctx = ad.reshape(ad.transpose(weights @ v, (0, 2, 1, 3)), (b, length, h * dh))
    return ctx @ p["attention.wo"], weights.data


def encoder_block(x, p, mask, cfg: TransformerConfig, train: bool, rng) -> tuple[Tensor, np.ndarray]:
    attn, weights = self_attention(x, p, mask, cfg)
    y = ad.layer_norm(x + ad.dropout(attn, cfg.dropout_rate, rng, train), p["norm1.gain"], p["norm1.shift"])
    ff = ad.relu(y @ p["ffn.w1"] + p["ffn.b1"]) @ p["ffn.w2"] + p["ffn.b2"]
    out = ad.layer_norm(y + ad.dropout(ff, cfg.dropout_rate, rng, train), p["norm2.gain"], p["norm2.shift"])
    return out, weights


def attention_pooling(x: Tensor, p: dict[str, Tensor], mask: np.ndarray) -> tuple[Tensor, np.ndarray]:
    """score_i = u . tanh(W x_i); softmax over unmasked positions; weighted sum of rows."""
    b, length, d = x.shape
    if not mask.any(axis=1).all():
        raise EmptyWindow("attention pooling over a window with no unmasked positions")
    scores = ad.tanh(x @ p["pooling.proj"]) @ ad.reshape(p["pooling.context"], (d, 1))
    weights = ad.softmax(ad.reshape(scores, (b, length)), mask)
    pooled = ad.reshape(ad.reshape(weights, (b, 1, length)) @ x, (b, d))
    return pooled, weights.data


def _head(h: Tensor, p, rate: float, train: bool, rng) -> Tensor:
    h = ad.dropout(h, rate, rng, train)
    h = ad.relu(h @ p["hidden.w"] + p["hidden.b"])
    h = ad.dropout(h, rate, rng, train)
    return h @ p["output.w"] + p["output.b"]


def _check_ids(ids: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 2:
        raise ShapeError(f"expected an id batch of shape [B, L], got {ids.shape}")
    if ids.shape[1] > cfg.max_length:
        raise ShapeError(f"sequence length {ids.shape[1]} exceeds max_length {cfg.max_length}")
    if ids.size and (ids.min() < 0 or ids.max() >= cfg.vocab_size):
        raise UnknownId(f"token id outside [0, {cfg.vocab_size})")
    return ids


def transformer_logits(graph, p, cfg: TransformerConfig, ids, train=False, rng=None) -> tuple[Tensor, AttentionTrace]:
    ids = _check_ids(ids, cfg)
    mask = _pad_mask(ids)
    length = ids.shape[1]
    x = ad.embedding(p["embedding"], ids) + graph.constant(positional_encoding(length, cfg.embedding_dim))
    x, attn = encoder_block(x, p, mask, cfg, train, rng)
    pooled, pool_w = attention_pooling(x, p, mask)
    return _head(pooled, p, cfg.dropout_rate, train, rng), AttentionTrace(attn, pool_w)


def lstm_logits(graph, p, cfg: LstmConfig, ids, train=False, rng=None) -> Tensor:
    ids = _check_ids(ids, cfg)
    mask = _pad_mask(ids)
    if not mask.any(axis=1).all():
        raise EmptyWindow("LSTM readout over a window with no unmasked positions")
    b, length = ids.shape
    x = ad.embedding(p["embedding"], ids)
    hs = ad.lstm_scan(x @ p["lstm.w"] + p["lstm.b"], p["lstm.u"])
    last = length - 1 - np.argmax(mask[:, ::-1], axis=1)
    return _head(hs[np.arange(b), last], p, cfg.dropout_rate, train, rng)


def logits(graph, p, cfg: ModelConfig, ids, train=False, rng=None) -> Tensor:
    if isinstance(cfg, TransformerConfig):
        return transformer_logits(graph, p, cfg, ids, train, rng)[0]
    return lstm_logits(graph, p, cfg, ids, train, rng)


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _as_batch(ids) -> tuple[np.ndarray, bool]:
    arr = np.asarray(ids, dtype=np.int64)
    return (arr[None, :], True) if arr.ndim == 1 else (arr, False)


def forward(params, cfg: TransformerConfig, ids, train: bool = False, rng=None) -> np.ndarray:
    """Class probabilities for one id sequence ``[L]`` or a batch ``[B, L]``."""
    batch, single = _as_batch(ids)
    g = Graph()
    out, _ = transformer_logits(g, lift(g, params, False), cfg, batch, train, rng)
    probs = _softmax_rows(out.data)
    g.clear()
    return probs[0] if single else probs


def forward_with_trace(params, cfg: TransformerConfig, ids) -> tuple[np.ndarray, AttentionTrace]:
    batch, single = _as_batch(ids)
    g = Graph()
    out, trace = transformer_logits(g, lift(g, params, False), cfg, batch)
    probs = _softmax_rows(out.data)
    g.clear()
    return (probs[0] if single else probs), trace


def lstm_forward(params, cfg: LstmConfig, ids, train: bool = False, rng=None) -> np.ndarray:
    batch, single = _as_batch(ids)
    g = Graph()
    probs = _softmax_rows(lstm_logits(g, lift(g, params, False), cfg, batch, train, rng).data)
    g.clear()
    return probs[0] if single else probs


def lstm_hidden_states(params, cfg: LstmConfig, ids) -> np.ndarray:
    """Hidden state sequence ``[B, L, H]`` (diagnostics and tests)."""
    batch, _ = _as_batch(ids)
    batch = _check_ids(batch, cfg)
    g = Graph()
    p = lift(g, params, False)
    x = ad.embedding(p["embedding"], batch)
    hs = ad.lstm_scan(x @ p["lstm.w"] + p["lstm.b"], p["lstm.u"]).data
    g.clear()
    return hs


def predict_proba(params, cfg: ModelConfig, ids: np.ndarray, batch_size: int = 32) -> np.ndarray:
    """Inference-mode probabilities for a window matrix ``[N, L]``, in chunks."""
    ids = np.asarray(ids, dtype=np.int64)
    fn = forward if isinstance(cfg, TransformerConfig) else lstm_forward
    chunks = [fn(params, cfg, ids[i : i + batch_size]) for i in range(0, len(ids), batch_size)]
    return np.concatenate(chunks, axis=0) if chunks else np.empty((0, cfg.num_classes))


def loss_and_grads(params, cfg: ModelConfig, ids, targets: np.ndarray, train: bool, rng) -> tuple[float, dict[str, np.ndarray], np.ndarray]:
    """Mean cross-entropy over a batch, its parameter gradients, and the batch probabilities."""
    g = Graph()
    out = logits(g, lift(g, params, True), cfg, ids, train, rng)
    loss = ad.categorical_cross_entropy(out, targets)
    grads = ad.backward(g, loss)
    g.clear()
    return float(loss.data), grads, _softmax_rows(out.data)
