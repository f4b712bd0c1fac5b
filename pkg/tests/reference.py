"""Naive extended-precision reference models, used as test oracles.

These re-derive both classifiers from their definitions with explicit
per-sequence and per-head loops in ``np.longdouble``. They share no code with
the package beyond reading its config dataclasses, so agreement with the
package forward and gradients is independent evidence.
"""

from __future__ import annotations

import numpy as np

LD = np.longdouble


def _ld(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: np.asarray(v, dtype=LD) for k, v in params.items()}


def _layer_norm(x, gain, shift, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + LD(eps)) * gain + shift


def _softmax(z):
    e = np.exp(z - z.max())
    return e / e.sum()


def _positions(length: int, d: int):
    pe = np.zeros((length, d), dtype=LD)
    for pos in range(length):
        for i in range(0, d, 2):
            angle = LD(pos) / LD(10000) ** (LD(i) / LD(d))
            pe[pos, i] = np.sin(angle)
            pe[pos, i + 1] = np.cos(angle)
    return pe


def transformer_logits(params, cfg, ids) -> np.ndarray:
    """Inference-mode logits ``[B, C]``; padded positions are dropped outright."""
    p = _ld(params)
    ids = np.asarray(ids)
    h, dh = cfg.num_heads, cfg.head_size // cfg.num_heads
    pe = _positions(ids.shape[1], cfg.embedding_dim)
    out = []
    for row in ids:
        keep = np.flatnonzero(row != 0)
        x = p["embedding"][row] + pe
        ctx = np.zeros((len(row), h * dh), dtype=LD)
        for head in range(h):
            cols = slice(head * dh, (head + 1) * dh)
            q = x @ p["attention.wq"][:, cols]
            k = x @ p["attention.wk"][:, cols]
            v = x @ p["attention.wv"][:, cols]
            for i in range(len(row)):
                w = _softmax(np.array([q[i] @ k[j] for j in keep]) / np.sqrt(LD(dh)))
                ctx[i, cols] = w @ v[keep]
        y = _layer_norm(x + ctx @ p["attention.wo"], p["norm1.gain"], p["norm1.shift"])
        ff = np.maximum(y @ p["ffn.w1"] + p["ffn.b1"], 0) @ p["ffn.w2"] + p["ffn.b2"]
        z = _layer_norm(y + ff, p["norm2.gain"], p["norm2.shift"])
        scores = np.array([p["pooling.context"] @ np.tanh(z[i] @ p["pooling.proj"]) for i in keep])
        pooled = _softmax(scores) @ z[keep]
        hidden = np.maximum(pooled @ p["hidden.w"] + p["hidden.b"], 0)
        out.append(hidden @ p["output.w"] + p["output.b"])
    return np.array(out)


def _sigmoid(x):
    return 1 / (1 + np.exp(-x))


def lstm_logits(params, cfg, ids) -> np.ndarray:
    """Inference-mode logits; gates i, f, g, o; readout at the last non-pad step."""
    p = _ld(params)
    hsz = cfg.hidden_size
    out = []
    for row in np.asarray(ids):
        last = int(np.flatnonzero(row != 0)[-1])
        hvec = np.zeros(hsz, dtype=LD)
        cvec = np.zeros(hsz, dtype=LD)
        for t in range(last + 1):
            z = p["embedding"][row[t]] @ p["lstm.w"] + hvec @ p["lstm.u"] + p["lstm.b"]
            i, f = _sigmoid(z[:hsz]), _sigmoid(z[hsz : 2 * hsz])
            g, o = np.tanh(z[2 * hsz : 3 * hsz]), _sigmoid(z[3 * hsz :])
            cvec = f * cvec + i * g
            hvec = o * np.tanh(cvec)
        hidden = np.maximum(hvec @ p["hidden.w"] + p["hidden.b"], 0)
        out.append(hidden @ p["output.w"] + p["output.b"])
    return np.array(out)


def cross_entropy(logits, onehot) -> LD:
    """Mean categorical cross-entropy of logits against one-hot targets."""
    total = LD(0)
    for z, y in zip(logits, np.asarray(onehot, dtype=LD)):
        m = z.max()
        total += -(y @ (z - m - np.log(np.exp(z - m).sum())))
    return total / len(logits)


def loss(kind: str, params, cfg, ids, onehot) -> LD:
    fn = transformer_logits if kind == "transformer" else lstm_logits
    return cross_entropy(fn(params, cfg, ids), onehot)


def numeric_grad(f, params: dict[str, np.ndarray], step: float = 1e-4) -> dict[str, np.ndarray]:
    """Five-point central differences of ``f(params)`` evaluated in extended precision.

    Truncation error is O(step**4) and rounding error about 1e-19 / step, so
    at 1e-4 both sit far below the double-precision gradients being checked.
    Larger steps risk straddling a ReLU kink.
    """
    base = _ld(params)
    grads = {}
    h = LD(step)
    for name, value in base.items():
        g = np.zeros(value.shape, dtype=LD)
        for idx in np.ndindex(value.shape):
            vals = []
            for k in (-2, -1, 1, 2):
                bumped = dict(base)
                arr = value.copy()
                arr[idx] += k * h
                bumped[name] = arr
                vals.append(f(bumped))
            g[idx] = (vals[0] - 8 * vals[1] + 8 * vals[2] - vals[3]) / (12 * h)
        grads[name] = g
    return grads
