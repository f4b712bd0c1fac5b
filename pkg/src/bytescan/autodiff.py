"""Minimal dense-tensor engine with reverse-mode differentiation.

A :class:`Graph` is a tape: every primitive applied to its tensors appends a
node, so the node list is topologically ordered by construction. Parameters
are named leaves; :func:`backward` returns gradients keyed by those names.

Values are float64 numpy arrays. Broadcasting is limited to the bias pattern
(right operand shape equal to the trailing dims of the left operand).
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from bytescan import kernels
from bytescan.errors import ShapeError, UnknownId

MASK_PENALTY = kernels.MASK_PENALTY

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    __slots__ = ("data", "graph", "parents", "backward_fn", "requires_grad", "name", "op")

    def __init__(self, data, graph, op="leaf", parents=(), backward_fn=None, requires_grad=False, name=None):
        self.data = data
        self.graph = graph
        self.op = op
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor<{self.op}{label} shape={self.shape}>"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)


class Graph:
    """Tape of primitive applications."""

    def __init__(self) -> None:
        self.nodes: list[Tensor] = []

    def param(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(np.asarray(value, dtype=np.float64), self, requires_grad=True, name=name)
        self.nodes.append(t)
        return t

    def constant(self, value) -> Tensor:
        t = Tensor(np.asarray(value, dtype=np.float64), self)
        self.nodes.append(t)
        return t

    def record(self, op: str, data: np.ndarray, parents: Sequence[Tensor], backward_fn: BackwardFn) -> Tensor:
        needs = any(p.requires_grad for p in parents)
        t = Tensor(data, self, op, tuple(parents) if needs else (), backward_fn if needs else None, needs)
        self.nodes.append(t)
        return t

    def __len__(self) -> int:
        return len(self.nodes)

    def clear(self) -> None:
        """Drop the tape; nodes reference the graph, so this breaks the cycle early."""
        self.nodes.clear()


def _graph_of(*tensors: Tensor) -> Graph:
    g = tensors[0].graph
    for t in tensors[1:]:
        if t.graph is not g:
            raise ValueError("tensors belong to different graphs")
    return g


def backward(graph: Graph, loss: Tensor) -> dict[str, np.ndarray]:
    """Gradient of a scalar ``loss`` with respect to every named parameter."""
    if loss.data.size != 1 or loss.data.ndim > 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    out: dict[str, np.ndarray] = {}
    for node in reversed(graph.nodes):
        g = grads.pop(id(node), None)
        if node.name is not None and node.requires_grad and not node.parents:
            out[node.name] = g if g is not None else np.zeros_like(node.data)
            continue
        if g is None or node.backward_fn is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return out


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def _check_bias_shape(a: Tensor, b: Tensor, op: str) -> bool:
    """True when ``b`` broadcasts over the leading axes of ``a``."""
    if a.shape == b.shape:
        return False
    if b.ndim < a.ndim and a.shape[a.ndim - b.ndim :] == b.shape:
        return True
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead))) if lead else g


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_bias_shape(a, b, "add")
    g = _graph_of(a, b)
    return g.record("add", a.data + b.data, (a, b), lambda gr: (gr, _reduce_to(gr, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_bias_shape(a, b, "sub")
    g = _graph_of(a, b)
    return g.record("sub", a.data - b.data, (a, b), lambda gr: (gr, -_reduce_to(gr, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_bias_shape(a, b, "mul")
    g = _graph_of(a, b)
    ad, bd = a.data, b.data
    return g.record("mul", ad * bd, (a, b), lambda gr: (gr * bd, _reduce_to(gr * ad, b.shape)))


def scale(a: Tensor, s: float) -> Tensor:
    return a.graph.record("scale", a.data * s, (a,), lambda gr: (gr * s,))


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    return a.graph.record("relu", np.where(pos, a.data, 0.0), (a,), lambda gr: (gr * pos,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return a.graph.record("tanh", y, (a,), lambda gr: (gr * (1.0 - y * y),))


def sigmoid(a: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return a.graph.record("sigmoid", y, (a,), lambda gr: (gr * y * (1.0 - y),))


# ---------------------------------------------------------------------------
# linear algebra and shape
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a[..., m, k] @ b[..., k, n]`` with equal leading dims, or ``b`` 2-D and shared."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    g = _graph_of(a, b)
    ad, bd = a.data, b.data
    if b.ndim == 2:
        k = ad.shape[-1]
        a2 = ad.reshape(-1, k)
        out = (a2 @ bd).reshape(*ad.shape[:-1], bd.shape[1])

        def back(gr):
            g2 = gr.reshape(-1, bd.shape[1])
            return (g2 @ bd.T).reshape(ad.shape), a2.T @ g2

        return g.record("matmul", out, (a, b), back)
    if a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul leading dimensions differ: {a.shape} @ {b.shape}")

    def back_batched(gr):
        return gr @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ gr

    return g.record("matmul", ad @ bd, (a, b), back_batched)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return a.graph.record("transpose", a.data.transpose(axes), (a,), lambda gr: (gr.transpose(inv),))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    src = a.shape
    return a.graph.record("reshape", a.data.reshape(shape), (a,), lambda gr: (gr.reshape(src),))


def getitem(a: Tensor, index) -> Tensor:
    src = a.shape

    def back(gr):
        out = np.zeros(src)
        np.add.at(out, index, gr)
        return (out,)

    return a.graph.record("getitem", a.data[index], (a,), back)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    g = _graph_of(*tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def back(gr):
        return np.split(gr, bounds, axis=axis)

    return g.record("concat", data, tuple(tensors), back)


def sum_(a: Tensor, axis=None) -> Tensor:
    src = a.shape

    def back(gr):
        if axis is None:
            return (np.broadcast_to(gr, src).copy(),)
        return (np.broadcast_to(np.expand_dims(gr, axis), src).copy(),)

    return a.graph.record("sum", np.asarray(a.data.sum(axis=axis)), (a,), back)


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return scale(sum_(a, axis), 1.0 / float(n))


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    rows = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= rows):
        raise UnknownId(f"token id outside embedding table of {rows} rows")
    flat = ids.reshape(-1)

    def back(gr):
        return (kernels.scatter_add_rows(flat, gr.reshape(-1, table.shape[1]), rows),)

    return table.graph.record("embedding", table.data[ids], (table,), back)


# ---------------------------------------------------------------------------
# normalisation and stochastic
# ---------------------------------------------------------------------------


def softmax(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis, max-subtracted.

    ``mask`` (True = keep) broadcasts against ``x``; masked entries receive a
    -1e9 additive penalty, which underflows their weight to exactly zero.
    """
    z = x.data
    n = z.shape[-1]
    keep = np.ones(z.shape, dtype=bool) if mask is None else np.broadcast_to(mask, z.shape)
    y = kernels.masked_softmax(z.reshape(-1, n), keep.reshape(-1, n)).reshape(z.shape)

    def back(gr):
        return (kernels.softmax_backward(y.reshape(-1, n), gr.reshape(-1, n)).reshape(z.shape),)

    return x.graph.record("softmax", y, (x,), back)


def layer_norm(x: Tensor, gain: Tensor, shift: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if gain.shape != (d,) or shift.shape != (d,):
        raise ShapeError(f"layer_norm affine params must have shape ({d},)")
    g = _graph_of(x, gain, shift)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gain.data

    def back(gr):
        dxhat = gr * gd
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, _reduce_to(gr * xhat, (d,)), _reduce_to(gr, (d,))

    return g.record("layer_norm", xhat * gd + shift.data, (x, gain, shift), back)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    """Inverted dropout; identity outside training or at rate 0."""
    if not train or rate <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs a random generator")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x.graph.record("dropout", x.data * keep, (x,), lambda gr: (gr * keep,))


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def binary_cross_entropy(p: Tensor, target: np.ndarray) -> Tensor:
    """Mean of ``-(y log p + (1-y) log(1-p))``; ``p`` must lie strictly in (0, 1)."""
    y = np.asarray(target, dtype=np.float64)
    if y.shape != p.shape:
        raise ShapeError(f"target shape {y.shape} != prediction shape {p.shape}")
    pd = p.data
    n = pd.size
    loss = -np.mean(y * np.log(pd) + (1.0 - y) * np.log1p(-pd))

    def back(gr):
        return (gr * (pd - y) / (pd * (1.0 - pd)) / n,)

    return p.graph.record("bce", np.asarray(loss), (p,), back)


def categorical_cross_entropy(logits: Tensor, target: np.ndarray) -> Tensor:
    """Mean over rows of ``-sum(y * log_softmax(logits))``; ``target`` is [N, C]."""
    y = np.asarray(target, dtype=np.float64)
    if y.shape != logits.shape or logits.ndim != 2:
        raise ShapeError(f"target shape {y.shape} incompatible with logits {logits.shape}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = z.shape[0]
    loss = -(y * logp).sum() / n

    def back(gr):
        p = np.exp(logp)
        return (gr * (p * y.sum(axis=1, keepdims=True) - y) / n,)

    return logits.graph.record("cce", np.asarray(loss), (logits,), back)


# ---------------------------------------------------------------------------
# recurrence
# ---------------------------------------------------------------------------


def lstm_scan(xw: Tensor, u: Tensor) -> Tensor:
    """LSTM recurrence over batch-major projections ``xw[B, T, 4H]``.

    Returns hidden states ``[B, T, H]`` from a zero initial state; the gate
    order along the projection axis is input, forget, candidate, output.
    """
    if xw.ndim != 3 or u.ndim != 2 or xw.shape[2] != u.shape[1] or u.shape[1] != 4 * u.shape[0]:
        raise ShapeError(f"lstm_scan: bad shapes xw={xw.shape} u={u.shape}")
    g = _graph_of(xw, u)
    xw_t = np.ascontiguousarray(xw.data.transpose(1, 0, 2))
    ud = u.data
    hs, cs, acts = kernels.lstm_scan_forward(xw_t, ud)
    hid = ud.shape[0]

    def back(gr):
        dz = kernels.lstm_scan_backward(np.ascontiguousarray(gr.transpose(1, 0, 2)), acts, cs, ud)
        h_prev = np.concatenate([np.zeros((1,) + hs.shape[1:]), hs[:-1]], axis=0)
        du = h_prev.reshape(-1, hid).T @ dz.reshape(-1, 4 * hid)
        return dz.transpose(1, 0, 2), du

    return g.record("lstm_scan", hs.transpose(1, 0, 2), (xw, u), back)
