"""Hot inner loops, each in two flavours.

Every kernel exists as a pure-numpy function (``*_numpy``) and, when numba is
importable, an ``@njit`` twin (``*_numba``). The module-level name without a
suffix is the active implementation. Set ``BYTESCAN_NO_NUMBA=1`` to force the
numpy path (useful for debugging and for the parity benchmark).

Recurrent kernels are time-major: arrays are laid out ``[T, B, ...]`` so each
step works on a contiguous ``[B, ...]`` slab.
"""

from __future__ import annotations

import os

import numpy as np

_FLAG = os.environ.get("BYTESCAN_NO_NUMBA", "").strip().lower()
NUMBA_DISABLED = _FLAG in {"1", "true", "yes", "on"}

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not NUMBA_DISABLED
BACKEND = "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# instruction boundaries
# ---------------------------------------------------------------------------


def instruction_starts_numpy(code: np.ndarray, widths: np.ndarray) -> np.ndarray:
    """Offsets at which instructions begin, given per-opcode immediate widths."""
    out = []
    i = 0
    n = code.shape[0]
    while i < n:
        out.append(i)
        i += 1 + int(widths[code[i]])
    return np.asarray(out, dtype=np.int64)


def _instruction_starts_loop(code, widths):
    n = code.shape[0]
    buf = np.empty(n, dtype=np.int64)
    k = 0
    i = 0
    while i < n:
        buf[k] = i
        k += 1
        i += 1 + widths[code[i]]
    return buf[:k].copy()


# ---------------------------------------------------------------------------
# embedding gradient (row scatter-add)
# ---------------------------------------------------------------------------


def scatter_add_rows_numpy(ids: np.ndarray, grads: np.ndarray, n_rows: int) -> np.ndarray:
    out = np.zeros((n_rows, grads.shape[1]), dtype=np.float64)
    np.add.at(out, ids, grads)
    return out


def _scatter_add_rows_loop(ids, grads, n_rows):
    d = grads.shape[1]
    out = np.zeros((n_rows, d), dtype=np.float64)
    for r in range(ids.shape[0]):
        row = ids[r]
        for j in range(d):
            out[row, j] += grads[r, j]
    return out


# ---------------------------------------------------------------------------
# LSTM recurrence
# ---------------------------------------------------------------------------
# Gate layout along the last axis of the pre-activations: [input, forget,
# candidate, output], each of width H. Sigmoid is written through tanh so both
# backends share the same overflow-free formula.


def lstm_scan_forward_numpy(xw: np.ndarray, u: np.ndarray):
    """Run the recurrence over time-major input projections.

    ``xw`` is ``[T, B, 4H]`` (input projection plus bias), ``u`` is ``[H, 4H]``.
    Returns hidden states ``[T, B, H]``, cell states ``[T, B, H]`` and gate
    activations ``[T, B, 4H]``. Initial state is zero.
    """
    t_len, batch, four_h = xw.shape
    hid = four_h // 4
    hs = np.empty((t_len, batch, hid))
    cs = np.empty((t_len, batch, hid))
    acts = np.empty((t_len, batch, four_h))
    h = np.zeros((batch, hid))
    c = np.zeros((batch, hid))
    for t in range(t_len):
        z = xw[t] + h @ u
        a = acts[t]
        a[:, : 2 * hid] = 0.5 * (1.0 + np.tanh(0.5 * z[:, : 2 * hid]))
        a[:, 2 * hid : 3 * hid] = np.tanh(z[:, 2 * hid : 3 * hid])
        a[:, 3 * hid :] = 0.5 * (1.0 + np.tanh(0.5 * z[:, 3 * hid :]))
        c = a[:, hid : 2 * hid] * c + a[:, :hid] * a[:, 2 * hid : 3 * hid]
        h = a[:, 3 * hid :] * np.tanh(c)
        hs[t] = h
        cs[t] = c
    return hs, cs, acts


def lstm_scan_backward_numpy(dh_seq: np.ndarray, acts: np.ndarray, cs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the gate pre-activations ``[T, B, 4H]``.

    ``dh_seq`` holds the external gradient reaching each hidden state.
    """
    t_len, batch, hid = dh_seq.shape
    dz = np.empty((t_len, batch, 4 * hid))
    dh_next = np.zeros((batch, hid))
    dc_next = np.zeros((batch, hid))
    ut = np.ascontiguousarray(u.T)
    for t in range(t_len - 1, -1, -1):
        a = acts[t]
        i_g = a[:, :hid]
        f_g = a[:, hid : 2 * hid]
        g_g = a[:, 2 * hid : 3 * hid]
        o_g = a[:, 3 * hid :]
        c_prev = cs[t - 1] if t > 0 else np.zeros((batch, hid))
        tc = np.tanh(cs[t])
        dh = dh_seq[t] + dh_next
        dc = dc_next + dh * o_g * (1.0 - tc * tc)
        d = dz[t]
        d[:, :hid] = dc * g_g * i_g * (1.0 - i_g)
        d[:, hid : 2 * hid] = dc * c_prev * f_g * (1.0 - f_g)
        d[:, 2 * hid : 3 * hid] = dc * i_g * (1.0 - g_g * g_g)
        d[:, 3 * hid :] = dh * tc * o_g * (1.0 - o_g)
        dc_next = dc * f_g
        dh_next = d @ ut
    return dz


def _lstm_scan_forward_loop(xw, u):
    t_len, batch, four_h = xw.shape
    hid = four_h // 4
    hs = np.empty((t_len, batch, hid))
    cs = np.empty((t_len, batch, hid))
    acts = np.empty((t_len, batch, four_h))
    h = np.zeros((batch, hid))
    c = np.zeros((batch, hid))
    for t in range(t_len):
        z = xw[t] + np.dot(h, u)
        for b in range(batch):
            for j in range(hid):
                ig = 0.5 * (1.0 + np.tanh(0.5 * z[b, j]))
                fg = 0.5 * (1.0 + np.tanh(0.5 * z[b, hid + j]))
                gg = np.tanh(z[b, 2 * hid + j])
                og = 0.5 * (1.0 + np.tanh(0.5 * z[b, 3 * hid + j]))
                acts[t, b, j] = ig
                acts[t, b, hid + j] = fg
                acts[t, b, 2 * hid + j] = gg
                acts[t, b, 3 * hid + j] = og
                cv = fg * c[b, j] + ig * gg
                c[b, j] = cv
                h[b, j] = og * np.tanh(cv)
        hs[t] = h
        cs[t] = c
    return hs, cs, acts


def _lstm_scan_backward_loop(dh_seq, acts, cs, u):
    t_len, batch, hid = dh_seq.shape
    dz = np.empty((t_len, batch, 4 * hid))
    dh_next = np.zeros((batch, hid))
    dc_next = np.zeros((batch, hid))
    ut = np.ascontiguousarray(u.T)
    d = np.empty((batch, 4 * hid))
    for t in range(t_len - 1, -1, -1):
        for b in range(batch):
            for j in range(hid):
                ig = acts[t, b, j]
                fg = acts[t, b, hid + j]
                gg = acts[t, b, 2 * hid + j]
                og = acts[t, b, 3 * hid + j]
                c_prev = cs[t - 1, b, j] if t > 0 else 0.0
                tc = np.tanh(cs[t, b, j])
                dh = dh_seq[t, b, j] + dh_next[b, j]
                dc = dc_next[b, j] + dh * og * (1.0 - tc * tc)
                d[b, j] = dc * gg * ig * (1.0 - ig)
                d[b, hid + j] = dc * c_prev * fg * (1.0 - fg)
                d[b, 2 * hid + j] = dc * ig * (1.0 - gg * gg)
                d[b, 3 * hid + j] = dh * tc * og * (1.0 - og)
                dc_next[b, j] = dc * fg
        dz[t] = d
        dh_next = np.dot(d, ut)
    return dz


# ---------------------------------------------------------------------------
# masked softmax over rows
# ---------------------------------------------------------------------------

MASK_PENALTY = -1e9


def masked_softmax_numpy(z: np.ndarray, keep: np.ndarray) -> np.ndarray:
    """Row softmax of ``z[R, L]`` with ``MASK_PENALTY`` added where ``keep`` is False."""
    z = np.where(keep, z, z + MASK_PENALTY)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_backward_numpy(y: np.ndarray, g: np.ndarray) -> np.ndarray:
    return y * (g - (g * y).sum(axis=1, keepdims=True))


def _masked_softmax_loop(z, keep):
    r, n = z.shape
    out = np.empty_like(z)
    for i in range(r):
        top = -np.inf
        for j in range(n):
            v = z[i, j] if keep[i, j] else z[i, j] + MASK_PENALTY
            out[i, j] = v
            if v > top:
                top = v
        total = 0.0
        for j in range(n):
            e = np.exp(out[i, j] - top)
            out[i, j] = e
            total += e
        for j in range(n):
            out[i, j] /= total
    return out


def _softmax_backward_loop(y, g):
    r, n = y.shape
    out = np.empty_like(y)
    for i in range(r):
        dot = 0.0
        for j in range(n):
            dot += g[i, j] * y[i, j]
        for j in range(n):
            out[i, j] = y[i, j] * (g[i, j] - dot)
    return out


if HAVE_NUMBA:
    instruction_starts_numba = numba.njit(cache=True)(_instruction_starts_loop)
    scatter_add_rows_numba = numba.njit(cache=True)(_scatter_add_rows_loop)
    lstm_scan_forward_numba = numba.njit(cache=True)(_lstm_scan_forward_loop)
    lstm_scan_backward_numba = numba.njit(cache=True)(_lstm_scan_backward_loop)
    masked_softmax_numba = numba.njit(cache=True)(_masked_softmax_loop)
    softmax_backward_numba = numba.njit(cache=True)(_softmax_backward_loop)
else:  # pragma: no cover
    instruction_starts_numba = None
    scatter_add_rows_numba = None
    lstm_scan_forward_numba = None
    lstm_scan_backward_numba = None
    masked_softmax_numba = None
    softmax_backward_numba = None


if USE_NUMBA:
    _instruction_starts = instruction_starts_numba
    _scatter_add_rows = scatter_add_rows_numba
    _lstm_fwd = lstm_scan_forward_numba
    _lstm_bwd = lstm_scan_backward_numba
    _softmax = masked_softmax_numba
    _softmax_bwd = softmax_backward_numba
else:
    _instruction_starts = instruction_starts_numpy
    _scatter_add_rows = scatter_add_rows_numpy
    _lstm_fwd = lstm_scan_forward_numpy
    _lstm_bwd = lstm_scan_backward_numpy
    _softmax = masked_softmax_numpy
    _softmax_bwd = softmax_backward_numpy


def instruction_starts(code: np.ndarray, widths: np.ndarray) -> np.ndarray:
    return _instruction_starts(np.ascontiguousarray(code, dtype=np.uint8), np.ascontiguousarray(widths, dtype=np.int64))


def scatter_add_rows(ids: np.ndarray, grads: np.ndarray, n_rows: int) -> np.ndarray:
    return _scatter_add_rows(
        np.ascontiguousarray(ids, dtype=np.int64), np.ascontiguousarray(grads, dtype=np.float64), int(n_rows)
    )


def lstm_scan_forward(xw: np.ndarray, u: np.ndarray):
    return _lstm_fwd(np.ascontiguousarray(xw, dtype=np.float64), np.ascontiguousarray(u, dtype=np.float64))


def lstm_scan_backward(dh_seq: np.ndarray, acts: np.ndarray, cs: np.ndarray, u: np.ndarray) -> np.ndarray:
    return _lstm_bwd(
        np.ascontiguousarray(dh_seq, dtype=np.float64),
        np.ascontiguousarray(acts, dtype=np.float64),
        np.ascontiguousarray(cs, dtype=np.float64),
        np.ascontiguousarray(u, dtype=np.float64),
    )


def masked_softmax(z: np.ndarray, keep: np.ndarray) -> np.ndarray:
    return _softmax(np.ascontiguousarray(z, dtype=np.float64), np.ascontiguousarray(keep, dtype=np.bool_))


def softmax_backward(y: np.ndarray, g: np.ndarray) -> np.ndarray:
    return _softmax_bwd(np.ascontiguousarray(y, dtype=np.float64), np.ascontiguousarray(g, dtype=np.float64))
