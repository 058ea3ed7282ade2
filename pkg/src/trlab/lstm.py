"""Batched LSTM layer with explicit backpropagation through time.

Sequences in a batch may have different lengths. Padded steps leave the
recurrent state untouched and produce zero output, so the final state of
each sequence is the state after its last real frame.
"""

from __future__ import annotations

import numpy as np


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def reverse_padded(x: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """Reverse each sequence in ``x`` (B, T, ...) within its own length."""
    B, T = x.shape[:2]
    t = np.arange(T)[None, :]
    idx = np.where(t < lengths[:, None], lengths[:, None] - 1 - t, t)
    return x[np.arange(B)[:, None], idx]


def length_mask(lengths: np.ndarray, T: int) -> np.ndarray:
    return np.arange(T)[None, :] < np.asarray(lengths)[:, None]


def lstm_forward(W, b, x, lengths, h0=None, c0=None, forget_bias=1.0):
    """Run one LSTM layer over ``x`` of shape (B, T, D).

    ``W`` has shape (D + H, 4H) with gate blocks ordered input, forget, cell,
    output. ``forget_bias`` is a constant added to the forget-gate
    pre-activation and is not a parameter.

    Returns ``(outputs, (h_final, c_final), cache)``.
    """
    B, T, D = x.shape
    H = W.shape[1] // 4
    Wx, Wh = W[:D], W[D:]
    h = np.zeros((B, H)) if h0 is None else np.array(h0, dtype=np.float64)
    c = np.zeros((B, H)) if c0 is None else np.array(c0, dtype=np.float64)
    mask = length_mask(lengths, T)
    pre_x = x @ Wx + b
    pre_x[:, :, H:2 * H] += forget_bias

    gates = np.empty((B, T, 4 * H))
    cells = np.empty((B, T, H))
    tanh_c = np.empty((B, T, H))
    h_prev = np.empty((B, T, H))
    c_prev = np.empty((B, T, H))
    out = np.zeros((B, T, H))
    for t in range(T):
        h_prev[:, t] = h
        c_prev[:, t] = c
        z = pre_x[:, t] + h @ Wh
        a = sigmoid(z)
        a[:, 2 * H:3 * H] = np.tanh(z[:, 2 * H:3 * H])
        c_new = a[:, H:2 * H] * c + a[:, :H] * a[:, 2 * H:3 * H]
        tc = np.tanh(c_new)
        h_new = a[:, 3 * H:] * tc
        m = mask[:, t, None]
        c = np.where(m, c_new, c)
        h = np.where(m, h_new, h)
        out[:, t] = np.where(m, h_new, 0.0)
        gates[:, t] = a
        cells[:, t] = c_new
        tanh_c[:, t] = tc
    cache = dict(x=x, W=W, mask=mask, gates=gates, tanh_c=tanh_c, h_prev=h_prev, c_prev=c_prev)
    return out, (h, c), cache


def lstm_backward(cache, d_out, d_h_final=None, d_c_final=None):
    """Backpropagate through :func:`lstm_forward`.

    Returns ``(dW, db, dx, (dh0, dc0))``.
    """
    x, W, mask = cache["x"], cache["W"], cache["mask"]
    gates, tanh_c = cache["gates"], cache["tanh_c"]
    h_prev, c_prev = cache["h_prev"], cache["c_prev"]
    B, T, D = x.shape
    H = W.shape[1] // 4
    Wh = W[D:]
    dh = np.zeros((B, H)) if d_h_final is None else np.array(d_h_final, dtype=np.float64)
    dc = np.zeros((B, H)) if d_c_final is None else np.array(d_c_final, dtype=np.float64)
    d_pre = np.zeros((B, T, 4 * H))
    dWh = np.zeros_like(Wh)
    for t in range(T - 1, -1, -1):
        m = mask[:, t, None]
        a = gates[:, t]
        i, f, g, o = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
        tc = tanh_c[:, t]
        dh_t = dh + d_out[:, t]
        dc_t = dc + dh_t * o * (1.0 - tc * tc)
        dz = np.empty((B, 4 * H))
        dz[:, :H] = dc_t * g * i * (1.0 - i)
        dz[:, H:2 * H] = dc_t * c_prev[:, t] * f * (1.0 - f)
        dz[:, 2 * H:3 * H] = dc_t * i * (1.0 - g * g)
        dz[:, 3 * H:] = dh_t * tc * o * (1.0 - o)
        dz *= m
        d_pre[:, t] = dz
        dWh += h_prev[:, t].T @ dz
        dh = np.where(m, dz @ Wh.T, dh)
        dc = np.where(m, dc_t * f, dc)
    dWx = np.einsum("btd,btk->dk", x, d_pre)
    db = d_pre.sum(axis=(0, 1))
    dx = d_pre @ W[:D].T
    return np.concatenate([dWx, dWh]), db, dx, (dh, dc)
