"""Pure-numpy recurrent scan kernels.

These are the fallback for the compiled extension and the ground truth in
its equivalence tests. Semantics shared by both backends:

* inputs are right-padded; ``lengths[i]`` counts the valid steps of row i
* the initial state is zero
* gates carry no bias terms
* ``h_all[i, t]`` is zero for ``t >= lengths[i]`` and the carried state
  freezes there, so padding cannot leak into valid positions
* backward passes recompute gates from the stored state sequence instead
  of keeping per-step activations
"""

from __future__ import annotations

import numpy as np


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def gru_scan_forward(x, lengths, w_r, w_z, w_h):
    """Run a forward GRU over [B, L, D] input; return h_all [B, L, H]."""
    B, L, _ = x.shape
    H = w_r.shape[1]
    h = np.zeros((B, H))
    h_all = np.zeros((B, L, H))
    for t in range(L):
        m = (t < lengths).astype(np.float64)[:, None]
        v = np.concatenate([h, x[:, t]], axis=1)
        r = _sigmoid(v @ w_r)
        z = _sigmoid(v @ w_z)
        vh = np.concatenate([r * h, x[:, t]], axis=1)
        h_new = np.tanh(vh @ w_h)
        h = m * ((1.0 - z) * h + z * h_new) + (1.0 - m) * h
        h_all[:, t] = m * h
    return h_all


def gru_scan_backward(x, lengths, w_r, w_z, w_h, h_all, g):
    """Gradients of a scalar loss through the GRU scan.

    ``g`` is dLoss/dh_all. Returns (dx, dw_r, dw_z, dw_h).
    """
    B, L, D = x.shape
    H = w_r.shape[1]
    dx = np.zeros_like(x)
    dw_r = np.zeros_like(w_r)
    dw_z = np.zeros_like(w_z)
    dw_h = np.zeros_like(w_h)
    dh = np.zeros((B, H))
    for t in range(L - 1, -1, -1):
        m = (t < lengths).astype(np.float64)[:, None]
        h_prev = h_all[:, t - 1] if t > 0 else np.zeros((B, H))
        v = np.concatenate([h_prev, x[:, t]], axis=1)
        r = _sigmoid(v @ w_r)
        z = _sigmoid(v @ w_z)
        vh = np.concatenate([r * h_prev, x[:, t]], axis=1)
        h_new = np.tanh(vh @ w_h)

        gt = m * (dh + g[:, t])
        dz = gt * (h_new - h_prev)
        da_z = dz * z * (1.0 - z)
        dh_new = gt * z
        da_h = dh_new * (1.0 - h_new * h_new)
        dvh = da_h @ w_h.T
        du = dvh[:, :H]
        dr = du * h_prev
        da_r = dr * r * (1.0 - r)
        dvr = da_r @ w_r.T
        dvz = da_z @ w_z.T

        dx[:, t] = dvh[:, H:] + dvr[:, H:] + dvz[:, H:]
        dw_h += vh.T @ da_h
        dw_r += v.T @ da_r
        dw_z += v.T @ da_z
        dh = gt * (1.0 - z) + du * r + dvr[:, :H] + dvz[:, :H] + (1.0 - m) * dh
    return dx, dw_r, dw_z, dw_h


def lstm_scan_forward(x, lengths, w_i, w_f, w_o, w_c):
    """Run a forward LSTM; return (h_all, c_all), each [B, L, H]."""
    B, L, _ = x.shape
    H = w_i.shape[1]
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    h_all = np.zeros((B, L, H))
    c_all = np.zeros((B, L, H))
    for t in range(L):
        m = (t < lengths).astype(np.float64)[:, None]
        v = np.concatenate([h, x[:, t]], axis=1)
        i = _sigmoid(v @ w_i)
        f = _sigmoid(v @ w_f)
        o = _sigmoid(v @ w_o)
        c_bar = np.tanh(v @ w_c)
        c_new = f * c + i * c_bar
        h_new = o * np.tanh(c_new)
        c = m * c_new + (1.0 - m) * c
        h = m * h_new + (1.0 - m) * h
        h_all[:, t] = m * h
        c_all[:, t] = m * c
    return h_all, c_all


def lstm_scan_backward(x, lengths, w_i, w_f, w_o, w_c, h_all, c_all, g):
    """Gradients through the LSTM scan; returns (dx, dw_i, dw_f, dw_o, dw_c)."""
    B, L, D = x.shape
    H = w_i.shape[1]
    dx = np.zeros_like(x)
    dw_i = np.zeros_like(w_i)
    dw_f = np.zeros_like(w_f)
    dw_o = np.zeros_like(w_o)
    dw_c = np.zeros_like(w_c)
    dh = np.zeros((B, H))
    dc = np.zeros((B, H))
    for t in range(L - 1, -1, -1):
        m = (t < lengths).astype(np.float64)[:, None]
        h_prev = h_all[:, t - 1] if t > 0 else np.zeros((B, H))
        c_prev = c_all[:, t - 1] if t > 0 else np.zeros((B, H))
        v = np.concatenate([h_prev, x[:, t]], axis=1)
        i = _sigmoid(v @ w_i)
        f = _sigmoid(v @ w_f)
        o = _sigmoid(v @ w_o)
        c_bar = np.tanh(v @ w_c)
        tc = np.tanh(c_all[:, t])

        gh = m * (dh + g[:, t])
        do = gh * tc
        da_o = do * o * (1.0 - o)
        dct = m * dc + gh * o * (1.0 - tc * tc)
        di = dct * c_bar
        da_i = di * i * (1.0 - i)
        df = dct * c_prev
        da_f = df * f * (1.0 - f)
        dc_bar = dct * i
        da_c = dc_bar * (1.0 - c_bar * c_bar)

        dv = da_i @ w_i.T + da_f @ w_f.T + da_o @ w_o.T + da_c @ w_c.T
        dx[:, t] = dv[:, H:]
        dw_i += v.T @ da_i
        dw_f += v.T @ da_f
        dw_o += v.T @ da_o
        dw_c += v.T @ da_c
        dh = dv[:, :H] + (1.0 - m) * dh
        dc = dct * f + (1.0 - m) * dc
    return dx, dw_i, dw_f, dw_o, dw_c
