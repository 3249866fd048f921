"""Recurrent scan kernels with a compiled core and a numpy fallback.

The backend is picked once at import: the Cython extension if it built,
otherwise the pure-numpy reference. ``UNDERTONE_KERNELS`` overrides the
choice ("compiled", "reference", or "auto"); asking for "compiled" when
the extension is unavailable is an error rather than a silent downgrade.
``BACKEND`` names whichever implementation won.

The *_layer functions wrap each fused scan as a single autodiff op whose
backward is the matching hand-derived kernel.
"""

from __future__ import annotations

import os

import numpy as np

from undertone.autodiff import NonFiniteError, ShapeError, Tensor

from undertone.kernels import reference as _reference

_requested = os.environ.get("UNDERTONE_KERNELS", "auto").strip().lower()
if _requested not in {"auto", "compiled", "reference"}:
    raise RuntimeError(
        f"UNDERTONE_KERNELS={_requested!r}: expected auto, compiled, or reference"
    )

if _requested == "reference":
    _impl = _reference
    BACKEND = "reference"
else:
    try:
        from undertone.kernels import _scan as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        if _requested == "compiled":
            raise RuntimeError(
                "UNDERTONE_KERNELS=compiled but the extension is not built"
            ) from None
        _impl = _reference
        BACKEND = "reference"


def _as_f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _prep(x, lengths, *weights):
    x = _as_f64(x)
    lengths = np.ascontiguousarray(lengths, dtype=np.int64)
    weights = tuple(_as_f64(w) for w in weights)
    if x.ndim != 3:
        raise ShapeError("scan", x.shape)
    B, L, D = x.shape
    H = weights[0].shape[1]
    for w in weights:
        if w.shape != (H + D, H):
            raise ShapeError("scan", x.shape, *(w.shape for w in weights))
    if lengths.shape != (B,) or lengths.min() < 1 or lengths.max() > L:
        raise ShapeError("scan", x.shape, lengths.shape)
    if not np.isfinite(x).all() or any(not np.isfinite(w).all() for w in weights):
        raise NonFiniteError("scan")
    return x, lengths, weights


def gru_scan_forward(x, lengths, w_r, w_z, w_h):
    x, lengths, (w_r, w_z, w_h) = _prep(x, lengths, w_r, w_z, w_h)
    return _impl.gru_scan_forward(x, lengths, w_r, w_z, w_h)


def gru_scan_backward(x, lengths, w_r, w_z, w_h, h_all, g):
    x, lengths, (w_r, w_z, w_h) = _prep(x, lengths, w_r, w_z, w_h)
    return _impl.gru_scan_backward(x, lengths, w_r, w_z, w_h,
                                   _as_f64(h_all), _as_f64(g))


def lstm_scan_forward(x, lengths, w_i, w_f, w_o, w_c):
    x, lengths, ws = _prep(x, lengths, w_i, w_f, w_o, w_c)
    return _impl.lstm_scan_forward(x, lengths, *ws)


def lstm_scan_backward(x, lengths, w_i, w_f, w_o, w_c, h_all, c_all, g):
    x, lengths, ws = _prep(x, lengths, w_i, w_f, w_o, w_c)
    return _impl.lstm_scan_backward(x, lengths, *ws,
                                    _as_f64(h_all), _as_f64(c_all), _as_f64(g))


def gru_layer(tape, x: Tensor, lengths, w_r: Tensor, w_z: Tensor, w_h: Tensor) -> Tensor:
    """Tape op: fused GRU scan over x [B, L, D] -> h_all [B, L, H]."""
    lengths = np.ascontiguousarray(lengths, dtype=np.int64)
    h_all = gru_scan_forward(x.data, lengths, w_r.data, w_z.data, w_h.data)
    out = Tensor(h_all)
    inputs = (x, w_r, w_z, w_h)
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True

        def backward_fn(g):
            return gru_scan_backward(x.data, lengths, w_r.data, w_z.data,
                                     w_h.data, h_all, g)

        tape.record(inputs, out, backward_fn)
    return out


def lstm_layer(tape, x: Tensor, lengths, w_i: Tensor, w_f: Tensor,
               w_o: Tensor, w_c: Tensor) -> Tensor:
    """Tape op: fused LSTM scan over x [B, L, D] -> h_all [B, L, H]."""
    lengths = np.ascontiguousarray(lengths, dtype=np.int64)
    h_all, c_all = lstm_scan_forward(x.data, lengths, w_i.data, w_f.data,
                                     w_o.data, w_c.data)
    out = Tensor(h_all)
    inputs = (x, w_i, w_f, w_o, w_c)
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True

        def backward_fn(g):
            return lstm_scan_backward(x.data, lengths, w_i.data, w_f.data,
                                      w_o.data, w_c.data, h_all, c_all, g)

        tape.record(inputs, out, backward_fn)
    return out
