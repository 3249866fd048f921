import os
import subprocess
import sys

import numpy as np
import pytest

from undertone import autodiff as ad
from undertone import kernels
from undertone.autodiff import Tensor
from undertone.kernels import reference

TOL = 1e-4

B, L, D, H = 3, 7, 4, 5
K = H + D


def _setup(seed, n_weights):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(B, L, D))
    lengths = np.array([L, 4, 1], dtype=np.int64)
    ws = [rng.normal(size=(K, H)) * 0.4 for _ in range(n_weights)]
    return x, lengths, ws, rng


def test_backend_is_reported():
    assert kernels.BACKEND in ("compiled", "reference")


def test_gru_backends_agree():
    x, lengths, ws, rng = _setup(0, 3)
    h_active = kernels.gru_scan_forward(x, lengths, *ws)
    h_ref = reference.gru_scan_forward(x, lengths, *ws)
    np.testing.assert_allclose(h_active, h_ref, atol=1e-12)

    g = rng.normal(size=(B, L, H))
    out_active = kernels.gru_scan_backward(x, lengths, *ws, h_active, g)
    out_ref = reference.gru_scan_backward(x, lengths, *ws, h_ref, g)
    for a, r in zip(out_active, out_ref):
        np.testing.assert_allclose(a, r, atol=1e-10)


def test_lstm_backends_agree():
    x, lengths, ws, rng = _setup(1, 4)
    h_active, c_active = kernels.lstm_scan_forward(x, lengths, *ws)
    h_ref, c_ref = reference.lstm_scan_forward(x, lengths, *ws)
    np.testing.assert_allclose(h_active, h_ref, atol=1e-12)
    np.testing.assert_allclose(c_active, c_ref, atol=1e-12)

    g = rng.normal(size=(B, L, H))
    out_active = kernels.lstm_scan_backward(x, lengths, *ws, h_active, c_active, g)
    out_ref = reference.lstm_scan_backward(x, lengths, *ws, h_ref, c_ref, g)
    for a, r in zip(out_active, out_ref):
        np.testing.assert_allclose(a, r, atol=1e-10)


def test_gru_zero_weights_give_zero_states():
    x, lengths, _, _ = _setup(2, 3)
    zeros = [np.zeros((K, H)) for _ in range(3)]
    h = kernels.gru_scan_forward(x, lengths, *zeros)
    np.testing.assert_array_equal(h, np.zeros((B, L, H)))


def test_gru_padding_slots_are_zero_and_state_freezes():
    x, lengths, ws, _ = _setup(3, 3)
    h = kernels.gru_scan_forward(x, lengths, *ws)
    for i, n in enumerate(lengths):
        assert (h[i, n:] == 0.0).all()


def test_gru_padding_content_is_ignored():
    x, lengths, ws, rng = _setup(4, 3)
    h1 = kernels.gru_scan_forward(x, lengths, *ws)
    x2 = x.copy()
    for i, n in enumerate(lengths):
        x2[i, n:] = rng.normal(size=(L - n, D)) * 50.0
    h2 = kernels.gru_scan_forward(x2, lengths, *ws)
    np.testing.assert_array_equal(h1, h2)


def test_lstm_padding_content_is_ignored():
    x, lengths, ws, rng = _setup(5, 4)
    h1, c1 = kernels.lstm_scan_forward(x, lengths, *ws)
    x2 = x.copy()
    for i, n in enumerate(lengths):
        x2[i, n:] = rng.normal(size=(L - n, D)) * 50.0
    h2, c2 = kernels.lstm_scan_forward(x2, lengths, *ws)
    np.testing.assert_array_equal(h1, h2)
    np.testing.assert_array_equal(c1, c2)


def test_gru_matches_single_step_recurrence():
    # one batch row, no padding: replay the recurrence by hand
    rng = np.random.default_rng(6)
    x = rng.normal(size=(1, 4, D))
    lengths = np.array([4], dtype=np.int64)
    w_r, w_z, w_h = (rng.normal(size=(K, H)) * 0.5 for _ in range(3))
    h_all = kernels.gru_scan_forward(x, lengths, w_r, w_z, w_h)

    def sig(a):
        return 1.0 / (1.0 + np.exp(-a))

    h = np.zeros(H)
    for t in range(4):
        v = np.concatenate([h, x[0, t]])
        r = sig(v @ w_r)
        z = sig(v @ w_z)
        hn = np.tanh(np.concatenate([r * h, x[0, t]]) @ w_h)
        h = (1.0 - z) * h + z * hn
        np.testing.assert_allclose(h_all[0, t], h, atol=1e-12)


def test_gru_layer_gradients_match_fd():
    x_arr, lengths, ws, rng = _setup(7, 3)
    x = Tensor(x_arr, requires_grad=True)
    w_r, w_z, w_h = (Tensor(w, requires_grad=True) for w in ws)
    proj = Tensor(rng.normal(size=(B, L, H)))

    def f(tape):
        h = kernels.gru_layer(tape, x, lengths, w_r, w_z, w_h)
        return ad.sum_axis(tape, ad.mul(tape, h, proj), axis=None)

    assert ad.finite_difference_check(f, [x, w_r, w_z, w_h]) < TOL


def test_lstm_layer_gradients_match_fd():
    x_arr, lengths, ws, rng = _setup(8, 4)
    x = Tensor(x_arr, requires_grad=True)
    tws = [Tensor(w, requires_grad=True) for w in ws]
    proj = Tensor(rng.normal(size=(B, L, H)))

    def f(tape):
        h = kernels.lstm_layer(tape, x, lengths, *tws)
        return ad.sum_axis(tape, ad.mul(tape, h, proj), axis=None)

    assert ad.finite_difference_check(f, [x] + tws) < TOL


def test_gru_layer_composes_with_reverse_for_bidirectional():
    # gradient still exact when the scan runs over a reversed sequence
    x_arr, lengths, ws, rng = _setup(9, 3)
    x = Tensor(x_arr, requires_grad=True)
    w_r, w_z, w_h = (Tensor(w, requires_grad=True) for w in ws)
    proj = Tensor(rng.normal(size=(B, L, H)))

    def f(tape):
        rev = ad.reverse_padded(tape, x, lengths)
        h = kernels.gru_layer(tape, rev, lengths, w_r, w_z, w_h)
        back = ad.reverse_padded(tape, h, lengths)
        return ad.sum_axis(tape, ad.mul(tape, back, proj), axis=None)

    assert ad.finite_difference_check(f, [x, w_r, w_z, w_h]) < TOL


def test_scan_rejects_bad_lengths():
    x, _, ws, _ = _setup(10, 3)
    with pytest.raises(ad.ShapeError):
        kernels.gru_scan_forward(x, np.array([L, 4, 0]), *ws)
    with pytest.raises(ad.ShapeError):
        kernels.gru_scan_forward(x, np.array([L + 1, 4, 1]), *ws)


def test_scan_rejects_bad_weight_shape():
    x, lengths, ws, _ = _setup(11, 3)
    ws[1] = ws[1][:-1]
    with pytest.raises(ad.ShapeError):
        kernels.gru_scan_forward(x, lengths, *ws)


def test_env_override_forces_reference_backend():
    env = dict(os.environ, UNDERTONE_KERNELS="reference")
    out = subprocess.run(
        [sys.executable, "-c", "from undertone import kernels; print(kernels.BACKEND)"],
        capture_output=True, text=True, env=env, check=True,
    )
    assert out.stdout.strip() == "reference"


def test_env_override_rejects_unknown_value():
    env = dict(os.environ, UNDERTONE_KERNELS="gpu")
    out = subprocess.run(
        [sys.executable, "-c", "import undertone.kernels"],
        capture_output=True, text=True, env=env,
    )
    assert out.returncode != 0
    assert "UNDERTONE_KERNELS" in out.stderr


def test_scan_rejects_non_finite():
    x, lengths, ws, _ = _setup(12, 3)
    x[0, 0, 0] = np.inf
    with pytest.raises(ad.NonFiniteError):
        kernels.gru_scan_forward(x, lengths, *ws)
