"""The numba and numpy kernel paths must agree to float64 noise level."""
import numpy as np
import pytest

from nrtts import accel, kernels

needs_numba = pytest.mark.skipif(not accel.HAS_NUMBA, reason="numba unavailable")


def conv_case(rng, t=64, c_in=8, c_out=12, k=5, stride=3):
    xp = rng.standard_normal((t, c_in))
    w = rng.standard_normal((k, c_in, c_out))
    b = rng.standard_normal(c_out)
    return xp, w, b, stride


@needs_numba
@pytest.mark.parametrize("stride,k", [(1, 3), (2, 2), (3, 5), (16, 32)])
def test_conv_fwd_paths_agree(stride, k):
    rng = np.random.default_rng(0)
    xp, w, b, _ = conv_case(rng, t=200, k=k, stride=stride)
    y_np = kernels.conv1d_fwd_np(xp, w, b, stride)
    y_nb = kernels.conv1d_fwd_nb(xp, w, b, stride)
    assert y_np.shape == y_nb.shape
    np.testing.assert_allclose(y_np, y_nb, atol=1e-12)


@needs_numba
@pytest.mark.parametrize("stride,k", [(1, 3), (2, 2), (3, 5)])
def test_conv_bwd_paths_agree(stride, k):
    rng = np.random.default_rng(1)
    xp, w, b, _ = conv_case(rng, t=120, k=k, stride=stride)
    t_out = (xp.shape[0] - k) // stride + 1
    gy = rng.standard_normal((t_out, w.shape[2]))
    for a, b2 in zip(kernels.conv1d_bwd_np(xp, w, gy, stride),
                     kernels.conv1d_bwd_nb(xp, w, gy, stride)):
        np.testing.assert_allclose(a, b2, atol=1e-12)


def lstm_case(rng, t=40, hdim=16):
    xw = rng.standard_normal((t, 4 * hdim))
    w_hh = rng.standard_normal((hdim, 4 * hdim)) * 0.3
    return xw, w_hh, np.zeros(hdim), np.zeros(hdim)


@needs_numba
def test_lstm_fwd_paths_agree():
    rng = np.random.default_rng(2)
    xw, w_hh, h0, c0 = lstm_case(rng)
    outs_np = kernels.lstm_fwd_np(xw, w_hh, h0, c0)
    outs_nb = kernels.lstm_fwd_nb(xw, w_hh, h0, c0)
    for a, b in zip(outs_np, outs_nb):
        np.testing.assert_allclose(a, b, atol=1e-12)


@needs_numba
def test_lstm_bwd_paths_agree():
    rng = np.random.default_rng(3)
    xw, w_hh, h0, c0 = lstm_case(rng)
    h, c, gates = kernels.lstm_fwd_np(xw, w_hh, h0, c0)
    gy = rng.standard_normal(h.shape)
    gxw_np = kernels.lstm_bwd_np(gy, gates, c, h, w_hh, h0, c0)
    gxw_nb = kernels.lstm_bwd_nb(gy, gates, c, h, w_hh, h0, c0)
    np.testing.assert_allclose(gxw_np, gxw_nb, atol=1e-11)


def test_conv_fwd_matches_direct_convolution():
    # independent O(T*K) reference, no im2col, no BLAS reshaping tricks
    rng = np.random.default_rng(4)
    xp, w, b, stride = conv_case(rng, t=50, k=4, stride=2)
    k, c_in, c_out = w.shape
    t_out = (xp.shape[0] - k) // stride + 1
    ref = np.empty((t_out, c_out))
    for t in range(t_out):
        acc = b.copy()
        for kk in range(k):
            for ci in range(c_in):
                acc += xp[t * stride + kk, ci] * w[kk, ci]
        ref[t] = acc
    np.testing.assert_allclose(kernels.conv1d_fwd_np(xp, w, b, stride), ref,
                               atol=1e-12)


def test_env_flag_selects_numpy_path(monkeypatch):
    monkeypatch.setenv(accel.ENV_FLAG, "1")
    assert accel._flag_disabled()
    monkeypatch.setenv(accel.ENV_FLAG, "0")
    assert not accel._flag_disabled()
