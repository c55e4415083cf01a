"""Hot numeric kernels with numba and pure-numpy twin implementations.

Everything here operates on plain float64 ``ndarray``s and stays free of
package types so the numba versions compile in nopython mode.  Conventions:

* conv1d inputs are time-major ``[T, C_in]``, weights ``[K, C_in, C_out]``;
  padding is applied by the caller, kernels see the padded array.
* the LSTM kernels cover only the recurrence.  The input projection
  ``x @ w_ih + b`` and every weight gradient are plain matmuls over the
  whole sequence, so the autograd wrapper does them in BLAS; the kernels
  return per-step gate gradients (``gxw``) only.

``*_np`` suffixes mark the vectorized numpy path, ``*_nb`` the numba path.
The unsuffixed public names are bound at import time per ``accel.USE_NUMBA``.
"""
import numpy as np

from . import accel


# ---------------------------------------------------------------------------
# conv1d
# ---------------------------------------------------------------------------

def conv1d_fwd_np(xp, w, b, stride):
    """Strided 1-D convolution on a padded input via one im2col matmul."""
    k, c_in, c_out = w.shape
    t_out = (xp.shape[0] - k) // stride + 1
    idx = np.arange(t_out)[:, None] * stride + np.arange(k)[None, :]
    windows = xp[idx].reshape(t_out, k * c_in)
    return windows @ w.reshape(k * c_in, c_out) + b


def conv1d_bwd_np(xp, w, gy, stride):
    """Gradients of conv1d_fwd w.r.t. padded input, weights, and bias."""
    k, c_in, c_out = w.shape
    t_out = gy.shape[0]
    idx = np.arange(t_out)[:, None] * stride + np.arange(k)[None, :]
    windows = xp[idx].reshape(t_out, k * c_in)
    gw = (windows.T @ gy).reshape(k, c_in, c_out)
    gb = gy.sum(axis=0)
    gxp = np.zeros_like(xp)
    starts = np.arange(t_out) * stride
    for kk in range(k):
        # positions starts+kk are distinct, fancy-index add is collision-free
        gxp[starts + kk] += gy @ w[kk].T
    return gxp, gw, gb


def _conv1d_fwd_loops(xp, w, b, stride):
    k = w.shape[0]
    c_out = w.shape[2]
    t_out = (xp.shape[0] - k) // stride + 1
    y = np.empty((t_out, c_out))
    for t in range(t_out):
        y[t] = b
    for kk in range(k):
        xs = np.ascontiguousarray(xp[kk:kk + (t_out - 1) * stride + 1:stride])
        y += np.dot(xs, w[kk])
    return y


def _conv1d_bwd_loops(xp, w, gy, stride):
    k = w.shape[0]
    c_in = w.shape[1]
    t_out = gy.shape[0]
    gy = np.ascontiguousarray(gy)
    gxp = np.zeros_like(xp)
    gw = np.empty_like(w)
    gb = np.zeros(w.shape[2])
    for t in range(t_out):
        gb += gy[t]
    for kk in range(k):
        xs = np.ascontiguousarray(xp[kk:kk + (t_out - 1) * stride + 1:stride])
        gw[kk] = np.dot(np.ascontiguousarray(xs.T), gy)
        gslice = np.dot(gy, np.ascontiguousarray(w[kk].T))
        for t in range(t_out):
            pos = t * stride + kk
            for ci in range(c_in):
                gxp[pos, ci] += gslice[t, ci]
    return gxp, gw, gb


conv1d_fwd_nb = accel.jit_always(_conv1d_fwd_loops)
conv1d_bwd_nb = accel.jit_always(_conv1d_bwd_loops)


# ---------------------------------------------------------------------------
# LSTM recurrence (gate order: input, forget, cell, output)
# ---------------------------------------------------------------------------

def lstm_fwd_np(xw, w_hh, h0, c0):
    """Pure-numpy LSTM recurrence (python loop over time)."""
    t_len = xw.shape[0]
    hdim = w_hh.shape[0]
    h = np.empty((t_len, hdim))
    c = np.empty((t_len, hdim))
    gates = np.empty((t_len, 4 * hdim))
    h_prev = h0
    c_prev = c0
    for t in range(t_len):
        a = xw[t] + h_prev @ w_hh
        gi = 1.0 / (1.0 + np.exp(-a[:hdim]))
        gf = 1.0 / (1.0 + np.exp(-a[hdim:2 * hdim]))
        gg = np.tanh(a[2 * hdim:3 * hdim])
        go = 1.0 / (1.0 + np.exp(-a[3 * hdim:]))
        c_t = gf * c_prev + gi * gg
        gates[t, :hdim] = gi
        gates[t, hdim:2 * hdim] = gf
        gates[t, 2 * hdim:3 * hdim] = gg
        gates[t, 3 * hdim:] = go
        c[t] = c_t
        h[t] = go * np.tanh(c_t)
        h_prev = h[t]
        c_prev = c_t
    return h, c, gates


def lstm_bwd_np(gy, gates, c, h, w_hh, h0, c0):
    """Backward recurrence; returns gate-preactivation grads gxw [T, 4H]."""
    t_len = gy.shape[0]
    hdim = w_hh.shape[0]
    gxw = np.empty((t_len, 4 * hdim))
    w_hh_t = w_hh.T
    dh_next = np.zeros(hdim)
    dc = np.zeros(hdim)
    for t in range(t_len - 1, -1, -1):
        dh = gy[t] + dh_next
        gi = gates[t, :hdim]
        gf = gates[t, hdim:2 * hdim]
        gg = gates[t, 2 * hdim:3 * hdim]
        go = gates[t, 3 * hdim:]
        tc = np.tanh(c[t])
        c_prev = c[t - 1] if t > 0 else c0
        dc = dc + dh * go * (1.0 - tc * tc)
        gxw[t, :hdim] = dc * gg * gi * (1.0 - gi)
        gxw[t, hdim:2 * hdim] = dc * c_prev * gf * (1.0 - gf)
        gxw[t, 2 * hdim:3 * hdim] = dc * gi * (1.0 - gg * gg)
        gxw[t, 3 * hdim:] = dh * tc * go * (1.0 - go)
        dh_next = gxw[t] @ w_hh_t
        dc = dc * gf
    return gxw


def _lstm_fwd_scalar(xw, w_hh, h0, c0):
    t_len = xw.shape[0]
    hdim = w_hh.shape[0]
    h = np.empty((t_len, hdim))
    c = np.empty((t_len, hdim))
    gates = np.empty((t_len, 4 * hdim))
    h_prev = h0.copy()
    c_prev = c0.copy()
    for t in range(t_len):
        a = xw[t] + np.dot(h_prev, w_hh)
        for j in range(hdim):
            gi = 1.0 / (1.0 + np.exp(-a[j]))
            gf = 1.0 / (1.0 + np.exp(-a[hdim + j]))
            gg = np.tanh(a[2 * hdim + j])
            go = 1.0 / (1.0 + np.exp(-a[3 * hdim + j]))
            c_t = gf * c_prev[j] + gi * gg
            gates[t, j] = gi
            gates[t, hdim + j] = gf
            gates[t, 2 * hdim + j] = gg
            gates[t, 3 * hdim + j] = go
            c[t, j] = c_t
            h[t, j] = go * np.tanh(c_t)
        h_prev = h[t]
        c_prev = c[t]
    return h, c, gates


def _lstm_bwd_scalar(gy, gates, c, h, w_hh, h0, c0):
    t_len = gy.shape[0]
    hdim = w_hh.shape[0]
    gxw = np.empty((t_len, 4 * hdim))
    w_hh_t = np.ascontiguousarray(w_hh.T)
    dh_next = np.zeros(hdim)
    dc = np.zeros(hdim)
    for t in range(t_len - 1, -1, -1):
        for j in range(hdim):
            dh = gy[t, j] + dh_next[j]
            gi = gates[t, j]
            gf = gates[t, hdim + j]
            gg = gates[t, 2 * hdim + j]
            go = gates[t, 3 * hdim + j]
            tc = np.tanh(c[t, j])
            c_prev = c[t - 1, j] if t > 0 else c0[j]
            dc_t = dc[j] + dh * go * (1.0 - tc * tc)
            gxw[t, j] = dc_t * gg * gi * (1.0 - gi)
            gxw[t, hdim + j] = dc_t * c_prev * gf * (1.0 - gf)
            gxw[t, 2 * hdim + j] = dc_t * gi * (1.0 - gg * gg)
            gxw[t, 3 * hdim + j] = dh * tc * go * (1.0 - go)
            dc[j] = dc_t * gf
        dh_next = np.dot(gxw[t], w_hh_t)
    return gxw


lstm_fwd_nb = accel.jit_always(_lstm_fwd_scalar)
lstm_bwd_nb = accel.jit_always(_lstm_bwd_scalar)


if accel.USE_NUMBA:
    conv1d_fwd = conv1d_fwd_nb
    conv1d_bwd = conv1d_bwd_nb
    lstm_fwd = lstm_fwd_nb
    lstm_bwd = lstm_bwd_nb
else:
    conv1d_fwd = conv1d_fwd_np
    conv1d_bwd = conv1d_bwd_np
    lstm_fwd = lstm_fwd_np
    lstm_bwd = lstm_bwd_np
