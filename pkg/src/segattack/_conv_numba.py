"""Numba-jitted convolution kernels (default backend).

Each kernel lowers the dilated convolution to an im2col buffer plus one
BLAS dgemm per batch image; the gather/scatter loops run under nopython
with nogil so concurrent attacks can overlap. Results match the numpy
backend up to float addition order.
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _im2col(img, k, dilation, pad):
    """(Cin,H,W) -> (H*W, Cin*k*k) patch matrix, zero outside the image."""
    cin, h, w = img.shape
    cols = np.zeros((h * w, cin * k * k), dtype=np.float64)
    idx = 0
    for ci in range(cin):
        for u in range(k):
            di = u * dilation - pad
            i_lo = max(0, -di)
            i_hi = min(h, h - di)
            for v in range(k):
                dj = v * dilation - pad
                j_lo = max(0, -dj)
                j_hi = min(w, w - dj)
                for i in range(i_lo, i_hi):
                    base = i * w
                    row = img[ci, i + di]
                    for j in range(j_lo, j_hi):
                        cols[base + j, idx] = row[j + dj]
                idx += 1
    return cols


@njit(cache=True, nogil=True)
def _flatten_kernel(w):
    """(Cout,Cin,k,k) -> (Cin*k*k, Cout) in im2col column order."""
    cout, cin, k, _ = w.shape
    w2 = np.empty((cin * k * k, cout), dtype=np.float64)
    idx = 0
    for ci in range(cin):
        for u in range(k):
            for v in range(k):
                for co in range(cout):
                    w2[idx, co] = w[co, ci, u, v]
                idx += 1
    return w2


@njit(cache=True, nogil=True)
def conv2d_forward(x, w, bias, dilation):
    b, cin, h, wd = x.shape
    cout = w.shape[0]
    k = w.shape[2]
    pad = dilation * (k - 1) // 2
    w2 = _flatten_kernel(w)
    out = np.empty((b, cout, h, wd), dtype=np.float64)
    for n in range(b):
        res = np.dot(_im2col(x[n], k, dilation, pad), w2)
        for co in range(cout):
            bc = bias[co]
            for i in range(h):
                base = i * wd
                for j in range(wd):
                    out[n, co, i, j] = res[base + j, co] + bc
    return out


@njit(cache=True, nogil=True)
def conv2d_grad_input(go, w, dilation):
    b, cout, h, wd = go.shape
    cin = w.shape[1]
    k = w.shape[2]
    pad = dilation * (k - 1) // 2
    w2t = np.empty((cout, cin * k * k), dtype=np.float64)
    idx = 0
    for ci in range(cin):
        for u in range(k):
            for v in range(k):
                for co in range(cout):
                    w2t[co, idx] = w[co, ci, u, v]
                idx += 1
    gx = np.zeros((b, cin, h, wd), dtype=np.float64)
    go2 = np.empty((h * wd, cout), dtype=np.float64)
    for n in range(b):
        for co in range(cout):
            for i in range(h):
                base = i * wd
                row = go[n, co, i]
                for j in range(wd):
                    go2[base + j, co] = row[j]
        gcols = np.dot(go2, w2t)
        idx = 0
        for ci in range(cin):
            for u in range(k):
                di = u * dilation - pad
                i_lo = max(0, -di)
                i_hi = min(h, h - di)
                for v in range(k):
                    dj = v * dilation - pad
                    j_lo = max(0, -dj)
                    j_hi = min(wd, wd - dj)
                    for i in range(i_lo, i_hi):
                        base = i * wd
                        row = gx[n, ci, i + di]
                        for j in range(j_lo, j_hi):
                            row[j + dj] += gcols[base + j, idx]
                    idx += 1
    return gx


@njit(cache=True, nogil=True)
def conv2d_grad_kernel(go, x, k, dilation):
    b, cout, h, wd = go.shape
    cin = x.shape[1]
    pad = dilation * (k - 1) // 2
    f = cin * k * k
    gw2 = np.zeros((cout, f), dtype=np.float64)
    go2 = np.empty((cout, h * wd), dtype=np.float64)
    for n in range(b):
        cols = _im2col(x[n], k, dilation, pad)
        for co in range(cout):
            for i in range(h):
                base = i * wd
                row = go[n, co, i]
                for j in range(wd):
                    go2[co, base + j] = row[j]
        gw2 += np.dot(go2, cols)
    gw = np.empty((cout, cin, k, k), dtype=np.float64)
    idx = 0
    for ci in range(cin):
        for u in range(k):
            for v in range(k):
                for co in range(cout):
                    gw[co, ci, u, v] = gw2[co, idx]
                idx += 1
    return gw
