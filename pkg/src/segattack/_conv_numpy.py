"""Pure-numpy convolution kernels (fallback backend).

Same-padded, stride-1, dilated 2D convolution plus its two backward
passes. Each function loops over the k*k kernel taps and lets BLAS do
the channel contraction, which keeps the fallback usable on desk-scale
inputs.
"""

import numpy as np


def _pad(x, pad):
    if pad == 0:
        return x
    b, c, h, w = x.shape
    xp = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=np.float64)
    xp[:, :, pad:pad + h, pad:pad + w] = x
    return xp


def conv2d_forward(x, w, bias, dilation):
    b, cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    pad = dilation * (k - 1) // 2
    xp = _pad(x, pad)
    out = np.empty((b, cout, h, wd), dtype=np.float64)
    out[:] = bias.reshape(1, cout, 1, 1)
    for u in range(k):
        for v in range(k):
            patch = xp[:, :, u * dilation:u * dilation + h,
                       v * dilation:v * dilation + wd]
            # (b,cin,h,w) x (cout,cin) -> (b,h,w,cout)
            out += np.moveaxis(
                np.tensordot(patch, w[:, :, u, v], axes=([1], [1])), 3, 1)
    return out


def conv2d_grad_input(go, w, dilation):
    b, cout, h, wd = go.shape
    cin, k = w.shape[1], w.shape[2]
    pad = dilation * (k - 1) // 2
    gxp = np.zeros((b, cin, h + 2 * pad, wd + 2 * pad), dtype=np.float64)
    for u in range(k):
        for v in range(k):
            contrib = np.moveaxis(
                np.tensordot(go, w[:, :, u, v], axes=([1], [0])), 3, 1)
            gxp[:, :, u * dilation:u * dilation + h,
                v * dilation:v * dilation + wd] += contrib
    if pad == 0:
        return gxp
    return np.ascontiguousarray(gxp[:, :, pad:pad + h, pad:pad + wd])


def conv2d_grad_kernel(go, x, k, dilation):
    b, cout, h, wd = go.shape
    cin = x.shape[1]
    pad = dilation * (k - 1) // 2
    xp = _pad(x, pad)
    gw = np.empty((cout, cin, k, k), dtype=np.float64)
    for u in range(k):
        for v in range(k):
            patch = xp[:, :, u * dilation:u * dilation + h,
                       v * dilation:v * dilation + wd]
            gw[:, :, u, v] = np.tensordot(go, patch, axes=([0, 2, 3], [0, 2, 3]))
    return gw
