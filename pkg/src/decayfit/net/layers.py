"""Layer primitives with explicit forward and backward passes.

Activations are laid out channels-last: (batch, length, channels).  Every
``*_forward`` returns ``(output, cache)`` and the matching ``*_backward``
takes the upstream gradient and that cache.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv1d_forward(x, w, b):
    """'Same'-padded stride-1 convolution.

    x: (B, L, Cin), w: (Cout, Cin, k) with odd k, b: (Cout,).
    """
    B, L, Cin = x.shape
    Cout, _, k = w.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (0, 0)))
    cols = sliding_window_view(xp, k, axis=1).reshape(B * L, Cin * k)  # (B, L, Cin, k) flattened
    wmat = w.reshape(Cout, Cin * k)
    y = (cols @ wmat.T).reshape(B, L, Cout) + b
    return y, (cols, x.shape, w)


def conv1d_backward(dy, cache):
    cols, (B, L, Cin), w = cache
    Cout, _, k = w.shape
    p = k // 2
    dy2 = dy.reshape(B * L, Cout)
    dw = (dy2.T @ cols).reshape(w.shape)
    db = dy2.sum(axis=0)
    dcols = (dy2 @ w.reshape(Cout, Cin * k)).reshape(B, L, Cin, k)
    dxp = np.zeros((B, L + 2 * p, Cin))
    for j in range(k):
        dxp[:, j:j + L, :] += dcols[..., j]
    return dxp[:, p:p + L, :], dw, db


def maxpool_forward(x, size):
    """Non-overlapping max pooling along the length axis; a ragged tail is dropped."""
    B, L, C = x.shape
    Lo = L // size
    xr = x[:, :Lo * size, :].reshape(B, Lo, size, C)
    idx = xr.argmax(axis=2)
    y = np.take_along_axis(xr, idx[:, :, None, :], axis=2)[:, :, 0, :]
    return y, (idx, x.shape, size)


def maxpool_backward(dy, cache):
    idx, (B, L, C), size = cache
    Lo = L // size
    dxr = np.zeros((B, Lo, size, C))
    np.put_along_axis(dxr, idx[:, :, None, :], dy[:, :, None, :], axis=2)
    dx = np.zeros((B, L, C))
    dx[:, :Lo * size, :] = dxr.reshape(B, Lo * size, C)
    return dx


def dense_forward(x, w, b):
    """x: (B, n_in), w: (n_in, n_out)."""
    return x @ w + b, (x, w)


def dense_backward(dy, cache):
    x, w = cache
    return dy @ w.T, x.T @ dy, dy.sum(axis=0)


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dy, mask):
    return dy * mask
