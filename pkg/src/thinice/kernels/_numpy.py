"""Pure-numpy reference kernels.

Every kernel takes and returns plain ndarrays. Accumulation happens in
float64; outputs are cast back to the promoted input dtype.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def matmul(a, b):
    out_dtype = np.result_type(a, b)
    return (a.astype(np.float64) @ b.astype(np.float64)).astype(out_dtype)


def _windows(x, kh, kw, stride, pad):
    # x: [n, c, h, w] -> [n, c, oh, ow, kh, kw] view over the padded input
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def conv2d_forward(x, k, stride, pad):
    out_dtype = np.result_type(x, k)
    win = _windows(x.astype(np.float64), k.shape[2], k.shape[3], stride, pad)
    out = np.einsum("ncpqij,ocij->nopq", win, k.astype(np.float64), optimize=True)
    return np.ascontiguousarray(out.astype(out_dtype))


def conv2d_backward_weight(gout, x, k_shape, stride, pad):
    win = _windows(x.astype(np.float64), k_shape[2], k_shape[3], stride, pad)
    gk = np.einsum("nopq,ncpqij->ocij", gout.astype(np.float64), win, optimize=True)
    return gk.astype(np.result_type(gout, x))


def conv2d_backward_input(gout, k, x_shape, stride, pad):
    n, c, h, w = x_shape
    _, _, kh, kw = k.shape
    oh, ow = gout.shape[2], gout.shape[3]
    cols = np.einsum("nopq,ocij->ncpqij", gout.astype(np.float64), k.astype(np.float64), optimize=True)
    gx = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            gx[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += cols[:, :, :, :, i, j]
    gx = gx[:, :, pad:pad + h, pad:pad + w]
    return np.ascontiguousarray(gx.astype(np.result_type(gout, k)))


def midranks(values):
    """1-based ranks with ties sharing the mean of their positions."""
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(v, kind="stable")
    sv = v[order]
    n = sv.size
    ranks = np.empty(n, dtype=np.float64)
    # boundaries of runs of equal values
    starts = np.flatnonzero(np.r_[True, sv[1:] != sv[:-1]])
    ends = np.r_[starts[1:], n]
    avg = (starts + ends + 1) / 2.0
    ranks[order] = np.repeat(avg, ends - starts)
    return ranks


def gaussian_binomial(m, n):
    """Coefficients of the q-binomial [m+n choose m] as float64.

    Entry u counts the labelings whose Mann-Whitney statistic equals u.
    """
    if m > n:
        m, n = n, m
    deg = m * n
    poly = np.zeros(deg + 1, dtype=np.float64)
    poly[0] = 1.0
    for i in range(1, m + 1):
        # multiply by (1 - q^(n+i))
        shift = n + i
        poly[shift:] = poly[shift:] - poly[:-shift].copy()
        # divide by (1 - q^i): running sum with stride i
        for r in range(i):
            poly[r::i] = np.cumsum(poly[r::i])
    return np.rint(poly)
