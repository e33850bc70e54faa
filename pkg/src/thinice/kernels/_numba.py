"""numba-compiled kernels mirroring ``_numpy`` one-for-one.

Loops accumulate in float64 and run single-threaded so reductions keep a
fixed order.
"""

import numba as nb
import numpy as np

_jit = nb.njit(cache=True, fastmath=False, nogil=True)


@_jit
def _matmul_f64(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n), dtype=np.float64)
    for i in range(m):
        for p in range(k):
            aip = np.float64(a[i, p])
            if aip == 0.0:
                continue
            for j in range(n):
                out[i, j] += aip * np.float64(b[p, j])
    return out


def matmul(a, b):
    out_dtype = np.result_type(a, b)
    return _matmul_f64(np.ascontiguousarray(a), np.ascontiguousarray(b)).astype(out_dtype)


@_jit
def _conv_fwd(x, k, stride, pad):
    n, c, h, w = x.shape
    co, _, kh, kw = k.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((n, co, oh, ow), dtype=np.float64)
    for b in range(n):
        for o in range(co):
            for p in range(oh):
                for q in range(ow):
                    acc = 0.0
                    for ci in range(c):
                        for i in range(kh):
                            r = p * stride + i - pad
                            if r < 0 or r >= h:
                                continue
                            for j in range(kw):
                                s = q * stride + j - pad
                                if s < 0 or s >= w:
                                    continue
                                acc += np.float64(x[b, ci, r, s]) * np.float64(k[o, ci, i, j])
                    out[b, o, p, q] = acc
    return out


@_jit
def _conv_bwd_w(gout, x, kh, kw, stride, pad):
    n, c, h, w = x.shape
    co, oh, ow = gout.shape[1], gout.shape[2], gout.shape[3]
    gk = np.zeros((co, c, kh, kw), dtype=np.float64)
    for o in range(co):
        for ci in range(c):
            for i in range(kh):
                for j in range(kw):
                    acc = 0.0
                    for b in range(n):
                        for p in range(oh):
                            r = p * stride + i - pad
                            if r < 0 or r >= h:
                                continue
                            for q in range(ow):
                                s = q * stride + j - pad
                                if s < 0 or s >= w:
                                    continue
                                acc += np.float64(gout[b, o, p, q]) * np.float64(x[b, ci, r, s])
                    gk[o, ci, i, j] = acc
    return gk


@_jit
def _conv_bwd_x(gout, k, h, w, stride, pad):
    n, co, oh, ow = gout.shape
    c, kh, kw = k.shape[1], k.shape[2], k.shape[3]
    gx = np.zeros((n, c, h, w), dtype=np.float64)
    for b in range(n):
        for o in range(co):
            for p in range(oh):
                for q in range(ow):
                    g = np.float64(gout[b, o, p, q])
                    if g == 0.0:
                        continue
                    for ci in range(c):
                        for i in range(kh):
                            r = p * stride + i - pad
                            if r < 0 or r >= h:
                                continue
                            for j in range(kw):
                                s = q * stride + j - pad
                                if s < 0 or s >= w:
                                    continue
                                gx[b, ci, r, s] += g * np.float64(k[o, ci, i, j])
    return gx


def conv2d_forward(x, k, stride, pad):
    out = _conv_fwd(np.ascontiguousarray(x), np.ascontiguousarray(k), stride, pad)
    return out.astype(np.result_type(x, k))


def conv2d_backward_weight(gout, x, k_shape, stride, pad):
    gk = _conv_bwd_w(np.ascontiguousarray(gout), np.ascontiguousarray(x), k_shape[2], k_shape[3], stride, pad)
    return gk.astype(np.result_type(gout, x))


def conv2d_backward_input(gout, k, x_shape, stride, pad):
    gx = _conv_bwd_x(np.ascontiguousarray(gout), np.ascontiguousarray(k), x_shape[2], x_shape[3], stride, pad)
    return gx.astype(np.result_type(gout, k))


@_jit
def _midranks_sorted(sv, order):
    n = sv.size
    ranks = np.empty(n, dtype=np.float64)
    i = 0
    while i < n:
        j = i + 1
        while j < n and sv[j] == sv[i]:
            j += 1
        avg = (i + j + 1) / 2.0
        for t in range(i, j):
            ranks[order[t]] = avg
        i = j
    return ranks


def midranks(values):
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(v, kind="stable")
    return _midranks_sorted(v[order], order)


@_jit
def _qbinom(m, n):
    deg = m * n
    poly = np.zeros(deg + 1, dtype=np.float64)
    poly[0] = 1.0
    for i in range(1, m + 1):
        shift = n + i
        for u in range(deg, shift - 1, -1):
            poly[u] -= poly[u - shift]
        for u in range(i, deg + 1):
            poly[u] += poly[u - i]
    return poly


def gaussian_binomial(m, n):
    if m > n:
        m, n = n, m
    return np.rint(_qbinom(m, n))
