# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: same-padded stride-1 convolution and 2x2 max pooling.

All kernels take C-contiguous float64 NHWC arrays. Convolutions are computed
as chunked im2col followed by a BLAS ``dgemm`` so the patch buffer stays in
cache; pooling is a direct loop.
"""
import numpy as np

from libc.stdlib cimport free, malloc
from libc.string cimport memcpy, memset
from scipy.linalg.cython_blas cimport dgemm

cdef enum:
    CHUNK_ROWS = 1024


cdef void _im2col(const double* x, double* col, long r0, int rows, int H, int W,
                  int C, int K) noexcept nogil:
    cdef int p = K // 2
    cdef int KC = K * K * C
    cdef long hw = <long>H * W
    cdef long r, n
    cdef int y, xx, ky, kx, iy, ix
    cdef double* dst
    for r in range(rows):
        n = (r0 + r) // hw
        y = <int>(((r0 + r) // W) % H)
        xx = <int>((r0 + r) % W)
        dst = col + r * KC
        for ky in range(K):
            iy = y + ky - p
            for kx in range(K):
                ix = xx + kx - p
                if iy < 0 or iy >= H or ix < 0 or ix >= W:
                    memset(dst, 0, C * sizeof(double))
                else:
                    memcpy(dst, x + ((n * H + iy) * W + ix) * C, C * sizeof(double))
                dst += C


def conv2d_same(const double[:, :, :, ::1] x, const double[:, :, :, ::1] kernel,
                const double[::1] bias):
    """out[n,y,x,o] = bias[o] + sum of the zero-padded KxK window times kernel."""
    cdef int N = x.shape[0], H = x.shape[1], W = x.shape[2], C = x.shape[3]
    cdef int K = kernel.shape[0], O = kernel.shape[3]
    cdef int KC = K * K * C
    out = np.empty((N, H, W, O), dtype=np.float64)
    if N == 0 or H == 0 or W == 0 or O == 0:
        return out
    cdef double[:, :, :, ::1] o = out
    cdef double* op = &o[0, 0, 0, 0]
    cdef const double* xp = &x[0, 0, 0, 0]
    cdef double* kp = <double*>&kernel[0, 0, 0, 0]
    cdef long total = <long>N * H * W
    cdef long r0 = 0, r
    cdef int rows, co
    cdef double one = 1.0
    cdef char nt = b'N'
    cdef double* col = <double*>malloc(CHUNK_ROWS * KC * sizeof(double))
    if col == NULL:
        raise MemoryError()
    with nogil:
        while r0 < total:
            rows = CHUNK_ROWS if total - r0 > CHUNK_ROWS else <int>(total - r0)
            _im2col(xp, col, r0, rows, H, W, C, K)
            for r in range(rows):
                for co in range(O):
                    op[(r0 + r) * O + co] = bias[co]
            # column-major view: out^T(O, rows) += kernel^T(O, KC) @ col^T(KC, rows)
            dgemm(&nt, &nt, &O, &rows, &KC, &one, kp, &O, col, &KC, &one,
                  op + r0 * O, &O)
            r0 += rows
    free(col)
    return out


def conv2d_kernel_grad(const double[:, :, :, ::1] x, const double[:, :, :, ::1] grad_out,
                       int K):
    """dL/dkernel for conv2d_same, shape (K, K, C, O)."""
    cdef int N = x.shape[0], H = x.shape[1], W = x.shape[2], C = x.shape[3]
    cdef int O = grad_out.shape[3]
    cdef int KC = K * K * C
    dk = np.zeros((K, K, C, O), dtype=np.float64)
    if N == 0 or H == 0 or W == 0 or O == 0 or C == 0:
        return dk
    cdef double[:, :, :, ::1] dkv = dk
    cdef double* dkp = &dkv[0, 0, 0, 0]
    cdef const double* xp = &x[0, 0, 0, 0]
    cdef double* gp = <double*>&grad_out[0, 0, 0, 0]
    cdef long total = <long>N * H * W
    cdef long r0 = 0
    cdef int rows
    cdef double one = 1.0
    cdef char nt = b'N'
    cdef char tt = b'T'
    cdef double* col = <double*>malloc(CHUNK_ROWS * KC * sizeof(double))
    if col == NULL:
        raise MemoryError()
    with nogil:
        while r0 < total:
            rows = CHUNK_ROWS if total - r0 > CHUNK_ROWS else <int>(total - r0)
            _im2col(xp, col, r0, rows, H, W, C, K)
            # column-major view: dk^T(O, KC) += grad^T(O, rows) @ col(rows, KC)
            dgemm(&nt, &tt, &O, &KC, &rows, &one, gp + r0 * O, &O, col, &KC, &one,
                  dkp, &O)
            r0 += rows
    free(col)
    return dk


def maxpool2(const double[:, :, :, ::1] x):
    """2x2 stride-2 max pooling with ceil-sized output.

    Returns (out, argmax) where argmax holds the flat index into ``x`` of the
    first maximal element of each window in row-major window order.
    """
    cdef Py_ssize_t N = x.shape[0], H = x.shape[1], W = x.shape[2], C = x.shape[3]
    cdef Py_ssize_t OH = (H + 1) // 2, OW = (W + 1) // 2
    out = np.empty((N, OH, OW, C), dtype=np.float64)
    idx = np.empty((N, OH, OW, C), dtype=np.int64)
    if out.size == 0:
        return out, idx
    cdef double[:, :, :, ::1] o = out
    cdef long long[:, :, :, ::1] iv = idx
    cdef Py_ssize_t n, oy, ox, c, y, xx, y1, x1
    cdef double best, v
    cdef long long bi
    with nogil:
        for n in range(N):
            for oy in range(OH):
                y1 = 2 * oy + 2 if 2 * oy + 2 <= H else H
                for ox in range(OW):
                    x1 = 2 * ox + 2 if 2 * ox + 2 <= W else W
                    for c in range(C):
                        best = x[n, 2 * oy, 2 * ox, c]
                        bi = ((n * H + 2 * oy) * W + 2 * ox) * C + c
                        for y in range(2 * oy, y1):
                            for xx in range(2 * ox, x1):
                                v = x[n, y, xx, c]
                                if v > best:
                                    best = v
                                    bi = ((n * H + y) * W + xx) * C + c
                        o[n, oy, ox, c] = best
                        iv[n, oy, ox, c] = bi
    return out, idx


def maxpool2_backward(const double[:, :, :, ::1] grad_out, const long long[:, :, :, ::1] idx,
                      tuple in_shape):
    """Route each pooled gradient back to its argmax location."""
    grad_in = np.zeros(in_shape, dtype=np.float64)
    if grad_out.size == 0:
        return grad_in
    cdef double[::1] g = grad_in.reshape(-1)
    cdef Py_ssize_t N = grad_out.shape[0], OH = grad_out.shape[1]
    cdef Py_ssize_t OW = grad_out.shape[2], C = grad_out.shape[3]
    cdef Py_ssize_t n, oy, ox, c
    with nogil:
        for n in range(N):
            for oy in range(OH):
                for ox in range(OW):
                    for c in range(C):
                        g[idx[n, oy, ox, c]] += grad_out[n, oy, ox, c]
    return grad_in
