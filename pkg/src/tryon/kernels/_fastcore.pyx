# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: 2D convolution and bilinear grid sampling.

Convolution is im2col-based: the patch packing and the scatter-add of
col2im run as compiled loops, the single large matmul in the middle goes
to BLAS.  Bilinear sampling (gather) and its backward (scatter) are fully
compiled.  Contracts mirror the numpy fallback in ``_npcore``.
"""

import numpy as np

cimport cython
cimport numpy as cnp

ctypedef fused real:
    float
    double


cdef inline Py_ssize_t _imin(Py_ssize_t a, Py_ssize_t b) nogil:
    return a if a < b else b


cdef void _im2col(real[:, :, ::1] x, real[:, ::1] cols,
                  Py_ssize_t kh, Py_ssize_t kw, int stride, int pad,
                  Py_ssize_t ho, Py_ssize_t wo) nogil:
    cdef Py_ssize_t cin = x.shape[0], H = x.shape[1], W = x.shape[2]
    cdef Py_ssize_t ci, p, q, i, j, iy, ix, col, row
    for ci in range(cin):
        for p in range(kh):
            for q in range(kw):
                col = (ci * kh + p) * kw + q
                for i in range(ho):
                    iy = i * stride + p - pad
                    if iy < 0 or iy >= H:
                        continue
                    row = i * wo
                    for j in range(wo):
                        ix = j * stride + q - pad
                        if 0 <= ix < W:
                            cols[row + j, col] = x[ci, iy, ix]


cdef void _col2im(real[:, ::1] cols, real[:, :, ::1] gx,
                  Py_ssize_t kh, Py_ssize_t kw, int stride, int pad,
                  Py_ssize_t ho, Py_ssize_t wo) nogil:
    cdef Py_ssize_t cin = gx.shape[0], H = gx.shape[1], W = gx.shape[2]
    cdef Py_ssize_t ci, p, q, i, j, iy, ix, col, row
    for ci in range(cin):
        for p in range(kh):
            for q in range(kw):
                col = (ci * kh + p) * kw + q
                for i in range(ho):
                    iy = i * stride + p - pad
                    if iy < 0 or iy >= H:
                        continue
                    row = i * wo
                    for j in range(wo):
                        ix = j * stride + q - pad
                        if 0 <= ix < W:
                            gx[ci, iy, ix] += cols[row + j, col]


def conv2d_forward(real[:, :, ::1] x, real[:, :, :, ::1] w, int stride=1, int pad=0):
    cdef Py_ssize_t cin = x.shape[0], H = x.shape[1], W = x.shape[2]
    cdef Py_ssize_t cout = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = (H + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t wo = (W + 2 * pad - kw) // stride + 1
    dtype = np.float32 if real is float else np.float64

    cols_arr = np.zeros((ho * wo, cin * kh * kw), dtype=dtype)
    cdef real[:, ::1] cols = cols_arr
    _im2col(x, cols, kh, kw, stride, pad, ho, wo)
    w_mat = np.asarray(w).reshape(cout, cin * kh * kw)
    y = cols_arr @ w_mat.T
    return np.ascontiguousarray(y.T.reshape(cout, ho, wo))


def conv2d_backward(real[:, :, ::1] x, real[:, :, :, ::1] w, real[:, :, ::1] gy,
                    int stride=1, int pad=0):
    cdef Py_ssize_t cin = x.shape[0], H = x.shape[1], W = x.shape[2]
    cdef Py_ssize_t cout = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = gy.shape[1], wo = gy.shape[2]
    dtype = np.float32 if real is float else np.float64

    cols_arr = np.zeros((ho * wo, cin * kh * kw), dtype=dtype)
    cdef real[:, ::1] cols = cols_arr
    _im2col(x, cols, kh, kw, stride, pad, ho, wo)
    gy_mat = np.asarray(gy).reshape(cout, ho * wo)
    gw = (gy_mat @ cols_arr).reshape(cout, cin, kh, kw)

    w_mat = np.asarray(w).reshape(cout, cin * kh * kw)
    gcols_arr = np.ascontiguousarray(gy_mat.T @ w_mat)
    cdef real[:, ::1] gcols = gcols_arr
    gx_arr = np.zeros((cin, H, W), dtype=dtype)
    cdef real[:, :, ::1] gx = gx_arr
    _col2im(gcols, gx, kh, kw, stride, pad, ho, wo)
    return gx_arr, gw


cdef inline double _clampd(double v, double lo, double hi) nogil:
    if v < lo:
        return lo
    if v > hi:
        return hi
    return v


def bilinear_forward(real[:, :, ::1] img, real[:, :, ::1] grid):
    cdef Py_ssize_t C = img.shape[0], H = img.shape[1], W = img.shape[2]
    cdef Py_ssize_t h = grid.shape[0], w = grid.shape[1]

    if real is float:
        out_arr = np.zeros((C, h, w), dtype=np.float32)
    else:
        out_arr = np.zeros((C, h, w), dtype=np.float64)
    cdef real[:, :, ::1] out = out_arr

    cdef Py_ssize_t c, i, j, u0, v0, u1, v1
    cdef double u, v, du, dv, top, bot
    with nogil:
        for i in range(h):
            for j in range(w):
                u = _clampd((grid[i, j, 0] + 1.0) * 0.5 * (W - 1), 0.0, W - 1.0)
                v = _clampd((grid[i, j, 1] + 1.0) * 0.5 * (H - 1), 0.0, H - 1.0)
                u0 = <Py_ssize_t> u
                v0 = <Py_ssize_t> v
                if u0 > W - 2:
                    u0 = W - 2 if W > 1 else 0
                if v0 > H - 2:
                    v0 = H - 2 if H > 1 else 0
                u1 = u0 + 1 if u0 + 1 < W else W - 1
                v1 = v0 + 1 if v0 + 1 < H else H - 1
                du = u - u0
                dv = v - v0
                for c in range(C):
                    top = img[c, v0, u0] + du * (img[c, v0, u1] - img[c, v0, u0])
                    bot = img[c, v1, u0] + du * (img[c, v1, u1] - img[c, v1, u0])
                    out[c, i, j] = <real> (top + dv * (bot - top))
    return out_arr


def bilinear_backward(real[:, :, ::1] img, real[:, :, ::1] grid, real[:, :, ::1] gout):
    cdef Py_ssize_t C = img.shape[0], H = img.shape[1], W = img.shape[2]
    cdef Py_ssize_t h = grid.shape[0], w = grid.shape[1]

    if real is float:
        gimg_arr = np.zeros((C, H, W), dtype=np.float32)
        ggrid_arr = np.zeros((h, w, 2), dtype=np.float32)
    else:
        gimg_arr = np.zeros((C, H, W), dtype=np.float64)
        ggrid_arr = np.zeros((h, w, 2), dtype=np.float64)
    cdef real[:, :, ::1] gimg = gimg_arr
    cdef real[:, :, ::1] ggrid = ggrid_arr

    cdef Py_ssize_t c, i, j, u0, v0, u1, v1
    cdef double ur, vr, u, v, du, dv, g, su, sv
    with nogil:
        for i in range(h):
            for j in range(w):
                ur = (grid[i, j, 0] + 1.0) * 0.5 * (W - 1)
                vr = (grid[i, j, 1] + 1.0) * 0.5 * (H - 1)
                u = _clampd(ur, 0.0, W - 1.0)
                v = _clampd(vr, 0.0, H - 1.0)
                u0 = <Py_ssize_t> u
                v0 = <Py_ssize_t> v
                if u0 > W - 2:
                    u0 = W - 2 if W > 1 else 0
                if v0 > H - 2:
                    v0 = H - 2 if H > 1 else 0
                u1 = u0 + 1 if u0 + 1 < W else W - 1
                v1 = v0 + 1 if v0 + 1 < H else H - 1
                du = u - u0
                dv = v - v0
                su = 0.0
                sv = 0.0
                for c in range(C):
                    g = gout[c, i, j]
                    gimg[c, v0, u0] += <real> ((1 - du) * (1 - dv) * g)
                    gimg[c, v0, u1] += <real> (du * (1 - dv) * g)
                    gimg[c, v1, u0] += <real> ((1 - du) * dv * g)
                    gimg[c, v1, u1] += <real> (du * dv * g)
                    su += ((1 - dv) * (img[c, v0, u1] - img[c, v0, u0])
                           + dv * (img[c, v1, u1] - img[c, v1, u0])) * g
                    sv += ((1 - du) * (img[c, v1, u0] - img[c, v0, u0])
                           + du * (img[c, v1, u1] - img[c, v0, u1])) * g
                # clamped coordinates contribute zero grid gradient
                if 0.0 < ur < W - 1.0:
                    ggrid[i, j, 0] = <real> (su * 0.5 * (W - 1))
                if 0.0 < vr < H - 1.0:
                    ggrid[i, j, 1] = <real> (sv * 0.5 * (H - 1))
    return gimg_arr, ggrid_arr
