"""Pure-numpy implementations of the hot kernels.

Same contracts as the compiled ``_fastcore`` module: single-image (no batch
axis) 2D convolution and bilinear grid sampling, forward and backward, for
float32 or float64 inputs.  Convolution uses im2col plus one BLAS matmul;
sampling uses fancy-index gathers.
"""

import numpy as np


def _im2col(xp, kh, kw, stride):
    # xp: padded input (Cin, Hp, Wp) -> (Ho*Wo, Cin*kh*kw)
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    win = win[:, ::stride, ::stride]
    ho, wo = win.shape[1], win.shape[2]
    return win.transpose(1, 2, 0, 3, 4).reshape(ho * wo, -1), ho, wo


def conv2d_forward(x, w, stride=1, pad=0):
    """x: (Cin,H,W), w: (Cout,Cin,kh,kw) -> (Cout,Ho,Wo)."""
    cout, cin, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad))) if pad else x
    cols, ho, wo = _im2col(xp, kh, kw, stride)
    y = cols @ w.reshape(cout, -1).T
    return np.ascontiguousarray(y.T.reshape(cout, ho, wo))


def conv2d_backward(x, w, gy, stride=1, pad=0):
    """Gradients of conv2d_forward w.r.t. x and w, given upstream gy."""
    cout, cin, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad))) if pad else x
    cols, ho, wo = _im2col(xp, kh, kw, stride)
    gyf = gy.reshape(cout, -1)
    gw = (gyf @ cols).reshape(w.shape)

    gxp = np.zeros_like(xp)
    for i in range(kh):
        for j in range(kw):
            # every output position (ho,wo) read xp[:, i+s*ho, j+s*wo]
            contrib = np.tensordot(w[:, :, i, j], gy, axes=(0, 0))
            gxp[:, i : i + stride * ho : stride, j : j + stride * wo : stride] += contrib
    if pad:
        gx = gxp[:, pad : pad + x.shape[1], pad : pad + x.shape[2]].copy()
    else:
        gx = gxp
    return gx, gw


def _grid_to_pixels(grid, H, W):
    # corner-aligned mapping: -1 -> 0, +1 -> size-1; out-of-range clamps to
    # the border.  Coordinate math runs in float64 so both backends agree.
    g = np.asarray(grid, dtype=np.float64)
    u = (g[..., 0] + 1.0) * 0.5 * (W - 1)
    v = (g[..., 1] + 1.0) * 0.5 * (H - 1)
    uc = np.clip(u, 0.0, W - 1.0)
    vc = np.clip(v, 0.0, H - 1.0)
    u0 = np.minimum(np.floor(uc), max(W - 2, 0)).astype(np.intp)
    v0 = np.minimum(np.floor(vc), max(H - 2, 0)).astype(np.intp)
    u1 = np.minimum(u0 + 1, W - 1)
    v1 = np.minimum(v0 + 1, H - 1)
    du = uc - u0
    dv = vc - v0
    return u, v, u0, v0, u1, v1, du, dv


def bilinear_forward(img, grid):
    """img: (C,H,W), grid: (h,w,2) with normalized coords -> (C,h,w)."""
    C, H, W = img.shape
    _, _, u0, v0, u1, v1, du, dv = _grid_to_pixels(grid, H, W)
    p00 = img[:, v0, u0]
    p01 = img[:, v0, u1]
    p10 = img[:, v1, u0]
    p11 = img[:, v1, u1]
    top = p00 + du * (p01 - p00)
    bot = p10 + du * (p11 - p10)
    return np.ascontiguousarray((top + dv * (bot - top)).astype(img.dtype))


def bilinear_backward(img, grid, gout):
    """Gradients of bilinear_forward w.r.t. img and grid."""
    C, H, W = img.shape
    u, v, u0, v0, u1, v1, du, dv = _grid_to_pixels(grid, H, W)
    w00 = (1 - du) * (1 - dv)
    w01 = du * (1 - dv)
    w10 = (1 - du) * dv
    w11 = du * dv

    gimg = np.zeros_like(img)
    for c in range(C):
        g = gout[c]
        np.add.at(gimg[c], (v0, u0), (w00 * g).astype(img.dtype))
        np.add.at(gimg[c], (v0, u1), (w01 * g).astype(img.dtype))
        np.add.at(gimg[c], (v1, u0), (w10 * g).astype(img.dtype))
        np.add.at(gimg[c], (v1, u1), (w11 * g).astype(img.dtype))

    p00 = img[:, v0, u0]
    p01 = img[:, v0, u1]
    p10 = img[:, v1, u0]
    p11 = img[:, v1, u1]
    # clamped coordinates contribute zero gradient to the grid
    act_u = (u > 0.0) & (u < W - 1.0)
    act_v = (v > 0.0) & (v < H - 1.0)
    d_du = ((1 - dv) * (p01 - p00) + dv * (p11 - p10)) * gout
    d_dv = ((1 - du) * (p10 - p00) + du * (p11 - p01)) * gout
    ggrid = np.zeros_like(grid)
    ggrid[..., 0] = (d_du.sum(axis=0) * act_u * (0.5 * (W - 1))).astype(grid.dtype)
    ggrid[..., 1] = (d_dv.sum(axis=0) * act_v * (0.5 * (H - 1))).astype(grid.dtype)
    return gimg, ggrid
