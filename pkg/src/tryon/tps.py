"""Thin-plate-spline warping.

A TPS maps the plane smoothly so that a set of control points lands on
prescribed destinations:

    f(q) = a0 + ax*qx + ay*qy + sum_i w_i * U(|q - site_i|),   U(r) = r^2 log r^2

with U(0) = 0 and the radial weights constrained to have no affine
component (sum w = 0, sum w*x = 0, sum w*y = 0).  Fitting solves the
standard interpolation system

    [[K, P], [P^T, 0]] [w; a] = [dst; 0],    K[i,j] = U(|src_i - src_j|)

per output axis.  A 1e-6 diagonal jitter keeps the factorization stable;
iterative refinement against the unjittered system brings control-point
residuals back to machine precision.

Warping convention is backward sampling: the control lattice lives in the
output image, offsets point into the source image, and the dense grid
gives the source coordinate for every output pixel.  All coordinates are
normalized to [-1, 1] with corners aligned to the first/last pixel.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, bilinear_sample
from .errors import ShapeError, SingularSystemError

JITTER = 1e-6


def radial_basis(sq_dist):
    """U as a function of squared distance, with the r=0 limit of 0."""
    safe = np.where(sq_dist > 0.0, sq_dist, 1.0)
    return np.where(sq_dist > 0.0, sq_dist * np.log(safe), 0.0)


def control_lattice(k):
    """Row-major K x K lattice over [-1,1]^2: index i = row*K + col."""
    if k < 2:
        raise ValueError("need at least a 2x2 control lattice")
    line = np.linspace(-1.0, 1.0, k)
    xs, ys = np.meshgrid(line, line)  # row-major: y varies with row
    return np.stack([xs.reshape(-1), ys.reshape(-1)], axis=1)


def split_offsets(theta):
    """(2K²,) flat parameter vector -> (K², 2) offsets; x block then y block."""
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    n2 = theta.size
    k2 = n2 // 2
    k = int(round(np.sqrt(k2)))
    if 2 * k * k != n2:
        raise ShapeError("parameter length %d is not 2*K^2" % n2)
    return np.stack([theta[:k2], theta[k2:]], axis=1), k


@dataclass
class TpsCoeffs:
    """Fitted spline: radial weights (K²,2), affine part (3,2), and sites."""

    weights: np.ndarray
    affine: np.ndarray
    sites: np.ndarray

    def __call__(self, points):
        points = np.asarray(points, dtype=np.float64)
        d = points[:, None, :] - self.sites[None, :, :]
        basis = radial_basis((d * d).sum(axis=2))
        ones = np.ones((points.shape[0], 1))
        poly = np.concatenate([ones, points], axis=1)
        return basis @ self.weights + poly @ self.affine


def _system(sites):
    n = sites.shape[0]
    d = sites[:, None, :] - sites[None, :, :]
    kmat = radial_basis((d * d).sum(axis=2))
    poly = np.concatenate([np.ones((n, 1)), sites], axis=1)
    full = np.zeros((n + 3, n + 3))
    full[:n, :n] = kmat
    full[:n, n:] = poly
    full[n:, :n] = poly.T
    return full


def _refined_solve(exact, jittered, rhs, sweeps=2):
    try:
        sol = np.linalg.solve(jittered, rhs)
        for _ in range(sweeps):
            sol += np.linalg.solve(jittered, rhs - exact @ sol)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError("spline system is singular") from exc
    if not np.isfinite(sol).all():
        raise SingularSystemError("spline solve produced non-finite values")
    return sol


def tps_fit(src, dst):
    """Fit spline coefficients mapping src control points onto dst."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 2:
        raise ShapeError("control point arrays must both be (n, 2)")
    n = src.shape[0]
    diff = src[:, None, :] - src[None, :, :]
    if np.min((diff * diff).sum(axis=2) + np.eye(n)) <= 0.0:
        raise SingularSystemError("control points must be distinct")
    exact = _system(src)
    jittered = exact.copy()
    jittered[np.arange(n), np.arange(n)] += JITTER
    rhs = np.zeros((n + 3, 2))
    rhs[:n] = dst
    sol = _refined_solve(exact, jittered, rhs)
    coeffs = TpsCoeffs(weights=sol[:n], affine=sol[n:], sites=src.copy())
    resid = np.abs(coeffs(src) - dst).max()
    if resid > 1e-8:
        raise SingularSystemError(
            "spline fit residual %.3e exceeds 1e-8; system too ill-conditioned" % resid)
    return coeffs


def pixel_points(h, w):
    """Normalized coordinates of pixel centers, corner-aligned; (h*w, 2)."""
    xs = np.linspace(-1.0, 1.0, w) if w > 1 else np.zeros(1)
    ys = np.linspace(-1.0, 1.0, h) if h > 1 else np.zeros(1)
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.reshape(-1), gy.reshape(-1)], axis=1)


def tps_grid(theta, h, w):
    """Dense backward-sampling grid (h, w, 2) for flat offsets theta.

    Control sites form a uniform lattice over the output image; each
    site samples the source at site + offset, and the fitted spline
    extends that map to every pixel center.
    """
    offsets, k = split_offsets(theta)
    sites = control_lattice(k)
    coeffs = tps_fit(sites, sites + offsets)
    return coeffs(pixel_points(h, w)).reshape(h, w, 2)


class TpsWarper:
    """Differentiable offsets -> dense grid map for a fixed lattice and size.

    The grid is linear in the control destinations, so the whole spline
    solve collapses into one precomputed (h*w, K²) matrix; the autodiff
    path is a single matmul.
    """

    def __init__(self, k, h, w, dtype=np.float32):
        self.k = int(k)
        self.h = int(h)
        self.w = int(w)
        sites = control_lattice(self.k)
        n = sites.shape[0]
        exact = _system(sites)
        jittered = exact.copy()
        jittered[np.arange(n), np.arange(n)] += JITTER
        inv = _refined_solve(exact, jittered, np.eye(n + 3))
        pts = pixel_points(self.h, self.w)
        d = pts[:, None, :] - sites[None, :, :]
        basis = radial_basis((d * d).sum(axis=2))
        ones = np.ones((pts.shape[0], 1))
        evalmat = np.concatenate([basis, ones, pts], axis=1)  # (h*w, n+3)
        self._map = Tensor((evalmat @ inv[:, :n]).astype(dtype))
        self._sites = Tensor(sites.astype(dtype))
        self.dtype = dtype

    def grid(self, theta):
        """theta: Tensor (2K²,) -> Tensor (h, w, 2)."""
        n = self.k * self.k
        if theta.shape != (2 * n,):
            raise ShapeError("expected %d offsets, got %r" % (2 * n, theta.shape))
        ox = ad.reshape(ad.narrow(theta, 0, 0, n), (n, 1))
        oy = ad.reshape(ad.narrow(theta, 0, n, n), (n, 1))
        dst = ad.add(ad.concat([ox, oy], axis=1), self._sites)
        return ad.reshape(ad.matmul(self._map, dst), (self.h, self.w, 2))


def warp(img, grid):
    """Backward-warp an image by a dense sampling grid (both Tensors)."""
    if not isinstance(img, Tensor):
        img = Tensor(img)
    if not isinstance(grid, Tensor):
        grid = Tensor(grid, dtype=img.dtype)
    return bilinear_sample(img, grid)


def grid_reg_loss(theta, k=None):
    """Sum of squared second differences of the control destinations.

    Taken along both lattice directions (rows and columns) and over both
    coordinate axes; zero iff every lattice line maps to an affine image
    of itself.  Since the undeformed lattice is uniform, the destination
    second differences equal the offset second differences.
    """
    if not isinstance(theta, Tensor):
        theta = Tensor(np.asarray(theta, dtype=np.float64))
    n2 = theta.shape[0]
    kk = int(round(np.sqrt(n2 // 2))) if k is None else int(k)
    if 2 * kk * kk != n2:
        raise ShapeError("parameter length %d is not 2*K^2" % n2)
    field = ad.reshape(theta, (2, kk, kk))  # [axis, row, col]

    def second_diff(t, axis):
        m = t.shape[axis]
        a = ad.narrow(t, axis, 2, m - 2)
        b = ad.narrow(t, axis, 1, m - 2)
        c = ad.narrow(t, axis, 0, m - 2)
        return ad.add(ad.sub(a, ad.mul(b, 2.0)), c)

    along_cols = second_diff(field, 2)
    along_rows = second_diff(field, 1)
    return ad.add(ad.sum_(ad.mul(along_cols, along_cols)),
                  ad.sum_(ad.mul(along_rows, along_rows)))
