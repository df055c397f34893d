"""Training losses for both stages and the evaluation metrics.

Losses operate on autodiff Tensors and return scalar Tensors so they can
be backpropagated; the metrics (ssim, jaccard) operate on plain numpy
arrays and return floats.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeError
from .tps import grid_reg_loss


@dataclass(frozen=True)
class LossWeights:
    """Per-term weights.  `warp_mask` only participates in the masked
    matching loss of the B4 ablation, where all three of its terms default
    to 1; otherwise the smoothness weight defaults to 0.5."""

    l1: float = 1.0
    percep: float = 1.0
    mask: float = 1.0
    smooth: float = 0.5
    warp_mask: float = 1.0

    @classmethod
    def for_ablation(cls, ablation, **overrides):
        if ablation == "B4" and "smooth" not in overrides:
            overrides["smooth"] = 1.0
        return cls(**overrides)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def l1_loss(a, b):
    """Mean absolute difference over all elements."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError("l1_loss shapes differ: %r vs %r" % (a.shape, b.shape))
    return ad.mean(ad.abs_(ad.sub(a, b)))


def matching_loss(cloth_warped, cloth_target, theta, weights):
    """Stage-1 objective: warp reconstruction plus grid smoothness."""
    return ad.add(ad.mul(l1_loss(cloth_warped, cloth_target), weights.l1),
                  ad.mul(grid_reg_loss(theta), weights.smooth))


def matching_loss_with_mask(cloth_warped, cloth_target, mask_warped, mask_target,
                            theta, weights):
    """B4 variant: adds an L1 term between warped and on-person masks."""
    base = ad.add(ad.mul(l1_loss(cloth_warped, cloth_target), weights.l1),
                  ad.mul(l1_loss(mask_warped, mask_target), weights.warp_mask))
    return ad.add(base, ad.mul(grid_reg_loss(theta), weights.smooth))


class FeaturePyramid:
    """Frozen, seed-deterministic conv pyramid used by the perceptual term.

    Three stride-2 conv+ReLU stages with fixed random weights; a stand-in
    multi-scale feature space with no learned or downloaded weights.  The
    seed is part of the training configuration so runs are reproducible.
    """

    def __init__(self, seed=7, channels=(8, 16, 32)):
        rng = np.random.default_rng(np.random.PCG64(seed))
        self.seed = seed
        self._weights = []
        prev = 3
        for c in channels:
            w = rng.standard_normal((c, prev, 3, 3)) * math.sqrt(2.0 / (prev * 9))
            self._weights.append(w)
            prev = c
        self._cache = {}

    def _stage_weights(self, dtype):
        key = np.dtype(dtype).name
        if key not in self._cache:
            self._cache[key] = [Tensor(w.astype(dtype)) for w in self._weights]
        return self._cache[key]

    def features(self, img):
        """(3,h,w) Tensor -> list of per-stage feature Tensors."""
        feats = []
        x = img
        for w in self._stage_weights(img.dtype):
            x = ad.relu(ad.conv2d(x, w, None, stride=2, pad=1))
            feats.append(x)
        return feats


_default_pyramid = None


def default_pyramid(seed=7):
    global _default_pyramid
    if _default_pyramid is None or _default_pyramid.seed != seed:
        _default_pyramid = FeaturePyramid(seed)
    return _default_pyramid


def perceptual_loss(a, b, pyramid=None, features_b=None):
    """Sum over pyramid stages of the mean L1 feature distance.

    `features_b` short-circuits recomputing the second image's features
    when it is a training constant.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError("perceptual_loss shapes differ: %r vs %r" % (a.shape, b.shape))
    pyramid = pyramid or default_pyramid()
    fa = pyramid.features(a)
    fb = features_b if features_b is not None else pyramid.features(b)
    total = None
    for xa, xb in zip(fa, fb):
        term = ad.mean(ad.abs_(ad.sub(xa, xb)))
        total = term if total is None else ad.add(total, term)
    return total


def tryon_loss(image, target, comp_mask, mask_target, weights, pyramid=None,
               target_features=None):
    """Stage-2 objective: pixel L1 + perceptual features + mask supervision."""
    loss = ad.mul(l1_loss(image, target), weights.l1)
    loss = ad.add(loss, ad.mul(perceptual_loss(image, target, pyramid,
                                               features_b=target_features),
                               weights.percep))
    return ad.add(loss, ad.mul(l1_loss(comp_mask, mask_target), weights.mask))


# ---------------------------------------------------------------------------
# metrics (numpy in, float out)

def _gaussian_window(size=11, sigma=1.5):
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    g /= g.sum()
    return np.outer(g, g)


def _window_moments(img, win):
    """Valid-mode windowed means for one channel (h, w)."""
    size = win.shape[0]
    view = np.lib.stride_tricks.sliding_window_view(img, (size, size))
    return np.tensordot(view, win, axes=([2, 3], [0, 1]))


def ssim(a, b, window_size=11, sigma=1.5, k1=0.01, k2=0.03):
    """Mean structural similarity between two (C,h,w) images in [0,1].

    Gaussian-weighted 11x11 local statistics, data range 1, channels
    averaged, border windows excluded.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError("ssim shapes differ: %r vs %r" % (a.shape, b.shape))
    if a.ndim == 2:
        a, b = a[None], b[None]
    if a.shape[1] < window_size or a.shape[2] < window_size:
        raise ShapeError("image %r smaller than the %d-pixel window"
                         % (a.shape, window_size))
    win = _gaussian_window(window_size, sigma)
    c1 = (k1 * 1.0) ** 2
    c2 = (k2 * 1.0) ** 2
    vals = []
    for ca, cb in zip(a, b):
        mu_a = _window_moments(ca, win)
        mu_b = _window_moments(cb, win)
        e_aa = _window_moments(ca * ca, win)
        e_bb = _window_moments(cb * cb, win)
        e_ab = _window_moments(ca * cb, win)
        var_a = e_aa - mu_a * mu_a
        var_b = e_bb - mu_b * mu_b
        cov = e_ab - mu_a * mu_b
        num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
        den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


def jaccard(mask_a, mask_b, threshold=0.5):
    """Intersection over union of two masks binarized at `threshold`.

    Two empty masks count as identical (score 1).
    """
    a = np.asarray(mask_a) >= threshold
    b = np.asarray(mask_b) >= threshold
    if a.shape != b.shape:
        raise ShapeError("jaccard shapes differ: %r vs %r" % (a.shape, b.shape))
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)
