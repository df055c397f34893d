"""Finite-difference verification of reverse-mode gradients.

The checker perturbs each coordinate of the watched tensors by +-eps,
re-evaluates the scalar objective, and compares the resulting central
differences against the gradients produced by ``backward()``.  Everything
runs in whatever dtype the inputs carry; callers wanting trustworthy
comparisons build their models in float64.

Central differences are only valid where the objective is smooth across
the whole bracket.  Deep compositions of ReLU-like pieces occasionally
place a kink inside +-eps of a coordinate; such a coordinate is detected
by re-estimating with a step of eps/8 and seeing the two estimates
disagree with each other, in which case the finer one is used.  A wrong
analytic gradient still fails: then the two step sizes agree with each
other and jointly disagree with the backward value.
"""

import numpy as np

from .autodiff import no_grad


def finite_diff_check(fn, wrt, eps=1e-4, max_coords=None, seed=0, refine_rel=1e-6):
    """Max relative error between autodiff and central-difference gradients.

    fn        -- zero-argument callable returning a scalar Tensor; must be
                 deterministic and close over the tensors in `wrt`.
    wrt       -- tensors to differentiate with respect to (requires_grad).
    max_coords-- optional cap on coordinates checked per tensor; a seeded
                 subset is drawn when a tensor is larger.

    The error is ``max|g_ad - g_fd|`` over all checked coordinates, divided
    by the largest gradient magnitude seen (floored at 1e-12), so uniformly
    tiny gradients are compared in absolute terms.  Returns NaN when the
    objective evaluates to a non-finite value.
    """
    for t in wrt:
        t.zero_grad()
    out = fn()
    if not np.isfinite(out.data).all():
        return float("nan")
    out.backward()

    def central(flat, idx, step):
        orig = flat[idx]
        with no_grad():
            flat[idx] = orig + step
            fp = float(fn().data)
            flat[idx] = orig - step
            fm = float(fn().data)
        flat[idx] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            return None
        return (fp - fm) / (2.0 * step)

    rng = np.random.default_rng(seed)
    records = []
    for t in wrt:
        grad = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gflat = grad.reshape(-1)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        else:
            coords = range(flat.size)
        for idx in coords:
            fd = central(flat, idx, eps)
            if fd is None:
                return float("nan")
            records.append((flat, idx, float(gflat[idx]), fd))

    scale = max(max((max(abs(ad), abs(fd)) for _, _, ad, fd in records), default=0.0),
                1e-12)
    worst = 0.0
    for flat, idx, ad, fd in records:
        diff = abs(ad - fd)
        if diff / scale > refine_rel:
            fine = central(flat, idx, eps / 8.0)
            if fine is None:
                return float("nan")
            if abs(fine - fd) / scale > refine_rel:
                # bracket was non-smooth at the coarse step; trust the fine one
                diff = abs(ad - fine)
        worst = max(worst, diff)
    return worst / scale
