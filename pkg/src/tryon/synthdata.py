"""Synthetic paired try-on data with known ground-truth warps.

Each sample is deterministic in its seed (PCG64 stream).  A stick-figure
person representation is drawn as keypoint heatmaps plus blurred
silhouettes; the in-shop cloth is a procedurally textured garment shape
on a white background; the on-person targets come from warping the cloth
by a random smooth control-grid deformation; and the ground-truth image
composites the warped cloth over the body inside the warped mask.

Layout on disk, one directory per sample::

    sample_000042/
        p.citt  c.ppm  cm.pgm  ct.ppm  ctm.pgm  gt.ppm  theta.citt  seed.txt
"""

import os
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from . import fileio, tps
from .kernels import bilinear_forward

THETA_BOUND = 0.25  # generated warps stay well inside the model's reach


@dataclass
class SamplePair:
    person: np.ndarray        # (C_p, h, w) pose/shape representation
    cloth: np.ndarray         # (3, h, w) in-shop cloth on white
    cloth_mask: np.ndarray    # (1, h, w) binary
    cloth_on_person: np.ndarray   # (3, h, w) cloth warped by theta
    mask_on_person: np.ndarray    # (1, h, w) binary warped mask
    target: np.ndarray        # (3, h, w) ground-truth composite
    theta: np.ndarray         # (2K²,) oracle warp offsets
    seed: int


def _coords(h, w):
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    return yy, xx


def _superellipse(h, w, cx, cy, rx, ry, power):
    yy, xx = _coords(h, w)
    return ((np.abs(xx - cx) / rx) ** power
            + (np.abs(yy - cy) / ry) ** power) <= 1.0


def _blob(h, w, cx, cy, sigma):
    yy, xx = _coords(h, w)
    d2 = (xx - cx) ** 2 + (yy - cy) ** 2
    return np.exp(-d2 / (2.0 * sigma * sigma))


def _draw_person(rng, h, w, channels):
    """Keypoint heatmaps plus blurred torso/body silhouettes."""
    cx = rng.uniform(0.45, 0.55) * w
    cy = rng.uniform(0.45, 0.55) * h
    torso_rx = rng.uniform(0.24, 0.32) * w
    torso_ry = rng.uniform(0.28, 0.36) * h
    head_r = rng.uniform(0.08, 0.11) * h
    head_cy = cy - torso_ry - head_r * 0.6

    torso = _superellipse(h, w, cx, cy, torso_rx, torso_ry, 2.5)
    head = _superellipse(h, w, cx, head_cy, head_r, head_r, 2.0)
    body = torso | head

    sigma = 0.02 * max(h, w) + 1.0
    keypoints = [
        (cx, head_cy),                        # head
        (cx - torso_rx * 0.8, cy - torso_ry * 0.75),  # left shoulder
        (cx + torso_rx * 0.8, cy - torso_ry * 0.75),  # right shoulder
        (cx - torso_rx * 0.7, cy + torso_ry * 0.8),   # left hip
        (cx + torso_rx * 0.7, cy + torso_ry * 0.8),   # right hip
        (cx, cy),                             # torso center
    ]
    planes = [_blob(h, w, kx, ky, sigma) for kx, ky in keypoints]
    planes.append(gaussian_filter(torso.astype(np.float64), sigma=1.5))
    planes.append(gaussian_filter(body.astype(np.float64), sigma=1.5))
    while len(planes) < channels:
        planes.append(np.zeros((h, w)))
    person = np.stack(planes[:channels]).astype(np.float32)
    return np.clip(person, 0.0, 1.0), (cx, cy, torso_rx, torso_ry), body


def _draw_background(rng, h, w, body):
    """Muted gradient backdrop with a skin-toned body silhouette."""
    top = rng.uniform(0.55, 0.8, size=3)
    bottom = rng.uniform(0.55, 0.8, size=3)
    ramp = np.linspace(0.0, 1.0, h)[None, :, None]
    bg = (1.0 - ramp) * top[:, None, None] + ramp * bottom[:, None, None]
    skin = np.array([0.87, 0.68, 0.55]) * rng.uniform(0.85, 1.1)
    bg = np.where(body[None], np.clip(skin, 0, 1)[:, None, None], bg)
    return bg.astype(np.float32)


def _cloth_texture(rng, h, w):
    c1 = rng.uniform(0.05, 0.95, size=3)
    c2 = rng.uniform(0.05, 0.95, size=3)
    while np.abs(c1 - c2).max() < 0.25:  # keep the pattern visible
        c2 = rng.uniform(0.05, 0.95, size=3)
    kind = rng.integers(0, 4)
    yy, xx = _coords(h, w)
    if kind == 0:
        period = rng.integers(3, 9)
        sel = (xx // period) % 2 == 0
    elif kind == 1:
        period = rng.integers(3, 9)
        sel = (yy // period) % 2 == 0
    elif kind == 2:
        period = rng.integers(4, 9)
        sel = ((xx // period) + (yy // period)) % 2 == 0
    else:
        noise = gaussian_filter(rng.standard_normal((h, w)), sigma=3.0)
        sel = noise > np.median(noise)
    tex = np.where(sel[None], c1[:, None, None], c2[:, None, None])
    return tex.astype(np.float32)


def _draw_cloth(rng, h, w):
    cx = rng.uniform(0.46, 0.54) * w
    cy = rng.uniform(0.46, 0.54) * h
    rx = rng.uniform(0.28, 0.40) * w
    ry = rng.uniform(0.30, 0.40) * h
    power = rng.uniform(2.0, 3.0)
    mask = _superellipse(h, w, cx, cy, rx, ry, power)
    tex = _cloth_texture(rng, h, w)
    cloth = np.where(mask[None], tex, np.float32(1.0))
    return cloth.astype(np.float32), mask[None].astype(np.float32)


def _draw_theta(rng, k):
    """Smooth bounded offsets: a shared translation plus a low-frequency
    bump field upsampled onto the control lattice."""
    shift = rng.uniform(-0.06, 0.06, size=2)
    coarse = rng.uniform(-0.12, 0.12, size=(2, 2, 2))
    line = np.linspace(0.0, 1.0, k)
    wy, wx = np.meshgrid(line, line, indexing="ij")
    field = np.empty((2, k, k))
    for a in range(2):
        c = coarse[a]
        field[a] = (c[0, 0] * (1 - wy) * (1 - wx) + c[0, 1] * (1 - wy) * wx
                    + c[1, 0] * wy * (1 - wx) + c[1, 1] * wy * wx)
    theta = np.concatenate([
        (field[0] + shift[0]).reshape(-1),
        (field[1] + shift[1]).reshape(-1),
    ])
    assert np.abs(theta).max() <= THETA_BOUND
    return theta.astype(np.float32)


def gen_sample(seed, cfg):
    """Deterministically build one SamplePair for this seed and config."""
    rng = np.random.Generator(np.random.PCG64(seed))
    h, w = cfg.height, cfg.width
    person, _, body = _draw_person(rng, h, w, cfg.person_channels)
    background = fileio.quantize8(_draw_background(rng, h, w, body))
    cloth, cloth_mask = _draw_cloth(rng, h, w)
    cloth = fileio.quantize8(cloth)
    theta = _draw_theta(rng, cfg.tps_k)

    grid = tps.tps_grid(theta.astype(np.float64), h, w).astype(np.float32)
    cloth_on_person = bilinear_forward(cloth, grid)
    warped_mask = bilinear_forward(cloth_mask, grid)
    mask_on_person = (warped_mask >= 0.5).astype(np.float32)
    target = background * (1.0 - mask_on_person) + cloth_on_person * mask_on_person

    return SamplePair(person=person, cloth=cloth, cloth_mask=cloth_mask,
                      cloth_on_person=cloth_on_person,
                      mask_on_person=mask_on_person,
                      target=target.astype(np.float32),
                      theta=theta, seed=int(seed))


def sample_dir(root, index):
    return os.path.join(root, "sample_%06d" % index)


def write_sample(directory, sample):
    os.makedirs(directory, exist_ok=True)
    fileio.write_tensor(os.path.join(directory, "p.citt"), sample.person)
    fileio.write_ppm(os.path.join(directory, "c.ppm"), sample.cloth)
    fileio.write_pgm(os.path.join(directory, "cm.pgm"), sample.cloth_mask)
    fileio.write_ppm(os.path.join(directory, "ct.ppm"), sample.cloth_on_person)
    fileio.write_pgm(os.path.join(directory, "ctm.pgm"), sample.mask_on_person)
    fileio.write_ppm(os.path.join(directory, "gt.ppm"), sample.target)
    fileio.write_tensor(os.path.join(directory, "theta.citt"), sample.theta)
    with open(os.path.join(directory, "seed.txt"), "w", encoding="utf-8") as fh:
        fh.write("%d\n" % sample.seed)


def load_sample(directory):
    with open(os.path.join(directory, "seed.txt"), "r", encoding="utf-8") as fh:
        seed = int(fh.read().strip())
    return SamplePair(
        person=fileio.read_tensor(os.path.join(directory, "p.citt")),
        cloth=fileio.read_ppm(os.path.join(directory, "c.ppm")),
        cloth_mask=fileio.read_pgm(os.path.join(directory, "cm.pgm")),
        cloth_on_person=fileio.read_ppm(os.path.join(directory, "ct.ppm")),
        mask_on_person=fileio.read_pgm(os.path.join(directory, "ctm.pgm")),
        target=fileio.read_ppm(os.path.join(directory, "gt.ppm")),
        theta=fileio.read_tensor(os.path.join(directory, "theta.citt")),
        seed=seed)


def generate_dataset(root, count, base_seed, cfg):
    """Write `count` samples with seeds base_seed..base_seed+count-1."""
    os.makedirs(root, exist_ok=True)
    for i in range(count):
        write_sample(sample_dir(root, i), gen_sample(base_seed + i, cfg))


def load_dataset(root):
    dirs = sorted(d for d in os.listdir(root)
                  if d.startswith("sample_")
                  and os.path.isdir(os.path.join(root, d)))
    if not dirs:
        raise FileNotFoundError("no sample_* directories under %s" % root)
    return [load_sample(os.path.join(root, d)) for d in dirs]
