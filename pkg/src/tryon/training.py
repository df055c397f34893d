"""Training loops for both stages, the optimizer, and batch evaluation.

Stage 1 fits the matching model end-to-end through the spline warp;
stage 2 freezes stage 1, precomputes the warped cloth and mask for every
sample, and fits the rendering model.  Both loops are deterministic in
the run seed: parameter initialization, epoch shuffling, and batching all
draw from seeded PCG64 streams.
"""

import os
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import objectives
from .autodiff import Tensor, no_grad
from .errors import NonFiniteLossError, ShapeError
from .fileio import Checkpoint, checkpoint_from_model, load_into_model
from .matching import MatchingModel
from .objectives import FeaturePyramid
from .reasoning import ReasoningModel
from .tps import TpsWarper


class Adam:
    """Standard Adam with bias correction."""

    def __init__(self, params, beta1=0.5, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self, lr):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g is None:
                continue
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def lr_at(step, cfg):
    """Constant until decay_start, then linear to zero at cfg.steps."""
    if step < 0:
        raise ValueError("step must be >= 0")
    if step < cfg.decay_start or cfg.steps <= cfg.decay_start:
        return cfg.lr
    span = cfg.steps - cfg.decay_start
    return cfg.lr * max(cfg.steps - step, 0) / span


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    losses: list


def _batches(n, batch_size, steps, seed):
    """Yield `steps` index batches, reshuffling each epoch."""
    rng = np.random.Generator(np.random.PCG64(seed))
    order = []
    emitted = 0
    while emitted < steps:
        if len(order) < batch_size:
            order.extend(rng.permutation(n).tolist())
        yield order[:batch_size]
        del order[:batch_size]
        emitted += 1


def _check_finite(loss, step):
    value = float(loss.data)
    if not np.isfinite(value):
        raise NonFiniteLossError("loss became %r at step %d" % (value, step))
    return value


def _seeds(run_seed, stage):
    root = np.random.SeedSequence([run_seed, stage])
    init, shuffle = root.spawn(2)
    return (np.random.Generator(np.random.PCG64(init)),
            np.random.Generator(np.random.PCG64(shuffle)))


def train_matching(samples, cfg):
    """Optimize the matching model on SamplePairs; returns checkpoint + trace."""
    init_rng, shuffle_seed_rng = _seeds(cfg.seed, 1)
    model = MatchingModel(cfg.matching_config(), init_rng)
    warper = TpsWarper(cfg.tps_k, cfg.height, cfg.width, dtype=model.dtype)
    opt = Adam(model.parameters(), cfg.beta1, cfg.beta2, cfg.adam_eps)
    weights = cfg.loss_weights()
    use_mask_term = cfg.ablation == "B4"

    trace = []
    batches = _batches(len(samples), cfg.batch_size, cfg.steps,
                       shuffle_seed_rng.integers(2 ** 63))
    for step, batch in enumerate(batches):
        opt.zero_grad()
        total = None
        for idx in batch:
            s = samples[idx]
            theta = model.warp_parameters(Tensor(s.person), Tensor(s.cloth))
            grid = warper.grid(theta)
            warped = ad.bilinear_sample(Tensor(s.cloth), grid)
            if use_mask_term:
                warped_mask = ad.bilinear_sample(Tensor(s.cloth_mask), grid)
                loss = objectives.matching_loss_with_mask(
                    warped, Tensor(s.cloth_on_person),
                    warped_mask, Tensor(s.mask_on_person), theta, weights)
            else:
                loss = objectives.matching_loss(
                    warped, Tensor(s.cloth_on_person), theta, weights)
            total = loss if total is None else ad.add(total, loss)
        total = ad.mul(total, 1.0 / len(batch))
        trace.append(_check_finite(total, step))
        total.backward()
        opt.step(lr_at(step, cfg))
    ckpt = checkpoint_from_model(model, cfg.steps, cfg.model_digest())
    return TrainResult(checkpoint=ckpt, losses=trace)


def build_matching(cfg, ckpt=None):
    """Construct (model, warper); optionally load checkpoint weights."""
    init_rng, _ = _seeds(cfg.seed, 1)
    model = MatchingModel(cfg.matching_config(), init_rng)
    if ckpt is not None:
        if ckpt.config_digest != cfg.model_digest():
            raise ShapeError(
                "checkpoint was trained with different model settings "
                "(digest %08x, expected %08x)" % (ckpt.config_digest, cfg.model_digest()))
        load_into_model(model, ckpt)
    warper = TpsWarper(cfg.tps_k, cfg.height, cfg.width, dtype=model.dtype)
    return model, warper


def build_reasoning(cfg, ckpt=None):
    init_rng, _ = _seeds(cfg.seed, 2)
    model = ReasoningModel(cfg.reasoning_config(), init_rng)
    if ckpt is not None:
        if ckpt.config_digest != cfg.model_digest():
            raise ShapeError(
                "checkpoint was trained with different model settings "
                "(digest %08x, expected %08x)" % (ckpt.config_digest, cfg.model_digest()))
        load_into_model(model, ckpt)
    return model


def warp_with_model(model, warper, person, cloth, cloth_mask=None):
    """Run stage 1 on numpy inputs; returns (theta, warped cloth[, warped mask])."""
    with no_grad():
        theta = model.warp_parameters(Tensor(person), Tensor(cloth))
        grid = warper.grid(theta)
        warped = ad.bilinear_sample(Tensor(cloth), grid)
        warped_mask = None
        if cloth_mask is not None:
            warped_mask = ad.bilinear_sample(Tensor(cloth_mask), grid).data
    return theta.data, warped.data, warped_mask


def train_tryon(samples, stage1_ckpt, cfg):
    """Optimize the rendering model with stage 1 frozen."""
    stage1, warper = build_matching(cfg, stage1_ckpt)
    pyramid = FeaturePyramid(cfg.percep_seed)
    # stage 1 is frozen: warp every sample, and take the target's pyramid
    # features, once up front
    warped = []
    target_feats = []
    for s in samples:
        _, w_cloth, w_mask = warp_with_model(stage1, warper, s.person, s.cloth,
                                             s.cloth_mask)
        warped.append((w_cloth, w_mask))
        with no_grad():
            target_feats.append(pyramid.features(Tensor(s.target)))

    init_rng, shuffle_seed_rng = _seeds(cfg.seed, 2)
    model = ReasoningModel(cfg.reasoning_config(), init_rng)
    opt = Adam(model.parameters(), cfg.beta1, cfg.beta2, cfg.adam_eps)
    weights = cfg.loss_weights()

    trace = []
    batches = _batches(len(samples), cfg.batch_size, cfg.steps,
                       shuffle_seed_rng.integers(2 ** 63))
    for step, batch in enumerate(batches):
        opt.zero_grad()
        total = None
        for idx in batch:
            s = samples[idx]
            w_cloth, w_mask = warped[idx]
            out = model.render(Tensor(s.person), Tensor(w_cloth), Tensor(w_mask))
            loss = objectives.tryon_loss(out.image, Tensor(s.target), out.mask,
                                         Tensor(s.mask_on_person), weights, pyramid,
                                         target_features=target_feats[idx])
            total = loss if total is None else ad.add(total, loss)
        total = ad.mul(total, 1.0 / len(batch))
        trace.append(_check_finite(total, step))
        total.backward()
        opt.step(lr_at(step, cfg))
    ckpt = checkpoint_from_model(model, cfg.steps, cfg.model_digest())
    return TrainResult(checkpoint=ckpt, losses=trace)


# ---------------------------------------------------------------------------
# evaluation

def _collect(root, suffixes):
    found = {}
    for dirpath, _, files in os.walk(root):
        for name in files:
            if name.endswith(suffixes):
                rel = os.path.relpath(os.path.join(dirpath, name), root)
                found[rel.replace(os.sep, "/")] = os.path.join(dirpath, name)
    return found


def evaluate_dirs(pred_root, ref_root):
    """Compare matching image files in two trees.

    PPM pairs contribute SSIM and L1; PGM pairs contribute the Jaccard
    score and L1.  Returns (report_lines, means dict); every line is
    `key=value`, with per-file keys prefixed by their relative path and
    the plain means last.
    """
    from . import fileio
    from .errors import EvaluationError

    refs = _collect(ref_root, (".ppm", ".pgm"))
    preds = _collect(pred_root, (".ppm", ".pgm"))
    if not refs:
        raise EvaluationError("no .ppm or .pgm files under %s" % ref_root)
    missing = sorted(set(refs) - set(preds))
    if missing:
        raise EvaluationError("missing predictions for: %s" % ", ".join(missing))

    lines = []
    ssims, jaccards, l1s = [], [], []
    for rel in sorted(refs):
        ref_path, pred_path = refs[rel], preds[rel]
        if rel.endswith(".ppm"):
            a = fileio.read_ppm(pred_path)
            b = fileio.read_ppm(ref_path)
            s = objectives.ssim(a, b)
            ssims.append(s)
            lines.append("%s:ssim=%r" % (rel, s))
        else:
            a = fileio.read_pgm(pred_path)
            b = fileio.read_pgm(ref_path)
            j = objectives.jaccard(a, b)
            jaccards.append(j)
            lines.append("%s:jaccard=%r" % (rel, j))
        l1 = float(np.abs(a - b).mean())
        l1s.append(l1)
        lines.append("%s:l1=%r" % (rel, l1))
    means = {}
    if ssims:
        means["ssim"] = float(np.mean(ssims))
    if jaccards:
        means["jaccard"] = float(np.mean(jaccards))
    means["l1"] = float(np.mean(l1s))
    for key in ("ssim", "jaccard", "l1"):
        if key in means:
            lines.append("%s=%r" % (key, means[key]))
    return lines, means
