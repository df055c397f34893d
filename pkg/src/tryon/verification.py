"""The gradient verification suite.

Builds every differentiable operation and each assembled block at a tiny
float64 configuration, runs the central-difference checker against the
recorded backward pass, and reports one max-relative-error per entry.
Used by the ``grad-check`` command and the acceptance tests.
"""

import zlib

import numpy as np

from . import autodiff as ad
from . import matching, reasoning, tps
from .autodiff import Tensor
from .encoders import EncoderConfig, EncoderStack, self_encoder_forward
from .gradcheck import finite_diff_check

F64 = np.float64


def _t(rng, shape, lo=-1.0, hi=1.0, grad=True):
    return Tensor(rng.uniform(lo, hi, shape), requires_grad=grad, dtype=F64)


def _dot_loss(out, probe):
    return ad.sum_(ad.mul(out, probe))


def _away_from_kinks(rng, shape, margin=0.05):
    x = rng.uniform(-1.0, 1.0, shape)
    x = x + np.sign(x) * margin
    return Tensor(x, requires_grad=True, dtype=F64)


def check_linear(rng):
    x = _t(rng, (3, 4))
    w = _t(rng, (4, 2))
    b = _t(rng, (2,))
    probe = _t(rng, (3, 2), grad=False)
    return finite_diff_check(lambda: _dot_loss(ad.linear(x, w, b), probe), [x, w, b])


def check_softmax(rng):
    x = _t(rng, (3, 5))
    probe = _t(rng, (3, 5), grad=False)
    return finite_diff_check(lambda: _dot_loss(ad.softmax(x, axis=1), probe), [x])


def check_layer_norm(rng):
    x = _t(rng, (3, 6))
    g = _t(rng, (6,), lo=0.5, hi=1.5)
    b = _t(rng, (6,))
    probe = _t(rng, (3, 6), grad=False)
    return finite_diff_check(lambda: _dot_loss(ad.layer_norm(x, g, b), probe), [x, g, b])


def check_temporal_conv1d(rng):
    x = _t(rng, (5, 3))
    k = _t(rng, (3, 3, 4))
    probe = _t(rng, (5, 4), grad=False)
    return finite_diff_check(lambda: _dot_loss(ad.temporal_conv1d(x, k), probe), [x, k])


def check_conv2d(rng):
    x = _t(rng, (2, 6, 5))
    w = _t(rng, (3, 2, 3, 3))
    b = _t(rng, (3,))
    probe = _t(rng, (3, 3, 3), grad=False)
    return finite_diff_check(
        lambda: _dot_loss(ad.conv2d(x, w, b, stride=2, pad=1), probe), [x, w, b])


def check_patch_embed(rng):
    img = _t(rng, (2, 4, 4))
    w = _t(rng, (8, 3))
    probe = _t(rng, (4, 3), grad=False)
    return finite_diff_check(lambda: _dot_loss(ad.patch_embed(img, 2, w), probe),
                             [img, w])


def check_bilinear_sample(rng):
    img = _t(rng, (2, 6, 5), lo=0.0, hi=1.0)
    # keep sample points a safe distance from interpolation breakpoints
    # and from the border clamp
    h, w = 4, 4
    iy = rng.integers(0, 5, size=(h, w))
    ix = rng.integers(0, 4, size=(h, w))
    fy = rng.uniform(0.2, 0.8, size=(h, w))
    fx = rng.uniform(0.2, 0.8, size=(h, w))
    gy = ((iy + fy) / 5.0) * 2.0 - 1.0
    gx = ((ix + fx) / 4.0) * 2.0 - 1.0
    grid = Tensor(np.stack([gx, gy], axis=2), requires_grad=True, dtype=F64)
    probe = _t(rng, (2, h, w), grad=False)
    return finite_diff_check(
        lambda: _dot_loss(ad.bilinear_sample(img, grid), probe), [img, grid])


def check_elementwise(rng):
    a = _away_from_kinks(rng, (3, 1, 4))
    b = _away_from_kinks(rng, (3, 5, 1))
    c = _t(rng, (3, 5, 4))
    probe = _t(rng, (3, 5, 8), grad=False)

    def fn():
        mixed = ad.concat([ad.sigmoid(ad.mul(a, b)), ad.add(ad.mul(a, c), b)], axis=2)
        return _dot_loss(mixed, probe)

    return finite_diff_check(fn, [a, b, c])


def check_upsample(rng):
    x = _t(rng, (2, 3, 4))
    probe = _t(rng, (2, 6, 8), grad=False)
    return finite_diff_check(lambda: _dot_loss(ad.upsample2x(x), probe), [x])


def check_encoder(rng):
    cfg = EncoderConfig(layers=1, dim=4, heads=2, ff_dim=8, use_positional=True)
    stack = EncoderStack(cfg, rng, "chk", dtype=F64)
    x = _t(rng, (3, 4))
    probe = _t(rng, (3, 4), grad=False)
    return finite_diff_check(lambda: _dot_loss(self_encoder_forward(x, stack), probe),
                             [x] + stack.parameters())


def _tiny_matching(rng):
    cfg = matching.MatchingConfig(
        height=16, width=12, person_channels=3, cloth_channels=2,
        feat_channels=(4, 4), seq_dim=4, conv_width=3,
        encoder=EncoderConfig(layers=1, dim=4, heads=2, ff_dim=8),
        head_channels=(6, 8), control_points=3, max_offset=0.4)
    model = matching.MatchingModel(cfg, rng, dtype=F64)
    # the regression tail is zero-initialized; randomize it so gradient
    # signal reaches every upstream parameter
    model.head["out_w"].data = rng.uniform(-0.3, 0.3, model.head["out_w"].shape)
    model.head["out_b"].data = rng.uniform(-0.1, 0.1, model.head["out_b"].shape)
    return model


def check_interaction_two_stream(rng):
    model = _tiny_matching(rng)
    f_p = _t(rng, (3, 4))
    f_c = _t(rng, (3, 4))
    probe = _t(rng, (3, 8), grad=False)
    wrt = [f_p, f_c] + (model.self_person.parameters() + model.self_cloth.parameters()
                        + model.cross_pc.parameters() + model.cross_cp.parameters())
    return finite_diff_check(
        lambda: _dot_loss(matching.interactive_transformer_1(f_p, f_c, model), probe),
        wrt)


def check_matching_pipeline(rng):
    model = _tiny_matching(rng)
    person = _t(rng, (3, 16, 12), lo=0.0, hi=1.0)
    cloth = _t(rng, (2, 16, 12), lo=0.0, hi=1.0)
    probe = _t(rng, (18,), grad=False)
    wrt = [person, cloth] + model.parameters()
    return finite_diff_check(
        lambda: _dot_loss(model.warp_parameters(person, cloth), probe),
        wrt, max_coords=12)


def check_interaction_three_stream(rng):
    cfg = reasoning.ReasoningConfig(
        height=8, width=8, person_channels=2, patch=4, seq_dim=4, conv_width=3,
        encoder=EncoderConfig(layers=1, dim=4, heads=2, ff_dim=8),
        unet_channels=(2, 3, 4))
    model = reasoning.ReasoningModel(cfg, rng, dtype=F64)
    f_p, f_c, f_m = _t(rng, (4, 4)), _t(rng, (4, 4)), _t(rng, (4, 4))
    probe = _t(rng, (4, 24), grad=False)
    stacks = (model.self_person.parameters() + model.self_cloth.parameters()
              + model.self_mask.parameters()
              + model.cross_p_c.parameters() + model.cross_p_m.parameters()
              + model.cross_c_p.parameters() + model.cross_c_m.parameters()
              + model.cross_m_p.parameters() + model.cross_m_c.parameters())
    return finite_diff_check(
        lambda: _dot_loss(reasoning.interactive_transformer_2(f_p, f_c, f_m, model),
                          probe),
        [f_p, f_c, f_m] + stacks, max_coords=10)


def check_unet(rng):
    unet = reasoning.UNet(3, (2, 3, 4), rng, "chk_unet", dtype=F64)
    x = _t(rng, (3, 8, 8), lo=0.0, hi=1.0)
    probe_r = _t(rng, (3, 8, 8), grad=False)
    probe_m = _t(rng, (1, 8, 8), grad=False)

    def fn():
        rendered, mask = unet.forward(x)
        return ad.add(_dot_loss(rendered, probe_r), _dot_loss(mask, probe_m))

    return finite_diff_check(fn, [x] + unet.parameters(), max_coords=24)


def check_warp_path(rng):
    img = _t(rng, (2, 10, 8), lo=0.0, hi=1.0)
    theta = Tensor(rng.uniform(-0.2, 0.2, 18), requires_grad=True, dtype=F64)
    warper = tps.TpsWarper(3, 10, 8, dtype=F64)
    probe = _t(rng, (2, 10, 8), grad=False)
    return finite_diff_check(
        lambda: _dot_loss(tps.warp(img, warper.grid(theta)), probe), [img, theta])


def check_reasoning_pipeline(rng):
    cfg = reasoning.ReasoningConfig(
        height=16, width=16, person_channels=2, patch=4, seq_dim=4, conv_width=3,
        encoder=EncoderConfig(layers=1, dim=4, heads=2, ff_dim=8),
        unet_channels=(3, 4, 6))
    model = reasoning.ReasoningModel(cfg, rng, dtype=F64)
    p = _t(rng, (2, 16, 16), lo=0.0, hi=1.0)
    c = _t(rng, (3, 16, 16), lo=0.0, hi=1.0)
    m = _t(rng, (1, 16, 16), lo=0.0, hi=1.0)
    probe = _t(rng, (3, 16, 16), grad=False)
    return finite_diff_check(
        lambda: _dot_loss(model.render(p, c, m).image, probe),
        [p, c, m] + model.parameters(), max_coords=5)


SUITE = [
    ("linear_project", check_linear),
    ("softmax", check_softmax),
    ("layer_norm", check_layer_norm),
    ("temporal_conv1d", check_temporal_conv1d),
    ("conv2d", check_conv2d),
    ("patch_embed", check_patch_embed),
    ("bilinear_sample", check_bilinear_sample),
    ("elementwise", check_elementwise),
    ("upsample2x", check_upsample),
    ("encoder_1layer", check_encoder),
    ("interaction_two_stream", check_interaction_two_stream),
    ("interaction_three_stream", check_interaction_three_stream),
    ("unet_tiny", check_unet),
    ("warp_from_offsets", check_warp_path),
    ("matching_pipeline_tiny", check_matching_pipeline),
    ("reasoning_pipeline_tiny", check_reasoning_pipeline),
]


def run_suite(seed=0):
    """Run every check; returns ordered (name, max relative error) pairs."""
    results = []
    for name, fn in SUITE:
        salt = zlib.crc32(name.encode("utf-8"))
        rng = np.random.Generator(np.random.PCG64([seed, salt]))
        results.append((name, fn(rng)))
    return results
