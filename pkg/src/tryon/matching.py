"""Stage 1: geometric matching.

Person and cloth images are reduced by strided conv pyramids to coarse
feature maps, optionally enriched by a two-stream attention interaction,
correlated position-against-position, and regressed to the control-point
offsets that drive the spline warp.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter
from .encoders import (EncoderConfig, EncoderStack, cross_encoder_forward,
                       self_encoder_forward)
from .errors import ShapeError


@dataclass(frozen=True)
class MatchingConfig:
    height: int = 64
    width: int = 48
    person_channels: int = 8
    cloth_channels: int = 3
    feat_channels: tuple = (16, 32, 64, 64)
    seq_dim: int = 32
    conv_width: int = 3
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    head_channels: tuple = (32, 64)
    control_points: int = 5
    max_offset: float = 0.4
    use_interaction: bool = True
    tie_weights: bool = False


def _he(rng, shape, fan_in):
    return rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)


class ConvPyramid:
    """Stride-2 conv + ReLU stages; each stage halves both spatial dims."""

    def __init__(self, in_channels, channels, rng, name, dtype=np.float32):
        self.weights = []
        self.biases = []
        prev = in_channels
        for i, c in enumerate(channels):
            w = Parameter(_he(rng, (c, prev, 3, 3), prev * 9), "%s.c%d.w" % (name, i), dtype)
            b = Parameter(np.zeros(c), "%s.c%d.b" % (name, i), dtype)
            self.weights.append(w)
            self.biases.append(b)
            prev = c

    @property
    def total_stride(self):
        return 2 ** len(self.weights)

    def parameters(self):
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def forward(self, img):
        s = self.total_stride
        if img.shape[1] % s or img.shape[2] % s:
            raise ShapeError("input %r not divisible by total stride %d"
                             % (img.shape, s))
        x = img
        for w, b in zip(self.weights, self.biases):
            x = ad.relu(ad.conv2d(x, w, b, stride=2, pad=1))
        return x


def extract_features(img, extractor):
    """(C_in, h, w) -> (C, h/stride, w/stride) feature map."""
    return extractor.forward(img)


def to_sequence(feat, kernel):
    """(C, H, W) -> (H*W, d) tokens: row-major flatten, then a 1D conv."""
    c, h, w = feat.shape
    seq = ad.transpose(ad.reshape(feat, (c, h * w)), (1, 0))
    return ad.temporal_conv1d(seq, kernel)


def interactive_transformer_1(f_person, f_cloth, model):
    """Two-stream interaction: self-encode each, cross both ways, concat.

    Output is (L, 2d): the person-queried crossing next to the
    cloth-queried crossing.
    """
    if f_person.shape[0] != f_cloth.shape[0]:
        raise ShapeError("sequence lengths differ: %r vs %r"
                         % (f_person.shape, f_cloth.shape))
    xp = self_encoder_forward(f_person, model.self_person)
    xc = self_encoder_forward(f_cloth, model.self_cloth)
    return ad.concat([cross_encoder_forward(xp, xc, model.cross_pc),
                      cross_encoder_forward(xc, xp, model.cross_cp)], axis=1)


def global_strengthen(x_person, x_cloth, x_cross, proj_w, proj_b):
    """Gate both feature maps by a shared attention map: x + x * att.

    The (L, 2d) interaction output is projected to one value per channel
    and token, squashed by a sigmoid, and reshaped back onto the feature
    grid; both maps are rescaled identically.
    """
    c, h, w = x_person.shape
    if x_cloth.shape != x_person.shape:
        raise ShapeError("feature maps differ: %r vs %r"
                         % (x_person.shape, x_cloth.shape))
    if x_cross.shape[0] != h * w:
        raise ShapeError("interaction length %d != %d positions"
                         % (x_cross.shape[0], h * w))
    att = ad.sigmoid(ad.linear(x_cross, proj_w, proj_b))        # (L, C)
    att = ad.reshape(ad.transpose(att, (1, 0)), (c, h, w))
    return (ad.add(x_person, ad.mul(x_person, att)),
            ad.add(x_cloth, ad.mul(x_cloth, att)))


def correlation(x_person, x_cloth):
    """All-pairs feature dot products after per-position L2 normalization.

    Output (H*W, H, W): the leading axis indexes person positions
    (row-major), the trailing two index cloth positions.
    """
    if x_person.shape != x_cloth.shape:
        raise ShapeError("correlation inputs differ: %r vs %r"
                         % (x_person.shape, x_cloth.shape))
    c, h, w = x_person.shape
    a = ad.reshape(ad.l2norm_channels(x_person), (c, h * w))
    b = ad.reshape(ad.l2norm_channels(x_cloth), (c, h * w))
    corr = ad.matmul(ad.transpose(a, (1, 0)), b)                # (L_p, L_c)
    return ad.reshape(corr, (h * w, h, w))


def regress_theta(corr, head):
    """Correlation volume -> bounded flat offsets (2K²,)."""
    x = corr
    for w, b in zip(head["conv_w"], head["conv_b"]):
        x = ad.relu(ad.conv2d(x, w, b, stride=2, pad=1))
    flat = ad.reshape(x, (1, x.size))
    out = ad.linear(flat, head["out_w"], head["out_b"])
    bounded = ad.mul(ad.tanh(out), head["max_offset"])
    return ad.reshape(bounded, (out.shape[1],))


class MatchingModel:
    """Everything stage 1 learns; produces warp offsets from (person, cloth)."""

    def __init__(self, config, rng, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        cfg = config
        d = cfg.seq_dim
        c_feat = cfg.feat_channels[-1]
        self.person_extractor = ConvPyramid(cfg.person_channels, cfg.feat_channels,
                                            rng, "match.person", dtype)
        self.cloth_extractor = ConvPyramid(cfg.cloth_channels, cfg.feat_channels,
                                           rng, "match.cloth", dtype)

        k = cfg.conv_width
        self.seq_person = Parameter(_he(rng, (k, c_feat, d), k * c_feat),
                                    "match.seq_person", dtype)
        self.self_person = EncoderStack(cfg.encoder, rng, "match.self_p", dtype)
        self.cross_pc = EncoderStack(cfg.encoder, rng, "match.cross_pc", dtype)
        if cfg.tie_weights:
            self.seq_cloth = self.seq_person
            self.self_cloth = self.self_person
            self.cross_cp = self.cross_pc
        else:
            self.seq_cloth = Parameter(_he(rng, (k, c_feat, d), k * c_feat),
                                       "match.seq_cloth", dtype)
            self.self_cloth = EncoderStack(cfg.encoder, rng, "match.self_c", dtype)
            self.cross_cp = EncoderStack(cfg.encoder, rng, "match.cross_cp", dtype)

        self.att_w = Parameter(_he(rng, (2 * d, c_feat), 2 * d), "match.att.w", dtype)
        self.att_b = Parameter(np.zeros(c_feat), "match.att.b", dtype)

        stride = self.person_extractor.total_stride
        if cfg.height % stride or cfg.width % stride:
            raise ShapeError("canvas %dx%d not divisible by extractor stride %d"
                             % (cfg.height, cfg.width, stride))
        hf, wf = cfg.height // stride, cfg.width // stride
        prev, h, w = hf * wf, hf, wf
        conv_w, conv_b = [], []
        for i, c in enumerate(cfg.head_channels):
            conv_w.append(Parameter(_he(rng, (c, prev, 3, 3), prev * 9),
                                    "match.head.c%d.w" % i, dtype))
            conv_b.append(Parameter(np.zeros(c), "match.head.c%d.b" % i, dtype))
            prev = c
            h = (h + 2 - 3) // 2 + 1
            w = (w + 2 - 3) // 2 + 1
        n_theta = 2 * cfg.control_points ** 2
        # zero init: training starts from the identity warp
        self.head = {
            "conv_w": conv_w,
            "conv_b": conv_b,
            "out_w": Parameter(np.zeros((prev * h * w, n_theta)), "match.head.out.w", dtype),
            "out_b": Parameter(np.zeros(n_theta), "match.head.out.b", dtype),
            "max_offset": cfg.max_offset,
        }

    def parameters(self):
        params = (self.person_extractor.parameters()
                  + self.cloth_extractor.parameters()
                  + [self.seq_person]
                  + self.self_person.parameters()
                  + self.cross_pc.parameters())
        if not self.config.tie_weights:
            params += ([self.seq_cloth]
                       + self.self_cloth.parameters()
                       + self.cross_cp.parameters())
        params += [self.att_w, self.att_b]
        params += self.head["conv_w"] + self.head["conv_b"]
        params += [self.head["out_w"], self.head["out_b"]]
        return params

    def warp_parameters(self, person, cloth):
        """(person, cloth) image Tensors -> flat warp offsets (2K²,)."""
        x_p = extract_features(person, self.person_extractor)
        x_c = extract_features(cloth, self.cloth_extractor)
        if self.config.use_interaction:
            f_p = to_sequence(x_p, self.seq_person)
            f_c = to_sequence(x_c, self.seq_cloth)
            x1 = interactive_transformer_1(f_p, f_c, self)
            x_p, x_c = global_strengthen(x_p, x_c, x1, self.att_w, self.att_b)
        corr = correlation(x_p, x_c)
        return regress_theta(corr, self.head)
