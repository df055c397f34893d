"""Stage 2: try-on rendering.

The person representation, warped cloth, and warped mask are patch-embedded
into three token streams, fused by a three-stream attention interaction into
a single-channel reasoning map, and rendered by a UNet whose outputs are
blended with the warped cloth under a learned composition mask.
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
class ReasoningConfig:
    height: int = 64
    width: int = 48
    person_channels: int = 8
    patch: int = 4
    seq_dim: int = 32
    conv_width: int = 3
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    unet_channels: tuple = (16, 32, 64)
    use_interaction: bool = True
    tie_weights: bool = False


@dataclass
class TryOnOutput:
    rendered: "ad.Tensor"       # (3,h,w) raw person rendering
    mask: "ad.Tensor"           # (1,h,w) composition mask in [0,1]
    reason_map: "ad.Tensor"     # (1,h,w) token reasoning map (None when disabled)
    image: "ad.Tensor"          # (3,h,w) final composed try-on


def _he(rng, shape, fan_in):
    return rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)


def _xavier(rng, fan_in, fan_out):
    lim = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out))


class PatchEmbedder:
    """Patch flatten + linear projection + token-local 1D convolution."""

    def __init__(self, in_channels, patch, dim, conv_width, rng, name, dtype):
        fan = in_channels * patch * patch
        self.patch = patch
        self.w = Parameter(_xavier(rng, fan, dim), name + ".w", dtype)
        self.b = Parameter(np.zeros(dim), name + ".b", dtype)
        self.conv = Parameter(_he(rng, (conv_width, dim, dim), conv_width * dim),
                              name + ".conv", dtype)

    def parameters(self):
        return [self.w, self.b, self.conv]

    def forward(self, img):
        tokens = ad.patch_embed(img, self.patch, self.w, self.b)
        return ad.temporal_conv1d(tokens, self.conv)


def interactive_transformer_2(f_person, f_cloth, f_mask, model):
    """Three-stream interaction -> (T, 6d).

    Each stream is self-encoded, then queried against the other two; the
    two crossings per stream are concatenated, and the three stream
    blocks are concatenated in (person, cloth, mask) order.
    """
    if not (f_person.shape[0] == f_cloth.shape[0] == f_mask.shape[0]):
        raise ShapeError("token counts differ: %r, %r, %r"
                         % (f_person.shape, f_cloth.shape, f_mask.shape))
    xp = self_encoder_forward(f_person, model.self_person)
    xc = self_encoder_forward(f_cloth, model.self_cloth)
    xm = self_encoder_forward(f_mask, model.self_mask)
    p_block = ad.concat([cross_encoder_forward(xp, xc, model.cross_p_c),
                         cross_encoder_forward(xp, xm, model.cross_p_m)], axis=1)
    c_block = ad.concat([cross_encoder_forward(xc, xp, model.cross_c_p),
                         cross_encoder_forward(xc, xm, model.cross_c_m)], axis=1)
    m_block = ad.concat([cross_encoder_forward(xm, xp, model.cross_m_p),
                         cross_encoder_forward(xm, xc, model.cross_m_c)], axis=1)
    return ad.concat([p_block, c_block, m_block], axis=1)


def reason_map(x_cross, proj_w, proj_b, patch, height, width):
    """(T, 6d) tokens -> (1, h, w) map; token t fills only its own patch."""
    t = x_cross.shape[0]
    hp, wp = height // patch, width // patch
    if t != hp * wp:
        raise ShapeError("%d tokens cannot tile %dx%d with patch %d"
                         % (t, height, width, patch))
    vals = ad.linear(x_cross, proj_w, proj_b)                    # (T, P*P)
    vals = ad.reshape(vals, (hp, wp, patch, patch))
    vals = ad.transpose(vals, (0, 2, 1, 3))
    return ad.reshape(vals, (1, height, width))


def activate_inputs(person, cloth, mask, reason):
    """Channel-concat the three inputs and add the reasoning map everywhere."""
    if person.shape[1:] != cloth.shape[1:] or person.shape[1:] != mask.shape[1:]:
        raise ShapeError("spatial dims differ: %r, %r, %r"
                         % (person.shape, cloth.shape, mask.shape))
    stacked = ad.concat([person, cloth, mask], axis=0)
    if reason is None:
        return stacked
    return ad.add(stacked, reason)


class UNet:
    """Encoder-decoder with skip connections; sigmoid rendering + mask heads."""

    def __init__(self, in_channels, channels, rng, name, dtype=np.float32):
        self.depth = len(channels)
        self.channels = channels
        enc_in = [in_channels] + list(channels)
        self.enc_w, self.enc_b = [], []
        # level 0 keeps full resolution; deeper levels stride down
        for i, c in enumerate(channels):
            w = Parameter(_he(rng, (c, enc_in[i], 3, 3), enc_in[i] * 9),
                          "%s.enc%d.w" % (name, i), dtype)
            b = Parameter(np.zeros(c), "%s.enc%d.b" % (name, i), dtype)
            self.enc_w.append(w)
            self.enc_b.append(b)
        bott = channels[-1]
        self.bott_w = Parameter(_he(rng, (bott, channels[-1], 3, 3), channels[-1] * 9),
                                name + ".bott.w", dtype)
        self.bott_b = Parameter(np.zeros(bott), name + ".bott.b", dtype)
        self.dec_w, self.dec_b = [], []
        up_in = bott
        for i in reversed(range(self.depth)):
            cat_in = up_in + channels[i]
            w = Parameter(_he(rng, (channels[i], cat_in, 3, 3), cat_in * 9),
                          "%s.dec%d.w" % (name, i), dtype)
            b = Parameter(np.zeros(channels[i]), "%s.dec%d.b" % (name, i), dtype)
            self.dec_w.append(w)
            self.dec_b.append(b)
            up_in = channels[i]
        self.out_w = Parameter(_he(rng, (4, channels[0], 3, 3), channels[0] * 9),
                               name + ".out.w", dtype)
        self.out_b = Parameter(np.zeros(4), name + ".out.b", dtype)

    def parameters(self):
        out = []
        for w, b in zip(self.enc_w, self.enc_b):
            out += [w, b]
        out += [self.bott_w, self.bott_b]
        for w, b in zip(self.dec_w, self.dec_b):
            out += [w, b]
        out += [self.out_w, self.out_b]
        return out

    def forward(self, x):
        """(C,h,w) -> rendered (3,h,w) and mask (1,h,w), both sigmoid-bounded."""
        h, w = x.shape[1], x.shape[2]
        div = 2 ** self.depth
        if h % div or w % div:
            raise ShapeError("UNet input %dx%d not divisible by %d" % (h, w, div))
        skips = []
        for i in range(self.depth):
            stride = 1 if i == 0 else 2
            x = ad.relu(ad.conv2d(x, self.enc_w[i], self.enc_b[i], stride=stride, pad=1))
            skips.append(x)
        x = ad.relu(ad.conv2d(x, self.bott_w, self.bott_b, stride=2, pad=1))
        for i, (wp, bp) in enumerate(zip(self.dec_w, self.dec_b)):
            skip = skips[self.depth - 1 - i]
            x = ad.concat([ad.upsample2x(x), skip], axis=0)
            x = ad.relu(ad.conv2d(x, wp, bp, stride=1, pad=1))
        x = ad.conv2d(x, self.out_w, self.out_b, stride=1, pad=1)
        rendered = ad.sigmoid(ad.narrow(x, 0, 0, 3))
        mask = ad.sigmoid(ad.narrow(x, 0, 3, 1))
        return rendered, mask


def compose(mask, cloth, rendered, reason):
    """Blend: sigmoid(reason) gates the rendering, the mask picks the cloth.

    image = mask * cloth + (1 - mask) * (sigmoid(reason) * rendered)
    """
    if cloth.shape[1:] != rendered.shape[1:] or mask.shape[1:] != cloth.shape[1:]:
        raise ShapeError("spatial dims differ in composition")
    gated = ad.mul(ad.sigmoid(reason), rendered)
    return ad.add(ad.mul(mask, cloth), ad.mul(ad.sub(1.0, mask), gated))


class ReasoningModel:
    """Everything stage 2 learns; renders the final try-on image."""

    def __init__(self, config, rng, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        cfg = config
        if cfg.height % cfg.patch or cfg.width % cfg.patch:
            raise ShapeError("canvas %dx%d not divisible by patch %d"
                             % (cfg.height, cfg.width, cfg.patch))
        d = cfg.seq_dim
        self.embed_person = PatchEmbedder(cfg.person_channels, cfg.patch, d,
                                          cfg.conv_width, rng, "reason.embed_p", dtype)
        self.embed_cloth = PatchEmbedder(3, cfg.patch, d, cfg.conv_width, rng,
                                         "reason.embed_c", dtype)
        self.embed_mask = PatchEmbedder(1, cfg.patch, d, cfg.conv_width, rng,
                                        "reason.embed_m", dtype)
        enc = cfg.encoder
        self.self_person = EncoderStack(enc, rng, "reason.self_p", dtype)
        if cfg.tie_weights:
            self.self_cloth = self.self_person
            self.self_mask = self.self_person
            shared = EncoderStack(enc, rng, "reason.cross", dtype)
            self.cross_p_c = self.cross_p_m = shared
            self.cross_c_p = self.cross_c_m = shared
            self.cross_m_p = self.cross_m_c = shared
        else:
            self.self_cloth = EncoderStack(enc, rng, "reason.self_c", dtype)
            self.self_mask = EncoderStack(enc, rng, "reason.self_m", dtype)
            self.cross_p_c = EncoderStack(enc, rng, "reason.cross_p_c", dtype)
            self.cross_p_m = EncoderStack(enc, rng, "reason.cross_p_m", dtype)
            self.cross_c_p = EncoderStack(enc, rng, "reason.cross_c_p", dtype)
            self.cross_c_m = EncoderStack(enc, rng, "reason.cross_c_m", dtype)
            self.cross_m_p = EncoderStack(enc, rng, "reason.cross_m_p", dtype)
            self.cross_m_c = EncoderStack(enc, rng, "reason.cross_m_c", dtype)
        pp = cfg.patch * cfg.patch
        self.reason_w = Parameter(_xavier(rng, 6 * d, pp), "reason.map.w", dtype)
        self.reason_b = Parameter(np.zeros(pp), "reason.map.b", dtype)
        self.unet = UNet(cfg.person_channels + 4, cfg.unet_channels, rng,
                         "reason.unet", dtype)

    def parameters(self):
        params = self.embed_person.parameters() + self.embed_cloth.parameters() \
            + self.embed_mask.parameters()
        if self.config.tie_weights:
            params += self.self_person.parameters() + self.cross_p_c.parameters()
        else:
            params += (self.self_person.parameters() + self.self_cloth.parameters()
                       + self.self_mask.parameters()
                       + self.cross_p_c.parameters() + self.cross_p_m.parameters()
                       + self.cross_c_p.parameters() + self.cross_c_m.parameters()
                       + self.cross_m_p.parameters() + self.cross_m_c.parameters())
        params += [self.reason_w, self.reason_b]
        params += self.unet.parameters()
        return params

    def render(self, person, cloth, mask):
        """(p, warped cloth, warped mask) Tensors -> TryOnOutput."""
        cfg = self.config
        if cfg.use_interaction:
            f_p = self.embed_person.forward(person)
            f_c = self.embed_cloth.forward(cloth)
            f_m = self.embed_mask.forward(mask)
            x2 = interactive_transformer_2(f_p, f_c, f_m, self)
            reason = reason_map(x2, self.reason_w, self.reason_b, cfg.patch,
                                person.shape[1], person.shape[2])
        else:
            reason = None
        unet_in = activate_inputs(person, cloth, mask, reason)
        rendered, comp_mask = self.unet.forward(unet_in)
        if cfg.use_interaction:
            image = compose(comp_mask, cloth, rendered, reason)
        else:
            image = ad.add(ad.mul(comp_mask, cloth),
                           ad.mul(ad.sub(1.0, comp_mask), rendered))
        return TryOnOutput(rendered=rendered, mask=comp_mask,
                           reason_map=reason, image=image)
