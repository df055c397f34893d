"""Transformer encoder units: single-stream and cross-stream variants.

Both are post-norm stacks.  The single-stream unit attends a sequence to
itself; the cross-stream unit draws queries from one sequence and
keys/values from a partner sequence that is held fixed across layers.
When positional information is enabled, the fixed sinusoidal table is
added once at stack entry (to queries, and to keys/values for the
cross-stream unit).
"""

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter
from .errors import ShapeError


@dataclass(frozen=True)
class EncoderConfig:
    layers: int = 2
    dim: int = 32
    heads: int = 4
    ff_dim: int = 64
    use_positional: bool = True

    def __post_init__(self):
        if self.layers < 0:
            raise ValueError("layers must be >= 0")
        if min(self.dim, self.heads, self.ff_dim) < 1:
            raise ValueError("dim, heads and ff_dim must be >= 1")
        if self.dim % self.heads:
            raise ValueError("dim %d not divisible by %d heads" % (self.dim, self.heads))


def _xavier(rng, fan_in, fan_out):
    lim = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out))


class EncoderStack:
    """Parameters of an N-layer encoder unit.

    `identity_norm` is a test-only mode that turns the normalization
    sublayers into pass-throughs so zero-weight stacks reduce exactly to
    the identity map.
    """

    def __init__(self, config, rng, name, dtype=np.float32, identity_norm=False):
        self.config = config
        self.name = name
        self.identity_norm = identity_norm
        self.dtype = dtype
        d, f = config.dim, config.ff_dim
        self.layers = []
        for i in range(config.layers):
            prefix = "%s.l%d" % (name, i)
            layer = {}
            for part in ("wq", "wk", "wv", "wo"):
                layer[part] = Parameter(_xavier(rng, d, d), "%s.%s" % (prefix, part), dtype)
                layer["b" + part[1:]] = Parameter(np.zeros(d), "%s.b%s" % (prefix, part[1:]), dtype)
            layer["w1"] = Parameter(_xavier(rng, d, f), prefix + ".w1", dtype)
            layer["b1"] = Parameter(np.zeros(f), prefix + ".b1", dtype)
            layer["w2"] = Parameter(_xavier(rng, f, d), prefix + ".w2", dtype)
            layer["b2"] = Parameter(np.zeros(d), prefix + ".b2", dtype)
            layer["g1"] = Parameter(np.ones(d), prefix + ".g1", dtype)
            layer["n1"] = Parameter(np.zeros(d), prefix + ".n1", dtype)
            layer["g2"] = Parameter(np.ones(d), prefix + ".g2", dtype)
            layer["n2"] = Parameter(np.zeros(d), prefix + ".n2", dtype)
            self.layers.append(layer)

    def parameters(self):
        out = []
        for layer in self.layers:
            out.extend(layer.values())
        return out

    def _norm(self, x, layer, which):
        if self.identity_norm:
            return x
        return ad.layer_norm(x, layer["g" + which], layer["n" + which])

    def _positional(self, L):
        return ad.positional_embedding(L, self.config.dim, dtype=self.dtype)


def multi_head_attention(q_in, kv_in, layer, heads):
    """Scaled dot-product attention with per-head splits, then an output map.

    q_in: (L_q, d); kv_in: (L_kv, d).  Per head the logits are scaled by
    1/sqrt(d_head).
    """
    lq, d = q_in.shape
    if kv_in.shape[1] != d:
        raise ShapeError("attention dims disagree: %r vs %r" % (q_in.shape, kv_in.shape))
    lkv = kv_in.shape[0]
    dh = d // heads
    q = ad.linear(q_in, layer["wq"], layer["bq"])
    k = ad.linear(kv_in, layer["wk"], layer["bk"])
    v = ad.linear(kv_in, layer["wv"], layer["bv"])
    qh = ad.transpose(ad.reshape(q, (lq, heads, dh)), (1, 0, 2))   # (H, Lq, dh)
    kh = ad.transpose(ad.reshape(k, (lkv, heads, dh)), (1, 2, 0))  # (H, dh, Lkv)
    vh = ad.transpose(ad.reshape(v, (lkv, heads, dh)), (1, 0, 2))  # (H, Lkv, dh)
    logits = ad.mul(ad.matmul(qh, kh), 1.0 / math.sqrt(dh))
    att = ad.softmax(logits, axis=-1)
    mixed = ad.matmul(att, vh)                                     # (H, Lq, dh)
    mixed = ad.reshape(ad.transpose(mixed, (1, 0, 2)), (lq, d))
    return ad.linear(mixed, layer["wo"], layer["bo"])


def _ffn(x, layer):
    return ad.linear(ad.relu(ad.linear(x, layer["w1"], layer["b1"])),
                     layer["w2"], layer["b2"])


def self_encoder_forward(x, stack):
    """(L, d) -> (L, d) through the single-stream stack."""
    cfg = stack.config
    if x.shape[1] != cfg.dim:
        raise ShapeError("expected dim %d, got %r" % (cfg.dim, x.shape))
    if cfg.use_positional:
        x = ad.add(x, stack._positional(x.shape[0]))
    for layer in stack.layers:
        x = stack._norm(ad.add(x, multi_head_attention(x, x, layer, cfg.heads)),
                        layer, "1")
        x = stack._norm(ad.add(x, _ffn(x, layer)), layer, "2")
    return x


def cross_encoder_forward(queries, partner, stack):
    """(L_q, d) queried against a fixed partner sequence (L_kv, d)."""
    cfg = stack.config
    if queries.shape[1] != cfg.dim or partner.shape[1] != cfg.dim:
        raise ShapeError("expected dim %d, got %r and %r"
                         % (cfg.dim, queries.shape, partner.shape))
    x = queries
    kv = partner
    if cfg.use_positional:
        x = ad.add(x, stack._positional(x.shape[0]))
        kv = ad.add(kv, stack._positional(kv.shape[0]))
    for layer in stack.layers:
        x = stack._norm(ad.add(x, multi_head_attention(x, kv, layer, cfg.heads)),
                        layer, "1")
        x = stack._norm(ad.add(x, _ffn(x, layer)), layer, "2")
    return x
