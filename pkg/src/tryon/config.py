"""Run configuration.

One flat dataclass covers data generation, both training stages, and
inference.  Every field can be set from a config file (``key = value``
lines) or from command-line flags; the command line wins.  Unknown keys
are errors.
"""

import dataclasses
import zlib
from dataclasses import dataclass

from .encoders import EncoderConfig
from .errors import ConfigError
from .matching import MatchingConfig
from .objectives import LossWeights
from .reasoning import ReasoningConfig

ABLATIONS = ("B1", "B2", "B3", "B4")

# fields that change parameter shapes or meanings; they feed the digest a
# checkpoint is stamped with so inference can detect mismatched settings
_MODEL_FIELDS = (
    "height", "width", "person_channels", "feat_channels", "seq_dim",
    "conv_width", "enc_layers", "enc_heads", "enc_ff", "positional",
    "head_channels", "tps_k", "max_offset", "patch", "unet_channels",
    "ablation",
)


@dataclass(frozen=True)
class TrainConfig:
    # canvas / data
    height: int = 64
    width: int = 48
    person_channels: int = 8
    # optimization
    steps: int = 2000
    batch_size: int = 4
    lr: float = 2e-4
    decay_start: int = 1000
    beta1: float = 0.5
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    # loss weights; lam_smooth < 0 means the ablation default (0.5, or 1 for B4)
    lam_l1: float = 1.0
    lam_percep: float = 1.0
    lam_mask: float = 1.0
    lam_smooth: float = -1.0
    lam_warp_mask: float = 1.0
    percep_seed: int = 7
    # ablation flag: B1 matching-only, B2 reasoning-only, B3 full,
    # B4 full plus the warped-mask L1 term in stage 1
    ablation: str = "B3"
    # stage-1 model
    feat_channels: tuple = (16, 32, 64, 64)
    seq_dim: int = 32
    conv_width: int = 3
    enc_layers: int = 2
    enc_heads: int = 4
    enc_ff: int = 64
    positional: bool = True
    head_channels: tuple = (32, 64)
    tps_k: int = 5
    max_offset: float = 0.4
    # stage-2 model
    patch: int = 4
    unet_channels: tuple = (16, 32, 64)

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise ConfigError("ablation must be one of %s, got %r"
                              % ("/".join(ABLATIONS), self.ablation))
        for name in ("height", "width", "steps", "batch_size", "tps_k",
                     "person_channels", "seq_dim", "patch"):
            if getattr(self, name) < 1 and not (name == "steps" and self.steps == 0):
                raise ConfigError("%s must be positive" % name)
        if self.lr <= 0:
            raise ConfigError("lr must be positive")

    # ---- derived views -------------------------------------------------
    @property
    def smooth_weight(self):
        if self.lam_smooth >= 0:
            return self.lam_smooth
        return 1.0 if self.ablation == "B4" else 0.5

    def loss_weights(self):
        return LossWeights(l1=self.lam_l1, percep=self.lam_percep,
                           mask=self.lam_mask, smooth=self.smooth_weight,
                           warp_mask=self.lam_warp_mask)

    def encoder_config(self):
        return EncoderConfig(layers=self.enc_layers, dim=self.seq_dim,
                             heads=self.enc_heads, ff_dim=self.enc_ff,
                             use_positional=self.positional)

    def matching_config(self):
        return MatchingConfig(
            height=self.height, width=self.width,
            person_channels=self.person_channels, cloth_channels=3,
            feat_channels=self.feat_channels, seq_dim=self.seq_dim,
            conv_width=self.conv_width, encoder=self.encoder_config(),
            head_channels=self.head_channels, control_points=self.tps_k,
            max_offset=self.max_offset,
            use_interaction=self.ablation in ("B1", "B3", "B4"))

    def reasoning_config(self):
        return ReasoningConfig(
            height=self.height, width=self.width,
            person_channels=self.person_channels, patch=self.patch,
            seq_dim=self.seq_dim, conv_width=self.conv_width,
            encoder=self.encoder_config(), unet_channels=self.unet_channels,
            use_interaction=self.ablation in ("B2", "B3", "B4"))

    def model_digest(self):
        text = ";".join("%s=%r" % (k, getattr(self, k)) for k in _MODEL_FIELDS)
        return zlib.crc32(text.encode("utf-8")) & 0xFFFFFFFF


def _parse_value(name, ftype, text):
    text = text.strip() if isinstance(text, str) else text
    if not isinstance(text, str):
        return text
    try:
        if ftype is int:
            return int(text)
        if ftype is float:
            return float(text)
        if ftype is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if ftype is tuple:
            return tuple(int(part) for part in text.split(",") if part.strip())
        return text
    except ValueError as exc:
        raise ConfigError("bad value for %s: %r" % (name, text)) from exc


def build_config(file_values=None, overrides=None):
    """Defaults, overlaid with config-file values, overlaid with overrides."""
    known = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    merged = {}
    for source in (file_values or {}, overrides or {}):
        for key, value in source.items():
            if value is None:
                continue
            if key not in known:
                raise ConfigError("unknown configuration key %r" % key)
            ftype = {"int": int, "float": float, "bool": bool,
                     "tuple": tuple, "str": str}[known[key]] \
                if isinstance(known[key], str) else known[key]
            merged[key] = _parse_value(key, ftype, value)
    return TrainConfig(**merged)
