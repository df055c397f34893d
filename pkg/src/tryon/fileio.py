"""Binary file formats.

Raw tensor (magic ``CITT``):
    "CITT" | u32 version (=1) | u8 rank | rank x u32 dims |
    prod(dims) float32 values.  All integers and floats little-endian.

Checkpoint (magic ``CITC``):
    "CITC" | u32 version (=1) | u32 step | u32 param count, then per
    parameter: u16 name length | UTF-8 name | u8 rank | rank x u32 dims |
    float32 values; finally a CRC-32 of all preceding bytes.  The config
    digest travels as a reserved parameter entry ``__meta__.config_digest``
    holding its high and low 16-bit halves (both exactly representable in
    float32).

Images: binary PPM (P6, maxval 255) for RGB, binary PGM (P5) for masks
and maps.  Values quantize to 255 levels on write and map back to [0,1]
on read.
"""

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import (CheckpointVersionError, ConfigError, CorruptCheckpointError,
                     ShapeError)

TENSOR_MAGIC = b"CITT"
CHECKPOINT_MAGIC = b"CITC"
FORMAT_VERSION = 1
_DIGEST_KEY = "__meta__.config_digest"


def write_tensor(path, array):
    array = np.asarray(array, dtype=np.float32)
    if array.ndim > 255:
        raise ShapeError("tensor rank %d exceeds the format limit" % array.ndim)
    with open(path, "wb") as fh:
        fh.write(TENSOR_MAGIC)
        fh.write(struct.pack("<IB", FORMAT_VERSION, array.ndim))
        fh.write(struct.pack("<%dI" % array.ndim, *array.shape))
        fh.write(array.astype("<f4").tobytes())


def read_tensor(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != TENSOR_MAGIC:
        raise CorruptCheckpointError("%s: bad tensor magic" % path)
    version, rank = struct.unpack_from("<IB", raw, 4)
    if version != FORMAT_VERSION:
        raise CheckpointVersionError("%s: tensor format version %d unsupported"
                                     % (path, version))
    dims = struct.unpack_from("<%dI" % rank, raw, 9)
    count = int(np.prod(dims)) if rank else 1
    start = 9 + 4 * rank
    data = np.frombuffer(raw, dtype="<f4", count=count, offset=start)
    if data.size != count:
        raise CorruptCheckpointError("%s: truncated tensor payload" % path)
    return data.reshape(dims).astype(np.float32)


def quantize8(img):
    """Snap [0,1] floats onto the 255-level grid used by the image files."""
    arr = np.asarray(img, dtype=np.float32)
    levels = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.float32)
    return levels / np.float32(255.0)


def _write_netpbm(path, magic, planes):
    h, w = planes.shape[1], planes.shape[2]
    data = np.round(np.clip(planes, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(b"%s\n%d %d\n255\n" % (magic, w, h))
        fh.write(data.transpose(1, 2, 0).tobytes())


def write_ppm(path, img):
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ShapeError("PPM wants (3,h,w), got %r" % (img.shape,))
    _write_netpbm(path, b"P6", img)


def write_pgm(path, img):
    img = np.asarray(img)
    if img.ndim == 2:
        img = img[None]
    if img.ndim != 3 or img.shape[0] != 1:
        raise ShapeError("PGM wants (1,h,w), got %r" % (img.shape,))
    _write_netpbm(path, b"P5", img)


def _read_netpbm(path, magic, channels):
    with open(path, "rb") as fh:
        raw = fh.read()
    tokens = []
    i = 0
    while len(tokens) < 4 and i < len(raw):
        while i < len(raw) and raw[i : i + 1].isspace():
            i += 1
        if raw[i : i + 1] == b"#":
            while i < len(raw) and raw[i : i + 1] != b"\n":
                i += 1
            continue
        start = i
        while i < len(raw) and not raw[i : i + 1].isspace():
            i += 1
        tokens.append(raw[start:i])
    i += 1  # single whitespace after maxval
    if len(tokens) != 4 or tokens[0] != magic:
        raise ValueError("%s: not a binary %s file" % (path, magic.decode()))
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise ValueError("%s: only maxval 255 is supported" % path)
    data = np.frombuffer(raw, dtype=np.uint8, count=h * w * channels, offset=i)
    if data.size != h * w * channels:
        raise ValueError("%s: truncated pixel data" % path)
    img = data.reshape(h, w, channels).transpose(2, 0, 1)
    return img.astype(np.float32) / np.float32(255.0)


def read_ppm(path):
    return _read_netpbm(path, b"P6", 3)


def read_pgm(path):
    return _read_netpbm(path, b"P5", 1)


# ---------------------------------------------------------------------------
# checkpoints

@dataclass
class Checkpoint:
    """Ordered named parameters plus the step and config digest."""

    step: int
    params: dict = field(default_factory=dict)   # name -> float32 ndarray
    config_digest: int = 0
    version: int = FORMAT_VERSION


def _pack_entry(name, array):
    encoded = name.encode("utf-8")
    if len(encoded) > 0xFFFF:
        raise ShapeError("parameter name too long: %r" % name)
    arr = np.asarray(array, dtype="<f4")
    head = struct.pack("<H", len(encoded)) + encoded
    head += struct.pack("<B", arr.ndim)
    head += struct.pack("<%dI" % arr.ndim, *arr.shape)
    return head + arr.tobytes()


def save_checkpoint(path, ckpt):
    if _DIGEST_KEY in ckpt.params:
        raise ShapeError("%r is a reserved parameter name" % _DIGEST_KEY)
    digest = int(ckpt.config_digest) & 0xFFFFFFFF
    entries = dict(ckpt.params)
    entries[_DIGEST_KEY] = np.array([digest >> 16, digest & 0xFFFF], dtype=np.float32)
    body = CHECKPOINT_MAGIC
    body += struct.pack("<III", ckpt.version, ckpt.step, len(entries))
    for name, arr in entries.items():
        body += _pack_entry(name, arr)
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 20 or raw[:4] != CHECKPOINT_MAGIC:
        raise CorruptCheckpointError("%s: not a checkpoint file" % path)
    body, (stored_crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != stored_crc:
        raise CorruptCheckpointError("%s: CRC mismatch, file is corrupt" % path)
    version, step, count = struct.unpack_from("<III", raw, 4)
    if version != FORMAT_VERSION:
        raise CheckpointVersionError("%s: checkpoint version %d unsupported"
                                     % (path, version))
    params = {}
    offset = 16
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", raw, offset)
            offset += 2
            name = raw[offset : offset + nlen].decode("utf-8")
            offset += nlen
            (rank,) = struct.unpack_from("<B", raw, offset)
            offset += 1
            dims = struct.unpack_from("<%dI" % rank, raw, offset)
            offset += 4 * rank
            n = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(raw, dtype="<f4", count=n, offset=offset)
            if arr.size != n:
                raise CorruptCheckpointError("%s: truncated parameter %r" % (path, name))
            offset += 4 * n
            params[name] = arr.reshape(dims).astype(np.float32)
    except struct.error as exc:
        raise CorruptCheckpointError("%s: truncated checkpoint" % path) from exc
    meta = params.pop(_DIGEST_KEY, None)
    digest = (int(meta[0]) << 16 | int(meta[1])) if meta is not None else 0
    return Checkpoint(step=step, params=params, config_digest=digest, version=version)


def checkpoint_from_model(model, step, config_digest):
    params = {}
    for p in model.parameters():
        if p.name in params:
            raise ShapeError("duplicate parameter name %r" % p.name)
        params[p.name] = p.data.astype(np.float32).copy()
    return Checkpoint(step=step, params=params, config_digest=config_digest)


def load_into_model(model, ckpt):
    for p in model.parameters():
        if p.name not in ckpt.params:
            raise CorruptCheckpointError("checkpoint is missing %r" % p.name)
        arr = ckpt.params[p.name]
        if arr.shape != p.data.shape:
            raise ShapeError("checkpoint %r has shape %r, model wants %r"
                             % (p.name, arr.shape, p.data.shape))
        p.data = arr.astype(model.dtype).copy()


# ---------------------------------------------------------------------------
# config files

def parse_config_file(path):
    """One `key = value` per line; '#' starts a comment; returns str->str."""
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ConfigError("%s:%d: expected 'key = value'" % (path, lineno))
            key, value = text.split("=", 1)
            key = key.strip()
            if not key:
                raise ConfigError("%s:%d: empty key" % (path, lineno))
            if key in values:
                raise ConfigError("%s:%d: duplicate key %r" % (path, lineno, key))
            values[key] = value.strip()
    return values
