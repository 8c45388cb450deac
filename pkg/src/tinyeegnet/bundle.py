"""``EEGW`` v1 weight bundles.

Layout (little-endian)::

    offset  size  field
    0       4     magic b"EEGW"
    4       2     format version (u16, currently 1)
    6       10    N_s, N_ch, N_cl, N_f, N_p (u16 each)
    16      1     ds (u8)
    17      1     flags (u8); bit 0 set = batch-norm folded
    18      4     batch-norm epsilon (f32)
    22      ...   payload, f32 tensors in canonical order
    end-4   4     CRC-32 of every preceding byte (u32)

Canonical payload order: conv1 (8 x N_f), bn1 (4 x 8), depthwise (16 x N_ch),
bn2 (4 x 16), sep_depthwise (16 x 16), sep_pointwise (16 x 16, out x in),
bn3 (4 x 16), fc_weights (flatten x N_cl), fc_bias (N_cl). Each batch-norm
block is four rows: gamma, beta, mean, var. A folded block stores
scale, shift, zeros, ones instead.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path
from typing import BinaryIO, Union

import numpy as np

from .arch import (N_DEPTH_MAPS, N_TEMPORAL_FILTERS, SEP_KERNEL, ArithmeticMode, ConfigError,
                   EEGNetConfig, param_count)
from .engine import BatchNorm, EngineError, FoldedAffine, ModelWeights

MAGIC = b"EEGW"
VERSION = 1
HEADER = struct.Struct("<4sHHHHHHBBf")
CRC = struct.Struct("<I")
FLAG_FOLDED = 0x01
_LE_F32 = np.dtype("<f4")


class BundleError(ValueError):
    pass


class BadMagicError(BundleError):
    pass


class UnsupportedVersionError(BundleError):
    pass


class CrcError(BundleError):
    pass


class SizeError(BundleError):
    pass


def _payload_elements(cfg: EEGNetConfig) -> int:
    return param_count(cfg, ArithmeticMode.ENGINE).total


def bundle_size(cfg: EEGNetConfig) -> int:
    return HEADER.size + 4 * _payload_elements(cfg) + CRC.size


def encode_bundle(weights: ModelWeights, cfg: EEGNetConfig) -> bytes:
    try:
        weights.check(cfg)
    except EngineError as exc:
        raise BundleError(f"weights inconsistent with config: {exc}") from exc
    for name, v in (("N_s", cfg.n_samples), ("N_ch", cfg.n_channels), ("N_f", cfg.kernel_length)):
        if v > 0xFFFF:
            raise BundleError(f"{name}={v} does not fit the u16 header field")
    if cfg.ds > 0xFF:
        raise BundleError(f"ds={cfg.ds} does not fit the u8 header field")
    flags = FLAG_FOLDED if weights.folded else 0
    head = HEADER.pack(MAGIC, VERSION, cfg.n_samples, cfg.n_channels, cfg.n_classes,
                       cfg.kernel_length, cfg.pool_length, cfg.ds, flags, weights.bn_eps)
    payload = b"".join(np.ascontiguousarray(t, dtype=_LE_F32).tobytes() for t in weights.tensors())
    body = head + payload
    return body + CRC.pack(zlib.crc32(body))


def _header_config(fields) -> EEGNetConfig:
    _, _, ns, nch, ncl, nf, np_, ds, _, _ = fields
    return EEGNetConfig(ns, nch, ncl, nf, np_, ds=ds)


def decode_bundle(data: bytes, fold_bn: bool = False) -> tuple[ModelWeights, EEGNetConfig]:
    """Parse a bundle, validating magic, CRC, version, config and size."""
    if len(data) < HEADER.size + CRC.size:
        raise SizeError(f"bundle truncated: {len(data)} bytes is shorter than a header")
    fields = HEADER.unpack_from(data)
    if fields[0] != MAGIC:
        raise BadMagicError(f"bad magic {fields[0]!r}, expected {MAGIC!r}")
    try:
        cfg = _header_config(fields)
    except ConfigError:
        cfg = None
    (stored,) = CRC.unpack_from(data, len(data) - CRC.size)
    if zlib.crc32(data[:-CRC.size]) != stored:
        if cfg is not None and len(data) < bundle_size(cfg):
            raise SizeError(f"bundle truncated: {len(data)} of {bundle_size(cfg)} bytes")
        raise CrcError("CRC-32 mismatch; bundle is corrupted")
    if fields[1] != VERSION:
        raise UnsupportedVersionError(f"unsupported bundle version {fields[1]}")
    if cfg is None:
        try:
            _header_config(fields)
        except ConfigError as exc:
            raise BundleError(f"inconsistent header: {exc}") from exc
    if len(data) != bundle_size(cfg):
        raise SizeError(f"bundle has {len(data)} bytes, header implies {bundle_size(cfg)}")

    flags, eps = fields[8], float(fields[9])
    flat = np.frombuffer(data, _LE_F32, count=_payload_elements(cfg), offset=HEADER.size)
    flat = flat.astype(np.float32)
    pos = 0

    def take(*shape):
        nonlocal pos
        n = int(np.prod(shape))
        out = flat[pos:pos + n].reshape(shape)
        pos += n
        return out

    def norm(n):
        a, b, c, d = take(4, n)
        return FoldedAffine(a, b) if flags & FLAG_FOLDED else BatchNorm(a, b, c, d)

    try:
        weights = ModelWeights(
            conv1=take(N_TEMPORAL_FILTERS, cfg.kernel_length),
            bn1=norm(N_TEMPORAL_FILTERS),
            depthwise=take(N_DEPTH_MAPS, cfg.n_channels),
            bn2=norm(N_DEPTH_MAPS),
            sep_depthwise=take(N_DEPTH_MAPS, SEP_KERNEL),
            sep_pointwise=take(N_DEPTH_MAPS, N_DEPTH_MAPS),
            bn3=norm(N_DEPTH_MAPS),
            fc_weights=take(cfg.flatten, cfg.n_classes),
            fc_bias=take(cfg.n_classes),
            bn_eps=eps,
        )
    except EngineError as exc:
        raise BundleError(str(exc)) from exc
    if fold_bn:
        weights = weights.fold()
    return weights, cfg


def save_bundle(weights: ModelWeights, cfg: EEGNetConfig,
                dest: Union[str, Path, BinaryIO]) -> int:
    data = encode_bundle(weights, cfg)
    if isinstance(dest, (str, Path)):
        Path(dest).write_bytes(data)
    else:
        dest.write(data)
    return len(data)


def load_bundle(src: Union[str, Path, BinaryIO, bytes],
                fold_bn: bool = False) -> tuple[ModelWeights, EEGNetConfig]:
    if isinstance(src, (bytes, bytearray)):
        data = bytes(src)
    elif isinstance(src, (str, Path)):
        data = Path(src).read_bytes()
    else:
        data = src.read()
    return decode_bundle(data, fold_bn)


def describe_header(data: bytes) -> dict:
    fields = HEADER.unpack_from(data)
    keys = ("magic", "version", "n_samples", "n_channels", "n_classes", "kernel_length",
            "pool_length", "ds", "flags", "bn_eps")
    out = dict(zip(keys, fields))
    out["magic"] = out["magic"].decode("ascii", "replace")
    out["folded"] = bool(out["flags"] & FLAG_FOLDED)
    return out

