"""Binary checkpoint format.

Layout (all little-endian)::

    b"SGNC"                magic
    u32 version            currently 1
    u32 n_layers_widths    followed by that many u32 widths
    u32 frequencies
    u8  use_direction, use_normal, use_albedo, has_adam
    u64 step               training step the parameters belong to
    f64 * P                theta
    if has_adam: u64 adam_step, f64 beta1, beta2, eps, f64 * P m, f64 * P v
"""

from __future__ import annotations

import struct

import numpy as np

from ..errors import ConfigurationError
from .adam import AdamState
from .network import CacheParams, EncodingConfig, parameter_count

MAGIC = b"SGNC"
VERSION = 1


def dumps(params: CacheParams, adam: AdamState | None = None, step: int = 0) -> bytes:
    enc = params.encoding
    out = [MAGIC, struct.pack("<II", VERSION, len(params.topology)),
           struct.pack(f"<{len(params.topology)}I", *params.topology),
           struct.pack("<I4B", enc.frequencies, enc.use_direction, enc.use_normal,
                       enc.use_albedo, adam is not None),
           struct.pack("<Q", step),
           params.theta.astype("<f8").tobytes()]
    if adam is not None:
        out.append(struct.pack("<Q3d", adam.step, adam.beta1, adam.beta2, adam.eps))
        out.append(adam.m.astype("<f8").tobytes())
        out.append(adam.v.astype("<f8").tobytes())
    return b"".join(out)


def loads(data: bytes):
    """Returns ``(params, adam_or_None, step)``."""
    try:
        return _loads(data)
    except (struct.error, ValueError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"truncated or corrupt checkpoint: {exc}") from exc


def _loads(data: bytes):
    if data[:4] != MAGIC:
        raise ConfigurationError("not an SGNC checkpoint (bad magic)")
    off = 4
    version, nl = struct.unpack_from("<II", data, off)
    off += 8
    if version != VERSION:
        raise ConfigurationError(f"unsupported checkpoint version {version}")
    topology = struct.unpack_from(f"<{nl}I", data, off)
    off += 4 * nl
    freq, ud, un, ua, has_adam = struct.unpack_from("<I4B", data, off)
    off += 8
    (step,) = struct.unpack_from("<Q", data, off)
    off += 8
    P = parameter_count(topology)
    theta = np.frombuffer(data, dtype="<f8", count=P, offset=off).astype(np.float64)
    off += 8 * P
    enc = EncodingConfig(freq, bool(ud), bool(un), bool(ua))
    params = CacheParams(theta, topology, enc)
    adam = None
    if has_adam:
        astep, b1, b2, eps = struct.unpack_from("<Q3d", data, off)
        off += 32
        m = np.frombuffer(data, dtype="<f8", count=P, offset=off).astype(np.float64)
        off += 8 * P
        v = np.frombuffer(data, dtype="<f8", count=P, offset=off).astype(np.float64)
        off += 8 * P
        adam = AdamState(m, v, astep, b1, b2, eps)
    if off != len(data):
        raise ConfigurationError(f"checkpoint has {len(data) - off} trailing bytes")
    return params, adam, step


def save(path, params: CacheParams, adam: AdamState | None = None, step: int = 0):
    with open(path, "wb") as f:
        f.write(dumps(params, adam, step))


def load(path):
    with open(path, "rb") as f:
        return loads(f.read())
