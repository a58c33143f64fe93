"""Binary checkpoint container for model weights.

Layout, all little-endian:

    bytes 0..3   magic b"SSM1"
    9 x uint32   d, d_in, h, d_g, d_w, L, ffn_hidden, variant code, pool code
    per block    uint64 element count, then that many float64 values

Blocks follow the canonical order from ``params.block_shapes`` for the
stored configuration, so the reader needs no per-block names. Gradients
are not stored.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .numeric import GradSlot
from .params import POOL_KINDS, VARIANTS, ModelConfig, ModelParams, block_shapes

MAGIC = b"SSM1"
_HEADER = struct.Struct("<9I")
_COUNT = struct.Struct("<Q")


def save_params(params: ModelParams, path) -> None:
    cfg = params.config
    header = _HEADER.pack(
        cfg.d,
        cfg.d_in,
        cfg.h,
        cfg.d_g,
        cfg.d_w,
        cfg.L,
        cfg.ffn_hidden,
        VARIANTS.index(cfg.variant),
        POOL_KINDS.index(cfg.pool),
    )
    chunks = [MAGIC, header]
    for name in block_shapes(cfg):
        flat = np.ascontiguousarray(params.value(name), dtype="<f8").ravel()
        chunks.append(_COUNT.pack(flat.size))
        chunks.append(flat.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_params(path) -> ModelParams:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ConfigurationError(f"{path}: bad magic {raw[:4]!r}")
    fields = _HEADER.unpack_from(raw, 4)
    d, d_in, h, d_g, d_w, L, ffn_hidden, vcode, pcode = fields
    if vcode >= len(VARIANTS):
        raise ConfigurationError(f"{path}: unknown variant code {vcode}")
    if pcode >= len(POOL_KINDS):
        raise ConfigurationError(f"{path}: unknown pool code {pcode}")
    cfg = ModelConfig(
        d=d,
        d_in=d_in,
        h=h,
        d_g=d_g,
        d_w=d_w,
        L=L,
        variant=VARIANTS[vcode],
        ffn_hidden=ffn_hidden,
        pool=POOL_KINDS[pcode],
    )
    off = 4 + _HEADER.size
    blocks = {}
    for name, shape in block_shapes(cfg).items():
        (count,) = _COUNT.unpack_from(raw, off)
        off += _COUNT.size
        expect = int(np.prod(shape))
        if count != expect:
            raise ConfigurationError(
                f"{path}: block {name} has {count} values, expected {expect}"
            )
        flat = np.frombuffer(raw, dtype="<f8", count=count, offset=off)
        off += count * 8
        blocks[name] = GradSlot(flat.astype(np.float64).reshape(shape))
    if off != len(raw):
        raise ConfigurationError(f"{path}: {len(raw) - off} trailing bytes")
    return ModelParams(cfg, blocks)
