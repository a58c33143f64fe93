"""Model configuration, parameter containers, and weight initialization.

Parameters live in a flat ordered mapping of named GradSlot blocks; the
view dataclasses below expose per-layer slices of that mapping without
copying. The block order defined by ``block_shapes`` is the canonical
serialization order (see ``serialize``).

Weights are initialized as Gaussians with std 1/sqrt(fan_in); biases and
merge-layer extras start at zero where noted.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigurationError
from .numeric import GradSlot, SeededRng

VARIANTS = ("attention", "affinity", "baseline")
POOL_KINDS = ("attention", "mean")
LEAKY_SLOPE = 0.01


@dataclass
class ModelConfig:
    d: int = 32
    d_in: int = 16
    h: int = 4
    d_g: Optional[int] = None
    d_w: Optional[int] = None
    L: int = 2
    variant: str = "attention"
    ffn_hidden: Optional[int] = None
    pool: str = "attention"

    def __post_init__(self):
        if self.d_g is None:
            if self.d % self.h:
                raise ConfigurationError(f"h={self.h} must divide d={self.d}")
            self.d_g = self.d // self.h
        if self.d_w is None:
            self.d_w = self.d_g
        if self.ffn_hidden is None:
            self.ffn_hidden = self.d
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}")
        if self.pool not in POOL_KINDS:
            raise ConfigurationError(f"unknown pool kind {self.pool!r}")
        if self.h * self.d_g != self.d:
            raise ConfigurationError(
                f"h * d_g must equal d: {self.h} * {self.d_g} != {self.d}"
            )
        if self.L < 1:
            raise ConfigurationError(f"L must be >= 1, got {self.L}")
        for name in ("d", "d_in", "h", "d_g", "d_w", "ffn_hidden"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "d_in": self.d_in,
            "h": self.h,
            "d_g": self.d_g,
            "d_w": self.d_w,
            "L": self.L,
            "variant": self.variant,
            "ffn_hidden": self.ffn_hidden,
            "pool": self.pool,
        }


# ---------------------------------------------------------------------------
# parameter views


@dataclass
class FfnParams:
    """Two-layer per-item feed-forward net with a leaky ReLU in between."""

    w1: np.ndarray  # (hidden, d)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (d, hidden)
    b2: np.ndarray  # (d,)
    slope: float = LEAKY_SLOPE


@dataclass
class EncoderParams:
    """One self-attention block: h-head projections, merge map, FFN."""

    wq: np.ndarray  # (h, d_g, d)
    wk: np.ndarray
    wv: np.ndarray
    wh: np.ndarray  # (d, h * d_g)
    ffn: FfnParams


@dataclass
class HeadParams:
    """Projections for a single cross-set head; t3 is attention-variant only."""

    t1: np.ndarray  # (d_g, d)
    t2: np.ndarray
    t3: Optional[np.ndarray] = None


@dataclass
class CrossSetParams:
    variant: str
    t1: np.ndarray  # (h, d_g, d)
    t2: np.ndarray
    t3: Optional[np.ndarray]  # None for the affinity variant
    wh: np.ndarray  # (d, h * d_g)
    ffn: FfnParams

    def head(self, j: int) -> HeadParams:
        t3 = self.t3[j] if self.t3 is not None else None
        return HeadParams(self.t1[j], self.t2[j], t3)

    @property
    def h(self) -> int:
        return self.t1.shape[0]


@dataclass
class StackParams:
    """Alternating encoder / cross-set layers; may be empty (identity)."""

    encoders: list
    cross_layers: list
    variant: str = "attention"

    def __post_init__(self):
        if self.cross_layers and len(self.encoders) != len(self.cross_layers):
            raise ConfigurationError(
                "stack needs one cross-set layer per encoder layer"
            )

    @property
    def depth(self) -> int:
        return len(self.encoders)


@dataclass
class CSParams:
    """Multiple cross-similarity: h subspace projections and the combiner."""

    w: np.ndarray  # (h, d_w, d)
    wo: np.ndarray  # (h,)

    @property
    def h(self) -> int:
        return self.w.shape[0]


@dataclass
class PoolParams:
    """Single-seed attention pooling for the no-interaction baseline."""

    seed: np.ndarray  # (d,)
    q: np.ndarray  # (d, d)
    k: np.ndarray
    v: np.ndarray
    f: np.ndarray  # final linear map


# ---------------------------------------------------------------------------
# the flat parameter container


def block_shapes(cfg: ModelConfig) -> dict:
    """Canonical block name -> shape map for a configuration.

    The iteration order of this dict is the canonical serialization order.
    """
    d, h, dg, dw, hid = cfg.d, cfg.h, cfg.d_g, cfg.d_w, cfg.ffn_hidden
    shapes: dict = {"input.w": (d, cfg.d_in)}
    for i in range(cfg.L):
        shapes[f"enc{i}.wq"] = (h, dg, d)
        shapes[f"enc{i}.wk"] = (h, dg, d)
        shapes[f"enc{i}.wv"] = (h, dg, d)
        shapes[f"enc{i}.wh"] = (d, h * dg)
        shapes[f"enc{i}.ffn_w1"] = (hid, d)
        shapes[f"enc{i}.ffn_b1"] = (hid,)
        shapes[f"enc{i}.ffn_w2"] = (d, hid)
        shapes[f"enc{i}.ffn_b2"] = (d,)
        if cfg.variant != "baseline":
            shapes[f"cross{i}.t1"] = (h, dg, d)
            shapes[f"cross{i}.t2"] = (h, dg, d)
            if cfg.variant == "attention":
                shapes[f"cross{i}.t3"] = (h, dg, d)
            shapes[f"cross{i}.wh"] = (d, h * dg)
            shapes[f"cross{i}.ffn_w1"] = (hid, d)
            shapes[f"cross{i}.ffn_b1"] = (hid,)
            shapes[f"cross{i}.ffn_w2"] = (d, hid)
            shapes[f"cross{i}.ffn_b2"] = (d,)
    if cfg.variant == "baseline":
        shapes["pool.seed"] = (d,)
        shapes["pool.q"] = (d, d)
        shapes["pool.k"] = (d, d)
        shapes["pool.v"] = (d, d)
        shapes["pool.f"] = (d, d)
    else:
        shapes["mcs.w"] = (h, dw, d)
        shapes["mcs.wo"] = (h,)
    return shapes


def _init_block(name: str, shape: tuple, rng: SeededRng) -> np.ndarray:
    if name.endswith(("_b1", "_b2")):
        return np.zeros(shape)
    # The similarity combiner starts at zero so initial scores are exactly
    # zero: the K-pair loss then starts at ln K and the first update moves
    # the combiner toward whichever heads already separate the diagonal.
    if name == "mcs.wo":
        return np.zeros(shape)
    fan_in = shape[-1]
    std = 1.0 / np.sqrt(fan_in)
    # Keep initial pooled dot products order-one: the baseline score is
    # quadratic in this map, so a full-scale init saturates the loss.
    if name == "pool.f":
        std *= 0.1
    flat = rng.gaussian(1, int(np.prod(shape)), 0.0, std)
    return np.ascontiguousarray(flat.reshape(shape))


class ModelParams:
    """All weights of one model, as named GradSlot blocks plus config."""

    def __init__(self, config: ModelConfig, blocks: dict):
        self.config = config
        self.blocks = blocks

    @classmethod
    def init(cls, config: ModelConfig, seed: int = 0) -> "ModelParams":
        rng = SeededRng(seed) if not isinstance(seed, SeededRng) else seed
        blocks = {
            name: GradSlot(_init_block(name, shape, rng))
            for name, shape in block_shapes(config).items()
        }
        return cls(config, blocks)

    def __getitem__(self, name: str) -> GradSlot:
        return self.blocks[name]

    def value(self, name: str) -> np.ndarray:
        return self.blocks[name].value

    def zero_grads(self) -> None:
        for slot in self.blocks.values():
            slot.zero_grad()

    def copy(self) -> "ModelParams":
        blocks = {
            name: GradSlot(slot.value.copy(), slot.grad.copy())
            for name, slot in self.blocks.items()
        }
        return ModelParams(self.config, blocks)

    # views ------------------------------------------------------------

    def ffn_view(self, prefix: str) -> FfnParams:
        return FfnParams(
            self.value(f"{prefix}.ffn_w1"),
            self.value(f"{prefix}.ffn_b1"),
            self.value(f"{prefix}.ffn_w2"),
            self.value(f"{prefix}.ffn_b2"),
        )

    def encoder(self, i: int) -> EncoderParams:
        return EncoderParams(
            self.value(f"enc{i}.wq"),
            self.value(f"enc{i}.wk"),
            self.value(f"enc{i}.wv"),
            self.value(f"enc{i}.wh"),
            self.ffn_view(f"enc{i}"),
        )

    def cross(self, i: int) -> CrossSetParams:
        t3 = (
            self.value(f"cross{i}.t3")
            if self.config.variant == "attention"
            else None
        )
        return CrossSetParams(
            self.config.variant,
            self.value(f"cross{i}.t1"),
            self.value(f"cross{i}.t2"),
            t3,
            self.value(f"cross{i}.wh"),
            self.ffn_view(f"cross{i}"),
        )

    def stack(self) -> StackParams:
        if self.config.variant == "baseline":
            return StackParams(
                [self.encoder(i) for i in range(self.config.L)],
                [],
                "baseline",
            )
        return StackParams(
            [self.encoder(i) for i in range(self.config.L)],
            [self.cross(i) for i in range(self.config.L)],
            self.config.variant,
        )

    def cs_params(self) -> CSParams:
        return CSParams(self.value("mcs.w"), self.value("mcs.wo"))

    def pool_params(self) -> PoolParams:
        return PoolParams(
            self.value("pool.seed"),
            self.value("pool.q"),
            self.value("pool.k"),
            self.value("pool.v"),
            self.value("pool.f"),
        )
