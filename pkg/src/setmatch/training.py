"""Candidate-batch training: losses over the score matrix, SGD with
momentum and step decay, the epoch loop, and argmax-accuracy evaluation.

A training unit is K correct pairs; cross-pairing them gives a K x K
score matrix whose diagonal holds the true matches. The K-pair loss is
row-wise softmax cross-entropy against the diagonal; the triplet loss
compares each diagonal score against one sampled off-diagonal negative
through a softplus margin.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

import numpy as np

from . import engine
from .errors import (
    ConfigurationError,
    NonFiniteLossError,
    OptimizerError,
    PreconditionError,
)
from .numeric import SeededRng
from .params import ModelParams
from .sets import FeatureSet

LOSS_KINDS = ("kpair", "triplet")


@dataclass
class CandidateBatch:
    """K correct set pairs; pair j's partner is the only match for its row."""

    pairs: list

    def __post_init__(self):
        if len(self.pairs) < 2:
            raise PreconditionError("candidate batch needs K >= 2 pairs")

    @property
    def k(self) -> int:
        return len(self.pairs)

    def item_lists(self):
        xs = [p[0].items for p in self.pairs]
        ys = [p[1].items for p in self.pairs]
        return xs, ys


@dataclass
class TrainConfig:
    lr0: float = 0.005
    momentum: float = 0.5
    weight_decay: float = 4e-5
    decay_factor: float = 0.7
    decay_every: int = 16
    k: int = 16
    epochs: int = 64
    loss_kind: str = "kpair"
    symmetric_loss: bool = False
    # Cap on the global gradient norm. Healthy batches here sit around
    # norm 2-3; rare hard batches spike 20x and can snowball the weights
    # within one epoch at the configured learning rate, so the cap only
    # engages on those outliers. None disables it.
    clip_norm: Optional[float] = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ConfigurationError(f"lr0 must be positive, got {self.lr0}")
        if not 0 <= self.momentum < 1:
            raise ConfigurationError(f"momentum out of [0,1): {self.momentum}")
        if self.decay_every < 1:
            raise ConfigurationError("decay_every must be >= 1")
        if self.loss_kind not in LOSS_KINDS:
            raise ConfigurationError(f"unknown loss kind {self.loss_kind!r}")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ConfigurationError(
                f"clip_norm must be positive or None, got {self.clip_norm}"
            )

    def to_dict(self) -> dict:
        return {
            "lr0": self.lr0,
            "momentum": self.momentum,
            "weight_decay": self.weight_decay,
            "decay_factor": self.decay_factor,
            "decay_every": self.decay_every,
            "k": self.k,
            "epochs": self.epochs,
            "loss_kind": self.loss_kind,
            "symmetric_loss": self.symmetric_loss,
            "clip_norm": self.clip_norm,
            "seed": self.seed,
        }


@dataclass
class OptimizerState:
    velocities: dict
    momentum: float
    weight_decay: float
    epoch: int = 0
    rng: SeededRng = None

    @classmethod
    def init(cls, model: ModelParams, cfg: TrainConfig) -> "OptimizerState":
        vel = {
            name: np.zeros_like(slot.value)
            for name, slot in model.blocks.items()
        }
        return cls(
            velocities=vel,
            momentum=cfg.momentum,
            weight_decay=cfg.weight_decay,
            rng=SeededRng(cfg.seed).child(101),
        )


@dataclass
class EpochMetrics:
    epoch: int
    mean_loss: float
    lr: float
    train_acc: float
    val_acc: Optional[float] = None
    wall_ms: float = 0.0


# ---------------------------------------------------------------------------
# losses


def score_matrix(batch: CandidateBatch, model: ModelParams, scorer=None):
    """S[j, k] = score(X_j, Y_k). A scorer callable overrides the model."""
    if scorer is None:
        xs, ys = batch.item_lists()
        return engine.score_matrix_fwd(model, xs, ys)[0]
    k = batch.k
    s = np.empty((k, k))
    for j in range(k):
        for c in range(k):
            s[j, c] = scorer(batch.pairs[j][0], batch.pairs[c][1])
    return s


def _row_softmax_loss(s: np.ndarray):
    k = s.shape[0]
    m = s.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(s - m).sum(axis=1))
    loss = float((lse - np.diag(s)).mean())
    probs = np.exp(s - m)
    probs /= probs.sum(axis=1, keepdims=True)
    grad = probs / k
    grad[np.arange(k), np.arange(k)] -= 1.0 / k
    return loss, grad


def kpair_set_loss(s: np.ndarray, symmetric: bool = False) -> float:
    """Mean row-wise cross-entropy of the diagonal under softmax.

    ``symmetric`` averages in the column-wise term as well.
    """
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise PreconditionError(f"score matrix must be square, got {s.shape}")
    loss, _ = _row_softmax_loss(s)
    if symmetric:
        loss = 0.5 * (loss + _row_softmax_loss(s.T)[0])
    return loss


def kpair_set_grad(s: np.ndarray, symmetric: bool = False):
    loss, grad = _row_softmax_loss(s)
    if symmetric:
        loss_c, grad_c = _row_softmax_loss(s.T)
        loss = 0.5 * (loss + loss_c)
        grad = 0.5 * (grad + grad_c.T)
    return loss, grad


def triplet_softplus_loss(s_pos: float, s_neg: float) -> float:
    """Soft-margin triplet on similarity scores: ln(1 + exp(s_neg - s_pos))."""
    return float(np.logaddexp(0.0, s_neg - s_pos))


def _triplet_batch_grad(s: np.ndarray):
    """Softplus triplet over every (anchor, wrong-candidate) pair.

    Averaging over all K-1 negatives per anchor keeps the per-pair step
    small and leaves well-separated anchors untouched, which matters for
    stability at the configured learning rate.
    """
    k = s.shape[0]
    rows = np.arange(k)
    gap = s - np.diag(s)[:, None]
    off = ~np.eye(k, dtype=bool)
    terms = np.logaddexp(0.0, gap[off])
    loss = float(terms.mean())
    # sigmoid via logaddexp to avoid overflow at large |gap|
    sig = np.exp(gap - np.logaddexp(0.0, gap)) / (k * (k - 1))
    grad = np.where(off, sig, 0.0)
    grad[rows, rows] = -grad.sum(axis=1)
    return loss, grad


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    if epoch < 0:
        raise PreconditionError(f"epoch must be >= 0, got {epoch}")
    return cfg.lr0 * cfg.decay_factor ** (epoch // cfg.decay_every)


# ---------------------------------------------------------------------------
# optimizer and epoch loop


def sgd_update(model: ModelParams, grads: dict, state: OptimizerState, lr: float):
    """v <- m v + (g + wd theta); theta <- theta - lr v, per block."""
    for name, slot in model.blocks.items():
        g = grads[name]
        if g.shape != slot.value.shape:
            raise OptimizerError(
                f"gradient shape {g.shape} != parameter shape "
                f"{slot.value.shape} for block {name}"
            )
        v = state.velocities[name]
        v *= state.momentum
        v += g + state.weight_decay * slot.value
        slot.value -= lr * v
    return model, state


def _batch_loss_grad(s, cfg: TrainConfig, state: OptimizerState):
    if cfg.loss_kind == "kpair":
        return kpair_set_grad(s, cfg.symmetric_loss)
    return _triplet_batch_grad(s)


def clip_gradients(grads: dict, max_norm: Optional[float]) -> float:
    """Rescale all blocks in place so the global norm is <= max_norm.

    Returns the pre-clip global norm.
    """
    total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if max_norm is not None and total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return float(total)


def train_epoch(
    model: ModelParams,
    data_stream: Iterable[CandidateBatch],
    cfg: TrainConfig,
    state: OptimizerState,
) -> EpochMetrics:
    """One pass over the stream: score, loss, backward, SGD step per batch."""
    t0 = time.perf_counter()
    lr = lr_schedule(state.epoch, cfg)
    losses = []
    hits = 0
    rows = 0
    for index, batch in enumerate(data_stream):
        xs, ys = batch.item_lists()
        s, cache = engine.score_matrix_fwd(model, xs, ys)
        if not np.isfinite(s).all():
            raise NonFiniteLossError(
                f"non-finite score matrix in batch {index}", index
            )
        loss, ds = _batch_loss_grad(s, cfg, state)
        if not np.isfinite(loss):
            raise NonFiniteLossError(
                f"non-finite loss {loss} in batch {index}", index
            )
        hits += int((s.argmax(axis=1) == np.arange(batch.k)).sum())
        rows += batch.k
        losses.append(loss)
        model.zero_grads()
        engine.score_matrix_bwd(ds, cache, model)
        grads = {name: slot.grad for name, slot in model.blocks.items()}
        clip_gradients(grads, cfg.clip_norm)
        sgd_update(model, grads, state, lr)
    metrics = EpochMetrics(
        epoch=state.epoch,
        mean_loss=float(np.mean(losses)) if losses else 0.0,
        lr=lr,
        train_acc=hits / rows if rows else 0.0,
        wall_ms=(time.perf_counter() - t0) * 1e3,
    )
    state.epoch += 1
    return metrics


def evaluate_accuracy(
    model: ModelParams,
    eval_batches: Iterable[CandidateBatch],
    scorer: Optional[Callable[[FeatureSet, FeatureSet], float]] = None,
) -> float:
    """Fraction of rows whose best-scoring candidate is the true partner.

    argmax ties resolve to the lowest column index.
    """
    hits = 0
    rows = 0
    for batch in eval_batches:
        s = score_matrix(batch, model, scorer)
        hits += int((s.argmax(axis=1) == np.arange(batch.k)).sum())
        rows += batch.k
    if rows == 0:
        raise PreconditionError("no evaluation batches supplied")
    return hits / rows
