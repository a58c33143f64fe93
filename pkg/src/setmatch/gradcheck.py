"""Per-block gradient verification against the finite-difference oracle.

Builds a small model and a K-candidate batch of random sets, computes
the training loss gradient by backpropagation, then re-derives every
parameter block's gradient by central differences on the loss itself.
Central differences cost two full forward passes per scalar parameter,
which is why the width is capped: the check is meant for desk-scale
configurations where the oracle stays cheap and exact.
"""

from __future__ import annotations

import time
from typing import Optional

import numpy as np

from . import engine
from .errors import ConfigurationError
from .numeric import SeededRng, finite_diff_grad
from .params import ModelConfig, ModelParams
from .training import TrainConfig, _triplet_batch_grad, kpair_set_grad, kpair_set_loss

MAX_WIDTH = 8
THRESHOLD = 1e-5


def _loss_fn(loss_kind: str):
    if loss_kind == "kpair":
        return kpair_set_loss, lambda s: kpair_set_grad(s)[1]
    if loss_kind == "triplet":
        return (
            lambda s: _triplet_batch_grad(s)[0],
            lambda s: _triplet_batch_grad(s)[1],
        )
    raise ConfigurationError(f"unknown loss kind {loss_kind!r}")


def run_gradcheck(
    d: int = 8,
    d_in: int = 4,
    h: int = 2,
    L: int = 2,
    k: int = 3,
    variant: str = "attention",
    pool: str = "attention",
    loss_kind: str = "kpair",
    seed: int = 0,
    eps: float = 1e-6,
) -> dict:
    """Check d(loss)/d(block) for every block; returns a report dict."""
    if d > MAX_WIDTH:
        raise ConfigurationError(
            f"gradient checking is capped at d <= {MAX_WIDTH}, got {d}"
        )
    if k < 2:
        raise ConfigurationError(f"need at least 2 candidates, got {k}")
    t0 = time.perf_counter()
    config_echo = {
        "d": d,
        "d_in": d_in,
        "h": h,
        "L": L,
        "k": k,
        "variant": variant,
        "pool": pool,
        "loss_kind": loss_kind,
        "seed": seed,
        "eps": eps,
    }
    if L == 0:
        # a depth-zero extractor has no parameters to check
        return {
            "command": "gradcheck",
            "config": config_echo,
            "threshold": THRESHOLD,
            "blocks": {},
            "worst": None,
            "note": "no parameters at depth 0; nothing to verify",
            "elapsed_seconds": time.perf_counter() - t0,
            "pass": True,
        }

    loss_of, grad_of = _loss_fn(loss_kind)
    cfg = ModelConfig(d=d, d_in=d_in, h=h, L=L, variant=variant, pool=pool)
    model = ModelParams.init(cfg, seed=seed)
    # the combiner initializes at zero, where the loss is locally flat in
    # several blocks; nudge all weights so every gradient path is live
    jitter = SeededRng(seed).child(3)
    for slot in model.blocks.values():
        slot.value += jitter.gaussian(
            1, slot.value.size, 0.0, 0.05
        ).reshape(slot.value.shape)

    rng = SeededRng(seed).child(7)
    xs = [
        rng.gaussian(int(rng.integers(1, 5)), d_in, 0.0, 1.0) for _ in range(k)
    ]
    ys = [
        rng.gaussian(int(rng.integers(1, 5)), d_in, 0.0, 1.0) for _ in range(k)
    ]

    model.zero_grads()
    s, cache = engine.score_matrix_fwd(model, xs, ys)
    engine.score_matrix_bwd(grad_of(s), cache, model)
    analytic = {name: slot.grad.copy() for name, slot in model.blocks.items()}

    blocks = {}
    worst: Optional[dict] = None
    for name, slot in model.blocks.items():
        original = slot.value.copy()

        def f(theta, _slot=slot, _orig=original):
            _slot.value[...] = theta
            val = loss_of(engine.score_matrix_fwd(model, xs, ys)[0])
            _slot.value[...] = _orig
            return val

        fd = finite_diff_grad(f, original, eps=eps)
        denom = max(np.abs(analytic[name]).max(), np.abs(fd).max(), 1e-12)
        rel = float(np.abs(analytic[name] - fd).max() / denom)
        blocks[name] = {"rel_err": rel, "pass": rel <= THRESHOLD}
        if worst is None or rel > worst["rel_err"]:
            worst = {"block": name, "rel_err": rel}

    return {
        "command": "gradcheck",
        "config": config_echo,
        "threshold": THRESHOLD,
        "blocks": blocks,
        "worst": worst,
        "elapsed_seconds": time.perf_counter() - t0,
        "pass": all(entry["pass"] for entry in blocks.values()),
    }


def format_report(report: dict) -> str:
    lines = [
        f"gradcheck: variant={report['config']['variant']} "
        f"d={report['config']['d']} L={report['config']['L']} "
        f"k={report['config']['k']} loss={report['config']['loss_kind']} "
        f"({report['elapsed_seconds']:.2f}s)"
    ]
    if not report["blocks"]:
        lines.append("  " + report.get("note", "no blocks"))
    for name, entry in report["blocks"].items():
        verdict = "pass" if entry["pass"] else "FAIL"
        lines.append(f"  {name:16s} {verdict}  rel err={entry['rel_err']:.3e}")
    if report["worst"]:
        lines.append(
            f"worst block: {report['worst']['block']} "
            f"({report['worst']['rel_err']:.3e}, threshold {report['threshold']:.0e})"
        )
    lines.append("overall: " + ("pass" if report["pass"] else "FAIL"))
    return "\n".join(lines)
