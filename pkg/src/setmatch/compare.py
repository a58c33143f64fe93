"""Single training runs and baseline-vs-cross comparison sweeps.

``execute_run`` is the one place a (task, variant, seed) combination
turns into pools, a model, an epoch loop, and per-epoch metrics; the
CLI's train command and the comparison sweep both call it, so a sweep
run and a standalone run with the same spec produce identical numbers.

``run_compare`` trains every variant on identical data streams (pools
are built once per seed and condition, then reused across variants) and
reports per-variant means plus the ordering verdicts the synthetic tasks
are designed to probe: interaction models against the pooling baseline,
and accuracy decay along the re-identification noise grid.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigurationError
from .numeric import SeededRng
from .params import ModelConfig, ModelParams
from .synthdata import GenConfig, make_pool
from .training import (
    EpochMetrics,
    OptimizerState,
    TrainConfig,
    evaluate_accuracy,
    train_epoch,
)

TASKS = ("subset", "superset", "reid")

# per-task training defaults: candidates per batch and loss kind
TASK_K = {"subset": 16, "superset": 4, "reid": 16}
TASK_LOSS = {"subset": "triplet", "superset": "kpair", "reid": "kpair"}

# noise grid for the re-identification sweep, mildest first:
# (distractors/persons on side x, same on side y)
REID_CONDITIONS = (
    ("0/3", "0/3"),
    ("0/3", "1/4"),
    ("0/3", "3/6"),
    ("5/8", "5/8"),
)


def task_defaults(task: str) -> dict:
    if task not in TASKS:
        raise ConfigurationError(f"unknown task {task!r}")
    return {"k": TASK_K[task], "loss_kind": TASK_LOSS[task]}


@dataclass
class RunResult:
    task: str
    variant: str
    seed: int
    metrics: list
    final_val_acc: float
    model: ModelParams
    wall_seconds: float


def build_pools(
    task: str,
    gen_cfg: GenConfig,
    k: int,
    train_units: int,
    val_units: int,
    seed: int,
    mix: int = 2,
    noise_x: str = "0/3",
    noise_y: str = "0/3",
):
    """Train and validation pools from documented child streams of ``seed``."""
    kwargs = {"mix": mix, "noise_x": noise_x, "noise_y": noise_y}
    train = make_pool(task, gen_cfg, k, train_units, SeededRng(seed).child(1), **kwargs)
    val = make_pool(task, gen_cfg, k, val_units, SeededRng(seed).child(2), **kwargs)
    return train, val


def execute_run(
    task: str,
    variant: str,
    seed: int,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    gen_cfg: GenConfig,
    mix: int = 2,
    noise_x: str = "0/3",
    noise_y: str = "0/3",
    train_units: int = 2048,
    val_units: int = 512,
    pools=None,
    on_epoch=None,
) -> RunResult:
    """Train one model to completion and evaluate every epoch.

    ``pools`` short-circuits generation when the caller already built
    (train, val) for this seed; the sweep uses that to guarantee every
    variant sees byte-identical data.
    """
    t0 = time.perf_counter()
    if pools is None:
        pools = build_pools(
            task, gen_cfg, train_cfg.k, train_units, val_units, seed,
            mix=mix, noise_x=noise_x, noise_y=noise_y,
        )
    train_pool, val_pool = pools
    model = ModelParams.init(model_cfg, seed=seed)
    state = OptimizerState.init(model, train_cfg)
    metrics = []
    final_val = float("nan")
    for _ in range(train_cfg.epochs):
        em = train_epoch(model, train_pool, train_cfg, state)
        final_val = evaluate_accuracy(model, val_pool)
        em.val_acc = final_val
        metrics.append(em)
        if on_epoch is not None:
            on_epoch(em, model)
    if train_cfg.epochs == 0:
        final_val = evaluate_accuracy(model, val_pool)
    return RunResult(
        task=task,
        variant=variant,
        seed=seed,
        metrics=metrics,
        final_val_acc=final_val,
        model=model,
        wall_seconds=time.perf_counter() - t0,
    )


def _condition_tag(noise_x: str, noise_y: str) -> str:
    return f"({noise_x},{noise_y})"


def run_compare(
    task: str,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    gen_cfg: GenConfig,
    seeds=(0, 1, 2),
    variants=("attention", "affinity", "baseline"),
    conditions=None,
    mix: int = 2,
    train_units: int = 2048,
    val_units: int = 512,
    progress=None,
) -> dict:
    """Train variants x seeds (x noise conditions for reid); build the
    comparison report with means, spreads, and ordering verdicts."""
    if task not in TASKS:
        raise ConfigurationError(f"unknown task {task!r}")
    if len(seeds) < 3:
        raise ConfigurationError("comparison needs at least 3 seeds")
    if conditions is None:
        conditions = list(REID_CONDITIONS) if task == "reid" else [("0/3", "0/3")]
    t0 = time.perf_counter()

    grid: dict = {}
    runs = []
    for noise_x, noise_y in conditions:
        tag = _condition_tag(noise_x, noise_y)
        grid[tag] = {v: {"per_seed": {}, "mean": None, "spread": None} for v in variants}
        for seed in seeds:
            cfg_s = GenConfig(**{**gen_cfg.to_dict(), "seed": seed})
            tcfg_s = TrainConfig(**{**train_cfg.to_dict(), "seed": seed})
            pools = build_pools(
                task, cfg_s, tcfg_s.k, train_units, val_units, seed,
                mix=mix, noise_x=noise_x, noise_y=noise_y,
            )
            for variant in variants:
                mcfg_v = ModelConfig(
                    **{**model_cfg.to_dict(), "variant": variant}
                )
                result = execute_run(
                    task, variant, seed, mcfg_v, tcfg_s, cfg_s,
                    mix=mix, noise_x=noise_x, noise_y=noise_y,
                    pools=pools,
                )
                grid[tag][variant]["per_seed"][str(seed)] = result.final_val_acc
                runs.append(result)
                if progress is not None:
                    progress(
                        f"{tag} {variant} seed{seed}: "
                        f"val_acc={result.final_val_acc:.3f} "
                        f"({result.wall_seconds:.0f}s)"
                    )
        for variant in variants:
            accs = list(grid[tag][variant]["per_seed"].values())
            grid[tag][variant]["mean"] = float(np.mean(accs))
            grid[tag][variant]["spread"] = float(np.max(accs) - np.min(accs))

    report = {
        "command": "compare",
        "task": task,
        "seeds": [int(s) for s in seeds],
        "variants": list(variants),
        "conditions": [_condition_tag(x, y) for x, y in conditions],
        "grid": grid,
        "elapsed_seconds": time.perf_counter() - t0,
    }
    report["verdicts"] = _verdicts(task, grid, variants, report["conditions"])
    return report, runs


def _verdicts(task: str, grid: dict, variants, condition_tags) -> dict:
    """Ordering checks, phrased as data rather than pass/fail prose."""
    cross = [v for v in variants if v != "baseline"]
    verdicts: dict = {}
    if "baseline" in variants and cross:
        first = condition_tags[0]
        base_mean = grid[first]["baseline"]["mean"]
        verdicts["cross_beats_baseline"] = {
            v: grid[first][v]["mean"] > base_mean for v in cross
        }
        verdicts["margins_pp"] = {
            v: 100.0 * (grid[first][v]["mean"] - base_mean) for v in cross
        }
    if task == "reid" and len(condition_tags) > 1:
        verdicts["monotone_decay"] = {}
        for v in variants:
            means = [grid[tag][v]["mean"] for tag in condition_tags]
            verdicts["monotone_decay"][v] = all(
                later <= earlier + 1e-12
                for earlier, later in zip(means, means[1:])
            )
        last = condition_tags[-1]
        if "baseline" in variants and cross:
            base_last = grid[last]["baseline"]["mean"]
            verdicts["cross_beats_baseline_noisiest"] = {
                v: grid[last][v]["mean"] > base_last for v in cross
            }
    return verdicts
