"""Executable exchangeability suite.

Four properties, checked over many randomly drawn configurations and
inputs:

- score_invariance: the matching score ignores item order inside
  either set.
- score_symmetry: swapping the two sets leaves the score unchanged.
- feature_equivariance: permuting the items of either input permutes
  the extracted features the same way and does nothing else.
- pair_swap_consistency: running the feature extractor on (Y, X)
  returns exactly the swapped outputs of (X, Y).

The suite also powers a sensitivity self-test: ``mutation="unshared-cross"``
scores pairs through a deliberately broken extractor whose two per-layer
directions use different weights. Symmetry then fails, which is the defect
the shared-weight construction exists to rule out.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .cross import cross_set_layer, extract_features, multihead_g
from .encoder import encoder, ffn, input_project
from .errors import ConfigurationError
from .matching import mcs, score
from .numeric import SeededRng
from .params import ModelConfig, ModelParams
from .sets import FeatureSet

PROPERTIES = (
    "score_invariance",
    "score_symmetry",
    "feature_equivariance",
    "pair_swap_consistency",
)

MUTATIONS = (None, "none", "unshared-cross")

# deviations are judged against 1e-9 * (1 + |score|); feature-level
# checks use the same form with the largest feature magnitude
TOL_SCALE = 1e-9

DIMS = (8, 16, 32)
HEADS = (1, 2, 4)
VARIANTS = ("attention", "affinity", "baseline")


@dataclass
class PropertyResult:
    name: str
    checks: int = 0
    worst_deviation: float = 0.0
    worst_config: Optional[dict] = None
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def record(self, deviation: float, tol: float, config: dict) -> None:
        self.checks += 1
        if deviation > self.worst_deviation:
            self.worst_deviation = deviation
            self.worst_config = config
        if deviation > tol:
            self.failures.append(
                {"config": config, "deviation": deviation, "tolerance": tol}
            )


def _rand_set(rng: SeededRng, n: int, d: int) -> FeatureSet:
    return FeatureSet(rng.gaussian(n, d, 0.0, 1.0))


def _mutated_score(x0, y0, model: ModelParams, rogue: ModelParams) -> float:
    """Score through an extractor whose X-side and Y-side per-layer maps
    use different weights. Everything else matches the real model."""
    w_in = model.value("input.w")
    x = input_project(x0, w_in)
    y = input_project(y0, w_in)
    for i in range(model.config.L):
        enc = model.encoder(i)
        x = encoder(x, enc)
        y = encoder(y, enc)
        own = model.cross(i)
        other = rogue.cross(i)
        xf = ffn(x, own.ffn)
        yf = ffn(y, own.ffn)
        x = FeatureSet(x.items + multihead_g(xf, yf, own).items)
        y = FeatureSet(y.items + multihead_g(yf, xf, other).items)
    return mcs(x, y, model.cs_params())


def _check_score_properties(
    res_inv: PropertyResult,
    res_sym: PropertyResult,
    scorer,
    x: FeatureSet,
    y: FeatureSet,
    rng: SeededRng,
    config: dict,
) -> None:
    base = scorer(x, y)
    tol = TOL_SCALE * (1.0 + abs(base))
    px = rng.permutation(x.items.shape[0])
    py = rng.permutation(y.items.shape[0])
    permuted = scorer(x.permuted(px), y.permuted(py))
    res_inv.record(abs(permuted - base), tol, config)
    res_sym.record(abs(scorer(y, x) - base), tol, config)


def _check_feature_properties(
    res_eq: PropertyResult,
    res_swap: PropertyResult,
    model: ModelParams,
    x: FeatureSet,
    y: FeatureSet,
    rng: SeededRng,
    config: dict,
) -> None:
    w_in = model.value("input.w")
    xe, ye = input_project(x, w_in), input_project(y, w_in)
    stack = model.stack()
    xf, yf = extract_features(xe, ye, stack)
    scale = 1.0 + max(np.abs(xf.items).max(), np.abs(yf.items).max())
    tol = TOL_SCALE * scale

    px = rng.permutation(x.items.shape[0])
    py = rng.permutation(y.items.shape[0])
    xp, yp = extract_features(xe.permuted(px), ye.permuted(py), stack)
    dev = max(
        np.abs(xp.items - xf.permuted(px).items).max(),
        np.abs(yp.items - yf.permuted(py).items).max(),
    )
    res_eq.record(float(dev), tol, config)

    ys, xs = extract_features(ye, xe, stack)
    dev = max(
        np.abs(xs.items - xf.items).max(),
        np.abs(ys.items - yf.items).max(),
    )
    res_swap.record(float(dev), tol, config)


def _check_baseline_features(
    res_eq: PropertyResult,
    res_swap: PropertyResult,
    model: ModelParams,
    x: FeatureSet,
    y: FeatureSet,
    rng: SeededRng,
    config: dict,
) -> None:
    """The no-interaction model has per-set features only: the encoder
    tower must be equivariant and the pooled vector order-free."""
    from .matching import baseline_pool

    w_in = model.value("input.w")
    pool = model.pool_params()
    vecs = {}
    for tag, s in (("x", x), ("y", y)):
        enc = input_project(s, w_in)
        for layer in model.stack().encoders:
            enc = encoder(enc, layer)
        perm = rng.permutation(s.items.shape[0])
        enc_p = input_project(s.permuted(perm), w_in)
        for layer in model.stack().encoders:
            enc_p = encoder(enc_p, layer)
        scale = 1.0 + np.abs(enc.items).max()
        dev = np.abs(enc_p.items - enc.permuted(perm).items).max()
        res_eq.record(float(dev), TOL_SCALE * scale, config)

        pooled = baseline_pool(enc, pool, model.config.pool)
        pooled_p = baseline_pool(enc_p, pool, model.config.pool)
        scale = 1.0 + np.abs(pooled).max()
        vecs[tag] = (pooled, pooled_p)
        res_swap.record(
            float(np.abs(pooled_p - pooled).max()), TOL_SCALE * scale, config
        )


def run_suite(
    trials: int = 120,
    base_seed: int = 0,
    mutation: Optional[str] = None,
) -> dict:
    """Run every property over ``trials`` random configurations.

    Returns a report dict; ``report["pass"]`` is the overall verdict.
    """
    if trials < 1:
        raise ConfigurationError(f"trials must be >= 1, got {trials}")
    if mutation not in MUTATIONS:
        raise ConfigurationError(f"unknown mutation {mutation!r}")
    mutate = mutation == "unshared-cross"

    t0 = time.perf_counter()
    results = {name: PropertyResult(name) for name in PROPERTIES}
    for trial in range(trials):
        rng = SeededRng(base_seed).child(trial)
        d = int(DIMS[int(rng.integers(0, len(DIMS)))])
        h = int(HEADS[int(rng.integers(0, len(HEADS)))])
        variant = VARIANTS[trial % len(VARIANTS)]
        if mutate:
            variant = "attention" if trial % 2 else "affinity"
        L = int(rng.integers(1, 3))
        n = int(rng.integers(1, 7))
        m = int(rng.integers(1, 7))
        d_in = int(rng.integers(2, 9))
        cfg = ModelConfig(d=d, d_in=d_in, h=h, L=L, variant=variant)
        model = ModelParams.init(cfg, seed=base_seed * 7919 + trial)
        if variant != "baseline":
            # the combiner initializes to zero, which would make every
            # score-level check vacuously 0 == 0; draw a live one
            model["mcs.wo"].value[...] = rng.gaussian(
                1, h, 0.0, 1.0 / np.sqrt(h)
            )[0]
        config = {
            "trial": trial,
            "seed": base_seed,
            "d": d,
            "d_in": d_in,
            "h": h,
            "L": L,
            "variant": variant,
            "n": n,
            "m": m,
        }
        x = _rand_set(rng, n, d_in)
        y = _rand_set(rng, m, d_in)

        if mutate:
            rogue = ModelParams.init(cfg, seed=base_seed * 7919 + trial + 10_000)
            scorer = lambda a, b: _mutated_score(a, b, model, rogue)
        else:
            scorer = lambda a, b: score(a, b, model)
        _check_score_properties(
            results["score_invariance"],
            results["score_symmetry"],
            scorer,
            x,
            y,
            rng,
            config,
        )
        if variant == "baseline":
            _check_baseline_features(
                results["feature_equivariance"],
                results["pair_swap_consistency"],
                model,
                x,
                y,
                rng,
                config,
            )
        elif not mutate:
            _check_feature_properties(
                results["feature_equivariance"],
                results["pair_swap_consistency"],
                model,
                x,
                y,
                rng,
                config,
            )

    elapsed = time.perf_counter() - t0
    report = {
        "command": "propcheck",
        "trials": trials,
        "mutation": mutation or "none",
        "tolerance": "1e-9 * (1 + max |value|)",
        "elapsed_seconds": elapsed,
        "properties": {},
        "pass": True,
    }
    for name, res in results.items():
        report["properties"][name] = {
            "pass": res.passed,
            "checks": res.checks,
            "worst_deviation": res.worst_deviation,
            "worst_config": res.worst_config,
            "failures": res.failures[:5],
            "failure_count": len(res.failures),
        }
        if not res.passed:
            report["pass"] = False
    return report


def format_report(report: dict) -> str:
    lines = [
        f"propcheck: {report['trials']} configurations, "
        f"{report['elapsed_seconds']:.2f}s"
    ]
    for name, entry in report["properties"].items():
        verdict = "pass" if entry["pass"] else "FAIL"
        lines.append(
            f"  {name:24s} {verdict}  checks={entry['checks']:4d}  "
            f"worst deviation={entry['worst_deviation']:.3e}"
        )
        for failure in entry["failures"]:
            lines.append(
                f"    violation at {json.dumps(failure['config'])}: "
                f"{failure['deviation']:.3e} > {failure['tolerance']:.3e}"
            )
    lines.append("overall: " + ("pass" if report["pass"] else "FAIL"))
    return "\n".join(lines)
