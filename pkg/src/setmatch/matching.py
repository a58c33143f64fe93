"""Matching scores: cross-similarity heads and the pooled-vector baseline.

``cs`` averages relu-clipped inner products over every cross-set item
pair in a learned subspace, which makes it symmetric and order-free by
construction. ``model_score`` composes it with the interaction feature
extractor; ``baseline_score`` pools each set to one vector with shared
weights and takes a dot product, providing the no-interaction control.
"""

import numpy as np

from .cross import extract_features
from .encoder import encoder, input_project
from .errors import ConfigurationError, ShapeError
from .numeric import relu_clip, softmax_row
from .params import CSParams, ModelParams, PoolParams
from .sets import FeatureSet


def cs(x: FeatureSet, y: FeatureSet, w) -> float:
    w = getattr(w, "value", w)
    if x.width != w.shape[1] or y.width != w.shape[1]:
        raise ShapeError("cs width mismatch", x.items.shape, w.shape)
    d_w = w.shape[0]
    px = x.items @ w.T
    py = y.items @ w.T
    return float(relu_clip(px @ py.T / np.sqrt(d_w)).mean())


def mcs(x: FeatureSet, y: FeatureSet, params: CSParams) -> float:
    return float(
        sum(
            params.wo[j] * cs(x, y, params.w[j])
            for j in range(params.h)
        )
    )


def model_score(x0: FeatureSet, y0: FeatureSet, model: ModelParams) -> float:
    """Full interaction-model score; symmetric and invariant to item order."""
    if model.config.variant == "baseline":
        raise ConfigurationError(
            "model_score needs an interaction variant; use baseline_score"
        )
    w_in = model.value("input.w")
    xf, yf = extract_features(
        input_project(x0, w_in), input_project(y0, w_in), model.stack()
    )
    return mcs(xf, yf, model.cs_params())


def baseline_pool(
    x: FeatureSet, params: PoolParams, kind: str = "attention"
) -> np.ndarray:
    """Collapse a set to one vector.

    ``attention`` weighs items by a single learned seed query; ``mean``
    is the unweighted ablation (seed/query/key blocks unused).
    """
    d = params.seed.shape[0]
    if x.width != d:
        raise ShapeError("pool width mismatch", x.items.shape, (d,))
    if kind == "mean":
        return params.f @ (x.items.mean(axis=0) @ params.v.T)
    qv = params.q @ params.seed
    scores = (x.items @ params.k.T) @ qv / np.sqrt(d)
    att = softmax_row(scores[None, :])[0]
    return params.f @ (att @ (x.items @ params.v.T))


def baseline_score(x0: FeatureSet, y0: FeatureSet, model: ModelParams) -> float:
    """Dot product of pooled encodings; no cross-set interaction anywhere."""
    if model.config.variant != "baseline":
        raise ConfigurationError("baseline_score needs variant='baseline'")
    w_in = model.value("input.w")
    pool = model.pool_params()
    vecs = []
    for s in (x0, y0):
        enc = input_project(s, w_in)
        for layer in model.stack().encoders:
            enc = encoder(enc, layer)
        vecs.append(baseline_pool(enc, pool, model.config.pool))
    return float(vecs[0] @ vecs[1])


def score(x0: FeatureSet, y0: FeatureSet, model: ModelParams) -> float:
    """Variant dispatch used by evaluation code."""
    if model.config.variant == "baseline":
        return baseline_score(x0, y0, model)
    return model_score(x0, y0, model)
