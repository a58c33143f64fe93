"""Input projection, per-item feed-forward net, and the self-attention
encoder block.

These are the single-pair reference forms working directly on
``FeatureSet``; training goes through the batched engine instead. Both
compute the same functions and the tests hold them to each other.
"""

import numpy as np

from .errors import ShapeError
from .numeric import leaky_relu, softmax_row
from .params import EncoderParams, FfnParams
from .sets import FeatureSet


def _weight(w):
    return getattr(w, "value", w)


def input_project(raw: FeatureSet, w_in) -> FeatureSet:
    """Map every item by the same linear transform (d_in -> d).

    Stands in for a learned front end; labels and item order ride along.
    """
    w = _weight(w_in)
    if raw.width != w.shape[1]:
        raise ShapeError("input width mismatch", raw.items.shape, w.shape)
    return raw.with_items(raw.items @ w.T)


def ffn(x: FeatureSet, params: FfnParams) -> FeatureSet:
    if x.width != params.w1.shape[1]:
        raise ShapeError("ffn width mismatch", x.items.shape, params.w1.shape)
    hidden = leaky_relu(x.items @ params.w1.T + params.b1, params.slope)
    return x.with_items(hidden @ params.w2.T + params.b2)


def _self_attention(items: np.ndarray, params: EncoderParams) -> np.ndarray:
    h, dg, _ = params.wq.shape
    heads = []
    for j in range(h):
        q = items @ params.wq[j].T
        k = items @ params.wk[j].T
        v = items @ params.wv[j].T
        att = softmax_row(q @ k.T / np.sqrt(dg))
        heads.append(att @ v)
    return np.concatenate(heads, axis=1) @ params.wh.T


def encoder(x: FeatureSet, params: EncoderParams) -> FeatureSet:
    """Residual self-attention block: z = x + att(x); out = z + ffn(z)."""
    if x.width != params.wq.shape[2]:
        raise ShapeError(
            "encoder width mismatch", x.items.shape, params.wq.shape
        )
    z = x.items + _self_attention(x.items, params)
    zset = x.with_items(z)
    return x.with_items(z + ffn(zset, params.ffn).items)
