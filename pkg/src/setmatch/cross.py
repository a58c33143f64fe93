"""Cross-set transformation: the interaction maps g, their multihead
merge, the paired layer that applies g in both directions with one set of
weights, and the stacked feature extractor.

Weight sharing across the two directions is what makes the downstream
score symmetric; ``cross_set_layer`` therefore takes a single
``CrossSetParams`` and uses it for both calls.
"""

import numpy as np

from .encoder import encoder, ffn
from .errors import ConfigurationError, ShapeError
from .numeric import relu_clip
from .params import CrossSetParams, HeadParams, StackParams
from .sets import FeatureSet


def _check_widths(x: FeatureSet, y: FeatureSet, d: int) -> None:
    if x.width != d or y.width != d:
        raise ShapeError(
            "item width mismatch", x.items.shape, y.items.shape
        )


def g_attention(x: FeatureSet, y: FeatureSet, head: HeadParams) -> FeatureSet:
    """Relu-average attention over the other set.

    out_n = (1/|Y|) sum_y relu(<t1 x_n, t2 y> / sqrt(d_g)) t3 y. The relu
    weights are deliberately not softmax-normalized, so aligned pairs
    raise the output magnitude instead of competing for mass.
    """
    _check_widths(x, y, head.t1.shape[1])
    dg = head.t1.shape[0]
    xb = x.items @ head.t1.T
    y2 = y.items @ head.t2.T
    y3 = y.items @ head.t3.T
    weights = relu_clip(xb @ y2.T / np.sqrt(dg))
    return x.with_items(weights @ y3 / len(y))


def g_affinity(x: FeatureSet, y: FeatureSet, head: HeadParams) -> FeatureSet:
    """Affinity form: average of x's projection and its relu-weighted
    neighborhood in Y's projection, sharing t2 for keys and values."""
    _check_widths(x, y, head.t1.shape[1])
    dg = head.t1.shape[0]
    xb = x.items @ head.t1.T
    yb = y.items @ head.t2.T
    weights = relu_clip(xb @ yb.T / np.sqrt(dg))
    return x.with_items(0.5 * (xb + weights @ yb / len(y)))


_G_FORMS = {"attention": g_attention, "affinity": g_affinity}


def multihead_g(x: FeatureSet, y: FeatureSet, params: CrossSetParams) -> FeatureSet:
    h, dg, d = params.t1.shape
    if h * dg != params.wh.shape[1] or params.wh.shape[0] != d:
        raise ConfigurationError(
            f"head merge expects ({d}, {h}*{dg}), got {params.wh.shape}"
        )
    g = _G_FORMS[params.variant]
    heads = [g(x, y, params.head(j)).items for j in range(h)]
    return x.with_items(np.concatenate(heads, axis=1) @ params.wh.T)


def cross_set_layer(x: FeatureSet, y: FeatureSet, params: CrossSetParams):
    """One interaction layer: shared FFN on each set, then g in both
    directions with the same weights, each wrapped in a residual."""
    xf = ffn(x, params.ffn)
    yf = ffn(y, params.ffn)
    x_out = x.with_items(x.items + multihead_g(xf, yf, params).items)
    y_out = y.with_items(y.items + multihead_g(yf, xf, params).items)
    return x_out, y_out


def extract_features(x0: FeatureSet, y0: FeatureSet, params: StackParams):
    """Alternate shared-weight encoders and cross-set layers L times.

    An empty stack is the identity. Both sets pass through the same
    encoder weights at each depth.
    """
    x, y = x0, y0
    for enc, cross in zip(params.encoders, params.cross_layers):
        x = encoder(x, enc)
        y = encoder(y, enc)
        x, y = cross_set_layer(x, y, cross)
    return x, y
