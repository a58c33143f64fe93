"""Batched forward/backward engine over the kernel backends.

Training needs scores for many (X, Y) pairs at once: a K x K candidate
score matrix means K^2 model evaluations for the interaction variants,
because the extracted features of X depend on which Y it is paired with.
This module stacks those evaluations as one padded batch per kernel call
instead of looping pairs in Python.

Layout produced by ``pad_sets``: items (B, Nmax, d) with zero rows past
each set's true size, plus a (B, Nmax) 0/1 mask. ``score_matrix_fwd``
returns S with S[j, k] = score(X_j, Y_k); its backward accumulates
parameter gradients into the ``ModelParams`` grad slots (callers zero
them first).

The no-interaction baseline pools each side once and scores by dot
product, so its matrix costs J + K evaluations, not J * K.
"""

from __future__ import annotations

import numpy as np

from . import backends
from .errors import PreconditionError
from .params import ModelParams


def pad_sets(arrays):
    """Stack variable-size (n_i, d) arrays into a zero-padded batch."""
    if not arrays:
        raise PreconditionError("need at least one set")
    d = arrays[0].shape[1]
    nmax = max(a.shape[0] for a in arrays)
    out = np.zeros((len(arrays), nmax, d))
    mask = np.zeros((len(arrays), nmax))
    for i, a in enumerate(arrays):
        if a.ndim != 2 or a.shape[1] != d:
            raise PreconditionError(f"set {i} has shape {a.shape}, want (*, {d})")
        out[i, : a.shape[0]] = a
        mask[i, : a.shape[0]] = 1.0
    return out, mask


def cell_expand(px, mx, py, my):
    """Expand side batches (J, ...) and (K, ...) to J*K cells, j-major."""
    j, k = px.shape[0], py.shape[0]
    cx = np.repeat(px, k, axis=0)
    cmx = np.repeat(mx, k, axis=0)
    cy = np.tile(py, (j, 1, 1))
    cmy = np.tile(my, (j, 1))
    return cx, cmx, cy, cmy


def _acc(params: ModelParams, name: str, grad) -> None:
    params[name].grad += grad


# -- shared encoder tower ----------------------------------------------------

def _encoder_fwd(kern, x, mask, enc):
    xa, c_att = kern.mhsa_fwd(x, enc.wq, enc.wk, enc.wv, enc.wh, mask)
    z = x + xa
    zf, c_ffn = kern.ffn_fwd(
        z, enc.ffn.w1, enc.ffn.b1, enc.ffn.w2, enc.ffn.b2, enc.ffn.slope, mask
    )
    return z + zf, (c_att, c_ffn)


def _encoder_bwd(kern, dout, cache, params, prefix):
    c_att, c_ffn = cache
    dz, dw1, db1, dw2, db2 = kern.ffn_bwd(dout, c_ffn)
    dz = dz + dout
    _acc(params, f"{prefix}.ffn_w1", dw1)
    _acc(params, f"{prefix}.ffn_b1", db1)
    _acc(params, f"{prefix}.ffn_w2", dw2)
    _acc(params, f"{prefix}.ffn_b2", db2)
    dx, dwq, dwk, dwv, dwh = kern.mhsa_bwd(dz, c_att)
    _acc(params, f"{prefix}.wq", dwq)
    _acc(params, f"{prefix}.wk", dwk)
    _acc(params, f"{prefix}.wv", dwv)
    _acc(params, f"{prefix}.wh", dwh)
    return dx + dz


# -- interaction variants: full pair batch ------------------------------------

def cross_pair_fwd(params: ModelParams, x, mx, y, my, kern=None):
    """Scores for aligned pair cells (x[b], y[b]); returns (scores, cache)."""
    kern = kern or backends.active
    cfg = params.config
    win = params.value("input.w")
    x, c_lx = kern.linear_fwd(x, win)
    y, c_ly = kern.linear_fwd(y, win)
    layer_caches = []
    for i in range(cfg.L):
        enc = params.encoder(i)
        cross = params.cross(i)
        xe, ce_x = _encoder_fwd(kern, x, mx, enc)
        ye, ce_y = _encoder_fwd(kern, y, my, enc)
        fp = cross.ffn
        xf, cf_x = kern.ffn_fwd(xe, fp.w1, fp.b1, fp.w2, fp.b2, fp.slope, mx)
        yf, cf_y = kern.ffn_fwd(ye, fp.w1, fp.b1, fp.w2, fp.b2, fp.slope, my)
        if cfg.variant == "attention":
            gx, cg_x = kern.cross_attn_fwd(
                xf, yf, cross.t1, cross.t2, cross.t3, cross.wh, mx, my
            )
            gy, cg_y = kern.cross_attn_fwd(
                yf, xf, cross.t1, cross.t2, cross.t3, cross.wh, my, mx
            )
        else:
            gx, cg_x = kern.cross_aff_fwd(
                xf, yf, cross.t1, cross.t2, cross.wh, mx, my
            )
            gy, cg_y = kern.cross_aff_fwd(
                yf, xf, cross.t1, cross.t2, cross.wh, my, mx
            )
        x = xe + gx
        y = ye + gy
        layer_caches.append((ce_x, ce_y, cf_x, cf_y, cg_x, cg_y))
    scores, c_cs = kern.mcs_fwd(
        x, y, params.value("mcs.w"), params.value("mcs.wo"), mx, my
    )
    return scores, (kern, c_lx, c_ly, layer_caches, c_cs)


def cross_pair_bwd(dscores, cache, params: ModelParams) -> None:
    kern, c_lx, c_ly, layer_caches, c_cs = cache
    cfg = params.config
    dx, dy, dw, dwo = kern.mcs_bwd(dscores, c_cs)
    _acc(params, "mcs.w", dw)
    _acc(params, "mcs.wo", dwo)
    for i in reversed(range(cfg.L)):
        ce_x, ce_y, cf_x, cf_y, cg_x, cg_y = layer_caches[i]
        if cfg.variant == "attention":
            dxf_a, dyf_a, dt1, dt2, dt3, dwh = kern.cross_attn_bwd(dx, cg_x)
            dyf_b, dxf_b, dt1b, dt2b, dt3b, dwhb = kern.cross_attn_bwd(
                dy, cg_y
            )
            _acc(params, f"cross{i}.t3", dt3 + dt3b)
        else:
            dxf_a, dyf_a, dt1, dt2, dwh = kern.cross_aff_bwd(dx, cg_x)
            dyf_b, dxf_b, dt1b, dt2b, dwhb = kern.cross_aff_bwd(dy, cg_y)
        _acc(params, f"cross{i}.t1", dt1 + dt1b)
        _acc(params, f"cross{i}.t2", dt2 + dt2b)
        _acc(params, f"cross{i}.wh", dwh + dwhb)
        dxe, dw1, db1, dw2, db2 = kern.ffn_bwd(dxf_a + dxf_b, cf_x)
        dye, dw1y, db1y, dw2y, db2y = kern.ffn_bwd(dyf_a + dyf_b, cf_y)
        _acc(params, f"cross{i}.ffn_w1", dw1 + dw1y)
        _acc(params, f"cross{i}.ffn_b1", db1 + db1y)
        _acc(params, f"cross{i}.ffn_w2", dw2 + dw2y)
        _acc(params, f"cross{i}.ffn_b2", db2 + db2y)
        dxe = dxe + dx
        dye = dye + dy
        dx = _encoder_bwd(kern, dxe, ce_x, params, f"enc{i}")
        dy = _encoder_bwd(kern, dye, ce_y, params, f"enc{i}")
    dx0, dwin_x = kern.linear_bwd(dx, c_lx)
    dy0, dwin_y = kern.linear_bwd(dy, c_ly)
    _acc(params, "input.w", dwin_x + dwin_y)


# -- baseline: encode, pool, dot ----------------------------------------------

def _mean_pool_fwd(x, v, f, mask):
    # padded rows are zero, so a plain sum divided by the true count works
    n = mask.sum(axis=1)
    xbar = x.sum(axis=1) / n[:, None]
    pre = xbar @ v.T
    out = pre @ f.T
    return out, (x, v, f, mask, n, xbar, pre)


def _mean_pool_bwd(dout, cache):
    x, v, f, mask, n, xbar, pre = cache
    df = np.einsum("bp,be->pe", dout, pre)
    dpre = dout @ f
    dv = np.einsum("be,bd->ed", dpre, xbar)
    dxbar = dpre @ v
    dx = dxbar[:, None, :] * (mask / n[:, None])[:, :, None]
    return dx, dv, df


def baseline_pool_fwd(params: ModelParams, x, mask, kern=None):
    kern = kern or backends.active
    cfg = params.config
    x, c_lin = kern.linear_fwd(x, params.value("input.w"))
    enc_caches = []
    for i in range(cfg.L):
        x, ce = _encoder_fwd(kern, x, mask, params.encoder(i))
        enc_caches.append(ce)
    pp = params.pool_params()
    if cfg.pool == "mean":
        pooled, c_pool = _mean_pool_fwd(x, pp.v, pp.f, mask)
    else:
        pooled, c_pool = kern.pool_fwd(
            x, pp.seed, pp.q, pp.k, pp.v, pp.f, mask
        )
    return pooled, (kern, c_lin, enc_caches, c_pool)


def baseline_pool_bwd(dpooled, cache, params: ModelParams) -> None:
    kern, c_lin, enc_caches, c_pool = cache
    if params.config.pool == "mean":
        dx, dv, df = _mean_pool_bwd(dpooled, c_pool)
    else:
        dx, dseed, dq, dk, dv, df = kern.pool_bwd(dpooled, c_pool)
        _acc(params, "pool.seed", dseed)
        _acc(params, "pool.q", dq)
        _acc(params, "pool.k", dk)
    _acc(params, "pool.v", dv)
    _acc(params, "pool.f", df)
    for i in reversed(range(params.config.L)):
        dx = _encoder_bwd(kern, dx, enc_caches[i], params, f"enc{i}")
    _, dwin = kern.linear_bwd(dx, c_lin)
    _acc(params, "input.w", dwin)


# -- score matrices ------------------------------------------------------------

def score_matrix_fwd(params: ModelParams, xs, ys, kern=None):
    """S[j, k] = score(xs[j], ys[k]); xs/ys are lists of (n, d_in) arrays."""
    kern = kern or backends.active
    j, k = len(xs), len(ys)
    px, mx = pad_sets(xs)
    py, my = pad_sets(ys)
    if params.config.variant == "baseline":
        pool_x, cx = baseline_pool_fwd(params, px, mx, kern)
        pool_y, cy = baseline_pool_fwd(params, py, my, kern)
        s = pool_x @ pool_y.T
        return s, ("baseline", cx, cy, pool_x, pool_y)
    cx, cmx, cy, cmy = cell_expand(px, mx, py, my)
    scores, cache = cross_pair_fwd(params, cx, cmx, cy, cmy, kern)
    return scores.reshape(j, k), ("cross", cache)


def score_matrix_bwd(ds, cache, params: ModelParams) -> None:
    if cache[0] == "baseline":
        _, cx, cy, pool_x, pool_y = cache
        baseline_pool_bwd(ds @ pool_y, cx, params)
        baseline_pool_bwd(ds.T @ pool_x, cy, params)
        return
    cross_pair_bwd(np.ascontiguousarray(ds).ravel(), cache[1], params)


def pair_scores_fwd(params: ModelParams, xs, ys, kern=None):
    """Scores for aligned pairs (xs[i], ys[i]); used by the triplet loss."""
    kern = kern or backends.active
    if len(xs) != len(ys):
        raise PreconditionError("pair lists must have equal length")
    px, mx = pad_sets(xs)
    py, my = pad_sets(ys)
    if params.config.variant == "baseline":
        pool_x, cx = baseline_pool_fwd(params, px, mx, kern)
        pool_y, cy = baseline_pool_fwd(params, py, my, kern)
        s = (pool_x * pool_y).sum(axis=1)
        return s, ("baseline", cx, cy, pool_x, pool_y)
    scores, cache = cross_pair_fwd(params, px, mx, py, my, kern)
    return scores, ("cross", cache)


def pair_scores_bwd(ds, cache, params: ModelParams) -> None:
    if cache[0] == "baseline":
        _, cx, cy, pool_x, pool_y = cache
        baseline_pool_bwd(ds[:, None] * pool_y, cx, params)
        baseline_pool_bwd(ds[:, None] * pool_x, cy, params)
        return
    cross_pair_bwd(ds, cache[1], params)
