"""Reference kernels for the batched engine, written with numpy einsum.

Conventions shared by every kernel here and in the compiled backend:

* item tensors are (B, N, d) float64, C-contiguous, zero in padded rows
* masks are (B, N) float64 with 1.0 on real items and 0.0 on padding
* ``*_fwd`` returns ``(out, cache)``; ``*_bwd`` consumes ``(dout, cache)``
  and returns input/parameter gradients in the argument order of the fwd
* backward passes keep padded rows of every returned gradient at zero

Attention uses masked softmax (padded keys get zero weight); the relu
affinities in the cross-set and similarity kernels zero padded columns
explicitly so set-size normalizers stay exact under padding.
"""

import numpy as np

NAME = "numpy"


# -- plain linear map -------------------------------------------------------

def linear_fwd(x, w):
    out = np.einsum("bni,oi->bno", x, w)
    return out, (x, w)


def linear_bwd(dout, cache):
    x, w = cache
    dx = np.einsum("bno,oi->bni", dout, w)
    dw = np.einsum("bno,bni->oi", dout, x)
    return dx, dw


# -- per-item feed-forward net ---------------------------------------------

def ffn_fwd(x, w1, b1, w2, b2, slope, mask):
    pre = np.einsum("bni,hi->bnh", x, w1) + b1
    act = np.where(pre > 0.0, pre, slope * pre)
    out = (np.einsum("bnh,oh->bno", act, w2) + b2) * mask[:, :, None]
    return out, (x, w1, w2, slope, mask, pre, act)


def ffn_bwd(dout, cache):
    x, w1, w2, slope, mask, pre, act = cache
    dout = dout * mask[:, :, None]
    dw2 = np.einsum("bno,bnh->oh", dout, act)
    db2 = dout.sum((0, 1))
    dact = np.einsum("bno,oh->bnh", dout, w2)
    dpre = dact * np.where(pre > 0.0, 1.0, slope)
    dw1 = np.einsum("bnh,bni->hi", dpre, x)
    db1 = dpre.sum((0, 1))
    dx = np.einsum("bnh,hi->bni", dpre, w1)
    return dx, dw1, db1, dw2, db2


# -- multihead self-attention ------------------------------------------------

def mhsa_fwd(x, wq, wk, wv, wh, mask):
    b, n, d = x.shape
    h, dg, _ = wq.shape
    q = np.einsum("bnd,hgd->bhng", x, wq)
    k = np.einsum("bnd,hgd->bhng", x, wk)
    v = np.einsum("bnd,hgd->bhng", x, wv)
    s = np.einsum("bhng,bhmg->bhnm", q, k) / np.sqrt(dg)
    e = np.exp(s - s.max(axis=3, keepdims=True)) * mask[:, None, None, :]
    a = e / e.sum(axis=3, keepdims=True)
    o = np.einsum("bhnm,bhmg->bhng", a, v)
    cat = np.ascontiguousarray(o.transpose(0, 2, 1, 3)).reshape(b, n, h * dg)
    out = np.einsum("bnc,dc->bnd", cat, wh) * mask[:, :, None]
    return out, (x, wq, wk, wv, wh, mask, q, k, v, a, cat)


def mhsa_bwd(dout, cache):
    x, wq, wk, wv, wh, mask, q, k, v, a, cat = cache
    b, n, d = x.shape
    h, dg, _ = wq.shape
    dout = dout * mask[:, :, None]
    dwh = np.einsum("bnd,bnc->dc", dout, cat)
    dcat = np.einsum("bnd,dc->bnc", dout, wh)
    do = np.ascontiguousarray(
        dcat.reshape(b, n, h, dg).transpose(0, 2, 1, 3)
    )
    da = np.einsum("bhng,bhmg->bhnm", do, v)
    dv = np.einsum("bhnm,bhng->bhmg", a, do)
    ds = a * (da - (da * a).sum(axis=3, keepdims=True))
    ds /= np.sqrt(dg)
    dq = np.einsum("bhnm,bhmg->bhng", ds, k)
    dk = np.einsum("bhnm,bhng->bhmg", ds, q)
    dx = (
        np.einsum("bhng,hgd->bnd", dq, wq)
        + np.einsum("bhng,hgd->bnd", dk, wk)
        + np.einsum("bhng,hgd->bnd", dv, wv)
    )
    dwq = np.einsum("bhng,bnd->hgd", dq, x)
    dwk = np.einsum("bhng,bnd->hgd", dk, x)
    dwv = np.einsum("bhng,bnd->hgd", dv, x)
    return dx, dwq, dwk, dwv, dwh


# -- cross-set feature map, attention style ----------------------------------

def cross_attn_fwd(x, y, t1, t2, t3, wh, mask_x, mask_y):
    b, n, d = x.shape
    h, dg, _ = t1.shape
    ny = mask_y.sum(axis=1)
    xb = np.einsum("bnd,hgd->bhng", x, t1)
    y2 = np.einsum("bmd,hgd->bhmg", y, t2)
    y3 = np.einsum("bmd,hgd->bhmg", y, t3)
    s = np.einsum("bhng,bhmg->bhnm", xb, y2) / np.sqrt(dg)
    r = np.where(s > 0.0, s, 0.0) * mask_y[:, None, None, :]
    o = np.einsum("bhnm,bhmg->bhng", r, y3) / ny[:, None, None, None]
    cat = np.ascontiguousarray(o.transpose(0, 2, 1, 3)).reshape(b, n, h * dg)
    out = np.einsum("bnc,dc->bnd", cat, wh) * mask_x[:, :, None]
    return out, (x, y, t1, t2, t3, wh, mask_x, ny, xb, y2, y3, r, cat)


def cross_attn_bwd(dout, cache):
    x, y, t1, t2, t3, wh, mask_x, ny, xb, y2, y3, r, cat = cache
    b, n, d = x.shape
    h, dg, _ = t1.shape
    dout = dout * mask_x[:, :, None]
    dwh = np.einsum("bnd,bnc->dc", dout, cat)
    dcat = np.einsum("bnd,dc->bnc", dout, wh)
    do = np.ascontiguousarray(
        dcat.reshape(b, n, h, dg).transpose(0, 2, 1, 3)
    )
    do = do / ny[:, None, None, None]
    dr = np.einsum("bhng,bhmg->bhnm", do, y3)
    dy3 = np.einsum("bhnm,bhng->bhmg", r, do)
    ds = dr * (r > 0.0)
    ds /= np.sqrt(dg)
    dxb = np.einsum("bhnm,bhmg->bhng", ds, y2)
    dy2 = np.einsum("bhnm,bhng->bhmg", ds, xb)
    dx = np.einsum("bhng,hgd->bnd", dxb, t1)
    dy = np.einsum("bhmg,hgd->bmd", dy2, t2) + np.einsum(
        "bhmg,hgd->bmd", dy3, t3
    )
    dt1 = np.einsum("bhng,bnd->hgd", dxb, x)
    dt2 = np.einsum("bhmg,bmd->hgd", dy2, y)
    dt3 = np.einsum("bhmg,bmd->hgd", dy3, y)
    return dx, dy, dt1, dt2, dt3, dwh


# -- cross-set feature map, affinity style -----------------------------------

def cross_aff_fwd(x, y, t1, t2, wh, mask_x, mask_y):
    b, n, d = x.shape
    h, dg, _ = t1.shape
    ny = mask_y.sum(axis=1)
    xb = np.einsum("bnd,hgd->bhng", x, t1)
    yb = np.einsum("bmd,hgd->bhmg", y, t2)
    s = np.einsum("bhng,bhmg->bhnm", xb, yb) / np.sqrt(dg)
    r = np.where(s > 0.0, s, 0.0) * mask_y[:, None, None, :]
    agg = np.einsum("bhnm,bhmg->bhng", r, yb) / ny[:, None, None, None]
    o = 0.5 * (xb + agg)
    cat = np.ascontiguousarray(o.transpose(0, 2, 1, 3)).reshape(b, n, h * dg)
    out = np.einsum("bnc,dc->bnd", cat, wh) * mask_x[:, :, None]
    return out, (x, y, t1, t2, wh, mask_x, ny, xb, yb, r, cat)


def cross_aff_bwd(dout, cache):
    x, y, t1, t2, wh, mask_x, ny, xb, yb, r, cat = cache
    b, n, d = x.shape
    h, dg, _ = t1.shape
    dout = dout * mask_x[:, :, None]
    dwh = np.einsum("bnd,bnc->dc", dout, cat)
    dcat = np.einsum("bnd,dc->bnc", dout, wh)
    do = 0.5 * np.ascontiguousarray(
        dcat.reshape(b, n, h, dg).transpose(0, 2, 1, 3)
    )
    dagg = do / ny[:, None, None, None]
    dr = np.einsum("bhng,bhmg->bhnm", dagg, yb)
    dyb = np.einsum("bhnm,bhng->bhmg", r, dagg)
    ds = dr * (r > 0.0)
    ds /= np.sqrt(dg)
    dxb = do + np.einsum("bhnm,bhmg->bhng", ds, yb)
    dyb = dyb + np.einsum("bhnm,bhng->bhmg", ds, xb)
    dx = np.einsum("bhng,hgd->bnd", dxb, t1)
    dy = np.einsum("bhmg,hgd->bmd", dyb, t2)
    dt1 = np.einsum("bhng,bnd->hgd", dxb, x)
    dt2 = np.einsum("bhmg,bmd->hgd", dyb, y)
    return dx, dy, dt1, dt2, dwh


# -- multiple cross-similarity score -----------------------------------------

def mcs_fwd(x, y, w, wo, mask_x, mask_y):
    h, dw, _ = w.shape
    nx = mask_x.sum(axis=1)
    ny = mask_y.sum(axis=1)
    xp = np.einsum("bnd,hwd->bhnw", x, w)
    yp = np.einsum("bmd,hwd->bhmw", y, w)
    s = np.einsum("bhnw,bhmw->bhnm", xp, yp) / np.sqrt(dw)
    r = (
        np.where(s > 0.0, s, 0.0)
        * mask_x[:, None, :, None]
        * mask_y[:, None, None, :]
    )
    sims = r.sum(axis=(2, 3)) / (nx * ny)[:, None]
    score = sims @ wo
    return score, (x, y, w, wo, nx, ny, xp, yp, r, sims)


def mcs_bwd(dscore, cache):
    x, y, w, wo, nx, ny, xp, yp, r, sims = cache
    h, dw, _ = w.shape
    dwo = np.einsum("b,bh->h", dscore, sims)
    dsims = dscore[:, None] * wo[None, :]
    dr = (dsims / (nx * ny)[:, None])[:, :, None, None]
    ds = dr * (r > 0.0)
    ds /= np.sqrt(dw)
    dxp = np.einsum("bhnm,bhmw->bhnw", ds, yp)
    dyp = np.einsum("bhnm,bhnw->bhmw", ds, xp)
    dx = np.einsum("bhnw,hwd->bnd", dxp, w)
    dy = np.einsum("bhmw,hwd->bmd", dyp, w)
    dw_ = np.einsum("bhnw,bnd->hwd", dxp, x) + np.einsum(
        "bhmw,bmd->hwd", dyp, y
    )
    return dx, dy, dw_, dwo


# -- attention pooling for the no-interaction baseline ------------------------

def pool_fwd(x, seed, q, k, v, f, mask):
    b, n, d = x.shape
    qv = q @ seed
    keys = np.einsum("bnd,ed->bne", x, k)
    vals = np.einsum("bnd,ed->bne", x, v)
    s = keys @ qv / np.sqrt(d)
    e = np.exp(s - s.max(axis=1, keepdims=True)) * mask
    a = e / e.sum(axis=1, keepdims=True)
    pre = np.einsum("bn,bne->be", a, vals)
    out = pre @ f.T
    return out, (x, seed, q, k, v, f, mask, qv, keys, vals, a, pre)


def pool_bwd(dout, cache):
    x, seed, q, k, v, f, mask, qv, keys, vals, a, pre = cache
    b, n, d = x.shape
    df = np.einsum("be,bp->ep", dout, pre)
    dpre = dout @ f
    da = np.einsum("be,bne->bn", dpre, vals)
    dvals = a[:, :, None] * dpre[:, None, :]
    ds = a * (da - (da * a).sum(axis=1, keepdims=True))
    ds /= np.sqrt(d)
    dqv = np.einsum("bn,bne->e", ds, keys)
    dkeys = ds[:, :, None] * qv[None, None, :]
    dx = np.einsum("bne,ed->bnd", dkeys, k) + np.einsum(
        "bne,ed->bnd", dvals, v
    )
    dk = np.einsum("bne,bnd->ed", dkeys, x)
    dv = np.einsum("bne,bnd->ed", dvals, x)
    dq = np.outer(dqv, seed)
    dseed = q.T @ dqv
    return dx, dseed, dq, dk, dv, df
