# cython: language_level=3, boundscheck=False, wraparound=False
# cython: cdivision=True, initializedcheck=False
"""Compiled kernels for the batched engine.

Same contracts as the numpy reference backend: every ``*_fwd`` returns
``(out, cache)`` and the matching ``*_bwd`` consumes ``(dout, cache)`` and
returns gradients in the forward argument order.  Heavy contractions go
through BLAS dgemm; activation, masking and softmax passes are plain C
loops.  Caches are backend-private, so the layouts here only need to agree
with this module's own backward passes (they mirror the reference backend
anyway to keep cross-checking simple).
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, sqrt
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

NAME = "cython"


# Row-major C(m,n) = alpha * opA(A) @ opB(B) + beta * C via column-major
# dgemm on the transposed problem.  lda/ldb are the stored column counts.
cdef inline void rmgemm(bint ta, bint tb, int m, int n, int k,
                        double alpha, double* a, int lda,
                        double* b, int ldb,
                        double beta, double* c, int ldc) noexcept nogil:
    cdef char cta = c'T' if ta else c'N'
    cdef char ctb = c'T' if tb else c'N'
    dgemm(&ctb, &cta, &n, &m, &k, &alpha, b, &ldb, a, &lda, &beta, c, &ldc)


cdef inline cnp.ndarray as_c(object a):
    return np.ascontiguousarray(a, dtype=np.float64)


# -- plain linear map ---------------------------------------------------------

def linear_fwd(object x_, object w_):
    cdef cnp.ndarray x = as_c(x_)
    cdef cnp.ndarray w = as_c(w_)
    cdef int bn = x.shape[0] * x.shape[1]
    cdef int di = x.shape[2]
    cdef int o = w.shape[0]
    out = np.empty((x.shape[0], x.shape[1], o))
    cdef double[:, :, ::1] ov = out
    cdef double[:, :, ::1] xv = x
    cdef double[:, ::1] wv = w
    rmgemm(0, 1, bn, o, di, 1.0, &xv[0, 0, 0], di, &wv[0, 0], di,
           0.0, &ov[0, 0, 0], o)
    return out, (x, w)


def linear_bwd(object dout_, tuple cache):
    x_, w_ = cache
    cdef cnp.ndarray dout = as_c(dout_)
    cdef cnp.ndarray x = x_
    cdef cnp.ndarray w = w_
    cdef int bn = x.shape[0] * x.shape[1]
    cdef int di = x.shape[2]
    cdef int o = w.shape[0]
    dx = np.empty((x.shape[0], x.shape[1], di))
    dw = np.empty((o, di))
    cdef double[:, :, ::1] dov = dout
    cdef double[:, :, ::1] dxv = dx
    cdef double[:, ::1] dwv = dw
    cdef double[:, :, ::1] xv = x
    cdef double[:, ::1] wv = w
    rmgemm(0, 0, bn, di, o, 1.0, &dov[0, 0, 0], o, &wv[0, 0], di,
           0.0, &dxv[0, 0, 0], di)
    rmgemm(1, 0, o, di, bn, 1.0, &dov[0, 0, 0], o, &xv[0, 0, 0], di,
           0.0, &dwv[0, 0], di)
    return dx, dw


# -- per-item feed-forward net ------------------------------------------------

def ffn_fwd(object x_, object w1_, object b1_, object w2_, object b2_,
            double slope, object mask_):
    cdef cnp.ndarray x = as_c(x_)
    cdef cnp.ndarray w1 = as_c(w1_)
    cdef cnp.ndarray b1 = as_c(b1_)
    cdef cnp.ndarray w2 = as_c(w2_)
    cdef cnp.ndarray b2 = as_c(b2_)
    cdef cnp.ndarray mask = as_c(mask_)
    cdef int bb = x.shape[0], nn = x.shape[1], di = x.shape[2]
    cdef int hd = w1.shape[0], o = w2.shape[0]
    cdef int bn = bb * nn
    pre = np.empty((bb, nn, hd))
    act = np.empty((bb, nn, hd))
    out = np.empty((bb, nn, o))
    cdef double[:, :, ::1] xv = x, prev = pre, actv = act, ov = out
    cdef double[:, ::1] w1v = w1, w2v = w2, mv = mask
    cdef double[::1] b1v = b1, b2v = b2
    cdef int b, n, j
    cdef double p
    rmgemm(0, 1, bn, hd, di, 1.0, &xv[0, 0, 0], di, &w1v[0, 0], di,
           0.0, &prev[0, 0, 0], hd)
    for b in range(bb):
        for n in range(nn):
            for j in range(hd):
                p = prev[b, n, j] + b1v[j]
                prev[b, n, j] = p
                actv[b, n, j] = p if p > 0.0 else slope * p
    rmgemm(0, 1, bn, o, hd, 1.0, &actv[0, 0, 0], hd, &w2v[0, 0], hd,
           0.0, &ov[0, 0, 0], o)
    for b in range(bb):
        for n in range(nn):
            for j in range(o):
                ov[b, n, j] = (ov[b, n, j] + b2v[j]) * mv[b, n]
    return out, (x, w1, w2, slope, mask, pre, act)


def ffn_bwd(object dout_, tuple cache):
    x_, w1_, w2_, slope_, mask_, pre_, act_ = cache
    cdef cnp.ndarray x = x_, w1 = w1_, w2 = w2_
    cdef cnp.ndarray mask = mask_, pre = pre_, act = act_
    cdef cnp.ndarray dout = as_c(dout_)
    cdef double slope = slope_
    cdef int bb = x.shape[0], nn = x.shape[1], di = x.shape[2]
    cdef int hd = w1.shape[0], o = w2.shape[0]
    cdef int bn = bb * nn
    dm = np.empty((bb, nn, o))
    dact = np.empty((bb, nn, hd))
    dx = np.empty((bb, nn, di))
    dw1 = np.empty((hd, di))
    db1 = np.zeros(hd)
    dw2 = np.empty((o, hd))
    db2 = np.zeros(o)
    cdef double[:, :, ::1] dov = dout, dmv = dm, dactv = dact, dxv = dx
    cdef double[:, :, ::1] xv = x, prev = pre, actv = act
    cdef double[:, ::1] w1v = w1, w2v = w2, mv = mask, dw1v = dw1, dw2v = dw2
    cdef double[::1] db1v = db1, db2v = db2
    cdef int b, n, j
    for b in range(bb):
        for n in range(nn):
            for j in range(o):
                dmv[b, n, j] = dov[b, n, j] * mv[b, n]
                db2v[j] += dmv[b, n, j]
    rmgemm(1, 0, o, hd, bn, 1.0, &dmv[0, 0, 0], o, &actv[0, 0, 0], hd,
           0.0, &dw2v[0, 0], hd)
    rmgemm(0, 0, bn, hd, o, 1.0, &dmv[0, 0, 0], o, &w2v[0, 0], hd,
           0.0, &dactv[0, 0, 0], hd)
    for b in range(bb):
        for n in range(nn):
            for j in range(hd):
                if prev[b, n, j] <= 0.0:
                    dactv[b, n, j] *= slope
                db1v[j] += dactv[b, n, j]
    rmgemm(1, 0, hd, di, bn, 1.0, &dactv[0, 0, 0], hd, &xv[0, 0, 0], di,
           0.0, &dw1v[0, 0], di)
    rmgemm(0, 0, bn, di, hd, 1.0, &dactv[0, 0, 0], hd, &w1v[0, 0], di,
           0.0, &dxv[0, 0, 0], di)
    return dx, dw1, db1, dw2, db2


# -- shared helpers for the multihead kernels ----------------------------------

cdef void project_heads(double[:, :, ::1] x, double[:, :, ::1] w,
                        double[:, :, :, ::1] out) noexcept nogil:
    # out[b, h] = x[b] @ w[h].T for every batch row and head
    cdef int bb = x.shape[0], nn = x.shape[1], d = x.shape[2]
    cdef int hh = w.shape[0], g = w.shape[1]
    cdef int b, j
    for b in range(bb):
        for j in range(hh):
            rmgemm(0, 1, nn, g, d, 1.0, &x[b, 0, 0], d, &w[j, 0, 0], d,
                   0.0, &out[b, j, 0, 0], g)


cdef void heads_to_cat(double[:, :, :, ::1] o, double[:, :, ::1] cat) noexcept nogil:
    # (B, h, N, g) -> (B, N, h*g)
    cdef int bb = o.shape[0], hh = o.shape[1], nn = o.shape[2], g = o.shape[3]
    cdef int b, j, n, t
    for b in range(bb):
        for j in range(hh):
            for n in range(nn):
                for t in range(g):
                    cat[b, n, j * g + t] = o[b, j, n, t]


cdef void cat_to_heads(double[:, :, ::1] cat, double[:, :, :, ::1] o) noexcept nogil:
    cdef int bb = o.shape[0], hh = o.shape[1], nn = o.shape[2], g = o.shape[3]
    cdef int b, j, n, t
    for b in range(bb):
        for j in range(hh):
            for n in range(nn):
                for t in range(g):
                    o[b, j, n, t] = cat[b, n, j * g + t]


# -- multihead self-attention ---------------------------------------------------

def mhsa_fwd(object x_, object wq_, object wk_, object wv_, object wh_,
             object mask_):
    cdef cnp.ndarray x = as_c(x_)
    cdef cnp.ndarray wq = as_c(wq_), wk = as_c(wk_), wv = as_c(wv_)
    cdef cnp.ndarray wh = as_c(wh_), mask = as_c(mask_)
    cdef int bb = x.shape[0], nn = x.shape[1], d = x.shape[2]
    cdef int hh = wq.shape[0], g = wq.shape[1]
    q = np.empty((bb, hh, nn, g))
    k = np.empty((bb, hh, nn, g))
    v = np.empty((bb, hh, nn, g))
    a = np.empty((bb, hh, nn, nn))
    o4 = np.empty((bb, hh, nn, g))
    cat = np.empty((bb, nn, hh * g))
    out = np.empty((bb, nn, d))
    cdef double[:, :, ::1] xv = x, catv = cat, ov = out
    cdef double[:, :, :, ::1] qv = q, kv = k, vv = v, av = a, o4v = o4
    cdef double[:, :, ::1] wqv = wq, wkv = wk, wvv = wv
    cdef double[:, ::1] whv = wh, mv = mask
    cdef int b, j, n, m
    cdef double scale = 1.0 / sqrt(<double> g)
    cdef double mx, tot, e
    project_heads(xv, wqv, qv)
    project_heads(xv, wkv, kv)
    project_heads(xv, wvv, vv)
    for b in range(bb):
        for j in range(hh):
            rmgemm(0, 1, nn, nn, g, scale, &qv[b, j, 0, 0], g,
                   &kv[b, j, 0, 0], g, 0.0, &av[b, j, 0, 0], nn)
            for n in range(nn):
                mx = av[b, j, n, 0]
                for m in range(1, nn):
                    if av[b, j, n, m] > mx:
                        mx = av[b, j, n, m]
                tot = 0.0
                for m in range(nn):
                    e = exp(av[b, j, n, m] - mx) * mv[b, m]
                    av[b, j, n, m] = e
                    tot += e
                for m in range(nn):
                    av[b, j, n, m] /= tot
            rmgemm(0, 0, nn, g, nn, 1.0, &av[b, j, 0, 0], nn,
                   &vv[b, j, 0, 0], g, 0.0, &o4v[b, j, 0, 0], g)
    heads_to_cat(o4v, catv)
    rmgemm(0, 1, bb * nn, d, hh * g, 1.0, &catv[0, 0, 0], hh * g,
           &whv[0, 0], hh * g, 0.0, &ov[0, 0, 0], d)
    for b in range(bb):
        for n in range(nn):
            for j in range(d):
                ov[b, n, j] *= mv[b, n]
    return out, (x, wq, wk, wv, wh, mask, q, k, v, a, cat)


def mhsa_bwd(object dout_, tuple cache):
    x_, wq_, wk_, wv_, wh_, mask_, q_, k_, v_, a_, cat_ = cache
    cdef cnp.ndarray x = x_, wq = wq_, wk = wk_, wv = wv_, wh = wh_
    cdef cnp.ndarray mask = mask_, q = q_, k = k_, v = v_, a = a_, cat = cat_
    cdef cnp.ndarray dout = as_c(dout_)
    cdef int bb = x.shape[0], nn = x.shape[1], d = x.shape[2]
    cdef int hh = wq.shape[0], g = wq.shape[1]
    dm = np.empty((bb, nn, d))
    dwh = np.empty((d, hh * g))
    dcat = np.empty((bb, nn, hh * g))
    do = np.empty((bb, hh, nn, g))
    da = np.empty((bb, hh, nn, nn))
    dq = np.empty((bb, hh, nn, g))
    dk = np.empty((bb, hh, nn, g))
    dv = np.empty((bb, hh, nn, g))
    dx = np.zeros((bb, nn, d))
    dwq = np.zeros((hh, g, d))
    dwk = np.zeros((hh, g, d))
    dwv = np.zeros((hh, g, d))
    cdef double[:, :, ::1] dmv = dm, dcatv = dcat, dxv = dx, xv = x, catv = cat
    cdef double[:, :, :, ::1] dov = do, dav = da, dqv = dq, dkv = dk, dvv = dv
    cdef double[:, :, :, ::1] qv = q, kv = k, vv = v, av = a
    cdef double[:, :, ::1] dwqv = dwq, dwkv = dwk, dwvv = dwv
    cdef double[:, :, ::1] wqv = wq, wkv = wk, wvv = wv
    cdef double[:, ::1] whv = wh, mv = mask, dwhv = dwh
    cdef double[:, :, ::1] doutv = dout
    cdef int b, j, n, m
    cdef double scale = 1.0 / sqrt(<double> g)
    cdef double rowdot
    for b in range(bb):
        for n in range(nn):
            for j in range(d):
                dmv[b, n, j] = doutv[b, n, j] * mv[b, n]
    rmgemm(1, 0, d, hh * g, bb * nn, 1.0, &dmv[0, 0, 0], d,
           &catv[0, 0, 0], hh * g, 0.0, &dwhv[0, 0], hh * g)
    rmgemm(0, 0, bb * nn, hh * g, d, 1.0, &dmv[0, 0, 0], d,
           &whv[0, 0], hh * g, 0.0, &dcatv[0, 0, 0], hh * g)
    cat_to_heads(dcatv, dov)
    for b in range(bb):
        for j in range(hh):
            rmgemm(0, 1, nn, nn, g, 1.0, &dov[b, j, 0, 0], g,
                   &vv[b, j, 0, 0], g, 0.0, &dav[b, j, 0, 0], nn)
            rmgemm(1, 0, nn, g, nn, 1.0, &av[b, j, 0, 0], nn,
                   &dov[b, j, 0, 0], g, 0.0, &dvv[b, j, 0, 0], g)
            for n in range(nn):
                rowdot = 0.0
                for m in range(nn):
                    rowdot += dav[b, j, n, m] * av[b, j, n, m]
                for m in range(nn):
                    dav[b, j, n, m] = (
                        av[b, j, n, m] * (dav[b, j, n, m] - rowdot) * scale
                    )
            rmgemm(0, 0, nn, g, nn, 1.0, &dav[b, j, 0, 0], nn,
                   &kv[b, j, 0, 0], g, 0.0, &dqv[b, j, 0, 0], g)
            rmgemm(1, 0, nn, g, nn, 1.0, &dav[b, j, 0, 0], nn,
                   &qv[b, j, 0, 0], g, 0.0, &dkv[b, j, 0, 0], g)
            rmgemm(0, 0, nn, d, g, 1.0, &dqv[b, j, 0, 0], g,
                   &wqv[j, 0, 0], d, 1.0, &dxv[b, 0, 0], d)
            rmgemm(0, 0, nn, d, g, 1.0, &dkv[b, j, 0, 0], g,
                   &wkv[j, 0, 0], d, 1.0, &dxv[b, 0, 0], d)
            rmgemm(0, 0, nn, d, g, 1.0, &dvv[b, j, 0, 0], g,
                   &wvv[j, 0, 0], d, 1.0, &dxv[b, 0, 0], d)
            rmgemm(1, 0, g, d, nn, 1.0, &dqv[b, j, 0, 0], g,
                   &xv[b, 0, 0], d, 1.0, &dwqv[j, 0, 0], d)
            rmgemm(1, 0, g, d, nn, 1.0, &dkv[b, j, 0, 0], g,
                   &xv[b, 0, 0], d, 1.0, &dwkv[j, 0, 0], d)
            rmgemm(1, 0, g, d, nn, 1.0, &dvv[b, j, 0, 0], g,
                   &xv[b, 0, 0], d, 1.0, &dwvv[j, 0, 0], d)
    return dx, dwq, dwk, dwv, dwh


# -- cross-set feature map, attention style -------------------------------------

def cross_attn_fwd(object x_, object y_, object t1_, object t2_, object t3_,
                   object wh_, object mask_x_, object mask_y_):
    cdef cnp.ndarray x = as_c(x_), y = as_c(y_)
    cdef cnp.ndarray t1 = as_c(t1_), t2 = as_c(t2_), t3 = as_c(t3_)
    cdef cnp.ndarray wh = as_c(wh_)
    cdef cnp.ndarray mask_x = as_c(mask_x_), mask_y = as_c(mask_y_)
    cdef int bb = x.shape[0], nn = x.shape[1], d = x.shape[2]
    cdef int mm = y.shape[1]
    cdef int hh = t1.shape[0], g = t1.shape[1]
    ny = np.empty(bb)
    xb = np.empty((bb, hh, nn, g))
    y2 = np.empty((bb, hh, mm, g))
    y3 = np.empty((bb, hh, mm, g))
    r = np.empty((bb, hh, nn, mm))
    o4 = np.empty((bb, hh, nn, g))
    cat = np.empty((bb, nn, hh * g))
    out = np.empty((bb, nn, d))
    cdef double[:, :, ::1] xv = x, yv = y, catv = cat, ov = out
    cdef double[:, :, ::1] t1v = t1, t2v = t2, t3v = t3
    cdef double[:, :, :, ::1] xbv = xb, y2v = y2, y3v = y3, rv = r, o4v = o4
    cdef double[:, ::1] whv = wh, mxv = mask_x, myv = mask_y
    cdef double[::1] nyv = ny
    cdef int b, j, n, m
    cdef double scale = 1.0 / sqrt(<double> g)
    cdef double s, tot
    for b in range(bb):
        tot = 0.0
        for m in range(mm):
            tot += myv[b, m]
        nyv[b] = tot
    project_heads(xv, t1v, xbv)
    project_heads(yv, t2v, y2v)
    project_heads(yv, t3v, y3v)
    for b in range(bb):
        for j in range(hh):
            rmgemm(0, 1, nn, mm, g, scale, &xbv[b, j, 0, 0], g,
                   &y2v[b, j, 0, 0], g, 0.0, &rv[b, j, 0, 0], mm)
            for n in range(nn):
                for m in range(mm):
                    s = rv[b, j, n, m]
                    rv[b, j, n, m] = s * myv[b, m] if s > 0.0 else 0.0
            rmgemm(0, 0, nn, g, mm, 1.0 / nyv[b], &rv[b, j, 0, 0], mm,
                   &y3v[b, j, 0, 0], g, 0.0, &o4v[b, j, 0, 0], g)
    heads_to_cat(o4v, catv)
    rmgemm(0, 1, bb * nn, d, hh * g, 1.0, &catv[0, 0, 0], hh * g,
           &whv[0, 0], hh * g, 0.0, &ov[0, 0, 0], d)
    for b in range(bb):
        for n in range(nn):
            for j in range(d):
                ov[b, n, j] *= mxv[b, n]
    return out, (x, y, t1, t2, t3, wh, mask_x, ny, xb, y2, y3, r, cat)


def cross_attn_bwd(object dout_, tuple cache):
    x_, y_, t1_, t2_, t3_, wh_, mask_x_, ny_, xb_, y2_, y3_, r_, cat_ = cache
    cdef cnp.ndarray x = x_, y = y_, t1 = t1_, t2 = t2_, t3 = t3_, wh = wh_
    cdef cnp.ndarray mask_x = mask_x_, ny = ny_
    cdef cnp.ndarray xb = xb_, y2 = y2_, y3 = y3_, r = r_, cat = cat_
    cdef cnp.ndarray dout = as_c(dout_)
    cdef int bb = x.shape[0], nn = x.shape[1], d = x.shape[2]
    cdef int mm = y.shape[1]
    cdef int hh = t1.shape[0], g = t1.shape[1]
    dm = np.empty((bb, nn, d))
    dwh = np.empty((d, hh * g))
    dcat = np.empty((bb, nn, hh * g))
    do = np.empty((bb, hh, nn, g))
    ds = np.empty((bb, hh, nn, mm))
    dxb = np.empty((bb, hh, nn, g))
    dy2 = np.empty((bb, hh, mm, g))
    dy3 = np.empty((bb, hh, mm, g))
    dx = np.zeros((bb, nn, d))
    dy = np.zeros((bb, mm, d))
    dt1 = np.zeros((hh, g, d))
    dt2 = np.zeros((hh, g, d))
    dt3 = np.zeros((hh, g, d))
    cdef double[:, :, ::1] dmv = dm, dcatv = dcat, dxv = dx, dyv = dy
    cdef double[:, :, ::1] xv = x, yv = y, catv = cat
    cdef double[:, :, :, ::1] dov = do, dsv = ds, dxbv = dxb
    cdef double[:, :, :, ::1] dy2v = dy2, dy3v = dy3
    cdef double[:, :, :, ::1] xbv = xb, y2v = y2, y3v = y3, rv = r
    cdef double[:, :, ::1] dt1v = dt1, dt2v = dt2, dt3v = dt3
    cdef double[:, :, ::1] t1v = t1, t2v = t2, t3v = t3
    cdef double[:, ::1] whv = wh, mxv = mask_x, dwhv = dwh
    cdef double[::1] nyv = ny
    cdef double[:, :, ::1] doutv = dout
    cdef int b, j, n, m
    cdef double scale = 1.0 / sqrt(<double> g)
    for b in range(bb):
        for n in range(nn):
            for j in range(d):
                dmv[b, n, j] = doutv[b, n, j] * mxv[b, n]
    rmgemm(1, 0, d, hh * g, bb * nn, 1.0, &dmv[0, 0, 0], d,
           &catv[0, 0, 0], hh * g, 0.0, &dwhv[0, 0], hh * g)
    rmgemm(0, 0, bb * nn, hh * g, d, 1.0, &dmv[0, 0, 0], d,
           &whv[0, 0], hh * g, 0.0, &dcatv[0, 0, 0], hh * g)
    cat_to_heads(dcatv, dov)
    for b in range(bb):
        for j in range(hh):
            for n in range(nn):
                for m in range(g):
                    dov[b, j, n, m] /= nyv[b]
            rmgemm(0, 1, nn, mm, g, 1.0, &dov[b, j, 0, 0], g,
                   &y3v[b, j, 0, 0], g, 0.0, &dsv[b, j, 0, 0], mm)
            rmgemm(1, 0, mm, g, nn, 1.0, &rv[b, j, 0, 0], mm,
                   &dov[b, j, 0, 0], g, 0.0, &dy3v[b, j, 0, 0], g)
            for n in range(nn):
                for m in range(mm):
                    if rv[b, j, n, m] > 0.0:
                        dsv[b, j, n, m] *= scale
                    else:
                        dsv[b, j, n, m] = 0.0
            rmgemm(0, 0, nn, g, mm, 1.0, &dsv[b, j, 0, 0], mm,
                   &y2v[b, j, 0, 0], g, 0.0, &dxbv[b, j, 0, 0], g)
            rmgemm(1, 0, mm, g, nn, 1.0, &dsv[b, j, 0, 0], mm,
                   &xbv[b, j, 0, 0], g, 0.0, &dy2v[b, j, 0, 0], g)
            rmgemm(0, 0, nn, d, g, 1.0, &dxbv[b, j, 0, 0], g,
                   &t1v[j, 0, 0], d, 1.0, &dxv[b, 0, 0], d)
            rmgemm(0, 0, mm, d, g, 1.0, &dy2v[b, j, 0, 0], g,
                   &t2v[j, 0, 0], d, 1.0, &dyv[b, 0, 0], d)
            rmgemm(0, 0, mm, d, g, 1.0, &dy3v[b, j, 0, 0], g,
                   &t3v[j, 0, 0], d, 1.0, &dyv[b, 0, 0], d)
            rmgemm(1, 0, g, d, nn, 1.0, &dxbv[b, j, 0, 0], g,
                   &xv[b, 0, 0], d, 1.0, &dt1v[j, 0, 0], d)
            rmgemm(1, 0, g, d, mm, 1.0, &dy2v[b, j, 0, 0], g,
                   &yv[b, 0, 0], d, 1.0, &dt2v[j, 0, 0], d)
            rmgemm(1, 0, g, d, mm, 1.0, &dy3v[b, j, 0, 0], g,
                   &yv[b, 0, 0], d, 1.0, &dt3v[j, 0, 0], d)
    return dx, dy, dt1, dt2, dt3, dwh


# -- cross-set feature map, affinity style --------------------------------------

def cross_aff_fwd(object x_, object y_, object t1_, object t2_, object wh_,
                  object mask_x_, object mask_y_):
    cdef cnp.ndarray x = as_c(x_), y = as_c(y_)
    cdef cnp.ndarray t1 = as_c(t1_), t2 = as_c(t2_), wh = as_c(wh_)
    cdef cnp.ndarray mask_x = as_c(mask_x_), mask_y = as_c(mask_y_)
    cdef int bb = x.shape[0], nn = x.shape[1], d = x.shape[2]
    cdef int mm = y.shape[1]
    cdef int hh = t1.shape[0], g = t1.shape[1]
    ny = np.empty(bb)
    xb = np.empty((bb, hh, nn, g))
    yb = np.empty((bb, hh, mm, g))
    r = np.empty((bb, hh, nn, mm))
    o4 = np.empty((bb, hh, nn, g))
    cat = np.empty((bb, nn, hh * g))
    out = np.empty((bb, nn, d))
    cdef double[:, :, ::1] xv = x, yv = y, catv = cat, ov = out
    cdef double[:, :, ::1] t1v = t1, t2v = t2
    cdef double[:, :, :, ::1] xbv = xb, ybv = yb, rv = r, o4v = o4
    cdef double[:, ::1] whv = wh, mxv = mask_x, myv = mask_y
    cdef double[::1] nyv = ny
    cdef int b, j, n, m
    cdef double scale = 1.0 / sqrt(<double> g)
    cdef double s, tot
    for b in range(bb):
        tot = 0.0
        for m in range(mm):
            tot += myv[b, m]
        nyv[b] = tot
    project_heads(xv, t1v, xbv)
    project_heads(yv, t2v, ybv)
    for b in range(bb):
        for j in range(hh):
            rmgemm(0, 1, nn, mm, g, scale, &xbv[b, j, 0, 0], g,
                   &ybv[b, j, 0, 0], g, 0.0, &rv[b, j, 0, 0], mm)
            for n in range(nn):
                for m in range(mm):
                    s = rv[b, j, n, m]
                    rv[b, j, n, m] = s * myv[b, m] if s > 0.0 else 0.0
            # o = (xb + r @ yb / ny) / 2
            rmgemm(0, 0, nn, g, mm, 0.5 / nyv[b], &rv[b, j, 0, 0], mm,
                   &ybv[b, j, 0, 0], g, 0.0, &o4v[b, j, 0, 0], g)
            for n in range(nn):
                for m in range(g):
                    o4v[b, j, n, m] += 0.5 * xbv[b, j, n, m]
    heads_to_cat(o4v, catv)
    rmgemm(0, 1, bb * nn, d, hh * g, 1.0, &catv[0, 0, 0], hh * g,
           &whv[0, 0], hh * g, 0.0, &ov[0, 0, 0], d)
    for b in range(bb):
        for n in range(nn):
            for j in range(d):
                ov[b, n, j] *= mxv[b, n]
    return out, (x, y, t1, t2, wh, mask_x, ny, xb, yb, r, cat)


def cross_aff_bwd(object dout_, tuple cache):
    x_, y_, t1_, t2_, wh_, mask_x_, ny_, xb_, yb_, r_, cat_ = cache
    cdef cnp.ndarray x = x_, y = y_, t1 = t1_, t2 = t2_, wh = wh_
    cdef cnp.ndarray mask_x = mask_x_, ny = ny_
    cdef cnp.ndarray xb = xb_, yb = yb_, r = r_, cat = cat_
    cdef cnp.ndarray dout = as_c(dout_)
    cdef int bb = x.shape[0], nn = x.shape[1], d = x.shape[2]
    cdef int mm = y.shape[1]
    cdef int hh = t1.shape[0], g = t1.shape[1]
    dm = np.empty((bb, nn, d))
    dwh = np.empty((d, hh * g))
    dcat = np.empty((bb, nn, hh * g))
    do = np.empty((bb, hh, nn, g))
    ds = np.empty((bb, hh, nn, mm))
    dxb = np.empty((bb, hh, nn, g))
    dyb = np.empty((bb, hh, mm, g))
    dx = np.zeros((bb, nn, d))
    dy = np.zeros((bb, mm, d))
    dt1 = np.zeros((hh, g, d))
    dt2 = np.zeros((hh, g, d))
    cdef double[:, :, ::1] dmv = dm, dcatv = dcat, dxv = dx, dyv = dy
    cdef double[:, :, ::1] xv = x, yv = y, catv = cat
    cdef double[:, :, :, ::1] dov = do, dsv = ds, dxbv = dxb, dybv = dyb
    cdef double[:, :, :, ::1] xbv = xb, ybv = yb, rv = r
    cdef double[:, :, ::1] dt1v = dt1, dt2v = dt2, t1v = t1, t2v = t2
    cdef double[:, ::1] whv = wh, mxv = mask_x, dwhv = dwh
    cdef double[::1] nyv = ny
    cdef double[:, :, ::1] doutv = dout
    cdef int b, j, n, m
    cdef double scale = 1.0 / sqrt(<double> g)
    for b in range(bb):
        for n in range(nn):
            for j in range(d):
                dmv[b, n, j] = doutv[b, n, j] * mxv[b, n]
    rmgemm(1, 0, d, hh * g, bb * nn, 1.0, &dmv[0, 0, 0], d,
           &catv[0, 0, 0], hh * g, 0.0, &dwhv[0, 0], hh * g)
    rmgemm(0, 0, bb * nn, hh * g, d, 1.0, &dmv[0, 0, 0], d,
           &whv[0, 0], hh * g, 0.0, &dcatv[0, 0, 0], hh * g)
    cat_to_heads(dcatv, dov)
    for b in range(bb):
        for j in range(hh):
            for n in range(nn):
                for m in range(g):
                    dov[b, j, n, m] *= 0.5
            # through the aggregate: dagg = do / ny
            rmgemm(0, 1, nn, mm, g, 1.0 / nyv[b], &dov[b, j, 0, 0], g,
                   &ybv[b, j, 0, 0], g, 0.0, &dsv[b, j, 0, 0], mm)
            rmgemm(1, 0, mm, g, nn, 1.0 / nyv[b], &rv[b, j, 0, 0], mm,
                   &dov[b, j, 0, 0], g, 0.0, &dybv[b, j, 0, 0], g)
            for n in range(nn):
                for m in range(mm):
                    if rv[b, j, n, m] > 0.0:
                        dsv[b, j, n, m] *= scale
                    else:
                        dsv[b, j, n, m] = 0.0
            for n in range(nn):
                for m in range(g):
                    dxbv[b, j, n, m] = dov[b, j, n, m]
            rmgemm(0, 0, nn, g, mm, 1.0, &dsv[b, j, 0, 0], mm,
                   &ybv[b, j, 0, 0], g, 1.0, &dxbv[b, j, 0, 0], g)
            rmgemm(1, 0, mm, g, nn, 1.0, &dsv[b, j, 0, 0], mm,
                   &xbv[b, j, 0, 0], g, 1.0, &dybv[b, j, 0, 0], g)
            rmgemm(0, 0, nn, d, g, 1.0, &dxbv[b, j, 0, 0], g,
                   &t1v[j, 0, 0], d, 1.0, &dxv[b, 0, 0], d)
            rmgemm(0, 0, mm, d, g, 1.0, &dybv[b, j, 0, 0], g,
                   &t2v[j, 0, 0], d, 1.0, &dyv[b, 0, 0], d)
            rmgemm(1, 0, g, d, nn, 1.0, &dxbv[b, j, 0, 0], g,
                   &xv[b, 0, 0], d, 1.0, &dt1v[j, 0, 0], d)
            rmgemm(1, 0, g, d, mm, 1.0, &dybv[b, j, 0, 0], g,
                   &yv[b, 0, 0], d, 1.0, &dt2v[j, 0, 0], d)
    return dx, dy, dt1, dt2, dwh


# -- multiple cross-similarity score ---------------------------------------------

def mcs_fwd(object x_, object y_, object w_, object wo_, object mask_x_,
            object mask_y_):
    cdef cnp.ndarray x = as_c(x_), y = as_c(y_)
    cdef cnp.ndarray w = as_c(w_), wo = as_c(wo_)
    cdef cnp.ndarray mask_x = as_c(mask_x_), mask_y = as_c(mask_y_)
    cdef int bb = x.shape[0], nn = x.shape[1], d = x.shape[2]
    cdef int mm = y.shape[1]
    cdef int hh = w.shape[0], dw = w.shape[1]
    nx = np.empty(bb)
    ny = np.empty(bb)
    xp = np.empty((bb, hh, nn, dw))
    yp = np.empty((bb, hh, mm, dw))
    r = np.empty((bb, hh, nn, mm))
    sims = np.empty((bb, hh))
    score = np.empty(bb)
    cdef double[:, :, ::1] xv = x, yv = y
    cdef double[:, :, ::1] wv = w
    cdef double[:, :, :, ::1] xpv = xp, ypv = yp, rv = r
    cdef double[:, ::1] simsv = sims, mxv = mask_x, myv = mask_y
    cdef double[::1] wov = wo, nxv = nx, nyv = ny, scorev = score
    cdef int b, j, n, m
    cdef double scale = 1.0 / sqrt(<double> dw)
    cdef double s, tot
    for b in range(bb):
        tot = 0.0
        for n in range(nn):
            tot += mxv[b, n]
        nxv[b] = tot
        tot = 0.0
        for m in range(mm):
            tot += myv[b, m]
        nyv[b] = tot
    project_heads(xv, wv, xpv)
    project_heads(yv, wv, ypv)
    for b in range(bb):
        for j in range(hh):
            rmgemm(0, 1, nn, mm, dw, scale, &xpv[b, j, 0, 0], dw,
                   &ypv[b, j, 0, 0], dw, 0.0, &rv[b, j, 0, 0], mm)
            tot = 0.0
            for n in range(nn):
                for m in range(mm):
                    s = rv[b, j, n, m]
                    if s > 0.0:
                        s *= mxv[b, n] * myv[b, m]
                    else:
                        s = 0.0
                    rv[b, j, n, m] = s
                    tot += s
            simsv[b, j] = tot / (nxv[b] * nyv[b])
        tot = 0.0
        for j in range(hh):
            tot += simsv[b, j] * wov[j]
        scorev[b] = tot
    return score, (x, y, w, wo, nx, ny, xp, yp, r, sims)


def mcs_bwd(object dscore_, tuple cache):
    x_, y_, w_, wo_, nx_, ny_, xp_, yp_, r_, sims_ = cache
    cdef cnp.ndarray x = x_, y = y_, w = w_, wo = wo_
    cdef cnp.ndarray nx = nx_, ny = ny_, xp = xp_, yp = yp_, r = r_
    cdef cnp.ndarray sims = sims_
    cdef cnp.ndarray dscore = as_c(dscore_)
    cdef int bb = x.shape[0], nn = x.shape[1], d = x.shape[2]
    cdef int mm = y.shape[1]
    cdef int hh = w.shape[0], dw = w.shape[1]
    dwo = np.zeros(hh)
    ds = np.empty((bb, hh, nn, mm))
    dxp = np.empty((bb, hh, nn, dw))
    dyp = np.empty((bb, hh, mm, dw))
    dx = np.zeros((bb, nn, d))
    dy = np.zeros((bb, mm, d))
    dw_ = np.zeros((hh, dw, d))
    cdef double[:, :, ::1] dxv = dx, dyv = dy, xv = x, yv = y
    cdef double[:, :, :, ::1] dsv = ds, dxpv = dxp, dypv = dyp
    cdef double[:, :, :, ::1] xpv = xp, ypv = yp, rv = r
    cdef double[:, :, ::1] dwv = dw_, wv = w
    cdef double[:, ::1] simsv = sims
    cdef double[::1] dwov = dwo, wov = wo, nxv = nx, nyv = ny
    cdef double[::1] dscorev = dscore
    cdef int b, j, n, m
    cdef double scale = 1.0 / sqrt(<double> dw)
    cdef double cell
    for b in range(bb):
        for j in range(hh):
            dwov[j] += dscorev[b] * simsv[b, j]
            cell = dscorev[b] * wov[j] / (nxv[b] * nyv[b]) * scale
            for n in range(nn):
                for m in range(mm):
                    dsv[b, j, n, m] = cell if rv[b, j, n, m] > 0.0 else 0.0
            rmgemm(0, 0, nn, dw, mm, 1.0, &dsv[b, j, 0, 0], mm,
                   &ypv[b, j, 0, 0], dw, 0.0, &dxpv[b, j, 0, 0], dw)
            rmgemm(1, 0, mm, dw, nn, 1.0, &dsv[b, j, 0, 0], mm,
                   &xpv[b, j, 0, 0], dw, 0.0, &dypv[b, j, 0, 0], dw)
            rmgemm(0, 0, nn, d, dw, 1.0, &dxpv[b, j, 0, 0], dw,
                   &wv[j, 0, 0], d, 1.0, &dxv[b, 0, 0], d)
            rmgemm(0, 0, mm, d, dw, 1.0, &dypv[b, j, 0, 0], dw,
                   &wv[j, 0, 0], d, 1.0, &dyv[b, 0, 0], d)
            rmgemm(1, 0, dw, d, nn, 1.0, &dxpv[b, j, 0, 0], dw,
                   &xv[b, 0, 0], d, 1.0, &dwv[j, 0, 0], d)
            rmgemm(1, 0, dw, d, mm, 1.0, &dypv[b, j, 0, 0], dw,
                   &yv[b, 0, 0], d, 1.0, &dwv[j, 0, 0], d)
    return dx, dy, dw_, dwo


# -- attention pooling for the no-interaction baseline ---------------------------

def pool_fwd(object x_, object seed_, object q_, object k_, object v_,
             object f_, object mask_):
    cdef cnp.ndarray x = as_c(x_), seed = as_c(seed_)
    cdef cnp.ndarray q = as_c(q_), k = as_c(k_), v = as_c(v_), f = as_c(f_)
    cdef cnp.ndarray mask = as_c(mask_)
    cdef int bb = x.shape[0], nn = x.shape[1], d = x.shape[2]
    cdef int e = k.shape[0], p = f.shape[0]
    qv_ = np.empty(d)
    keys = np.empty((bb, nn, e))
    vals = np.empty((bb, nn, e))
    a = np.empty((bb, nn))
    pre = np.empty((bb, e))
    out = np.empty((bb, p))
    cdef double[:, :, ::1] xv = x, keysv = keys, valsv = vals
    cdef double[:, ::1] qm = q, km = k, vm = v, fm = f, mv = mask
    cdef double[:, ::1] av = a, prev = pre, ov = out
    cdef double[::1] seedv = seed, qvv = qv_
    cdef int b, n, j
    cdef double scale = 1.0 / sqrt(<double> d)
    cdef double s, mx, tot
    # qv = q @ seed
    for j in range(d):
        s = 0.0
        for n in range(d):
            s += qm[j, n] * seedv[n]
        qvv[j] = s
    rmgemm(0, 1, bb * nn, e, d, 1.0, &xv[0, 0, 0], d, &km[0, 0], d,
           0.0, &keysv[0, 0, 0], e)
    rmgemm(0, 1, bb * nn, e, d, 1.0, &xv[0, 0, 0], d, &vm[0, 0], d,
           0.0, &valsv[0, 0, 0], e)
    for b in range(bb):
        mx = -1e300
        for n in range(nn):
            s = 0.0
            for j in range(e):
                s += keysv[b, n, j] * qvv[j]
            s *= scale
            av[b, n] = s
            if s > mx:
                mx = s
        tot = 0.0
        for n in range(nn):
            s = exp(av[b, n] - mx) * mv[b, n]
            av[b, n] = s
            tot += s
        for n in range(nn):
            av[b, n] /= tot
        for j in range(e):
            s = 0.0
            for n in range(nn):
                s += av[b, n] * valsv[b, n, j]
            prev[b, j] = s
    rmgemm(0, 1, bb, p, e, 1.0, &prev[0, 0], e, &fm[0, 0], e,
           0.0, &ov[0, 0], p)
    return out, (x, seed, q, k, v, f, mask, qv_, keys, vals, a, pre)


def pool_bwd(object dout_, tuple cache):
    x_, seed_, q_, k_, v_, f_, mask_, qv_, keys_, vals_, a_, pre_ = cache
    cdef cnp.ndarray x = x_, seed = seed_, q = q_, k = k_, v = v_, f = f_
    cdef cnp.ndarray mask = mask_, qvec = qv_, keys = keys_, vals = vals_
    cdef cnp.ndarray a = a_, pre = pre_
    cdef cnp.ndarray dout = as_c(dout_)
    cdef int bb = x.shape[0], nn = x.shape[1], d = x.shape[2]
    cdef int e = k.shape[0], p = f.shape[0]
    df = np.empty((p, e))
    dpre = np.empty((bb, e))
    dkeys = np.empty((bb, nn, e))
    dvals = np.empty((bb, nn, e))
    dqv = np.zeros(d)
    dx = np.zeros((bb, nn, d))
    dk = np.empty((e, d))
    dv = np.empty((e, d))
    dq = np.empty((d, d))
    dseed = np.empty(d)
    cdef double[:, :, ::1] xv = x, keysv = keys, valsv = vals
    cdef double[:, :, ::1] dkeysv = dkeys, dvalsv = dvals, dxv = dx
    cdef double[:, ::1] am = a, prem = pre, doutm = dout
    cdef double[:, ::1] dfm = df, dprem = dpre, dqm = dq
    cdef double[:, ::1] dkm = dk, dvm = dv
    cdef double[:, ::1] qm = q, km = k, vm = v, fm = f, mv = mask
    cdef double[::1] dqvv = dqv, qvv = qvec, seedv = seed, dseedv = dseed
    cdef int b, n, j
    cdef double scale = 1.0 / sqrt(<double> d)
    cdef double s, rowdot, dsn
    rmgemm(1, 0, p, e, bb, 1.0, &doutm[0, 0], p, &prem[0, 0], e,
           0.0, &dfm[0, 0], e)
    rmgemm(0, 0, bb, e, p, 1.0, &doutm[0, 0], p, &fm[0, 0], e,
           0.0, &dprem[0, 0], e)
    for b in range(bb):
        rowdot = 0.0
        # da[n] = dpre . vals[n]; softmax backward in place
        for n in range(nn):
            s = 0.0
            for j in range(e):
                s += dprem[b, j] * valsv[b, n, j]
            dkeysv[b, n, 0] = s  # stash da[n] temporarily
            rowdot += s * am[b, n]
        for n in range(nn):
            dsn = am[b, n] * (dkeysv[b, n, 0] - rowdot) * scale
            for j in range(e):
                dvalsv[b, n, j] = am[b, n] * dprem[b, j]
                dkeysv[b, n, j] = dsn * qvv[j]
            for j in range(e):
                dqvv[j] += dsn * keysv[b, n, j]
    rmgemm(0, 0, bb * nn, d, e, 1.0, &dkeysv[0, 0, 0], e, &km[0, 0], d,
           0.0, &dxv[0, 0, 0], d)
    rmgemm(0, 0, bb * nn, d, e, 1.0, &dvalsv[0, 0, 0], e, &vm[0, 0], d,
           1.0, &dxv[0, 0, 0], d)
    rmgemm(1, 0, e, d, bb * nn, 1.0, &dkeysv[0, 0, 0], e, &xv[0, 0, 0], d,
           0.0, &dkm[0, 0], d)
    rmgemm(1, 0, e, d, bb * nn, 1.0, &dvalsv[0, 0, 0], e, &xv[0, 0, 0], d,
           0.0, &dvm[0, 0], d)
    for n in range(d):
        for j in range(d):
            dqm[n, j] = dqvv[n] * seedv[j]
    for j in range(d):
        s = 0.0
        for n in range(d):
            s += qm[n, j] * dqvv[n]
        dseedv[j] = s
    return dx, dseed, dq, dk, dv, df
