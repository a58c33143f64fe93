"""Independent brute-force reference implementations.

Everything here is written with explicit index loops and no shared code
with the package, so agreement is evidence rather than tautology. Slow on
purpose; tests keep the sizes small.
"""

import math

import numpy as np


def matmul_loops(a, b):
    n, k = a.shape
    k2, m = b.shape
    assert k == k2
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


def softmax_naive(a):
    out = np.zeros_like(np.asarray(a, dtype=float))
    for i in range(out.shape[0]):
        row = [math.exp(v) for v in a[i]]
        s = sum(row)
        for j, v in enumerate(row):
            out[i, j] = v / s
    return out


def _project(items, w):
    # rows of items through w: (n, d) x (p, d) -> (n, p)
    n = items.shape[0]
    p = w.shape[0]
    out = np.zeros((n, p))
    for i in range(n):
        for r in range(p):
            acc = 0.0
            for c in range(w.shape[1]):
                acc += w[r, c] * items[i, c]
            out[i, r] = acc
    return out


def cs_loops(x_items, y_items, w):
    d_w = w.shape[0]
    px = _project(x_items, w)
    py = _project(y_items, w)
    total = 0.0
    for i in range(px.shape[0]):
        for j in range(py.shape[0]):
            dot = 0.0
            for t in range(d_w):
                dot += px[i, t] * py[j, t]
            total += max(dot / math.sqrt(d_w), 0.0)
    return total / (px.shape[0] * py.shape[0])


def mcs_loops(x_items, y_items, w_heads, w_o):
    return sum(
        w_o[j] * cs_loops(x_items, y_items, w_heads[j])
        for j in range(len(w_o))
    )


def g_attention_loops(x_items, y_items, t1, t2, t3):
    dg = t1.shape[0]
    xb = _project(x_items, t1)
    y2 = _project(y_items, t2)
    y3 = _project(y_items, t3)
    out = np.zeros_like(xb)
    for n in range(xb.shape[0]):
        for m in range(y2.shape[0]):
            dot = 0.0
            for t in range(dg):
                dot += xb[n, t] * y2[m, t]
            weight = max(dot / math.sqrt(dg), 0.0)
            for t in range(dg):
                out[n, t] += weight * y3[m, t]
    return out / y_items.shape[0]


def g_affinity_loops(x_items, y_items, t1, t2):
    dg = t1.shape[0]
    xb = _project(x_items, t1)
    yb = _project(y_items, t2)
    out = np.zeros_like(xb)
    for n in range(xb.shape[0]):
        agg = np.zeros(dg)
        for m in range(yb.shape[0]):
            dot = 0.0
            for t in range(dg):
                dot += xb[n, t] * yb[m, t]
            weight = max(dot / math.sqrt(dg), 0.0)
            for t in range(dg):
                agg[t] += weight * yb[m, t]
        for t in range(dg):
            out[n, t] = 0.5 * (xb[n, t] + agg[t] / yb.shape[0])
    return out


def ffn_loops(items, w1, b1, w2, b2, slope):
    hid = w1.shape[0]
    out = np.zeros((items.shape[0], w2.shape[0]))
    for i in range(items.shape[0]):
        hidden = []
        for r in range(hid):
            acc = b1[r]
            for c in range(w1.shape[1]):
                acc += w1[r, c] * items[i, c]
            hidden.append(acc if acc >= 0 else slope * acc)
        for r in range(w2.shape[0]):
            acc = b2[r]
            for c in range(hid):
                acc += w2[r, c] * hidden[c]
            out[i, r] = acc
    return out


def encoder_loops(items, wq, wk, wv, wh, w1, b1, w2, b2, slope):
    h, dg, d = wq.shape
    n = items.shape[0]
    merged = np.zeros((n, h * dg))
    for j in range(h):
        q = _project(items, wq[j])
        k = _project(items, wk[j])
        v = _project(items, wv[j])
        scores = np.zeros((n, n))
        for a in range(n):
            for b in range(n):
                dot = 0.0
                for t in range(dg):
                    dot += q[a, t] * k[b, t]
                scores[a, b] = dot / math.sqrt(dg)
        att = softmax_naive(scores)
        for a in range(n):
            for t in range(dg):
                acc = 0.0
                for b in range(n):
                    acc += att[a, b] * v[b, t]
                merged[a, j * dg + t] = acc
    z = items + _project(merged, wh)
    return z + ffn_loops(z, w1, b1, w2, b2, slope)


def pool_loops(items, seed, q, k, v, f):
    d = seed.shape[0]
    qv = np.zeros(d)
    for r in range(d):
        for c in range(d):
            qv[r] += q[r, c] * seed[c]
    keys = _project(items, k)
    vals = _project(items, v)
    scores = np.zeros(items.shape[0])
    for i in range(items.shape[0]):
        for t in range(d):
            scores[i] += keys[i, t] * qv[t]
        scores[i] /= math.sqrt(d)
    att = softmax_naive(scores[None, :])[0]
    pooled = np.zeros(d)
    for i in range(items.shape[0]):
        for t in range(d):
            pooled[t] += att[i] * vals[i, t]
    out = np.zeros(d)
    for r in range(d):
        for c in range(d):
            out[r] += f[r, c] * pooled[c]
    return out
