"""Compiled kernels against the numpy reference: same numbers, both ways.

Every forward output and every gradient must agree to 1e-12 on random
padded batches. Skipped entirely when the extension is not built, since
the numpy path is then the only backend.
"""

import numpy as np
import pytest

from setmatch import backends
from setmatch.errors import ConfigurationError
from setmatch.numeric import SeededRng
from setmatch.params import LEAKY_SLOPE

NP = backends.get_backend("numpy")
CY = backends.cython_backend

pytestmark = pytest.mark.skipif(
    CY is None, reason="compiled backend not built"
)

ATOL = 1e-12


def padded(rng, b, n, d):
    x = rng.gaussian(b, n * d, 0.0, 1.0).reshape(b, n, d)
    mask = np.ones((b, n))
    counts = rng.integers(1, n + 1, size=b)
    for i, c in enumerate(counts):
        mask[i, c:] = 0.0
        x[i, c:] = 0.0
    return x, mask


def assert_close(label, a, b):
    a, b = np.asarray(a), np.asarray(b)
    assert a.shape == b.shape, f"{label}: {a.shape} vs {b.shape}"
    dev = np.abs(a - b).max() if a.size else 0.0
    assert dev <= ATOL, f"{label}: max deviation {dev:.3e}"


def run_both(fwd_name, bwd_name, args, dout):
    out_n, cache_n = getattr(NP, fwd_name)(*args)
    out_c, cache_c = getattr(CY, fwd_name)(*args)
    assert_close(f"{fwd_name} output", out_n, out_c)
    grads_n = getattr(NP, bwd_name)(dout, cache_n)
    grads_c = getattr(CY, bwd_name)(dout, cache_c)
    assert len(grads_n) == len(grads_c)
    for i, (gn, gc) in enumerate(zip(grads_n, grads_c)):
        assert_close(f"{bwd_name} grad[{i}]", gn, gc)


def test_selection_and_metadata():
    assert NP.NAME == "numpy"
    assert CY.NAME == "cython"
    assert "cython" in backends.available_backends()
    with pytest.raises(ConfigurationError):
        backends.get_backend("fortran")


def test_linear():
    rng = SeededRng(200)
    x, _ = padded(rng, 4, 5, 6)
    w = rng.gaussian(3, 6, 0.0, 0.5)
    dout = rng.gaussian(4, 5 * 3, 0.0, 1.0).reshape(4, 5, 3)
    run_both("linear_fwd", "linear_bwd", (x, w), dout)


def test_ffn():
    rng = SeededRng(201)
    x, mask = padded(rng, 4, 5, 6)
    w1 = rng.gaussian(7, 6, 0.0, 0.5)
    b1 = rng.gaussian(1, 7, 0.0, 0.3)[0]
    w2 = rng.gaussian(6, 7, 0.0, 0.5)
    b2 = rng.gaussian(1, 6, 0.0, 0.3)[0]
    dout = rng.gaussian(4, 5 * 6, 0.0, 1.0).reshape(4, 5, 6)
    run_both(
        "ffn_fwd", "ffn_bwd", (x, w1, b1, w2, b2, LEAKY_SLOPE, mask), dout
    )


def test_self_attention():
    rng = SeededRng(202)
    b, n, d, h, g = 5, 7, 12, 3, 4
    x, mask = padded(rng, b, n, d)
    wq = rng.gaussian(1, h * g * d, 0.0, 0.4)[0].reshape(h, g, d)
    wk = rng.gaussian(1, h * g * d, 0.0, 0.4)[0].reshape(h, g, d)
    wv = rng.gaussian(1, h * g * d, 0.0, 0.4)[0].reshape(h, g, d)
    wh = rng.gaussian(d, h * g, 0.0, 0.4)
    dout = rng.gaussian(b, n * d, 0.0, 1.0).reshape(b, n, d)
    run_both("mhsa_fwd", "mhsa_bwd", (x, wq, wk, wv, wh, mask), dout)


def test_cross_attention_map():
    rng = SeededRng(203)
    b, n, m, d, h, g = 5, 7, 6, 12, 3, 4
    x, mx = padded(rng, b, n, d)
    y, my = padded(rng, b, m, d)
    t1 = rng.gaussian(1, h * g * d, 0.0, 0.4)[0].reshape(h, g, d)
    t2 = rng.gaussian(1, h * g * d, 0.0, 0.4)[0].reshape(h, g, d)
    t3 = rng.gaussian(1, h * g * d, 0.0, 0.4)[0].reshape(h, g, d)
    wh = rng.gaussian(d, h * g, 0.0, 0.4)
    dout = rng.gaussian(b, n * d, 0.0, 1.0).reshape(b, n, d)
    run_both(
        "cross_attn_fwd", "cross_attn_bwd",
        (x, y, t1, t2, t3, wh, mx, my), dout,
    )


def test_cross_affinity_map():
    rng = SeededRng(204)
    b, n, m, d, h, g = 5, 6, 7, 12, 3, 4
    x, mx = padded(rng, b, n, d)
    y, my = padded(rng, b, m, d)
    t1 = rng.gaussian(1, h * g * d, 0.0, 0.4)[0].reshape(h, g, d)
    t2 = rng.gaussian(1, h * g * d, 0.0, 0.4)[0].reshape(h, g, d)
    wh = rng.gaussian(d, h * g, 0.0, 0.4)
    dout = rng.gaussian(b, n * d, 0.0, 1.0).reshape(b, n, d)
    run_both(
        "cross_aff_fwd", "cross_aff_bwd", (x, y, t1, t2, wh, mx, my), dout
    )


def test_similarity_score():
    rng = SeededRng(205)
    b, n, m, d, h, w_dim = 5, 6, 7, 12, 3, 4
    x, mx = padded(rng, b, n, d)
    y, my = padded(rng, b, m, d)
    w = rng.gaussian(1, h * w_dim * d, 0.0, 0.4)[0].reshape(h, w_dim, d)
    wo = rng.gaussian(1, h, 0.0, 1.0)[0]
    dscore = rng.gaussian(1, b, 0.0, 1.0)[0]
    run_both("mcs_fwd", "mcs_bwd", (x, y, w, wo, mx, my), dscore)


def test_attention_pool():
    rng = SeededRng(206)
    b, n, d = 5, 7, 12
    x, mask = padded(rng, b, n, d)
    seed = rng.gaussian(1, d, 0.0, 1.0)[0]
    q = rng.gaussian(d, d, 0.0, 0.4)
    k = rng.gaussian(d, d, 0.0, 0.4)
    v = rng.gaussian(d, d, 0.0, 0.4)
    f = rng.gaussian(d, d, 0.0, 0.4)
    dout = rng.gaussian(b, d, 0.0, 1.0)
    run_both("pool_fwd", "pool_bwd", (x, seed, q, k, v, f, mask), dout)


def test_end_to_end_losses_match():
    """Same training batch, same loss and gradients through either backend."""
    from setmatch.engine import score_matrix_fwd, score_matrix_bwd
    from setmatch.params import ModelConfig, ModelParams
    from setmatch.training import kpair_set_grad

    rng = SeededRng(207)
    xs = [rng.gaussian(int(rng.integers(1, 5)), 4, 0.0, 1.0) for _ in range(3)]
    ys = [rng.gaussian(int(rng.integers(1, 5)), 4, 0.0, 1.0) for _ in range(3)]
    for variant in ("attention", "affinity", "baseline"):
        cfg = ModelConfig(d=8, d_in=4, h=2, L=2, variant=variant)
        grads = {}
        for kern in (NP, CY):
            model = ModelParams.init(cfg, seed=11)
            s, cache = score_matrix_fwd(model, xs, ys, kern)
            _, ds = kpair_set_grad(s)
            model.zero_grads()
            score_matrix_bwd(ds, cache, model)
            grads[kern.NAME] = {
                n: slot.grad.copy() for n, slot in model.blocks.items()
            }
        for name in grads["numpy"]:
            assert_close(
                f"{variant} {name}", grads["numpy"][name], grads["cython"][name]
            )
