"""Forward-pass operations against hand-worked values and loop oracles."""

import numpy as np
import numpy.testing as npt
import pytest

import _oracles as orc
from setmatch.cross import (
    cross_set_layer,
    extract_features,
    g_affinity,
    g_attention,
    multihead_g,
)
from setmatch.encoder import encoder, ffn, input_project
from setmatch.errors import ConfigurationError, ShapeError
from setmatch.matching import (
    baseline_pool,
    baseline_score,
    cs,
    mcs,
    model_score,
    score,
)
from setmatch.numeric import SeededRng
from setmatch.params import (
    CrossSetParams,
    CSParams,
    EncoderParams,
    FfnParams,
    HeadParams,
    ModelConfig,
    ModelParams,
    PoolParams,
    StackParams,
)
from setmatch.sets import FeatureSet


def rand_set(rng, n, d, scale=1.0):
    return FeatureSet(rng.gaussian(n, d, 0.0, scale))


def head_params(rng, dg, d, with_t3=True):
    t1 = rng.gaussian(dg, d, 0.0, 0.5)
    t2 = rng.gaussian(dg, d, 0.0, 0.5)
    t3 = rng.gaussian(dg, d, 0.0, 0.5) if with_t3 else None
    return HeadParams(t1, t2, t3)


def ffn_params(rng, d, hidden=None):
    hidden = hidden or d
    return FfnParams(
        w1=rng.gaussian(hidden, d, 0.0, 0.4),
        b1=rng.gaussian(1, hidden, 0.0, 0.2)[0],
        w2=rng.gaussian(d, hidden, 0.0, 0.4),
        b2=rng.gaussian(1, d, 0.0, 0.2)[0],
    )


def encoder_params(rng, d, h):
    dg = d // h
    return EncoderParams(
        wq=rng.gaussian(1, h * dg * d, 0.0, 0.4)[0].reshape(h, dg, d),
        wk=rng.gaussian(1, h * dg * d, 0.0, 0.4)[0].reshape(h, dg, d),
        wv=rng.gaussian(1, h * dg * d, 0.0, 0.4)[0].reshape(h, dg, d),
        wh=rng.gaussian(d, h * dg, 0.0, 0.4),
        ffn=ffn_params(rng, d),
    )


def cross_params(rng, d, h, variant):
    dg = d // h
    shape3 = (h, dg, d)
    def block():
        return rng.gaussian(1, h * dg * d, 0.0, 0.4)[0].reshape(shape3)
    return CrossSetParams(
        variant=variant,
        t1=block(),
        t2=block(),
        t3=block() if variant == "attention" else None,
        wh=rng.gaussian(d, h * dg, 0.0, 0.4),
        ffn=ffn_params(rng, d),
    )


# -- input projection ---------------------------------------------------------

class TestInputProject:
    def test_identity_when_widths_match(self):
        s = FeatureSet(np.arange(6.0).reshape(2, 3))
        out = input_project(s, np.eye(3))
        npt.assert_array_equal(out.items, s.items)

    def test_permutation_equivariance(self):
        rng = SeededRng(1)
        s = rand_set(rng, 4, 5)
        w = rng.gaussian(3, 5, 0.0, 1.0)
        perm = np.array([2, 0, 3, 1])
        direct = input_project(s.permuted(perm), w).items
        routed = input_project(s, w).permuted(perm).items
        npt.assert_allclose(direct, routed, rtol=0, atol=0)

    def test_rows_match_matmul_oracle(self):
        rng = SeededRng(2)
        s = rand_set(rng, 3, 4)
        w = rng.gaussian(2, 4, 0.0, 1.0)
        out = input_project(s, w)
        expect = orc.matmul_loops(s.items, w.T)
        npt.assert_allclose(out.items, expect, atol=1e-13)

    def test_width_mismatch_raises(self):
        with pytest.raises(ShapeError):
            input_project(FeatureSet(np.ones((2, 3))), np.eye(4))


# -- per-item feed-forward ----------------------------------------------------

class TestFfn:
    def test_identity_weights_fix_nonnegative_input(self):
        d = 3
        p = FfnParams(np.eye(d), np.zeros(d), np.eye(d), np.zeros(d))
        s = FeatureSet(np.abs(SeededRng(3).gaussian(2, d, 0.0, 1.0)))
        npt.assert_allclose(ffn(s, p).items, s.items, atol=1e-15)

    def test_commutes_with_permutation(self):
        rng = SeededRng(4)
        s = rand_set(rng, 5, 4)
        p = ffn_params(rng, 4)
        perm = np.array([4, 2, 0, 1, 3])
        npt.assert_allclose(
            ffn(s.permuted(perm), p).items,
            ffn(s, p).permuted(perm).items,
            atol=0,
        )

    def test_matches_scalar_loop_oracle(self):
        rng = SeededRng(7)
        s = rand_set(rng, 1, 4)
        p = ffn_params(rng, 4, hidden=6)
        expect = orc.ffn_loops(s.items, p.w1, p.b1, p.w2, p.b2, p.slope)
        npt.assert_allclose(ffn(s, p).items, expect, atol=1e-13)


# -- encoder -------------------------------------------------------------------

class TestEncoder:
    def test_singleton_attention_is_forced(self):
        rng = SeededRng(5)
        d, h = 4, 2
        p = encoder_params(rng, d, h)
        s = rand_set(rng, 1, d)
        x = s.items[0]
        heads = [p.wv[j] @ x for j in range(h)]
        z = x + p.wh @ np.concatenate(heads)
        expect = z + orc.ffn_loops(
            z[None, :], p.ffn.w1, p.ffn.b1, p.ffn.w2, p.ffn.b2, p.ffn.slope
        )[0]
        npt.assert_allclose(encoder(s, p).items[0], expect, atol=1e-12)

    def test_permutation_equivariance(self):
        rng = SeededRng(6)
        for trial in range(10):
            d = int(rng.integers(2, 5)) * 2
            n = int(rng.integers(2, 7))
            p = encoder_params(rng, d, 2)
            s = rand_set(rng, n, d)
            perm = rng.permutation(n)
            direct = encoder(s.permuted(perm), p).items
            routed = encoder(s, p).permuted(perm).items
            npt.assert_allclose(direct, routed, atol=1e-9)

    def test_matches_nested_loop_oracle(self):
        rng = SeededRng(8)
        p = encoder_params(rng, 4, 2)
        s = rand_set(rng, 3, 4)
        expect = orc.encoder_loops(
            s.items, p.wq, p.wk, p.wv, p.wh,
            p.ffn.w1, p.ffn.b1, p.ffn.w2, p.ffn.b2, p.ffn.slope,
        )
        npt.assert_allclose(encoder(s, p).items, expect, atol=1e-12)

    def test_width_preserved(self):
        rng = SeededRng(9)
        p = encoder_params(rng, 6, 3)
        s = rand_set(rng, 4, 6)
        assert encoder(s, p).width == 6


# -- interaction map, attention form -------------------------------------------

class TestGAttention:
    def test_hand_example_identity_projections(self):
        head = HeadParams(np.eye(2), np.eye(2), np.eye(2))
        x = FeatureSet(np.array([[1.0, 0.0]]))
        y = FeatureSet(np.array([[2.0, 0.0]]))
        out = g_attention(x, y, head)
        npt.assert_allclose(out.items, [[2.0 * np.sqrt(2.0), 0.0]], atol=1e-12)

    def test_nonpositive_affinities_zero_the_output(self):
        head = HeadParams(np.eye(2), np.eye(2), np.eye(2))
        x = FeatureSet(np.array([[1.0, 0.0]]))
        y = FeatureSet(np.array([[-3.0, 0.0], [0.0, 0.0]]))
        npt.assert_array_equal(g_attention(x, y, head).items, 0.0)

    def test_invariant_to_y_permutation(self):
        rng = SeededRng(10)
        head = head_params(rng, 3, 5)
        x, y = rand_set(rng, 4, 5), rand_set(rng, 6, 5)
        perm = rng.permutation(6)
        npt.assert_allclose(
            g_attention(x, y.permuted(perm), head).items,
            g_attention(x, y, head).items,
            atol=1e-12,
        )

    def test_matches_loop_oracle(self):
        rng = SeededRng(11)
        head = head_params(rng, 3, 5)
        x, y = rand_set(rng, 4, 5), rand_set(rng, 3, 5)
        expect = orc.g_attention_loops(
            x.items, y.items, head.t1, head.t2, head.t3
        )
        npt.assert_allclose(g_attention(x, y, head).items, expect, atol=1e-12)


# -- interaction map, affinity form ---------------------------------------------

class TestGAffinity:
    def test_hand_example_identity_projections(self):
        head = HeadParams(np.eye(2), np.eye(2))
        x = FeatureSet(np.array([[1.0, 0.0]]))
        y = FeatureSet(np.array([[1.0, 0.0]]))
        out = g_affinity(x, y, head)
        expect = 0.5 * (1.0 + 1.0 / np.sqrt(2.0))
        npt.assert_allclose(out.items, [[expect, 0.0]], atol=1e-12)

    def test_orthogonal_y_leaves_half_x(self):
        head = HeadParams(np.eye(2), np.eye(2))
        x = FeatureSet(np.array([[1.0, 0.0]]))
        y = FeatureSet(np.array([[0.0, 1.0]]))
        npt.assert_allclose(g_affinity(x, y, head).items, [[0.5, 0.0]])

    def test_duplicating_y_changes_nothing(self):
        rng = SeededRng(12)
        head = head_params(rng, 3, 5, with_t3=False)
        x, y = rand_set(rng, 2, 5), rand_set(rng, 4, 5)
        doubled = FeatureSet(np.vstack([y.items, y.items]))
        npt.assert_allclose(
            g_affinity(x, doubled, head).items,
            g_affinity(x, y, head).items,
            atol=1e-12,
        )

    def test_matches_loop_oracle(self):
        rng = SeededRng(13)
        head = head_params(rng, 2, 4, with_t3=False)
        x, y = rand_set(rng, 3, 4), rand_set(rng, 5, 4)
        expect = orc.g_affinity_loops(x.items, y.items, head.t1, head.t2)
        npt.assert_allclose(g_affinity(x, y, head).items, expect, atol=1e-12)


# -- multihead merge -------------------------------------------------------------

class TestMultiheadG:
    def test_single_head_identity_merge_equals_g(self):
        rng = SeededRng(14)
        d = 4
        p = cross_params(rng, d, 1, "attention")
        p = CrossSetParams(
            variant="attention", t1=p.t1, t2=p.t2, t3=p.t3,
            wh=np.eye(d), ffn=p.ffn,
        )
        x, y = rand_set(rng, 3, d), rand_set(rng, 2, d)
        expect = g_attention(x, y, p.head(0)).items
        npt.assert_allclose(multihead_g(x, y, p).items, expect, atol=1e-13)

    def test_equivariant_in_x(self):
        rng = SeededRng(15)
        p = cross_params(rng, 6, 2, "affinity")
        x, y = rand_set(rng, 5, 6), rand_set(rng, 3, 6)
        perm = rng.permutation(5)
        npt.assert_allclose(
            multihead_g(x.permuted(perm), y, p).items,
            multihead_g(x, y, p).permuted(perm).items,
            atol=1e-9,
        )

    def test_matches_compositional_oracle(self):
        rng = SeededRng(16)
        d, h = 4, 2
        p = cross_params(rng, d, h, "attention")
        x, y = rand_set(rng, 3, d), rand_set(rng, 4, d)
        heads = [
            orc.g_attention_loops(x.items, y.items, p.t1[j], p.t2[j], p.t3[j])
            for j in range(h)
        ]
        expect = orc.matmul_loops(np.concatenate(heads, axis=1), p.wh.T)
        npt.assert_allclose(multihead_g(x, y, p).items, expect, atol=1e-12)

    def test_merge_width_mismatch_raises(self):
        rng = SeededRng(17)
        p = cross_params(rng, 4, 2, "affinity")
        bad = CrossSetParams(
            variant="affinity", t1=p.t1, t2=p.t2, t3=None,
            wh=np.ones((4, 7)), ffn=p.ffn,
        )
        with pytest.raises(ConfigurationError):
            multihead_g(rand_set(SeededRng(0), 2, 4), rand_set(SeededRng(1), 2, 4), bad)


# -- paired layer and stack -------------------------------------------------------

class TestCrossSetLayer:
    @pytest.mark.parametrize("variant", ["attention", "affinity"])
    def test_swapping_inputs_swaps_outputs_exactly(self, variant):
        rng = SeededRng(18)
        p = cross_params(rng, 4, 2, variant)
        x, y = rand_set(rng, 3, 4), rand_set(rng, 5, 4)
        x1, y1 = cross_set_layer(x, y, p)
        y2, x2 = cross_set_layer(y, x, p)
        npt.assert_array_equal(x1.items, x2.items)
        npt.assert_array_equal(y1.items, y2.items)

    def test_equal_inputs_give_equal_outputs(self):
        rng = SeededRng(19)
        p = cross_params(rng, 4, 2, "affinity")
        x = rand_set(rng, 3, 4)
        y = FeatureSet(x.items.copy())
        x1, y1 = cross_set_layer(x, y, p)
        npt.assert_array_equal(x1.items, y1.items)

    def test_matches_sequential_composition_oracle(self):
        rng = SeededRng(20)
        d, h = 4, 2
        p = cross_params(rng, d, h, "attention")
        x, y = rand_set(rng, 2, d), rand_set(rng, 3, d)
        fp = p.ffn
        xf = orc.ffn_loops(x.items, fp.w1, fp.b1, fp.w2, fp.b2, fp.slope)
        yf = orc.ffn_loops(y.items, fp.w1, fp.b1, fp.w2, fp.b2, fp.slope)
        def mg(a, b):
            heads = [
                orc.g_attention_loops(a, b, p.t1[j], p.t2[j], p.t3[j])
                for j in range(h)
            ]
            return orc.matmul_loops(np.concatenate(heads, axis=1), p.wh.T)
        x1, y1 = cross_set_layer(x, y, p)
        npt.assert_allclose(x1.items, x.items + mg(xf, yf), atol=1e-12)
        npt.assert_allclose(y1.items, y.items + mg(yf, xf), atol=1e-12)


class TestExtractFeatures:
    def test_empty_stack_is_identity(self):
        rng = SeededRng(21)
        x, y = rand_set(rng, 3, 4), rand_set(rng, 2, 4)
        stack = StackParams(encoders=[], cross_layers=[], variant="attention")
        x1, y1 = extract_features(x, y, stack)
        npt.assert_array_equal(x1.items, x.items)
        npt.assert_array_equal(y1.items, y.items)

    def _stack(self, rng, d, h, depth, variant):
        return StackParams(
            encoders=[encoder_params(rng, d, h) for _ in range(depth)],
            cross_layers=[cross_params(rng, d, h, variant) for _ in range(depth)],
            variant=variant,
        )

    def test_independent_permutations_route_through(self):
        rng = SeededRng(22)
        stack = self._stack(rng, 4, 2, 2, "affinity")
        x, y = rand_set(rng, 4, 4), rand_set(rng, 3, 4)
        px, py = rng.permutation(4), rng.permutation(3)
        x1, y1 = extract_features(x.permuted(px), y.permuted(py), stack)
        x2, y2 = extract_features(x, y, stack)
        npt.assert_allclose(x1.items, x2.permuted(px).items, atol=1e-9)
        npt.assert_allclose(y1.items, y2.permuted(py).items, atol=1e-9)

    def test_swap_through_full_stack(self):
        for seed in range(20):
            rng = SeededRng(100 + seed)
            variant = "attention" if seed % 2 else "affinity"
            stack = self._stack(rng, 4, 2, 2, variant)
            x, y = rand_set(rng, 3, 4), rand_set(rng, 4, 4)
            x1, y1 = extract_features(x, y, stack)
            y2, x2 = extract_features(y, x, stack)
            npt.assert_allclose(x1.items, x2.items, atol=1e-12)
            npt.assert_allclose(y1.items, y2.items, atol=1e-12)


# -- similarity scores -------------------------------------------------------------

class TestCs:
    def test_singleton_aligned(self):
        x = FeatureSet(np.array([[1.0, 0.0]]))
        y = FeatureSet(np.array([[1.0, 0.0]]))
        npt.assert_allclose(cs(x, y, np.eye(2)), 1.0 / np.sqrt(2.0), atol=1e-15)

    def test_singleton_orthogonal(self):
        x = FeatureSet(np.array([[1.0, 0.0]]))
        y = FeatureSet(np.array([[0.0, 1.0]]))
        assert cs(x, y, np.eye(2)) == 0.0

    def test_two_by_two_hand_case(self):
        x = FeatureSet(np.array([[1.0, 0.0], [0.0, 1.0]]))
        y = FeatureSet(np.array([[1.0, 0.0], [-1.0, 0.0]]))
        npt.assert_allclose(cs(x, y, np.eye(2)), 0.25 / np.sqrt(2.0), atol=1e-15)

    def test_nonnegative_and_symmetric(self):
        rng = SeededRng(23)
        for _ in range(20):
            w = rng.gaussian(3, 5, 0.0, 1.0)
            x, y = rand_set(rng, 4, 5), rand_set(rng, 2, 5)
            v = cs(x, y, w)
            assert v >= 0.0
            assert abs(v - cs(y, x, w)) <= 1e-12

    def test_singleton_reduction_formula(self):
        rng = SeededRng(24)
        w = rng.gaussian(3, 4, 0.0, 1.0)
        x, y = rand_set(rng, 1, 4), rand_set(rng, 1, 4)
        direct = max((w @ x.items[0]) @ (w @ y.items[0]), 0.0) / np.sqrt(3)
        npt.assert_allclose(cs(x, y, w), direct, atol=1e-15)

    def test_matches_loop_oracle(self):
        rng = SeededRng(25)
        w = rng.gaussian(2, 5, 0.0, 1.0)
        x, y = rand_set(rng, 4, 5), rand_set(rng, 3, 5)
        npt.assert_allclose(
            cs(x, y, w), orc.cs_loops(x.items, y.items, w), atol=1e-12
        )


class TestMcs:
    def test_single_head_unit_combiner_equals_cs(self):
        rng = SeededRng(26)
        w = rng.gaussian(1, 3 * 5, 0.0, 1.0).reshape(1, 3, 5)
        p = CSParams(w=w, wo=np.array([1.0]))
        x, y = rand_set(rng, 3, 5), rand_set(rng, 4, 5)
        npt.assert_allclose(mcs(x, y, p), cs(x, y, w[0]), atol=1e-15)

    def test_zero_combiner_gives_zero(self):
        rng = SeededRng(27)
        w = rng.gaussian(1, 2 * 3 * 4, 0.0, 1.0).reshape(2, 3, 4)
        p = CSParams(w=w, wo=np.zeros(2))
        assert mcs(rand_set(rng, 2, 4), rand_set(rng, 3, 4), p) == 0.0

    def test_matches_per_head_oracle(self):
        rng = SeededRng(28)
        w = rng.gaussian(1, 2 * 3 * 4, 0.0, 1.0).reshape(2, 3, 4)
        wo = rng.gaussian(1, 2, 0.0, 1.0)[0]
        p = CSParams(w=w, wo=wo)
        x, y = rand_set(rng, 3, 4), rand_set(rng, 4, 4)
        expect = orc.mcs_loops(x.items, y.items, w, wo)
        npt.assert_allclose(mcs(x, y, p), expect, atol=1e-12)


# -- full model scores ---------------------------------------------------------------

class TestModelScore:
    @pytest.mark.parametrize("variant", ["attention", "affinity"])
    def test_symmetric_and_invariant(self, variant):
        rng = SeededRng(29)
        model = ModelParams.init(
            ModelConfig(d=8, d_in=4, h=2, L=2, variant=variant), seed=3
        )
        x, y = rand_set(rng, 3, 4), rand_set(rng, 5, 4)
        base = model_score(x, y, model)
        assert np.isfinite(base)
        tol = 1e-9 * (1.0 + abs(base))
        assert abs(model_score(y, x, model) - base) <= tol
        px, py = rng.permutation(3), rng.permutation(5)
        assert abs(model_score(x.permuted(px), y.permuted(py), model) - base) <= tol

    def test_baseline_config_rejected(self):
        model = ModelParams.init(
            ModelConfig(d=8, d_in=4, h=2, L=1, variant="baseline"), seed=0
        )
        rng = SeededRng(30)
        with pytest.raises(ConfigurationError):
            model_score(rand_set(rng, 2, 4), rand_set(rng, 2, 4), model)

    def test_score_dispatch_matches_variant(self):
        rng = SeededRng(31)
        x, y = rand_set(rng, 2, 4), rand_set(rng, 3, 4)
        cross = ModelParams.init(
            ModelConfig(d=8, d_in=4, h=2, L=1, variant="affinity"), seed=1
        )
        base = ModelParams.init(
            ModelConfig(d=8, d_in=4, h=2, L=1, variant="baseline"), seed=1
        )
        assert score(x, y, cross) == model_score(x, y, cross)
        assert score(x, y, base) == baseline_score(x, y, base)


class TestBaselinePool:
    def _pool(self, rng, d):
        return PoolParams(
            seed=rng.gaussian(1, d, 0.0, 1.0)[0],
            q=rng.gaussian(d, d, 0.0, 0.5),
            k=rng.gaussian(d, d, 0.0, 0.5),
            v=rng.gaussian(d, d, 0.0, 0.5),
            f=rng.gaussian(d, d, 0.0, 0.5),
        )

    def test_singleton_weight_is_one(self):
        rng = SeededRng(32)
        p = self._pool(rng, 4)
        s = rand_set(rng, 1, 4)
        expect = p.f @ (p.v @ s.items[0])
        npt.assert_allclose(baseline_pool(s, p), expect, atol=1e-12)

    def test_permutation_invariant(self):
        rng = SeededRng(33)
        p = self._pool(rng, 5)
        s = rand_set(rng, 6, 5)
        perm = rng.permutation(6)
        npt.assert_allclose(
            baseline_pool(s.permuted(perm), p), baseline_pool(s, p), atol=1e-12
        )

    def test_matches_loop_oracle(self):
        rng = SeededRng(34)
        p = self._pool(rng, 4)
        s = rand_set(rng, 3, 4)
        expect = orc.pool_loops(s.items, p.seed, p.q, p.k, p.v, p.f)
        npt.assert_allclose(baseline_pool(s, p), expect, atol=1e-12)

    def test_mean_pool_fallback(self):
        rng = SeededRng(35)
        p = self._pool(rng, 4)
        s = rand_set(rng, 3, 4)
        expect = p.f @ (p.v @ s.items.mean(axis=0))
        npt.assert_allclose(baseline_pool(s, p, kind="mean"), expect, atol=1e-12)


class TestBaselineScore:
    def test_symmetric_exactly(self):
        rng = SeededRng(36)
        model = ModelParams.init(
            ModelConfig(d=8, d_in=4, h=2, L=1, variant="baseline"), seed=2
        )
        x, y = rand_set(rng, 3, 4), rand_set(rng, 2, 4)
        assert baseline_score(x, y, model) == baseline_score(y, x, model)

    def test_self_score_nonnegative(self):
        rng = SeededRng(37)
        model = ModelParams.init(
            ModelConfig(d=8, d_in=4, h=2, L=1, variant="baseline"), seed=4
        )
        x = rand_set(rng, 3, 4)
        assert baseline_score(x, FeatureSet(x.items.copy()), model) >= 0.0

    def test_invariant_under_item_permutations(self):
        rng = SeededRng(38)
        model = ModelParams.init(
            ModelConfig(d=8, d_in=4, h=2, L=1, variant="baseline"), seed=5
        )
        x, y = rand_set(rng, 4, 4), rand_set(rng, 3, 4)
        base = baseline_score(x, y, model)
        px, py = rng.permutation(4), rng.permutation(3)
        assert abs(
            baseline_score(x.permuted(px), y.permuted(py), model) - base
        ) <= 1e-9 * (1.0 + abs(base))

    def test_cross_config_rejected(self):
        model = ModelParams.init(
            ModelConfig(d=8, d_in=4, h=2, L=1, variant="attention"), seed=0
        )
        rng = SeededRng(39)
        with pytest.raises(ConfigurationError):
            baseline_score(rand_set(rng, 2, 4), rand_set(rng, 2, 4), model)
