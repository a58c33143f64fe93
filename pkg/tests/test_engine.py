"""Batched engine vs the one-pair-at-a-time reference path.

The engine owes callers exactly one thing: padded, stacked evaluation
must give the same numbers as scoring each (X, Y) pair on its own with
the plain FeatureSet operations. These tests pin that, padding rows and
all, for every variant.
"""

import numpy as np
import numpy.testing as npt
import pytest

from setmatch import backends
from setmatch.engine import (
    cell_expand,
    pad_sets,
    pair_scores_fwd,
    score_matrix_fwd,
)
from setmatch.errors import PreconditionError
from setmatch.matching import score
from setmatch.numeric import SeededRng
from setmatch.params import ModelConfig, ModelParams
from setmatch.sets import FeatureSet

KERN = backends.get_backend("numpy")


def ragged_sets(rng, count, d, nmax=6):
    return [
        rng.gaussian(int(rng.integers(1, nmax + 1)), d, 0.0, 1.0)
        for _ in range(count)
    ]


class TestPadSets:
    def test_roundtrip_rows_and_mask(self):
        rng = SeededRng(0)
        arrays = ragged_sets(rng, 5, 3)
        padded, mask = pad_sets(arrays)
        assert padded.shape[0] == 5
        assert padded.shape[1] == max(a.shape[0] for a in arrays)
        for i, a in enumerate(arrays):
            n = a.shape[0]
            npt.assert_array_equal(padded[i, :n], a)
            npt.assert_array_equal(padded[i, n:], 0.0)
            npt.assert_array_equal(mask[i, :n], 1.0)
            npt.assert_array_equal(mask[i, n:], 0.0)

    def test_empty_list_rejected(self):
        with pytest.raises(PreconditionError):
            pad_sets([])

    def test_width_mismatch_rejected(self):
        with pytest.raises(PreconditionError):
            pad_sets([np.ones((2, 3)), np.ones((2, 4))])


class TestCellExpand:
    def test_j_major_layout(self):
        px = np.arange(4.0).reshape(2, 1, 2)
        py = np.arange(6.0).reshape(3, 1, 2) + 100
        mx = np.ones((2, 1))
        my = np.ones((3, 1))
        cx, cmx, cy, cmy = cell_expand(px, mx, py, my)
        assert cx.shape == (6, 1, 2)
        for j in range(2):
            for k in range(3):
                cell = j * 3 + k
                npt.assert_array_equal(cx[cell], px[j])
                npt.assert_array_equal(cy[cell], py[k])
        assert cmx.shape == (6, 1) and cmy.shape == (6, 1)


def make_model(variant, seed=0, pool="attention"):
    return ModelParams.init(
        ModelConfig(d=8, d_in=4, h=2, L=2, variant=variant, pool=pool),
        seed=seed,
    )


@pytest.mark.parametrize("variant", ["attention", "affinity", "baseline"])
def test_score_matrix_matches_solo_scores(variant):
    rng = SeededRng(1)
    model = make_model(variant)
    xs = ragged_sets(rng, 3, 4)
    ys = ragged_sets(rng, 4, 4)
    s, _ = score_matrix_fwd(model, xs, ys, KERN)
    assert s.shape == (3, 4)
    for j, xa in enumerate(xs):
        for k, ya in enumerate(ys):
            solo = score(FeatureSet(xa), FeatureSet(ya), model)
            assert abs(s[j, k] - solo) <= 1e-12 * (1.0 + abs(solo))


@pytest.mark.parametrize("variant", ["attention", "affinity", "baseline"])
def test_pair_scores_match_solo_scores(variant):
    rng = SeededRng(2)
    model = make_model(variant, seed=1)
    xs = ragged_sets(rng, 5, 4)
    ys = ragged_sets(rng, 5, 4)
    s, _ = pair_scores_fwd(model, xs, ys, KERN)
    assert s.shape == (5,)
    for i, (xa, ya) in enumerate(zip(xs, ys)):
        solo = score(FeatureSet(xa), FeatureSet(ya), model)
        assert abs(s[i] - solo) <= 1e-12 * (1.0 + abs(solo))


def test_mean_pool_matrix_matches_solo():
    rng = SeededRng(3)
    model = make_model("baseline", seed=2, pool="mean")
    xs = ragged_sets(rng, 3, 4)
    ys = ragged_sets(rng, 3, 4)
    s, _ = score_matrix_fwd(model, xs, ys, KERN)
    for j, xa in enumerate(xs):
        for k, ya in enumerate(ys):
            solo = score(FeatureSet(xa), FeatureSet(ya), model)
            assert abs(s[j, k] - solo) <= 1e-12 * (1.0 + abs(solo))


@pytest.mark.parametrize("variant", ["attention", "affinity"])
def test_padding_rows_are_inert(variant):
    """Growing the pad width (by adding one oversized set) must not
    change any other cell's score."""
    rng = SeededRng(4)
    model = make_model(variant, seed=3)
    xs = ragged_sets(rng, 3, 4, nmax=3)
    ys = ragged_sets(rng, 3, 4, nmax=3)
    s_small, _ = score_matrix_fwd(model, xs, ys, KERN)
    big = rng.gaussian(9, 4, 0.0, 1.0)
    s_big, _ = score_matrix_fwd(model, xs + [big], ys + [big], KERN)
    npt.assert_allclose(s_big[:3, :3], s_small, atol=1e-12)


def test_pair_scores_length_mismatch_rejected():
    model = make_model("attention")
    rng = SeededRng(5)
    with pytest.raises(PreconditionError):
        pair_scores_fwd(model, ragged_sets(rng, 2, 4), ragged_sets(rng, 3, 4), KERN)


def test_score_matrix_diag_matches_pair_scores():
    rng = SeededRng(6)
    model = make_model("affinity", seed=4)
    xs = ragged_sets(rng, 4, 4)
    ys = ragged_sets(rng, 4, 4)
    s, _ = score_matrix_fwd(model, xs, ys, KERN)
    diag, _ = pair_scores_fwd(model, xs, ys, KERN)
    npt.assert_allclose(np.diag(s), diag, atol=1e-12)
