import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from _oracles import bls_oracle, matched_oracle, sls_oracle
from bnwvad.selection import (
    BLS, BOTH, NONE, SLS, SelectionMask, SelectionRatios, k_from_ratio, select_bls, select_normal_matched,
    select_sbs, select_sls,
)

# four videos: the last is dense with high scores, the first is faint
FIG_GRID = np.array(
    [
        [0.3, 0.4, 0.1, 0.05, 0.02],
        [0.6, 0.5, 0.2, 0.15, 0.12],
        [0.65, 0.55, 0.25, 0.22, 0.11],
        [0.9, 0.85, 0.8, 0.7, 0.01],
    ]
)

grids = st.tuples(st.integers(1, 8), st.integers(1, 32)).flatmap(
    lambda s: arrays(np.float64, s, elements=st.floats(-10, 10, allow_nan=False))
)
# coarse values so ties are common
tied_grids = st.tuples(st.integers(1, 6), st.integers(1, 10)).flatmap(
    lambda s: arrays(np.float64, s, elements=st.integers(0, 3).map(float))
)
ratio = st.floats(0.0, 1.0)


class TestKFromRatio:
    @pytest.mark.parametrize("rho, n, k", [(0.4, 5, 2), (0.3, 7, 3), (0.3, 10, 3), (0.01, 5, 1), (1.0, 9, 9), (0.0, 9, 0)])
    def test_values(self, rho, n, k):
        assert k_from_ratio(rho, n) == k

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            k_from_ratio(1.2, 4)


class TestSls:
    def test_dense_video_extra_snippets_ignored(self):
        m = select_sls(FIG_GRID, 0.4)
        assert m.selected.sum(axis=1).tolist() == [2, 2, 2, 2]
        assert not m.selected[3, 2] and not m.selected[3, 3]
        assert m.selected[0, 0] and m.selected[0, 1]

    def test_full_selection(self, rng):
        assert select_sls(rng.normal(size=(3, 4)), 1.0).selected.all()

    def test_random_matches_oracle(self, rng):
        g = rng.normal(size=(3, 7))
        np.testing.assert_array_equal(select_sls(g, 0.3).selected, sls_oracle(g.tolist(), 3))

    def test_ratio_above_one(self):
        with pytest.raises(ValueError):
            select_sls(FIG_GRID, 1.1)

    def test_non_finite(self):
        with pytest.raises(ValueError, match="finite"):
            select_sls(np.array([[np.inf, 0.0]]), 0.5)


class TestBls:
    def test_count(self, rng):
        assert select_bls(rng.normal(size=(4, 5)), 0.4).count == 8

    def test_uniform_grid_row_major(self):
        m = select_bls(np.ones((3, 4)), 0.5)
        assert m.selected.ravel().tolist() == [True] * 6 + [False] * 6

    def test_random_matches_oracle(self, rng):
        g = rng.normal(size=(4, 5))
        np.testing.assert_array_equal(select_bls(g, 0.3).selected, bls_oracle(g.tolist(), 6))

    def test_dense_video_dominates(self):
        m = select_bls(FIG_GRID, 0.4)
        assert m.selected[3, :4].all() and not m.selected[0].any()


class TestSbs:
    def test_union_covers_both_failure_modes(self):
        m = select_sbs(FIG_GRID, SelectionRatios(0.4, 0.4))
        assert m.selected[3, 2] and m.selected[3, 3]
        assert m.selected[0, 0] and m.selected[0, 1]
        assert m.provenance[3, 0] == BOTH and m.provenance[0, 1] == SLS and m.provenance[3, 3] == BLS

    def test_zero_ratio_disables_half(self, rng):
        g = rng.normal(size=(4, 6))
        np.testing.assert_array_equal(select_sbs(g, SelectionRatios(0.3, 0)).selected, select_sls(g, 0.3).selected)
        np.testing.assert_array_equal(select_sbs(g, SelectionRatios(0, 0.3)).selected, select_bls(g, 0.3).selected)

    def test_ratios_not_both_zero(self):
        with pytest.raises(ValueError):
            SelectionRatios(0, 0)

    @given(grids, ratio, ratio)
    def test_union_and_count_bounds(self, g, rs, rb):
        assume(rs > 0 or rb > 0)
        m = select_sbs(g, SelectionRatios(rs, rb))
        a, b = select_sls(g, rs), select_bls(g, rb)
        np.testing.assert_array_equal(m.selected, a.selected | b.selected)
        assert max(a.count, b.count) <= m.count <= a.count + b.count
        assert m.count == int(m.selected.sum())
        np.testing.assert_array_equal(m.provenance != NONE, m.selected)


class TestMatched:
    def test_all(self, rng):
        assert select_normal_matched(rng.normal(size=(2, 5)), 10).selected.all()

    def test_even_quota(self, rng):
        g = rng.normal(size=(2, 5))
        m = select_normal_matched(g, 4)
        np.testing.assert_array_equal(m.selected, sls_oracle(g.tolist(), 2))

    def test_remainder_exhaustive(self, rng):
        g = rng.normal(size=(3, 5))
        m = select_normal_matched(g, 5)
        assert m.count == 5 and (m.selected.sum(axis=1) >= 1).all()
        np.testing.assert_array_equal(m.selected, matched_oracle(g.tolist(), 5))

    def test_insufficient(self):
        with pytest.raises(ValueError, match="insufficient normal snippets"):
            select_normal_matched(np.zeros((2, 3)), 7)

    @given(grids, st.data())
    def test_exact_count(self, g, data):
        k = data.draw(st.integers(0, g.size))
        assert select_normal_matched(g, k).count == k


class TestOracleProperties:
    @given(grids, st.floats(0.01, 1.0))
    def test_sls_bls_match_oracles(self, g, rho):
        B, T = g.shape
        np.testing.assert_array_equal(select_sls(g, rho).selected, sls_oracle(g.tolist(), k_from_ratio(rho, T)))
        np.testing.assert_array_equal(select_bls(g, rho).selected, bls_oracle(g.tolist(), k_from_ratio(rho, B * T)))

    @given(tied_grids, st.floats(0.01, 1.0))
    def test_tie_rule(self, g, rho):
        B, T = g.shape
        np.testing.assert_array_equal(select_sls(g, rho).selected, sls_oracle(g.tolist(), k_from_ratio(rho, T)))
        np.testing.assert_array_equal(select_bls(g, rho).selected, bls_oracle(g.tolist(), k_from_ratio(rho, B * T)))

    @given(grids, st.floats(0.01, 1.0))
    def test_rank_based(self, g, rho):
        # strictly increasing map
        h = np.arctan(g) * 3 + 1
        f, fh = g.ravel(), h.ravel()
        assume(np.array_equal(np.sign(f[:, None] - f), np.sign(fh[:, None] - fh)))  # no float collapse
        r = SelectionRatios(rho, rho)
        np.testing.assert_array_equal(select_sbs(g, r).selected, select_sbs(h, r).selected)
        np.testing.assert_array_equal(select_normal_matched(g, g.shape[0]).selected, select_normal_matched(h, g.shape[0]).selected)

    @given(grids, st.floats(0.01, 1.0), st.data())
    def test_raising_selected_keeps_it(self, g, rho, data):
        r = SelectionRatios(rho, rho)
        m = select_sbs(g, r)
        cells = np.argwhere(m.selected)
        b, t = cells[data.draw(st.integers(0, len(cells) - 1))]
        g2 = g.copy()
        g2[b, t] += data.draw(st.floats(0.0, 5.0))
        assert select_sbs(g2, r).selected[b, t]

    @given(grids, st.floats(0.01, 1.0), st.randoms(use_true_random=False))
    def test_sls_row_permutation(self, g, rho, rnd):
        perm = list(range(g.shape[0]))
        rnd.shuffle(perm)
        np.testing.assert_array_equal(select_sls(g[perm], rho).selected, select_sls(g, rho).selected[perm])

    @given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 8)), elements=st.floats(-10, 10), unique=True),
           st.floats(0.01, 1.0), st.randoms(use_true_random=False))
    def test_bls_row_permutation_without_ties(self, g, rho, rnd):
        perm = list(range(g.shape[0]))
        rnd.shuffle(perm)
        np.testing.assert_array_equal(select_bls(g[perm], rho).selected, select_bls(g, rho).selected[perm])


def test_mask_invariants():
    with pytest.raises(ValueError):
        SelectionMask(np.array([[True]]), np.array([[NONE]], dtype=np.uint8))
    m = SelectionMask.from_bool(np.array([[True, False]]), BLS)
    assert m.count == 1 and m.provenance.tolist() == [[BLS, NONE]]
