import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from _oracles import ap_oracle, auc_oracle
from bnwvad.metrics import average_precision, expand_frames, roc_auc, subset_and_classwise

labelled = st.integers(2, 30).flatmap(
    lambda n: st.tuples(st.lists(st.integers(0, 8).map(float), min_size=n, max_size=n), st.lists(st.booleans(), min_size=n, max_size=n))
)


class TestAuc:
    def test_examples(self):
        assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
        assert roc_auc([0.5] * 4, [0, 1, 0, 1]) == 0.5
        assert roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == pytest.approx(0.75)

    def test_single_class(self):
        with pytest.raises(ValueError, match="undefined AUC"):
            roc_auc([0.1, 0.2], [1, 1])

    @given(labelled)
    def test_oracle_and_reversal(self, case):
        s, y = case
        assume(0 < sum(y) < len(y))
        assert roc_auc(s, y) == pytest.approx(auc_oracle(s, y), abs=1e-12)
        assert roc_auc(s, y) + roc_auc([-v for v in s], y) == pytest.approx(1.0)


class TestAp:
    def test_examples(self):
        assert average_precision([0.9, 0.8, 0.1], [1, 1, 0]) == 1.0
        assert average_precision([0.9, 0.1], [0, 1]) == 0.5

    def test_random_matches_sweep(self, rng):
        s, y = rng.random(20), rng.random(20) < 0.4
        assert average_precision(s, y) == pytest.approx(ap_oracle(s.tolist(), y.tolist()), abs=1e-9)

    def test_no_positives(self):
        with pytest.raises(ValueError):
            average_precision([0.1], [0])

    @given(labelled)
    def test_oracle_with_ties_and_monotone_invariance(self, case):
        s, y = case
        assume(any(y))
        ap = average_precision(s, y)
        assert ap == pytest.approx(ap_oracle(s, y), abs=1e-12)
        assert average_precision([3 * v + 1 for v in s], y) == pytest.approx(ap)
        perfect = [float(v) for v in y]
        assert average_precision(perfect, y) == 1.0 >= sum(y) / len(y)

    def test_random_scores_give_prevalence(self, rng):
        y = rng.random(500) < 0.3
        aps = [average_precision(rng.random(500), y) for _ in range(200)]
        assert np.mean(aps) == pytest.approx(y.mean(), abs=0.05)


class TestReport:
    scores = {"n": np.array([0.1, 0.2, 0.3]), "a": np.array([0.9, 0.15, 0.8]), "b": np.array([0.25, 0.7, 0.05])}
    labels = {"n": np.array([0, 0, 0]), "a": np.array([1, 0, 1]), "b": np.array([0, 1, 0])}
    video = {"n": 0, "a": 1, "b": 1}

    def test_hand_fixture(self):
        rep = subset_and_classwise(self.scores, self.labels, self.video, {"a": "x", "b": "y"})
        # positives 0.9, 0.8, 0.7 outrank all six negatives
        assert rep.auc == 1.0 and rep.ap == 1.0 and rep.n_snippets == 9
        assert rep.auc_abn == 1.0
        assert set(rep.classwise_ap) == {"x", "y"}
        assert rep.classwise_ap["y"] == pytest.approx(1.0)

    def test_hand_fixture_with_errors(self):
        s = dict(self.scores, b=np.array([0.95, 0.7, 0.05]))
        rep = subset_and_classwise(s, self.labels, self.video)
        # ranking: 0.95(-) 0.9(+) 0.8(+) 0.7(+) ...
        assert rep.ap == pytest.approx((1 / 2 + 2 / 3 + 3 / 4) / 3)
        assert rep.auc == pytest.approx(15 / 18)

    def test_abnormal_only_dataset(self):
        sub = {k: self.scores[k] for k in "ab"}
        rep = subset_and_classwise(sub, {k: self.labels[k] for k in "ab"}, self.video)
        assert rep.auc == rep.auc_abn

    def test_missing_labels(self):
        with pytest.raises(ValueError, match="evaluation requires snippet labels"):
            subset_and_classwise(self.scores, dict(self.labels, n=None), self.video)

    def test_frame_expansion_keeps_metrics(self):
        base = subset_and_classwise(self.scores, self.labels, self.video)
        rep = subset_and_classwise(self.scores, self.labels, self.video, frames_per_snippet=16)
        assert rep.auc == pytest.approx(base.auc) and rep.ap == pytest.approx(base.ap)
        assert rep.n_snippets == 16 * base.n_snippets
        assert expand_frames(np.array([1, 2]), 2).tolist() == [1, 1, 2, 2]
