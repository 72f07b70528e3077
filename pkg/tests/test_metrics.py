"""Classification and regression metrics pinned to hand-worked values."""

import numpy as np
import pytest

from avmae.metrics import (
    classification_metrics,
    compute_metrics,
    concordance,
    pearson,
    regression_metrics,
)


class TestClassification:
    def test_perfect_predictions(self):
        rep = classification_metrics([0, 1, 2, 0], [0, 1, 2, 0])
        assert rep.uar == rep.war == rep.wf1 == rep.mf1 == 1.0

    def test_hand_worked_confusion(self):
        # targets [0,0,1,1], predictions [0,1,1,1]:
        #   class 0: recall 1/2, precision 1/1, f1 = 2/3
        #   class 1: recall 1, precision 2/3, f1 = 4/5
        rep = classification_metrics([0, 0, 1, 1], [0, 1, 1, 1])
        assert rep.war == 0.75
        assert abs(rep.uar - 0.75) < 1e-12
        assert abs(rep.mf1 - (2.0 / 3.0 + 4.0 / 5.0) / 2.0) < 1e-12
        assert abs(rep.wf1 - (2.0 / 3.0 + 4.0 / 5.0) / 2.0) < 1e-12

    def test_weighted_f1_uses_support(self):
        # class 0 has 3 samples, class 1 has 1:
        #   class 0: recall 2/3, precision 1, f1 = 4/5
        #   class 1: recall 1, precision 1/2, f1 = 2/3
        rep = classification_metrics([0, 0, 0, 1], [0, 0, 1, 1])
        expect_wf1 = (3 * 4.0 / 5.0 + 1 * 2.0 / 3.0) / 4.0
        assert abs(rep.wf1 - expect_wf1) < 1e-12
        assert abs(rep.mf1 - (4.0 / 5.0 + 2.0 / 3.0) / 2.0) < 1e-12

    def test_absent_class_excluded_with_warning(self):
        with pytest.warns(UserWarning, match="class 2 absent"):
            rep = classification_metrics([0, 1, 0, 1], [0, 1, 1, 1], num_classes=3)
        # macro averages span only the two observed classes
        assert abs(rep.uar - (1.0 + 1.0) / 2.0) > 0  # sanity: finite
        assert 0.0 <= rep.uar <= 1.0

    def test_all_metrics_in_unit_interval(self, rng):
        targets = rng.integers(0, 4, size=50)
        preds = rng.integers(0, 4, size=50)
        scores = rng.random((50, 4))
        rep = classification_metrics(targets, preds, scores=scores)
        for value in (rep.uar, rep.war, rep.wf1, rep.mf1, rep.auc):
            assert 0.0 <= value <= 1.0

    def test_auc_perfect_ranking(self):
        targets = [0, 0, 1, 1]
        scores = np.array([[0.9, 0.1], [0.8, 0.2], [0.2, 0.8], [0.1, 0.9]])
        rep = classification_metrics(targets, [0, 0, 1, 1], scores=scores)
        assert rep.auc == 1.0

    def test_auc_random_scores_near_half(self):
        rng = np.random.default_rng(0)
        targets = rng.integers(0, 2, size=400)
        scores = rng.random((400, 2))
        preds = scores.argmax(axis=1)
        rep = classification_metrics(targets, preds, scores=scores)
        assert abs(rep.auc - 0.5) < 0.1

    def test_auc_reversed_ranking_is_zero(self):
        targets = [0, 0, 1, 1]
        scores = np.array([[0.1, 0.9], [0.2, 0.8], [0.8, 0.2], [0.9, 0.1]])
        rep = classification_metrics(targets, [1, 1, 0, 0], scores=scores)
        assert rep.auc == 0.0

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError):
            classification_metrics([], [])

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            classification_metrics([0, 1], [0])


class TestRegression:
    def test_perfect_prediction(self):
        rep = regression_metrics([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        assert abs(rep.pcc - 1.0) < 1e-12
        assert abs(rep.ccc - 1.0) < 1e-12

    def test_constant_offset_keeps_pcc_drops_ccc(self):
        targets = np.array([1.0, 2.0, 3.0, 4.0])
        rep = regression_metrics(targets, targets + 2.0)
        assert abs(rep.pcc - 1.0) < 1e-12
        assert rep.ccc < rep.pcc
        # closed form: 2*var / (2*var + offset^2)
        var = targets.var()
        assert abs(rep.ccc - 2 * var / (2 * var + 4.0)) < 1e-12

    def test_anticorrelated(self):
        rep = regression_metrics([1.0, 2.0, 3.0], [3.0, 2.0, 1.0])
        assert abs(rep.pcc + 1.0) < 1e-12
        assert rep.ccc < 0

    def test_multi_dimension_average(self):
        targets = np.array([[1.0, 0.0], [2.0, 1.0], [3.0, 2.0]])
        preds = targets.copy()
        preds[:, 1] = preds[::-1, 1]  # second dim reversed
        rep = regression_metrics(targets, preds)
        assert abs(rep.pcc - 0.0) < 1e-12  # mean of +1 and -1

    def test_scale_bias_penalized_by_ccc(self):
        targets = np.array([1.0, 2.0, 3.0, 4.0])
        rep = regression_metrics(targets, targets * 3.0)
        assert abs(rep.pcc - 1.0) < 1e-12
        assert rep.ccc < 1.0

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            regression_metrics([1.0, 2.0], [[1.0, 2.0], [3.0, 4.0]])

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            regression_metrics([], [])


class TestHelpers:
    def test_pearson_matches_numpy(self, rng):
        x = rng.standard_normal(40)
        y = 0.3 * x + rng.standard_normal(40)
        assert abs(pearson(x, y) - np.corrcoef(x, y)[0, 1]) < 1e-12

    def test_concordance_closed_form(self, rng):
        x = rng.standard_normal(40)
        y = rng.standard_normal(40)
        expect = 2 * np.cov(x, y, bias=True)[0, 1] / (
            x.var() + y.var() + (x.mean() - y.mean()) ** 2)
        assert abs(concordance(x, y) - expect) < 1e-12

    def test_degenerate_inputs_are_nan(self):
        assert np.isnan(pearson([1.0, 1.0], [1.0, 2.0]))
        assert np.isnan(concordance([1.0, 1.0], [1.0, 1.0]))


class TestDispatch:
    def test_task_routing(self):
        assert compute_metrics([0, 1], [0, 1], task="classify").task == "classify"
        assert compute_metrics([0.0, 1.0], [0.0, 1.0], task="regress").task == "regress"
        with pytest.raises(ValueError):
            compute_metrics([0], [0], task="cluster")

    def test_report_serialization(self):
        rep = compute_metrics([0, 1], [0, 1], task="classify")
        d = rep.as_dict()
        assert d["task"] == "classify"
        assert set(d) == {"task", "uar", "war", "wf1", "mf1"}
        lines = rep.lines()
        assert lines[0] == "task: classify"
        assert any(line.startswith("WAR: ") for line in lines)
