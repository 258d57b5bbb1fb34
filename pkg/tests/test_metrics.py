"""Confusion matrix and summary metrics."""

import numpy as np
import pytest

from riemsar.errors import DimensionMismatchError, EmptyMatrixError
from riemsar.metrics import confusion, report, report_csv, report_text


class TestConfusion:
    def test_perfect_prediction_is_diagonal(self, rng):
        truth = rng.integers(1, 4, size=(10, 10)).astype(np.int32)
        cm = confusion(truth, truth)
        assert np.all(cm == np.diag(np.diag(cm)))
        assert cm.sum() == 100

    def test_all_unlabeled_gives_empty(self):
        truth = np.zeros((5, 5), dtype=np.int32)
        pred = np.ones((5, 5), dtype=np.int32)
        cm = confusion(pred, truth)
        assert cm.sum() == 0

    def test_unlabeled_pixels_excluded(self):
        truth = np.array([[0, 1], [2, 0]])
        pred = np.array([[2, 1], [2, 1]])
        cm = confusion(pred, truth)
        assert cm.sum() == 2
        assert cm[0, 0] == 1 and cm[1, 1] == 1

    def test_marginals_match_independent_tally(self, rng):
        truth = rng.integers(0, 4, size=(30, 30)).astype(np.int32)
        pred = rng.integers(1, 4, size=(30, 30)).astype(np.int32)
        cm = confusion(pred, truth)
        mask = truth > 0
        for c in range(1, cm.shape[0] + 1):
            assert cm[c - 1].sum() == np.sum(truth[mask] == c)
            assert cm[:, c - 1].sum() == np.sum(pred[mask & (truth > 0)] == c)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            confusion(np.ones((2, 2), dtype=int), np.ones((3, 3), dtype=int))

    def test_zero_prediction_on_labeled_pixel_rejected(self):
        with pytest.raises(ValueError):
            confusion(np.array([[0]]), np.array([[1]]))


class TestReport:
    def test_perfect_two_class(self):
        rep = report(np.array([[50, 0], [0, 50]]))
        assert rep.oa == 1.0
        assert rep.kappa == 1.0
        assert rep.miou == 1.0
        assert rep.aa == 1.0 and rep.f1 == 1.0

    def test_hand_computed_case(self):
        # OA = 70/100; p_e = (50*60 + 50*40)/100^2 = 0.5; kappa = 0.4
        rep = report(np.array([[40, 10], [20, 30]]))
        assert rep.oa == pytest.approx(0.7, abs=0)
        assert rep.kappa == pytest.approx(0.4, abs=1e-15)

    def test_single_class_degenerate(self):
        rep = report(np.array([[37]]))
        assert rep.oa == 1.0
        assert rep.kappa == 1.0
        assert "degenerate-chance-agreement" in rep.flags

    def test_permutation_invariance(self, rng):
        for _ in range(20):
            cm = rng.integers(0, 30, size=(4, 4)).astype(np.int64)
            if cm.sum() == 0 or (cm.sum(axis=1) == 0).any():
                continue
            perm = rng.permutation(4)
            pm = cm[np.ix_(perm, perm)]
            a, b = report(cm), report(pm)
            for attr in ("oa", "aa", "kappa", "f1", "miou"):
                assert getattr(a, attr) == pytest.approx(getattr(b, attr), abs=1e-12)

    def test_miou_bounded_by_oa(self, rng):
        for _ in range(100):
            cm = rng.integers(0, 50, size=(3, 3)).astype(np.int64)
            if cm.sum() == 0 or (cm.sum(axis=1) == 0).any():
                continue
            rep = report(cm)
            assert 0.0 <= rep.miou <= rep.oa + 1e-12 <= 1.0 + 1e-12

    def test_identity_metrics_all_ones(self, rng):
        truth = rng.integers(1, 5, size=(12, 12)).astype(np.int32)
        rep = report(confusion(truth, truth))
        assert rep.oa == rep.aa == rep.kappa == rep.f1 == rep.miou == 1.0

    def test_empty_reference_class_skipped_with_warning(self):
        cm = np.array([[10, 0, 0], [0, 12, 0], [0, 0, 0]])
        with pytest.warns(UserWarning):
            rep = report(cm)
        assert rep.aa == 1.0
        assert "empty-classes-skipped" in rep.flags

    def test_empty_matrix(self):
        with pytest.raises(EmptyMatrixError):
            report(np.zeros((2, 2), dtype=np.int64))


class TestSerialization:
    def test_text_block_parses(self):
        rep = report(np.array([[40, 10], [20, 30]]))
        text = report_text(rep)
        values = dict(
            line.split(" = ") for line in text.strip().splitlines() if " = " in line
        )
        assert float(values["oa"]) == pytest.approx(0.7)
        assert float(values["kappa"]) == pytest.approx(0.4)

    def test_csv_has_class_rows_and_summary(self):
        rep = report(np.array([[40, 10], [20, 30]]))
        lines = report_csv(rep).strip().splitlines()
        assert lines[0] == "row,class,ua,recall"
        assert sum(1 for ln in lines if ln.startswith("class,")) == 2
        assert lines[-2].startswith("summary,")
        assert lines[-1].startswith("values,0.7")
