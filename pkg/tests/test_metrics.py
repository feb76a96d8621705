import numpy as np
import pytest

from mcnn.metrics import ConfusionMatrix, aa, confusion, format_report, kappa, oa, per_class_accuracy
from oracles import confusion_tally_oracle, kappa_marginal_oracle


def cm_from(counts):
    counts = np.asarray(counts, dtype=np.int64)
    return ConfusionMatrix(counts=counts, class_count=counts.shape[0])


class TestConfusion:
    def test_perfect_predictions_diagonal(self):
        truth = np.array([0, 1, 2, 1, 0])
        cm = confusion(truth, truth, 3)
        assert np.array_equal(cm.counts, np.diag([2, 2, 1]))

    def test_single_pair(self):
        cm = confusion([1], [2], 4)
        expected = np.zeros((4, 4), dtype=np.int64)
        expected[1, 2] = 1
        assert np.array_equal(cm.counts, expected)

    def test_random_matches_tally_oracle(self):
        rng = np.random.default_rng(0)
        truth = rng.integers(0, 5, 200)
        pred = rng.integers(0, 5, 200)
        cm = confusion(truth, pred, 5)
        assert np.array_equal(cm.counts, confusion_tally_oracle(truth, pred, 5))
        assert cm.counts.sum() == 200

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            confusion([0, 1], [0], 2)

    def test_out_of_range_label(self):
        with pytest.raises(ValueError):
            confusion([0, 2], [0, 1], 2)


class TestScores:
    def test_diagonal_is_perfect(self):
        cm = cm_from(np.diag([5, 3, 2]))
        assert oa(cm) == 1.0
        assert aa(cm) == 1.0
        assert kappa(cm) == pytest.approx(1.0)

    def test_chance_agreement_gives_zero_kappa(self):
        cm = cm_from([[25, 25], [25, 25]])
        assert oa(cm) == pytest.approx(0.5)
        assert kappa(cm) == pytest.approx(0.0, abs=1e-12)

    def test_derived_fixture_against_marginal_oracle(self):
        counts = [[40, 10], [20, 30]]
        cm = cm_from(counts)
        assert oa(cm) == pytest.approx(0.7)
        # frozen from the marginal-product oracle: p_e = 0.5, kappa = 0.4
        assert kappa_marginal_oracle(counts) == pytest.approx(0.4)
        assert kappa(cm) == pytest.approx(0.4)

    def test_random_kappa_matches_oracle_and_bounds(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            c = int(rng.integers(2, 6))
            counts = rng.integers(0, 30, (c, c))
            counts[0, 0] += 1  # keep the matrix non-empty
            cm = cm_from(counts)
            assert kappa(cm) == pytest.approx(kappa_marginal_oracle(counts), abs=1e-12)
            assert -1.0 <= kappa(cm) <= 1.0
            total = counts.sum()
            p_e = float(counts.sum(1) @ counts.sum(0)) / total**2
            assert kappa(cm) <= oa(cm) / (1.0 - p_e) + 1e-12

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            c = int(rng.integers(2, 6))
            truth = rng.integers(0, c, 120)
            pred = rng.integers(0, c, 120)
            perm = rng.permutation(c)
            base = confusion(truth, pred, c)
            remapped = confusion(perm[truth], perm[pred], c)
            assert oa(base) == pytest.approx(oa(remapped), abs=1e-12)
            assert aa(base) == pytest.approx(aa(remapped), abs=1e-12)
            assert kappa(base) == pytest.approx(kappa(remapped), abs=1e-12)

    def test_aa_equals_oa_on_symmetric_fixture(self):
        cm = cm_from([[30, 10], [10, 30]])
        assert aa(cm) == pytest.approx(oa(cm))

    def test_aa_skips_absent_classes(self):
        cm = cm_from([[10, 0, 0], [0, 0, 0], [2, 0, 8]])
        recalls = per_class_accuracy(cm)
        assert np.isnan(recalls[1])
        assert aa(cm) == pytest.approx((1.0 + 0.8) / 2)

    def test_empty_matrix_rejected(self):
        with pytest.raises(ValueError):
            oa(cm_from(np.zeros((2, 2), dtype=int)))


class TestReport:
    def test_row_count_is_classes_plus_three(self):
        rng = np.random.default_rng(3)
        cm = confusion(rng.integers(0, 4, 50), rng.integers(0, 4, 50), 4)
        text = format_report(cm, ["a", "b", "c", "d"])
        lines = [l for l in text.strip().split("\n") if l]
        assert len(lines) == 1 + 4 + 3  # header + classes + OA/AA/kappa

    def test_kappa_scaled_by_100_in_report(self):
        cm = cm_from([[40, 10], [20, 30]])
        text = format_report(cm)
        assert "40.00" in text.split("\n")[-2]  # kappa row shows 40.00
