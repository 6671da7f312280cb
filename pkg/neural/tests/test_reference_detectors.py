"""Fixed-configuration detectors and the rank statistic they report."""

import json

import numpy as np
import pytest

from quack_neural.data import save_feature_csv
from quack_neural.detectors import (
    DETECTOR_NAMES,
    EPOCHS,
    LEARNING_RATE,
    SVM_C,
    ReferenceDetectorError,
    load_score_file,
    rank_auc,
    save_score_file,
    train_reference_detectors,
)


def _pair_counting_auc(scores, labels):
    """Literal definition: P(pos > neg) with ties at half credit."""
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1.0
            elif p == q:
                wins += 0.5
    return wins / (len(pos) * len(neg))


class TestRankAuc:
    @pytest.mark.parametrize("seed", range(5))
    def test_matches_pair_counting_with_ties(self, seed):
        rng = np.random.default_rng(seed)
        n = 80
        labels = (rng.random(n) < 0.4).astype(np.int8)
        labels[:2] = [0, 1]
        scores = np.round(rng.normal(labels * 0.5, 1.0), 1)
        assert rank_auc(scores, labels) == pytest.approx(
            _pair_counting_auc(scores, labels), abs=1e-12
        )

    def test_perfect_and_inverted_rankings(self):
        labels = np.array([0, 0, 1, 1])
        assert rank_auc(np.array([0.1, 0.2, 0.8, 0.9]), labels) == 1.0
        assert rank_auc(np.array([0.9, 0.8, 0.2, 0.1]), labels) == 0.0
        assert rank_auc(np.array([0.5, 0.5, 0.5, 0.5]), labels) == 0.5

    def test_rejects_unusable_inputs(self):
        with pytest.raises(ReferenceDetectorError, match="aligned"):
            rank_auc(np.zeros(3), np.zeros(4))
        with pytest.raises(ReferenceDetectorError, match="finite"):
            rank_auc(np.array([np.nan, 1.0]), np.array([0, 1]))
        with pytest.raises(ReferenceDetectorError, match="0 or 1"):
            rank_auc(np.array([0.1, 0.2]), np.array([0, 2]))
        with pytest.raises(ReferenceDetectorError, match="both classes"):
            rank_auc(np.array([0.1, 0.2]), np.array([1, 1]))


class TestScoreFiles:
    def test_round_trip(self, tmp_path):
        labels = np.array([0, 1, 1, 0], dtype=np.int8)
        scores = np.array([0.25, 0.75, 1.0 / 3.0, 0.5])
        path = tmp_path / "scores.csv"
        save_score_file(path, labels, scores)
        back_labels, back_scores = load_score_file(path)
        np.testing.assert_array_equal(back_labels, labels)
        np.testing.assert_array_equal(back_scores, scores)

    def test_header_and_rows_are_validated(self, tmp_path):
        path = tmp_path / "scores.csv"
        path.write_text("label,auc\nhuman,0.5\n")
        with pytest.raises(ReferenceDetectorError, match="expected header"):
            load_score_file(path)
        path.write_text("label,score\nrobot,0.5\n")
        with pytest.raises(ReferenceDetectorError, match="malformed"):
            load_score_file(path)
        with pytest.raises(ReferenceDetectorError, match="no such"):
            load_score_file(tmp_path / "missing.csv")


def _toy_matrices(tmp_path, length=8, shift=3.0):
    """Linearly separable human/synthetic windows at a small length."""
    rng = np.random.default_rng(0)

    def block(n, offset):
        X = rng.normal(offset, 1.0, (n, 2 * length))
        return X

    X_train = np.vstack([block(60, 0.0), block(60, shift)])
    y_train = np.r_[np.zeros(60, dtype=np.int8), np.ones(60, dtype=np.int8)]
    X_test = np.vstack([block(30, 0.0), block(30, shift)])
    y_test = np.r_[np.zeros(30, dtype=np.int8), np.ones(30, dtype=np.int8)]
    train_csv = tmp_path / "train.csv"
    test_csv = tmp_path / "test.csv"
    save_feature_csv(X_train, y_train, train_csv)
    save_feature_csv(X_test, y_test, test_csv)
    return train_csv, test_csv, y_test


class TestReferenceDetectors:
    def test_all_four_separate_a_mean_shift(self, tmp_path):
        train_csv, test_csv, y_test = _toy_matrices(tmp_path)
        report = train_reference_detectors(train_csv, test_csv, tmp_path / "out")
        assert set(report.auc) == set(DETECTOR_NAMES)
        for name in DETECTOR_NAMES:
            assert report.auc[name] > 0.95, name

    def test_report_pins_the_fixed_configuration(self, tmp_path):
        train_csv, test_csv, _ = _toy_matrices(tmp_path)
        report = train_reference_detectors(train_csv, test_csv, tmp_path / "out")
        assert report.svm_c == SVM_C == 3.0
        assert report.epochs == EPOCHS == 6
        assert report.learning_rate == LEARNING_RATE == 1e-3
        assert report.window_length == 8
        on_disk = json.loads((tmp_path / "out" / "report.json").read_text())
        assert on_disk == report.to_dict()

    def test_score_files_reproduce_the_reported_auc(self, tmp_path):
        train_csv, test_csv, y_test = _toy_matrices(tmp_path)
        report = train_reference_detectors(train_csv, test_csv, tmp_path / "out")
        for name in DETECTOR_NAMES:
            labels, scores = load_score_file(tmp_path / "out" / f"scores_{name}.csv")
            np.testing.assert_array_equal(labels, y_test)
            assert rank_auc(scores, labels) == report.auc[name]

    def test_same_seed_reproduces_scores(self, tmp_path):
        train_csv, test_csv, _ = _toy_matrices(tmp_path)
        train_reference_detectors(train_csv, test_csv, tmp_path / "a", seed=1)
        train_reference_detectors(train_csv, test_csv, tmp_path / "b", seed=1)
        for name in DETECTOR_NAMES:
            a = (tmp_path / "a" / f"scores_{name}.csv").read_bytes()
            assert a == (tmp_path / "b" / f"scores_{name}.csv").read_bytes()

    def test_mismatched_feature_widths_are_refused(self, tmp_path):
        train_csv, test_csv, _ = _toy_matrices(tmp_path, length=8)
        other_train, _, _ = _toy_matrices(tmp_path / "other", length=6)
        with pytest.raises(ReferenceDetectorError, match="shape mismatch"):
            train_reference_detectors(other_train, test_csv, tmp_path / "out")

    def test_training_requires_both_classes(self, tmp_path):
        rng = np.random.default_rng(0)
        X = rng.normal(0.0, 1.0, (10, 16))
        y = np.zeros(10, dtype=np.int8)
        train_csv = tmp_path / "train.csv"
        save_feature_csv(X, y, train_csv)
        _, test_csv, _ = _toy_matrices(tmp_path / "t")
        with pytest.raises(ReferenceDetectorError, match="both classes"):
            train_reference_detectors(train_csv, test_csv, tmp_path / "out")

    def test_windows_shorter_than_the_kernel_are_refused(self, tmp_path):
        train_csv, test_csv, _ = _toy_matrices(tmp_path, length=4)
        with pytest.raises(ReferenceDetectorError, match="CNN kernel"):
            train_reference_detectors(train_csv, test_csv, tmp_path / "out")
