"""Checkpoint selection: the lexicographic rule on constructed score
fixtures, plus the collapse/diameter statistics it depends on."""

import numpy as np
import pytest

from quack_neural.selection import (
    CheckpointScore,
    critic_stability,
    feature_space_diameter,
    mode_collapse_fraction,
    select_checkpoint,
)
from quack_neural.wgan import GanError


def _score(step, distance, ratio=1.0, collapsed=False, stability=0.1):
    return CheckpointScore(
        step=step,
        critic_stability=stability,
        marginal_distance=distance,
        variance_ratio=ratio,
        mode_collapsed=collapsed,
    )


class TestSelectionRule:
    def test_single_survivor_selected(self):
        scores = [
            _score(5000, 0.30, collapsed=True),
            _score(10000, 0.12),
            _score(15000, 0.05, collapsed=True),
        ]
        assert select_checkpoint(scores).step == 10000

    def test_lowest_marginal_distance_wins(self):
        scores = [_score(5000, 0.08), _score(10000, 0.15)]
        assert select_checkpoint(scores).step == 5000

    def test_variance_ratio_breaks_distance_ties(self):
        scores = [_score(5000, 0.10, ratio=0.95), _score(10000, 0.10, ratio=0.7)]
        assert select_checkpoint(scores).step == 5000
        scores = [_score(5000, 0.10, ratio=0.7), _score(10000, 0.10, ratio=0.95)]
        assert select_checkpoint(scores).step == 10000

    def test_ratio_distance_is_symmetric_around_one(self):
        scores = [_score(5000, 0.10, ratio=1.2), _score(10000, 0.10, ratio=0.85)]
        assert select_checkpoint(scores).step == 10000

    def test_latest_step_breaks_full_ties(self):
        scores = [_score(5000, 0.10), _score(10000, 0.10), _score(7500, 0.10)]
        assert select_checkpoint(scores).step == 10000

    def test_all_collapsed_raises_with_diagnostic(self):
        scores = [_score(5000, 0.2, collapsed=True), _score(10000, 0.3, collapsed=True)]
        with pytest.raises(GanError, match="all 2 checkpoints mode-collapsed"):
            select_checkpoint(scores)
        with pytest.raises(GanError, match="step 5000"):
            select_checkpoint(scores)

    def test_empty_input_raises(self):
        with pytest.raises(GanError, match="no checkpoint scores"):
            select_checkpoint([])

    def test_selection_is_pure(self):
        scores = [_score(5000, 0.2), _score(10000, 0.1)]
        snapshot = list(scores)
        first = select_checkpoint(scores)
        assert select_checkpoint(scores) == first
        assert scores == snapshot

    def test_stability_never_drives_selection(self):
        # Recorded for every checkpoint, deliberately absent from the rule.
        scores = [
            _score(5000, 0.10, stability=99.0),
            _score(10000, 0.20, stability=0.001),
        ]
        assert select_checkpoint(scores).step == 5000


class TestCollapseStatistics:
    def test_duplicated_windows_flag_as_collapsed(self):
        base = np.array([[1.0, 2.0, 3.0, 4.0]])
        generated = np.repeat(base, 40, axis=0)
        assert mode_collapse_fraction(generated, eps=0.5) == 1.0

    def test_spread_windows_do_not_flag(self):
        rng = np.random.default_rng(0)
        generated = rng.normal(0, 100, size=(40, 4))
        assert mode_collapse_fraction(generated, eps=0.5) < 0.1

    def test_fraction_counts_near_duplicates_only(self):
        generated = np.array([[0.0, 0], [0.01, 0], [50, 0], [100, 0]])
        assert mode_collapse_fraction(generated, eps=1.0) == 0.5

    def test_diameter_is_bounding_box_diagonal(self):
        real = np.array([[0.0, 0.0], [3.0, 4.0], [1.0, 1.0]])
        assert feature_space_diameter(real) == pytest.approx(5.0)

    def test_stability_is_tail_spread(self):
        losses = [10.0, -10.0, 10.0, -10.0, 2.0, 2.0, 2.0, 2.0]
        assert critic_stability(losses) == 0.0
        assert critic_stability([1.0, 5.0]) == 0.0
        assert critic_stability([1.0, 2.0, 3.0, 7.0]) == 0.0
