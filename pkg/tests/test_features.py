"""Windowing, vectorization, and normalization contracts."""

import numpy as np
import pytest

from quack.corpus import Session, synth_pseudo_human_session
from quack.features import (
    FeatureError,
    FeatureMatrix,
    TimingNormalizer,
    apply_normalizer,
    fit_normalizer,
    load_feature_matrix,
    save_feature_matrix,
    vectorize,
    window_session,
    window_sessions,
)


def _session(length, sid="w1", label="human"):
    rng = np.random.default_rng(hash(sid) % 2**32)
    ft = rng.uniform(-20, 200, size=length)
    ft[0] = 0.0
    return Session(sid, rng.integers(65, 91, size=length), rng.uniform(30, 200, size=length), ft, label)


class TestWindowSession:
    def test_exact_fit(self):
        assert len(window_session(_session(70), 70)) == 1

    def test_remainder_dropped(self):
        windows = window_session(_session(150), 70)
        assert len(windows) == 2
        assert windows[0].origin == ("w1", 0)
        assert windows[1].origin == ("w1", 70)

    def test_short_session_skipped(self):
        assert window_session(_session(50), 70) == []

    def test_window_count_formula(self):
        sessions = [_session(n, f"s{n}") for n in (10, 37, 70, 149, 500)]
        for L in (10, 30, 70):
            windows = window_sessions(sessions, L)
            assert len(windows) == sum(len(s) // L for s in sessions)

    def test_no_event_reused(self):
        s = _session(230)
        windows = window_session(s, 70)
        seen = set()
        for w in windows:
            start = w.origin[1]
            span = set(range(start, start + 70))
            assert not span & seen
            seen |= span
            np.testing.assert_array_equal(w.ht, s.ht_ms[start : start + 70])

    def test_min_length(self):
        with pytest.raises(FeatureError, match=">= 2"):
            window_session(_session(10), 1)

    def test_label_and_tag_carried(self):
        s = _session(80, "y1", label="synthetic")
        s.generator_tag = "ctx_histogram"
        w = window_session(s, 40)[0]
        assert w.label == "synthetic"
        assert w.generator_tag == "ctx_histogram"


class TestVectorize:
    def test_interleaved_layout(self):
        s = Session(
            "v1",
            np.array([65, 66]),
            np.array([80.0, 90.0]),
            np.array([0.0, 110.0]),
        )
        m = vectorize(window_session(s, 2))
        np.testing.assert_array_equal(m.X, [[80.0, 0.0, 90.0, 110.0]])
        assert m.length == 2
        assert m.labels[0] == 0

    def test_shape(self):
        windows = window_sessions([_session(210, f"s{i}") for i in range(3)], 70)
        m = vectorize(windows)
        assert m.X.shape == (9, 140)

    def test_empty_with_declared_dimension(self):
        m = vectorize([], length=70)
        assert m.X.shape == (0, 140)
        assert m.length == 70

    def test_empty_without_length_rejected(self):
        with pytest.raises(FeatureError, match="explicit length"):
            vectorize([])

    def test_mixed_lengths_rejected(self):
        w1 = window_session(_session(70, "a"), 70)
        w2 = window_session(_session(30, "b"), 30)
        with pytest.raises(FeatureError, match="mixed"):
            vectorize(w1 + w2)

    def test_injective_on_content(self):
        a = vectorize(window_session(_session(70, "a"), 70))
        b = vectorize(window_session(_session(70, "b"), 70))
        assert not np.array_equal(a.X, b.X)

    def test_canonical_order(self):
        sessions = [_session(140, f"s{i}") for i in (3, 1, 2)]
        m1 = vectorize(window_sessions(sessions, 70))
        m2 = vectorize(window_sessions(list(reversed(sessions)), 70))
        np.testing.assert_array_equal(m1.X, m2.X)
        np.testing.assert_array_equal(m1.session_ids, m2.session_ids)


class TestNormalizer:
    def _matrix(self, n=50, d=8, constant_col=None, seed=0):
        rng = np.random.default_rng(seed)
        X = rng.normal(100, 25, size=(n, d))
        if constant_col is not None:
            X[:, constant_col] = 42.0
        return FeatureMatrix(
            X,
            np.zeros(n, dtype=np.int8),
            d // 2,
            np.array(["s"] * n),
            np.zeros(n, dtype=np.int64),
            np.array([""] * n),
        )

    def test_standardizes_training_matrix(self):
        m = self._matrix()
        stats = fit_normalizer(m)
        out = apply_normalizer(stats, m)
        np.testing.assert_allclose(out.X.mean(axis=0), 0.0, atol=1e-9)
        np.testing.assert_allclose(out.X.std(axis=0), 1.0, atol=1e-9)

    def test_constant_column_passes_through(self):
        m = self._matrix(constant_col=3)
        stats = fit_normalizer(m)
        out = apply_normalizer(stats, m)
        np.testing.assert_array_equal(out.X[:, 3], m.X[:, 3])

    def test_dimension_guard(self):
        stats = fit_normalizer(self._matrix(d=140))
        with pytest.raises(FeatureError, match="dimension"):
            apply_normalizer(stats, self._matrix(d=100))

    def test_inverse_recovers_where_scaled(self):
        m = self._matrix(constant_col=1)
        norm = TimingNormalizer().fit(m.X)
        back = norm.inverse_transform(norm.transform(m.X))
        np.testing.assert_allclose(back, m.X, rtol=1e-12)

    def test_unfitted_rejected(self):
        with pytest.raises(FeatureError, match="not fitted"):
            TimingNormalizer().transform(np.zeros((2, 4)))

    def test_get_params_round_trip(self):
        norm = TimingNormalizer(zero_sd_tol=1e-9)
        assert TimingNormalizer(**norm.get_params()).zero_sd_tol == 1e-9


class TestFeatureCsv:
    def test_round_trip(self, tmp_path):
        humans = [synth_pseudo_human_session(0, 140, i, session_id=f"h{i}") for i in range(2)]
        m = vectorize(window_sessions(humans, 70))
        m.labels[1] = 1  # exercise both label strings
        path = tmp_path / "features.csv"
        save_feature_matrix(m, path)
        loaded = load_feature_matrix(path)
        np.testing.assert_array_equal(loaded.X, m.X)
        np.testing.assert_array_equal(loaded.labels, m.labels)
        assert loaded.length == 70
        header = path.read_text().splitlines()[0]
        assert header.startswith("label,f_0,") and header.endswith(f"f_{2 * 70 - 1}")

    def test_malformed_row(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("label,f_0,f_1\nhuman,1.0\n")
        with pytest.raises(FeatureError, match="line 2"):
            load_feature_matrix(path)
