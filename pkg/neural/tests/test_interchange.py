"""File-format interchange: parse/write round trips and agreement with the
core package (exercised through subprocesses, never imports)."""

import subprocess
import sys
import textwrap

import numpy as np
import pytest
from scipy.stats import ks_2samp

from quack_neural.data import (
    Manifest,
    ManifestEntry,
    NeuralDataError,
    NormStats,
    Session,
    fit_norm_stats,
    ks_statistic,
    load_feature_csv,
    load_manifest,
    load_sessions,
    parse_session_file,
    save_feature_csv,
    save_manifest,
    session_fingerprint,
    split_human_ids,
    window_sessions,
    write_session_file,
)


def _core(snippet: str) -> str:
    """Run a snippet against the core package in a subprocess."""
    out = subprocess.run(
        [sys.executable, "-c", textwrap.dedent(snippet)],
        capture_output=True,
        text=True,
    )
    assert out.returncode == 0, out.stderr
    return out.stdout.strip()


def _session(n=12, seed=0):
    rng = np.random.default_rng(seed)
    ft = rng.normal(120, 30, n)
    ft[0] = 0.0
    return Session(
        "s01",
        rng.integers(0, 200, n),
        rng.uniform(40, 180, n),
        ft,
    )


class TestSessionFiles:
    def test_round_trip(self, tmp_path):
        s = _session()
        path = tmp_path / "s01.csv"
        write_session_file(s, path)
        back = parse_session_file(path)
        assert back.session_id == "s01"
        np.testing.assert_array_equal(back.vk, s.vk)
        np.testing.assert_array_equal(back.ht_ms, s.ht_ms)
        np.testing.assert_array_equal(back.ft_ms, s.ft_ms)

    def test_first_flight_forced_to_zero(self, tmp_path):
        path = tmp_path / "s.csv"
        path.write_text("vk,ht_ms,ft_ms\n10,50.0,99.0\n11,60.0,-5.0\n")
        s = parse_session_file(path)
        assert s.ft_ms[0] == 0.0
        assert s.ft_ms[1] == -5.0

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "s.csv"
        path.write_text("vk,ht,ft\n10,50.0,0.0\n")
        with pytest.raises(NeuralDataError, match="expected header"):
            parse_session_file(path)

    def test_nonpositive_hold_rejected(self, tmp_path):
        path = tmp_path / "s.csv"
        path.write_text("vk,ht_ms,ft_ms\n10,0.0,0.0\n")
        with pytest.raises(NeuralDataError, match="positive"):
            parse_session_file(path)

    def test_core_parses_our_file(self, tmp_path):
        s = _session(n=8, seed=3)
        path = tmp_path / "s01.csv"
        write_session_file(s, path)
        out = _core(
            f"""
            from quack.corpus import parse_session_file
            s = parse_session_file({str(path)!r})
            print(len(s), float(s.ht_ms.sum()), float(s.ft_ms.sum()))
            """
        )
        n, ht_sum, ft_sum = out.split()
        assert int(n) == 8
        assert float(ht_sum) == float(s.ht_ms.sum())
        assert float(ft_sum) == float(s.ft_ms.sum())


class TestManifest:
    def test_round_trip_with_seed_comment(self, tmp_path):
        m = Manifest(
            [
                ManifestEntry("a", "human/human/a.csv", "human", "", 10),
                ManifestEntry("a--wgan_uncond", "synthetic/wgan_uncond/a--wgan_uncond.csv", "synthetic", "wgan_uncond", 10),
            ],
            corpus_seed=7,
        )
        path = tmp_path / "manifest.csv"
        save_manifest(m, path)
        back = load_manifest(path)
        assert back.corpus_seed == 7
        assert [e.session_id for e in back.entries] == ["a", "a--wgan_uncond"]
        assert back.human_entries()[0].event_count == 10

    def test_event_count_cross_check(self, tmp_path):
        s = _session(n=6)
        write_session_file(s, tmp_path / "human/human/s01.csv")
        entries = [ManifestEntry("s01", "human/human/s01.csv", "human", "", 7)]
        with pytest.raises(NeuralDataError, match="manifest says 7"):
            load_sessions(tmp_path, entries)


@pytest.fixture(scope="module")
def fixture_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("interchange") / "corpus"
    out = subprocess.run(
        ["quack", "fixture", "--sessions", "9", "--length", "80", "--seed", "5", "--out", str(root)],
        capture_output=True,
        text=True,
    )
    assert out.returncode == 0, out.stderr
    return root


class TestSplitAndFingerprint:
    def test_split_matches_core(self, fixture_corpus):
        manifest = load_manifest(fixture_corpus / "manifest.csv")
        train, test = split_human_ids(manifest, 0.8, 11)
        out = _core(
            f"""
            from quack.corpus import load_manifest, split_sessions
            m = load_manifest({str(fixture_corpus / "manifest.csv")!r})
            s = split_sessions(m, 0.8, 11)
            print("|".join(sorted(s.train_ids)))
            print("|".join(sorted(s.test_ids)))
            """
        )
        core_train, core_test = out.splitlines()
        assert sorted(train) == core_train.split("|")
        assert sorted(test) == core_test.split("|")

    def test_split_is_a_partition(self, fixture_corpus):
        manifest = load_manifest(fixture_corpus / "manifest.csv")
        train, test = split_human_ids(manifest, 0.8, 0)
        ids = {e.session_id for e in manifest.human_entries()}
        assert train | test == ids
        assert not train & test

    def test_fingerprint_matches_core(self):
        ids = ["b", "a", "c"]
        ours = session_fingerprint(ids)
        theirs = _core(
            """
            from quack.corpus import session_fingerprint
            print(session_fingerprint(["b", "a", "c"]))
            """
        )
        assert ours == theirs
        assert ours == session_fingerprint(sorted(ids))


class TestWindowing:
    def test_interleaved_layout(self):
        s = Session(
            "w",
            np.arange(7),
            np.array([1.0, 2, 3, 4, 5, 6, 7]),
            np.array([0.0, 10, 20, 30, 40, 50, 60]),
        )
        X, origins = window_sessions([s], 3)
        assert X.shape == (2, 6)
        np.testing.assert_array_equal(X[0], [1, 0, 2, 10, 3, 20])
        np.testing.assert_array_equal(X[1], [4, 30, 5, 40, 6, 50])
        assert origins == ["w", "w"]

    def test_canonical_session_order(self):
        a = _session(n=4, seed=1)
        a.session_id = "zz"
        b = _session(n=4, seed=2)
        b.session_id = "aa"
        _, origins = window_sessions([a, b], 2)
        assert origins == ["aa", "aa", "zz", "zz"]


class TestNormStats:
    def test_round_trip(self):
        rng = np.random.default_rng(0)
        X = rng.normal(100, 25, size=(20, 8))
        stats = fit_norm_stats(X)
        np.testing.assert_allclose(stats.denormalize(stats.normalize(X)), X, rtol=1e-12)

    def test_normalized_moments(self):
        rng = np.random.default_rng(1)
        X = np.empty((50, 10))
        X[:, 0::2] = rng.normal(90, 20, size=(50, 5))
        X[:, 1::2] = rng.normal(120, 40, size=(50, 5))
        Xn = fit_norm_stats(X).normalize(X)
        assert abs(Xn[:, 0::2].mean()) < 1e-9
        assert abs(Xn[:, 1::2].std() - 1.0) < 1e-9

    def test_constant_feature_passes_through(self):
        X = np.full((4, 4), 5.0)
        stats = fit_norm_stats(X)
        assert stats.ht_sd == 1.0
        np.testing.assert_array_equal(stats.normalize(X), np.zeros((4, 4)))


class TestFeatureCsv:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(6, 10))
        y = np.array([0, 1, 0, 1, 1, 0])
        path = tmp_path / "features.csv"
        save_feature_csv(X, y, path)
        X2, y2 = load_feature_csv(path)
        np.testing.assert_array_equal(X2, X)
        np.testing.assert_array_equal(y2, y)

    def test_core_loads_our_export(self, tmp_path):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(4, 6))
        y = np.array([0, 0, 1, 1])
        path = tmp_path / "features.csv"
        save_feature_csv(X, y, path)
        out = _core(
            f"""
            from quack.features import load_feature_matrix
            m = load_feature_matrix({str(path)!r})
            print(m.length, int(m.labels.sum()), float(m.X.sum()))
            """
        )
        length, ones, total = out.split()
        assert int(length) == 3
        assert int(ones) == 2
        assert float(total) == float(X.sum())

    def test_odd_width_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("label,f_0,f_1,f_2\nhuman,1.0,2.0,3.0\n")
        with pytest.raises(NeuralDataError, match="odd feature dimension"):
            load_feature_csv(path)


class TestKsStatistic:
    def test_matches_scipy(self):
        rng = np.random.default_rng(6)
        for _ in range(25):
            a = rng.normal(0, 1, rng.integers(5, 60))
            b = rng.normal(rng.uniform(-1, 1), 1, rng.integers(5, 60))
            assert ks_statistic(a, b) == pytest.approx(ks_2samp(a, b).statistic, abs=1e-12)

    def test_ties_match_scipy(self):
        rng = np.random.default_rng(7)
        a = rng.integers(0, 5, 40).astype(float)
        b = rng.integers(0, 5, 30).astype(float)
        assert ks_statistic(a, b) == pytest.approx(ks_2samp(a, b).statistic, abs=1e-12)

    def test_identical_samples(self):
        a = np.array([1.0, 2.0, 3.0])
        assert ks_statistic(a, a) == 0.0
