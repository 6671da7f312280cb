"""Release gate for the adversarial module: the export/import loop against
the core package, the checkpoint ledger of one desk-scale run, and agreement
between the two ROC-AUC implementations on shared score files.

The desk recipe (2000 generator steps, a checkpoint every 500) trains in a
couple of minutes on CPU. Every number is deterministic for the pinned seeds,
so the thresholds below are measured floors, not hopes."""

import json
import subprocess
import sys
import textwrap
from types import SimpleNamespace

import numpy as np
import pytest

from quack_neural.data import (
    load_manifest,
    load_sessions,
    split_human_ids,
    window_sessions,
)
from quack_neural.detectors import (
    DETECTOR_NAMES,
    load_score_file,
    rank_auc,
    train_reference_detectors,
)
from quack_neural.export import export_synthetic_dataset
from quack_neural.selection import (
    CheckpointScore,
    score_checkpoint,
    select_checkpoint,
)
from quack_neural.wgan import GanError, desk_run, train_wgan_gp

CORPUS_SESSIONS = 50
CORPUS_EVENTS = 600
CORPUS_SEED = 42
SPLIT_SEED = 0
GAN_SEED = 0
LENGTH = 70


def _core(snippet: str) -> str:
    """Run a snippet against the core package in a subprocess."""
    out = subprocess.run(
        [sys.executable, "-c", textwrap.dedent(snippet)],
        capture_output=True,
        text=True,
    )
    assert out.returncode == 0, out.stderr
    return out.stdout.strip()


@pytest.fixture(scope="session")
def desk(tmp_path_factory):
    """One desk-scale unconditional run: corpus, checkpoint ledger, export,
    and the core-side evaluation of the imported windows."""
    base = tmp_path_factory.mktemp("adversarial")
    root = base / "corpus"
    _core(
        f"""
        from quack.corpus import build_fixture_corpus

        build_fixture_corpus(
            {str(root)!r},
            n_sessions={CORPUS_SESSIONS},
            length={CORPUS_EVENTS},
            seed={CORPUS_SEED},
        )
        """
    )

    manifest = load_manifest(root / "manifest.csv")
    train_ids, _ = split_human_ids(manifest, 0.8, SPLIT_SEED)
    run = desk_run("unconditional", seed=GAN_SEED)
    paths = train_wgan_gp(root, run, base / "checkpoints", train_ids=train_ids)

    entries = [e for e in manifest.human_entries() if e.session_id in train_ids]
    real, _ = window_sessions(load_sessions(root, entries), LENGTH)
    scores = [score_checkpoint(p, real, seed=0) for p in paths]
    selected = select_checkpoint(scores)
    selected_path = next(p for p in paths if f"{selected.step:06d}" in p.name)

    exported = base / "exported"
    export_synthetic_dataset(selected_path, root, exported, seed=0)

    features = base / "features"
    core = json.loads(
        _core(
            f"""
        import json

        import numpy as np

        from quack.corpus import load_manifest, load_sessions, split_sessions
        from quack.detectors import predict_scores, train_random_forest
        from quack.empirical import fit_empirical_model
        from quack.evaluation import roc_auc
        from quack.features import save_feature_matrix, vectorize, window_sessions
        from quack.generators import (
            GeneratorSpec,
            generate_session,
            import_adaptive_sessions,
        )

        L = {LENGTH}
        manifest = load_manifest({str(root / "manifest.csv")!r})
        split = split_sessions(manifest, 0.8, {SPLIT_SEED})
        humans = load_sessions({str(root)!r}, manifest.human_entries())
        train_h = [s for s in humans if s.session_id in split.train_ids]
        test_h = [s for s in humans if s.session_id in split.test_ids]

        adaptive = import_adaptive_sessions({str(exported)!r}, manifest_check=True)
        wgan_train = [s for s in adaptive if s.source_session_id in split.train_ids]
        wgan_test = [s for s in adaptive if s.source_session_id in split.test_ids]

        model = fit_empirical_model(train_h)
        spec = GeneratorSpec(kind="ns_histogram", seed=7)
        ns_train = [generate_session(s, model, spec) for s in train_h]

        def X(sessions):
            return vectorize(window_sessions(sessions, L), length=L).X

        Xh, Xs = X(train_h), X(ns_train)
        rf = train_random_forest(
            np.vstack([Xh, Xs]),
            np.r_[np.zeros(len(Xh), dtype=np.int8), np.ones(len(Xs), dtype=np.int8)],
            n_trees=300,
            seed=11,
        )
        Xht, Xwt = X(test_h), X(wgan_test)
        auc = roc_auc(
            predict_scores(rf, np.vstack([Xht, Xwt])),
            np.r_[np.zeros(len(Xht), dtype=np.int8), np.ones(len(Xwt), dtype=np.int8)],
        )

        train_m = vectorize(window_sessions(train_h + wgan_train, L), length=L)
        test_m = vectorize(window_sessions(test_h + wgan_test, L), length=L)
        save_feature_matrix(train_m, {str(features / "train.csv")!r})
        save_feature_matrix(test_m, {str(features / "test.csv")!r})

        print(json.dumps({{
            "imported": len(adaptive),
            "transfer_auc": auc,
            "train_windows": len(train_m.X),
            "test_windows": len(test_m.X),
        }}))
        """
        )
    )

    detector_dir = base / "detectors"
    report = train_reference_detectors(
        features / "train.csv", features / "test.csv", detector_dir, seed=0
    )

    return SimpleNamespace(
        scores=scores,
        selected=selected,
        core=core,
        report=report,
        detector_dir=detector_dir,
    )


def test_exported_corpus_passes_core_import_with_zero_errors(desk):
    assert desk.core["imported"] == CORPUS_SESSIONS


def test_histogram_trained_forest_flags_imported_windows_at_70(desk):
    assert desk.core["transfer_auc"] >= 0.7


def test_desk_run_yields_four_fully_scored_checkpoints(desk):
    assert [s.step for s in desk.scores] == [500, 1000, 1500, 2000]
    for s in desk.scores:
        assert np.isfinite(s.critic_stability) and s.critic_stability >= 0.0
        assert 0.0 <= s.marginal_distance <= 1.0
        assert np.isfinite(s.variance_ratio) and s.variance_ratio > 0.0
        assert isinstance(s.mode_collapsed, bool)
    assert desk.selected.step in {s.step for s in desk.scores}


def test_selection_follows_the_documented_rule_on_constructed_scores():
    def make(step, dist, vr, collapsed=False):
        return CheckpointScore(
            step=step,
            critic_stability=0.1,
            marginal_distance=dist,
            variance_ratio=vr,
            mode_collapsed=collapsed,
        )

    assert select_checkpoint([make(500, 0.3, 1.0), make(1000, 0.1, 5.0)]).step == 1000
    assert select_checkpoint([make(500, 0.2, 0.7), make(1000, 0.2, 0.95)]).step == 1000
    assert select_checkpoint([make(500, 0.2, 0.9), make(1000, 0.2, 0.9)]).step == 1000
    assert (
        select_checkpoint(
            [make(500, 0.9, 2.0), make(1000, 0.01, 1.0, collapsed=True)]
        ).step
        == 500
    )
    with pytest.raises(GanError, match="mode-collapsed"):
        select_checkpoint([make(500, 0.1, 1.0, collapsed=True)])


def test_both_auc_implementations_agree_on_shared_score_files(desk):
    for name in DETECTOR_NAMES:
        path = desk.detector_dir / f"scores_{name}.csv"
        labels, scores = load_score_file(path)
        ours = rank_auc(scores, labels)
        theirs = float(
            _core(
                f"""
            import csv

            import numpy as np

            from quack.evaluation import roc_auc

            with open({str(path)!r}, newline="") as fh:
                rows = list(csv.reader(fh))[1:]
            labels = np.array([0 if r[0] == "human" else 1 for r in rows], dtype=np.int8)
            scores = np.array([float(r[1]) for r in rows])
            print(repr(roc_auc(scores, labels)))
            """
            )
        )
        assert abs(ours - theirs) <= 1e-9, name
        assert ours == desk.report.auc[name]
