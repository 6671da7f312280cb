"""Shared fixtures: a small on-disk human corpus in interchange layout."""

import numpy as np
import pytest

from quack_neural.data import (
    Manifest,
    ManifestEntry,
    Session,
    save_manifest,
    write_session_file,
)


@pytest.fixture
def human_corpus(tmp_path):
    """Factory writing n pseudo-human sessions plus a manifest; returns root."""

    def build(n_sessions=6, events=48, seed=0):
        root = tmp_path / "corpus"
        rng = np.random.default_rng(seed)
        entries = []
        for i in range(n_sessions):
            sid = f"h{i:02d}"
            offset = rng.normal(0.0, 12.0)
            ht = np.clip(rng.normal(85.0 + offset, 18.0, events), 2.0, None)
            ft = rng.normal(110.0 + offset, 45.0, events)
            ft[0] = 0.0
            vk = rng.integers(4, 60, events)
            rel = f"human/human/{sid}.csv"
            write_session_file(Session(sid, vk, ht, ft), root / rel)
            entries.append(ManifestEntry(sid, rel, "human", "human", events))
        save_manifest(Manifest(entries, corpus_seed=seed), root / "manifest.csv")
        return root

    return build
