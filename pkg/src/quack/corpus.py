"""Keystroke session storage: CSV parsing, manifests, splits, fixture corpus.

A session is one contiguous typing recording. On disk each session is a CSV
file ``vk,ht_ms,ft_ms`` (one event per row, rows in typing order) living
under ``<corpus_root>/<label>/<generator_tag or "human">/<session_id>.csv``,
indexed by a manifest CSV at the corpus root.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

SESSION_HEADER = ["vk", "ht_ms", "ft_ms"]
MANIFEST_HEADER = ["session_id", "path", "label", "generator_tag", "event_count"]
MANIFEST_NAME = "manifest.csv"
HUMAN_TAG = "human"


class CorpusError(ValueError):
    """Invalid session content, manifest, or split request."""


class ParseError(CorpusError):
    """Malformed session or manifest file; message names the offending line."""


@dataclass(frozen=True)
class KeystrokeEvent:
    """One key event: virtual-key code, hold time, flight time (ms)."""

    vk: int
    ht_ms: float
    ft_ms: float


@dataclass
class Session:
    """Ordered event sequence with identity, label, and generator tag.

    Events are stored as parallel arrays; ``events()`` yields row objects.
    The first event's ft_ms is 0 by definition.
    """

    session_id: str
    vk: np.ndarray
    ht_ms: np.ndarray
    ft_ms: np.ndarray
    label: str = "human"
    generator_tag: str = ""

    def __post_init__(self) -> None:
        self.vk = np.asarray(self.vk, dtype=np.int32)
        self.ht_ms = np.asarray(self.ht_ms, dtype=np.float64)
        self.ft_ms = np.asarray(self.ft_ms, dtype=np.float64)
        if not (len(self.vk) == len(self.ht_ms) == len(self.ft_ms)):
            raise CorpusError(f"session {self.session_id}: ragged event arrays")

    def __len__(self) -> int:
        return len(self.vk)

    def events(self) -> Iterator[KeystrokeEvent]:
        for i in range(len(self)):
            yield KeystrokeEvent(int(self.vk[i]), float(self.ht_ms[i]), float(self.ft_ms[i]))

    def validate(self) -> None:
        if len(self) == 0:
            raise CorpusError(f"session {self.session_id}: empty session")
        if self.label not in ("human", "synthetic"):
            raise CorpusError(f"session {self.session_id}: bad label {self.label!r}")
        if np.any(self.vk < 0):
            raise CorpusError(f"session {self.session_id}: negative vk code")
        if np.any(self.ht_ms <= 0) or not np.all(np.isfinite(self.ht_ms)):
            raise CorpusError(f"session {self.session_id}: ht_ms must be positive and finite")
        if not np.all(np.isfinite(self.ft_ms)):
            raise CorpusError(f"session {self.session_id}: non-finite ft_ms")
        if self.ft_ms[0] != 0.0:
            raise CorpusError(f"session {self.session_id}: first ft_ms must be 0")


@dataclass(frozen=True)
class ManifestEntry:
    session_id: str
    path: str
    label: str
    generator_tag: str
    event_count: int


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    corpus_seed: int | None = None

    def __post_init__(self) -> None:
        ids = [e.session_id for e in self.entries]
        if len(set(ids)) != len(ids):
            dupes = sorted({s for s in ids if ids.count(s) > 1})
            raise CorpusError(f"duplicate session ids in manifest: {dupes[:5]}")

    def human_entries(self) -> list[ManifestEntry]:
        return [e for e in self.entries if e.label == "human"]

    def by_tag(self, generator_tag: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.generator_tag == generator_tag]

    def tags(self) -> list[str]:
        return sorted({e.generator_tag for e in self.entries if e.label == "synthetic"})


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float
    seed: int
    train_ids: frozenset[str]
    test_ids: frozenset[str]


def parse_session_file(path: str | Path, label: str = "human", generator_tag: str = "") -> Session:
    """Parse one session CSV; row order is typing order, first ft_ms forced to 0."""
    path = Path(path)
    if not path.exists():
        raise ParseError(f"{path}: no such session file")
    vk: list[int] = []
    ht: list[float] = []
    ft: list[float] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty session file") from None
        if [h.strip() for h in header] != SESSION_HEADER:
            raise ParseError(f"{path}: line 1: expected header {','.join(SESSION_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ParseError(f"{path}: line {lineno}: expected 3 fields, got {len(row)}")
            try:
                vk_val = int(row[0])
                ht_val = float(row[1])
                ft_val = float(row[2])
            except ValueError as exc:
                raise ParseError(f"{path}: line {lineno}: {exc}") from None
            if vk_val < 0:
                raise ParseError(f"{path}: line {lineno}: vk must be >= 0")
            if not math.isfinite(ht_val) or ht_val <= 0:
                raise ParseError(f"{path}: line {lineno}: ht_ms must be positive and finite")
            if not math.isfinite(ft_val):
                raise ParseError(f"{path}: line {lineno}: ft_ms must be finite")
            vk.append(vk_val)
            ht.append(ht_val)
            ft.append(ft_val)
    if not vk:
        raise ParseError(f"{path}: empty session file")
    ft[0] = 0.0
    session = Session(path.stem, np.array(vk), np.array(ht), np.array(ft), label, generator_tag)
    session.validate()
    return session


def write_session_file(session: Session, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SESSION_HEADER)
        for i in range(len(session)):
            writer.writerow(
                [int(session.vk[i]), repr(float(session.ht_ms[i])), repr(float(session.ft_ms[i]))]
            )


def session_path(corpus_root: str | Path, session: Session) -> Path:
    tag = session.generator_tag if session.label == "synthetic" else HUMAN_TAG
    return Path(corpus_root) / session.label / tag / f"{session.session_id}.csv"


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if manifest.corpus_seed is not None:
            fh.write(f"# corpus_seed={manifest.corpus_seed}\n")
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        for e in sorted(manifest.entries, key=lambda e: e.session_id):
            writer.writerow([e.session_id, e.path, e.label, e.generator_tag, e.event_count])


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    if not path.exists():
        raise ParseError(f"{path}: no such manifest")
    corpus_seed: int | None = None
    entries: list[ManifestEntry] = []
    with open(path, newline="", encoding="utf-8") as fh:
        first = fh.readline()
        if first.startswith("# corpus_seed="):
            corpus_seed = int(first.split("=", 1)[1])
            first = fh.readline()
        header = next(csv.reader([first])) if first else []
        if [h.strip() for h in header] != MANIFEST_HEADER:
            raise ParseError(f"{path}: expected header {','.join(MANIFEST_HEADER)}")
        for lineno, row in enumerate(csv.reader(fh), start=2):
            if not row:
                continue
            if len(row) != 5:
                raise ParseError(f"{path}: line {lineno}: expected 5 fields")
            try:
                entries.append(ManifestEntry(row[0], row[1], row[2], row[3], int(row[4])))
            except ValueError as exc:
                raise ParseError(f"{path}: line {lineno}: {exc}") from None
    return DatasetManifest(entries, corpus_seed)


def load_sessions(corpus_root: str | Path, entries: Iterable[ManifestEntry]) -> list[Session]:
    """Load manifest entries, checking event counts against file contents."""
    root = Path(corpus_root)
    sessions = []
    for entry in entries:
        session = parse_session_file(root / entry.path, entry.label, entry.generator_tag)
        session.session_id = entry.session_id
        if len(session) != entry.event_count:
            raise CorpusError(
                f"{entry.session_id}: manifest says {entry.event_count} events, "
                f"file has {len(session)}"
            )
        sessions.append(session)
    return sessions


def split_sessions(manifest: DatasetManifest, train_fraction: float, seed: int) -> SplitSpec:
    """Deterministic session-level split of the manifest's human sessions."""
    if not 0.0 < train_fraction < 1.0:
        raise CorpusError(f"train_fraction must be in (0,1), got {train_fraction}")
    ids = sorted(e.session_id for e in manifest.human_entries())
    if len(ids) < 2:
        raise CorpusError(f"need at least 2 human sessions to split, got {len(ids)}")
    rng = np.random.default_rng(np.random.SeedSequence([0x5B117, seed]))
    order = rng.permutation(len(ids))
    n_train = int(math.floor(train_fraction * len(ids) + 0.5))
    n_train = min(max(n_train, 1), len(ids) - 1)
    shuffled = [ids[i] for i in order]
    train_ids = frozenset(shuffled[:n_train])
    test_ids = frozenset(shuffled[n_train:])
    return SplitSpec(train_fraction, seed, train_ids, test_ids)


def session_fingerprint(session_ids: Iterable[str]) -> str:
    """Stable hex digest of a session-id set (order-insensitive)."""
    digest = hashlib.sha256()
    for sid in sorted(session_ids):
        digest.update(sid.encode("utf-8"))
        digest.update(b"\x00")
    return digest.hexdigest()


def stable_hash64(text: str) -> int:
    """Stable 64-bit hash for seed derivation (python hash() is salted)."""
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "little")


# --- pseudo-human fixture ---------------------------------------------------
#
# Desk-scale stand-in for a real free-text corpus. Qualitative shape only:
# log-normal hold times, heavy right-tailed flight times with a small
# negative (rollover) component, per-user and per-session mean offsets, and
# AR(1) structure on log hold time.

FIXTURE_HT_LOCATION_MS = 90.0
FIXTURE_HT_SHAPE = 0.35
FIXTURE_FT_LOCATION_MS = 120.0
FIXTURE_FT_SHAPE = 0.6
FIXTURE_FT_LOGNORMAL_WEIGHT = 0.85
FIXTURE_FT_ROLLOVER_MEAN_MS = -20.0
FIXTURE_FT_ROLLOVER_SD_MS = 15.0
FIXTURE_AR1 = 0.3
FIXTURE_USER_HT_SD = 0.28
FIXTURE_USER_FT_SD = 0.32
FIXTURE_SESSION_SD = 0.12
FIXTURE_KEY_HT_SD = 0.05
FIXTURE_DIGRAPH_FT_SD = 0.08

# 26 letters (vk 65..90) plus space (32), approximate English frequencies.
_FIXTURE_VKS = np.array([32] + list(range(65, 91)), dtype=np.int32)
_FIXTURE_WEIGHTS = np.array(
    [18.0]  # space
    + [8.2, 1.5, 2.8, 4.3, 12.7, 2.2, 2.0, 6.1, 7.0, 0.15, 0.77, 4.0, 2.4,
       6.7, 7.5, 1.9, 0.095, 6.0, 6.3, 9.1, 2.8, 0.98, 2.4, 0.15, 2.0, 0.074]
)
_FIXTURE_WEIGHTS = _FIXTURE_WEIGHTS / _FIXTURE_WEIGHTS.sum()


def _key_effect(vk: np.ndarray, sd: float, salt: int) -> np.ndarray:
    """Deterministic per-key log offset, fixed across all fixture corpora."""
    out = np.empty(len(vk), dtype=np.float64)
    uniq, inverse = np.unique(vk, return_inverse=True)
    effects = np.array(
        [
            np.random.default_rng(np.random.SeedSequence([salt, int(v)])).normal(0.0, sd)
            for v in uniq
        ]
    )
    out = effects[inverse]
    return out


def _digraph_effect(prev_vk: np.ndarray, vk: np.ndarray, sd: float, salt: int) -> np.ndarray:
    key = prev_vk.astype(np.int64) * 100003 + vk.astype(np.int64)
    uniq, inverse = np.unique(key, return_inverse=True)
    effects = np.array(
        [
            np.random.default_rng(np.random.SeedSequence([salt, int(k)])).normal(0.0, sd)
            for k in uniq
        ]
    )
    return effects[inverse]


def synth_pseudo_human_session(
    user_profile_seed: int,
    length: int,
    seed: int,
    session_id: str | None = None,
) -> Session:
    """Deterministic pseudo-human session for fixture corpora."""
    if length < 2:
        raise CorpusError(f"fixture session length must be >= 2, got {length}")
    user_rng = np.random.default_rng(np.random.SeedSequence([0xF1C7, user_profile_seed]))
    user_ht_off = user_rng.normal(0.0, FIXTURE_USER_HT_SD)
    user_ft_off = user_rng.normal(0.0, FIXTURE_USER_FT_SD)

    rng = np.random.default_rng(np.random.SeedSequence([0xF1C8, user_profile_seed, seed]))
    sess_ht_off = rng.normal(0.0, FIXTURE_SESSION_SD)
    sess_ft_off = rng.normal(0.0, FIXTURE_SESSION_SD)

    vk = rng.choice(_FIXTURE_VKS, size=length, p=_FIXTURE_WEIGHTS)

    # AR(1) on the standardized log-HT scale; stationary marginal N(0, 1).
    eps = rng.normal(0.0, 1.0, size=length)
    z = np.empty(length)
    z[0] = eps[0]
    scale = math.sqrt(1.0 - FIXTURE_AR1**2)
    for i in range(1, length):
        z[i] = FIXTURE_AR1 * z[i - 1] + scale * eps[i]
    log_ht = (
        math.log(FIXTURE_HT_LOCATION_MS)
        + user_ht_off
        + sess_ht_off
        + _key_effect(vk, FIXTURE_KEY_HT_SD, 0xA11CE)
        + FIXTURE_HT_SHAPE * z
    )
    ht = np.exp(log_ht)

    is_rollover = rng.random(length) >= FIXTURE_FT_LOGNORMAL_WEIGHT
    ft_log = np.exp(
        math.log(FIXTURE_FT_LOCATION_MS)
        + user_ft_off
        + sess_ft_off
        + np.concatenate(
            [[0.0], _digraph_effect(vk[:-1], vk[1:], FIXTURE_DIGRAPH_FT_SD, 0xB0B0)]
        )
        + FIXTURE_FT_SHAPE * rng.normal(0.0, 1.0, size=length)
    )
    ft_roll = rng.normal(FIXTURE_FT_ROLLOVER_MEAN_MS, FIXTURE_FT_ROLLOVER_SD_MS, size=length)
    ft = np.where(is_rollover, ft_roll, ft_log)
    ft[0] = 0.0

    sid = session_id or f"u{user_profile_seed:04d}s{seed:08d}"
    session = Session(sid, vk, ht, ft, label="human", generator_tag="")
    session.validate()
    return session


def build_fixture_corpus(
    out_dir: str | Path,
    n_sessions: int,
    length: int,
    seed: int,
    sessions_per_user: int = 5,
) -> DatasetManifest:
    """Write a deterministic pseudo-human corpus and its manifest."""
    if n_sessions < 2:
        raise CorpusError("fixture corpus needs at least 2 sessions")
    root = Path(out_dir)
    entries = []
    for idx in range(n_sessions):
        user = idx // sessions_per_user
        sid = f"u{user:04d}s{idx:04d}"
        session = synth_pseudo_human_session(
            user_profile_seed=seed + user,
            length=length,
            seed=seed * 100003 + idx,
            session_id=sid,
        )
        rel = Path("human") / HUMAN_TAG / f"{sid}.csv"
        write_session_file(session, root / rel)
        entries.append(ManifestEntry(sid, str(rel), "human", "", len(session)))
    manifest = DatasetManifest(entries, corpus_seed=seed)
    save_manifest(manifest, root / MANIFEST_NAME)
    return manifest
