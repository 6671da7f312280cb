"""File interchange with the core workbench, implemented independently.

Session CSV (`vk,ht_ms,ft_ms`), manifest CSV, and feature-matrix CSV are the
only channels between the two packages, so this module re-states the formats
and their validation rules rather than importing the core. The split and
fingerprint derivations mirror the core's published formulas bit for bit;
they consume nothing but manifest contents and a seed.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SESSION_HEADER = ["vk", "ht_ms", "ft_ms"]
MANIFEST_HEADER = ["session_id", "path", "label", "generator_tag", "event_count"]
MANIFEST_NAME = "manifest.csv"
HUMAN_TAG = "human"
LABELS = ("human", "synthetic")
ADAPTIVE_TAGS = ("wgan_uncond", "wgan_cond")
HT_FLOOR_MS = 1.0

_SPLIT_SALT = 0x5B117


class NeuralDataError(ValueError):
    """Malformed interchange file or inconsistent corpus contents."""


@dataclass
class Session:
    session_id: str
    vk: np.ndarray
    ht_ms: np.ndarray
    ft_ms: np.ndarray
    label: str = "human"
    generator_tag: str = ""

    def __len__(self) -> int:
        return len(self.vk)


@dataclass
class ManifestEntry:
    session_id: str
    path: str
    label: str
    generator_tag: str
    event_count: int


@dataclass
class Manifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    corpus_seed: int | None = None

    def human_entries(self) -> list[ManifestEntry]:
        return [e for e in self.entries if e.label == "human"]


def parse_session_file(path: str | Path, label: str = "human", generator_tag: str = "") -> Session:
    """Parse one session CSV; row order is typing order, first ft_ms forced to 0."""
    path = Path(path)
    if not path.exists():
        raise NeuralDataError(f"{path}: no such session file")
    vk: list[int] = []
    ht: list[float] = []
    ft: list[float] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != SESSION_HEADER:
            raise NeuralDataError(f"{path}: line 1: expected header {','.join(SESSION_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise NeuralDataError(f"{path}: line {lineno}: expected 3 fields, got {len(row)}")
            try:
                vk_val = int(row[0])
                ht_val = float(row[1])
                ft_val = float(row[2])
            except ValueError as exc:
                raise NeuralDataError(f"{path}: line {lineno}: {exc}") from None
            if vk_val < 0:
                raise NeuralDataError(f"{path}: line {lineno}: vk must be >= 0")
            if not math.isfinite(ht_val) or ht_val <= 0:
                raise NeuralDataError(f"{path}: line {lineno}: ht_ms must be positive and finite")
            if not math.isfinite(ft_val):
                raise NeuralDataError(f"{path}: line {lineno}: ft_ms must be finite")
            vk.append(vk_val)
            ht.append(ht_val)
            ft.append(ft_val)
    if not vk:
        raise NeuralDataError(f"{path}: empty session file")
    ft[0] = 0.0
    return Session(path.stem, np.array(vk), np.array(ht), np.array(ft), label, generator_tag)


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


def load_manifest(path: str | Path) -> Manifest:
    path = Path(path)
    if not path.exists():
        raise NeuralDataError(f"{path}: no such manifest")
    corpus_seed: int | None = None
    entries: list[ManifestEntry] = []
    with open(path, newline="", encoding="utf-8") as fh:
        first = fh.readline()
        if first.startswith("# corpus_seed="):
            corpus_seed = int(first.split("=", 1)[1])
            first = fh.readline()
        header = next(csv.reader([first])) if first else []
        if [h.strip() for h in header] != MANIFEST_HEADER:
            raise NeuralDataError(f"{path}: expected header {','.join(MANIFEST_HEADER)}")
        for lineno, row in enumerate(csv.reader(fh), start=2):
            if not row:
                continue
            if len(row) != 5:
                raise NeuralDataError(f"{path}: line {lineno}: expected 5 fields")
            try:
                entries.append(ManifestEntry(row[0], row[1], row[2], row[3], int(row[4])))
            except ValueError as exc:
                raise NeuralDataError(f"{path}: line {lineno}: {exc}") from None
    return Manifest(entries, corpus_seed)


def save_manifest(manifest: Manifest, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if manifest.corpus_seed is not None:
            fh.write(f"# corpus_seed={manifest.corpus_seed}\n")
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        for e in sorted(manifest.entries, key=lambda e: e.session_id):
            writer.writerow([e.session_id, e.path, e.label, e.generator_tag, e.event_count])


def load_sessions(corpus_root: str | Path, entries: Iterable[ManifestEntry]) -> list[Session]:
    """Load manifest entries, checking event counts against file contents."""
    root = Path(corpus_root)
    sessions = []
    for entry in entries:
        session = parse_session_file(root / entry.path, entry.label, entry.generator_tag)
        session.session_id = entry.session_id
        if len(session) != entry.event_count:
            raise NeuralDataError(
                f"{entry.session_id}: manifest says {entry.event_count} events,"
                f" file has {len(session)}"
            )
        sessions.append(session)
    return sessions


def split_human_ids(manifest: Manifest, train_fraction: float, seed: int) -> tuple[frozenset[str], frozenset[str]]:
    """Deterministic train/test split of the human sessions.

    Mirrors the core's derivation exactly (same salt, permutation, and
    rounding), so both packages agree on which sessions are off limits."""
    if not 0.0 < train_fraction < 1.0:
        raise NeuralDataError(f"train_fraction must be in (0,1), got {train_fraction}")
    ids = sorted(e.session_id for e in manifest.human_entries())
    if len(ids) < 2:
        raise NeuralDataError(f"need at least 2 human sessions to split, got {len(ids)}")
    rng = np.random.default_rng(np.random.SeedSequence([_SPLIT_SALT, seed]))
    order = rng.permutation(len(ids))
    n_train = int(math.floor(train_fraction * len(ids) + 0.5))
    n_train = min(max(n_train, 1), len(ids) - 1)
    shuffled = [ids[i] for i in order]
    return frozenset(shuffled[:n_train]), frozenset(shuffled[n_train:])


def session_fingerprint(session_ids: Iterable[str]) -> str:
    """Stable hex digest of a session-id set (order-insensitive)."""
    digest = hashlib.sha256()
    for sid in sorted(session_ids):
        digest.update(sid.encode("utf-8"))
        digest.update(b"\x00")
    return digest.hexdigest()


def window_sessions(sessions: Sequence[Session], length: int) -> tuple[np.ndarray, list[str]]:
    """Non-overlapping interleaved (ht_i, ft_i) windows in canonical order.

    Same layout as the core's feature rows: offsets 0, L, 2L per session,
    remainder dropped, row j holds ht at even and ft at odd positions."""
    if length < 2:
        raise NeuralDataError(f"window length must be >= 2, got {length}")
    rows = []
    origins = []
    for s in sorted(sessions, key=lambda s: s.session_id):
        for i in range(len(s) // length):
            row = np.empty(2 * length, dtype=np.float64)
            row[0::2] = s.ht_ms[i * length : (i + 1) * length]
            row[1::2] = s.ft_ms[i * length : (i + 1) * length]
            rows.append(row)
            origins.append(s.session_id)
    X = np.array(rows, dtype=np.float64) if rows else np.empty((0, 2 * length))
    return X, origins


@dataclass
class NormStats:
    """Per-feature standardization over a window matrix (HT and FT pooled
    across positions; constant features pass through unscaled)."""

    ht_mean: float
    ht_sd: float
    ft_mean: float
    ft_sd: float

    def normalize(self, X: np.ndarray) -> np.ndarray:
        out = X.astype(np.float64).copy()
        out[:, 0::2] = (out[:, 0::2] - self.ht_mean) / self.ht_sd
        out[:, 1::2] = (out[:, 1::2] - self.ft_mean) / self.ft_sd
        return out

    def denormalize(self, X: np.ndarray) -> np.ndarray:
        out = X.astype(np.float64).copy()
        out[:, 0::2] = out[:, 0::2] * self.ht_sd + self.ht_mean
        out[:, 1::2] = out[:, 1::2] * self.ft_sd + self.ft_mean
        return out


def fit_norm_stats(X: np.ndarray) -> NormStats:
    if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] % 2:
        raise NeuralDataError(f"norm stats need a non-empty (n, 2L) matrix, got {X.shape}")
    ht = X[:, 0::2].ravel()
    ft = X[:, 1::2].ravel()
    ht_sd = float(np.std(ht))
    ft_sd = float(np.std(ft))
    return NormStats(
        ht_mean=float(np.mean(ht)),
        ht_sd=ht_sd if ht_sd > 0 else 1.0,
        ft_mean=float(np.mean(ft)),
        ft_sd=ft_sd if ft_sd > 0 else 1.0,
    )


def load_feature_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Read a core feature-matrix CSV (`label,f_0,...,f_{2L-1}`) into (X, y)."""
    path = Path(path)
    if not path.exists():
        raise NeuralDataError(f"{path}: no such feature file")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "label" or len(header) < 3:
            raise NeuralDataError(f"{path}: bad feature matrix header")
        width = len(header) - 1
        if width % 2:
            raise NeuralDataError(f"{path}: odd feature dimension {width}")
        rows = []
        labels = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width + 1 or row[0] not in LABELS:
                raise NeuralDataError(f"{path}: line {lineno}: malformed row")
            labels.append(LABELS.index(row[0]))
            rows.append([float(v) for v in row[1:]])
    if not rows:
        raise NeuralDataError(f"{path}: no feature rows")
    return np.array(rows, dtype=np.float64), np.array(labels, dtype=np.int8)


def save_feature_csv(X: np.ndarray, labels: np.ndarray, path: str | Path) -> None:
    if X.ndim != 2 or X.shape[1] % 2 or len(labels) != len(X):
        raise NeuralDataError(f"feature export needs aligned (n, 2L) rows, got {X.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label"] + [f"f_{j}" for j in range(X.shape[1])])
        for i in range(len(X)):
            writer.writerow([LABELS[int(labels[i])]] + [repr(float(v)) for v in X[i]])


def ks_statistic(a: np.ndarray, b: np.ndarray) -> float:
    """Two-sample Kolmogorov-Smirnov statistic: max gap between empirical CDFs."""
    a = np.sort(np.asarray(a, dtype=np.float64))
    b = np.sort(np.asarray(b, dtype=np.float64))
    if len(a) == 0 or len(b) == 0:
        raise NeuralDataError("ks_statistic needs non-empty samples")
    grid = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, grid, side="right") / len(a)
    cdf_b = np.searchsorted(b, grid, side="right") / len(b)
    return float(np.max(np.abs(cdf_a - cdf_b)))
