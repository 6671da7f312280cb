"""Windowing and vectorization: sessions -> fixed-length timing windows ->
flattened feature rows. Key codes never enter the feature path, so detectors
stay text-independent."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .corpus import Session

LABELS = ("human", "synthetic")


class FeatureError(ValueError):
    """Window, matrix, or normalizer shape violation."""


@dataclass(frozen=True)
class TimingWindow:
    """L consecutive (HT, FT) pairs from one session; no VK data."""

    ht: np.ndarray
    ft: np.ndarray
    label: str
    origin: tuple  # (session_id, start index)
    generator_tag: str = ""

    def __post_init__(self) -> None:
        if len(self.ht) != len(self.ft):
            raise FeatureError("window ht/ft length mismatch")
        if self.label not in LABELS:
            raise FeatureError(f"bad window label {self.label!r}")

    def __len__(self) -> int:
        return len(self.ht)


@dataclass
class FeatureMatrix:
    """Flattened windows: row layout [ht_1, ft_1, ht_2, ft_2, ..., ht_L, ft_L]."""

    X: np.ndarray  # (n, 2L) float64
    labels: np.ndarray  # (n,) int8; 0 = human, 1 = synthetic
    length: int  # L
    session_ids: np.ndarray  # (n,) unicode, window origin session
    starts: np.ndarray  # (n,) int64, window origin offset
    generator_tags: np.ndarray  # (n,) unicode

    def __post_init__(self) -> None:
        if self.X.ndim != 2 or self.X.shape[1] != 2 * self.length:
            raise FeatureError(
                f"matrix width {self.X.shape} does not match length {self.length}"
            )
        n = len(self.X)
        for name in ("labels", "session_ids", "starts", "generator_tags"):
            if len(getattr(self, name)) != n:
                raise FeatureError(f"{name} misaligned with rows")

    def __len__(self) -> int:
        return len(self.X)

    def subset(self, idx: np.ndarray) -> "FeatureMatrix":
        return FeatureMatrix(
            self.X[idx],
            self.labels[idx],
            self.length,
            self.session_ids[idx],
            self.starts[idx],
            self.generator_tags[idx],
        )


def window_session(session: Session, length: int) -> list[TimingWindow]:
    """Non-overlapping windows at offsets 0, L, 2L, ...; remainder dropped;
    sessions shorter than L yield no windows."""
    if length < 2:
        raise FeatureError(f"window length must be >= 2, got {length}")
    n = len(session) // length
    return [
        TimingWindow(
            ht=session.ht_ms[i * length : (i + 1) * length].copy(),
            ft=session.ft_ms[i * length : (i + 1) * length].copy(),
            label=session.label,
            origin=(session.session_id, i * length),
            generator_tag=session.generator_tag,
        )
        for i in range(n)
    ]


def window_sessions(sessions: Sequence[Session], length: int) -> list[TimingWindow]:
    """Windows over many sessions in canonical order (session_id, start)."""
    windows = []
    for s in sorted(sessions, key=lambda s: s.session_id):
        windows.extend(window_session(s, length))
    return windows


def vectorize(windows: Sequence[TimingWindow], length: int | None = None) -> FeatureMatrix:
    """Interleave each window's (ht_i, ft_i) into one 2L row."""
    if not windows:
        if length is None:
            raise FeatureError("empty window list needs an explicit length")
        return FeatureMatrix(
            np.empty((0, 2 * length)),
            np.empty(0, dtype=np.int8),
            length,
            np.empty(0, dtype="U1"),
            np.empty(0, dtype=np.int64),
            np.empty(0, dtype="U1"),
        )
    lengths = {len(w) for w in windows}
    if len(lengths) != 1:
        raise FeatureError(f"mixed window lengths {sorted(lengths)}")
    L = lengths.pop()
    if length is not None and length != L:
        raise FeatureError(f"windows have length {L}, expected {length}")
    n = len(windows)
    X = np.empty((n, 2 * L), dtype=np.float64)
    for i, w in enumerate(windows):
        X[i, 0::2] = w.ht
        X[i, 1::2] = w.ft
    return FeatureMatrix(
        X=X,
        labels=np.array([LABELS.index(w.label) for w in windows], dtype=np.int8),
        length=L,
        session_ids=np.array([w.origin[0] for w in windows]),
        starts=np.array([w.origin[1] for w in windows], dtype=np.int64),
        generator_tags=np.array([w.generator_tag for w in windows]),
    )


class TimingNormalizer(BaseEstimator, TransformerMixin):
    """Per-position standardization fit on training rows only.

    Zero-variance positions are passed through unchanged rather than scaled,
    so degenerate columns stay finite and recoverable."""

    def __init__(self, zero_sd_tol: float = 0.0):
        self.zero_sd_tol = zero_sd_tol

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or len(X) == 0:
            raise FeatureError("normalizer needs a non-empty 2-D matrix")
        self.mean_ = X.mean(axis=0)
        self.sd_ = X.std(axis=0)
        self.pass_through_ = self.sd_ <= self.zero_sd_tol
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        X = np.asarray(X, dtype=np.float64)
        if not hasattr(self, "mean_"):
            raise FeatureError("normalizer is not fitted")
        if X.ndim != 2 or X.shape[1] != self.n_features_in_:
            raise FeatureError(
                f"expected {self.n_features_in_} features, got {X.shape}"
            )
        out = X.copy()
        active = ~self.pass_through_
        out[:, active] = (X[:, active] - self.mean_[active]) / self.sd_[active]
        return out

    def inverse_transform(self, X):
        X = np.asarray(X, dtype=np.float64)
        out = X.copy()
        active = ~self.pass_through_
        out[:, active] = X[:, active] * self.sd_[active] + self.mean_[active]
        return out


@dataclass(frozen=True)
class NormalizationStats:
    """Frozen view of a fitted TimingNormalizer."""

    mean: np.ndarray
    sd: np.ndarray
    pass_through: np.ndarray

    @property
    def dimension(self) -> int:
        return len(self.mean)


def fit_normalizer(train: FeatureMatrix | np.ndarray) -> NormalizationStats:
    X = train.X if isinstance(train, FeatureMatrix) else train
    norm = TimingNormalizer().fit(X)
    return NormalizationStats(norm.mean_, norm.sd_, norm.pass_through_)


def apply_normalizer(stats: NormalizationStats, matrix: FeatureMatrix) -> FeatureMatrix:
    if matrix.X.shape[1] != stats.dimension:
        raise FeatureError(
            f"stats dimension {stats.dimension} does not match matrix {matrix.X.shape}"
        )
    norm = TimingNormalizer()
    norm.mean_ = stats.mean
    norm.sd_ = stats.sd
    norm.pass_through_ = stats.pass_through
    norm.n_features_in_ = stats.dimension
    out = norm.transform(matrix.X)
    return FeatureMatrix(
        out, matrix.labels, matrix.length, matrix.session_ids, matrix.starts, matrix.generator_tags
    )


def save_feature_matrix(matrix: FeatureMatrix, path: str | Path) -> None:
    """CSV export: header label,f_0,...,f_{2L-1}; floats round-trip exactly."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label"] + [f"f_{j}" for j in range(2 * matrix.length)])
        for i in range(len(matrix)):
            writer.writerow([LABELS[matrix.labels[i]]] + [repr(float(v)) for v in matrix.X[i]])


def load_feature_matrix(path: str | Path) -> FeatureMatrix:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "label" or len(header) < 3:
            raise FeatureError(f"{path}: bad feature matrix header")
        width = len(header) - 1
        if width % 2:
            raise FeatureError(f"{path}: odd feature dimension {width}")
        rows = []
        labels = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width + 1 or row[0] not in LABELS:
                raise FeatureError(f"{path}: line {lineno}: malformed row")
            labels.append(LABELS.index(row[0]))
            rows.append([float(v) for v in row[1:]])
    n = len(rows)
    X = np.array(rows, dtype=np.float64).reshape(n, width)
    return FeatureMatrix(
        X=X,
        labels=np.array(labels, dtype=np.int8),
        length=width // 2,
        session_ids=np.array([""] * n),
        starts=np.zeros(n, dtype=np.int64),
        generator_tags=np.array([""] * n),
    )
