"""Reference detectors on exported feature windows.

Four fixed configurations, trained as-is with no tuning: an RBF-kernel SVM
(C=3.0, probability calibration enabled) on standard-scaled flat windows, and
three sequence models (1D CNN with 64 channels and kernel size 5; LSTM and
bidirectional LSTM with one 64-unit recurrent layer) on per-feature
standardized sequences, each trained with Adam at learning rate 1e-3 for 6
epochs under a logit binary cross-entropy objective.

The ROC-AUC here is an independent implementation of the same rank statistic
the core uses; the two are cross-checked on shared score files.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from scipy.stats import rankdata
from sklearn.preprocessing import StandardScaler
from sklearn.svm import SVC
from torch import nn

from .data import LABELS, fit_norm_stats, load_feature_csv

SVM_C = 3.0
EPOCHS = 6
LEARNING_RATE = 1e-3
BATCH_SIZE = 64
CNN_CHANNELS = 64
CNN_KERNEL = 5
LSTM_HIDDEN = 64
DETECTOR_NAMES = ("svm", "cnn", "lstm", "blstm")
SCORE_HEADER = ["label", "score"]


class ReferenceDetectorError(ValueError):
    """Mismatched feature files or unusable training data."""


def rank_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Probability a random positive outscores a random negative, ties at
    half credit (average ranks); same definition and argument order as the
    core's roc_auc."""
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    if labels.ndim != 1 or scores.ndim != 1 or len(labels) != len(scores):
        raise ReferenceDetectorError("labels and scores must be aligned 1-D arrays")
    if not np.all(np.isfinite(scores)):
        raise ReferenceDetectorError("scores must be finite")
    if not np.all((labels == 0) | (labels == 1)):
        raise ReferenceDetectorError("labels must be 0 or 1")
    n1 = int(labels.sum())
    n0 = len(labels) - n1
    if n1 == 0 or n0 == 0:
        raise ReferenceDetectorError("both classes must be present")
    ranks = rankdata(scores, method="average")
    u = ranks[labels == 1].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n0))


def save_score_file(path: str | Path, labels: np.ndarray, scores: np.ndarray) -> None:
    if len(labels) != len(scores):
        raise ReferenceDetectorError("labels and scores must be aligned")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SCORE_HEADER)
        for y, s in zip(labels, scores):
            writer.writerow([LABELS[int(y)], repr(float(s))])


def load_score_file(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise ReferenceDetectorError(f"{path}: no such score file")
    labels = []
    scores = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != SCORE_HEADER:
            raise ReferenceDetectorError(f"{path}: expected header {','.join(SCORE_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2 or row[0] not in LABELS:
                raise ReferenceDetectorError(f"{path}: line {lineno}: malformed row")
            labels.append(LABELS.index(row[0]))
            scores.append(float(row[1]))
    return np.array(labels, dtype=np.int8), np.array(scores, dtype=np.float64)


class _Cnn(nn.Module):
    """Single 1D convolution, ReLU, adaptive max pooling, linear output."""

    def __init__(self):
        super().__init__()
        self.conv = nn.Conv1d(2, CNN_CHANNELS, kernel_size=CNN_KERNEL)
        self.head = nn.Linear(CNN_CHANNELS, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = torch.relu(self.conv(x.transpose(1, 2)))
        pooled = torch.nn.functional.adaptive_max_pool1d(h, 1).squeeze(-1)
        return self.head(pooled).squeeze(-1)


class _Lstm(nn.Module):
    """One recurrent layer; the bidirectional variant doubles the
    representation fed to the classifier."""

    def __init__(self, bidirectional: bool):
        super().__init__()
        self.lstm = nn.LSTM(2, LSTM_HIDDEN, batch_first=True, bidirectional=bidirectional)
        self.head = nn.Linear(LSTM_HIDDEN * (2 if bidirectional else 1), 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out, _ = self.lstm(x)
        return self.head(out[:, -1, :]).squeeze(-1)


def _train_torch(model: nn.Module, X: np.ndarray, y: np.ndarray, seed: int) -> nn.Module:
    opt = torch.optim.Adam(model.parameters(), lr=LEARNING_RATE)
    loss_fn = nn.BCEWithLogitsLoss()
    Xt = torch.from_numpy(X).float()
    yt = torch.from_numpy(y.astype(np.float32))
    order_rng = np.random.default_rng(np.random.SeedSequence([0xDE7EC, seed]))
    model.train()
    for _ in range(EPOCHS):
        order = order_rng.permutation(len(Xt))
        for start in range(0, len(Xt), BATCH_SIZE):
            idx = order[start : start + BATCH_SIZE]
            opt.zero_grad()
            loss = loss_fn(model(Xt[idx]), yt[idx])
            loss.backward()
            opt.step()
    model.eval()
    return model


def _torch_scores(model: nn.Module, X: np.ndarray) -> np.ndarray:
    with torch.no_grad():
        logits = model(torch.from_numpy(X).float())
    return torch.sigmoid(logits).numpy().astype(np.float64)


@dataclass
class DetectorReport:
    window_length: int
    svm_c: float
    epochs: int
    learning_rate: float
    auc: dict[str, float]
    score_files: dict[str, str]

    def to_dict(self) -> dict:
        return {
            "window_length": self.window_length,
            "svm_c": self.svm_c,
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "auc": dict(self.auc),
            "score_files": dict(self.score_files),
        }


def train_reference_detectors(
    train_csv: str | Path,
    test_csv: str | Path,
    out_dir: str | Path,
    seed: int = 0,
) -> DetectorReport:
    """Train all four detectors on one exported train/test matrix pair;
    writes a score file per detector plus report.json under out_dir."""
    X_train, y_train = load_feature_csv(train_csv)
    X_test, y_test = load_feature_csv(test_csv)
    if X_train.shape[1] != X_test.shape[1]:
        raise ReferenceDetectorError(
            f"shape mismatch: train has {X_train.shape[1]} features,"
            f" test has {X_test.shape[1]}"
        )
    length = X_train.shape[1] // 2
    if length < CNN_KERNEL:
        raise ReferenceDetectorError(
            f"window length {length} is shorter than the CNN kernel ({CNN_KERNEL})"
        )
    if len(set(y_train.tolist())) < 2:
        raise ReferenceDetectorError("training matrix must contain both classes")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    scores: dict[str, np.ndarray] = {}

    scaler = StandardScaler().fit(X_train)
    svm = SVC(C=SVM_C, kernel="rbf", probability=True, random_state=seed)
    svm.fit(scaler.transform(X_train), y_train)
    scores["svm"] = svm.predict_proba(scaler.transform(X_test))[:, 1]

    stats = fit_norm_stats(X_train)
    seq_train = stats.normalize(X_train).reshape(len(X_train), length, 2)
    seq_test = stats.normalize(X_test).reshape(len(X_test), length, 2)
    for name, build in (
        ("cnn", _Cnn),
        ("lstm", lambda: _Lstm(bidirectional=False)),
        ("blstm", lambda: _Lstm(bidirectional=True)),
    ):
        torch.manual_seed(seed)
        model = _train_torch(build().float(), seq_train, y_train, seed)
        scores[name] = _torch_scores(model, seq_test)

    auc = {}
    files = {}
    for name in DETECTOR_NAMES:
        path = out / f"scores_{name}.csv"
        save_score_file(path, y_test, scores[name])
        auc[name] = rank_auc(scores[name], y_test)
        files[name] = path.name
    report = DetectorReport(
        window_length=length,
        svm_c=SVM_C,
        epochs=EPOCHS,
        learning_rate=LEARNING_RATE,
        auc=auc,
        score_files=files,
    )
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return report
