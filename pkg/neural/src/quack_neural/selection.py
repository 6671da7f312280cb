"""Checkpoint evaluation and selection for the adversarial generators.

Every checkpoint gets four quality measures: critic-loss stability over its
training interval, marginal-distribution distance against the human training
windows, variance preservation, and a mode-collapse flag. Selection is a pure
lexicographic rule over those scores: collapsed checkpoints are discarded,
survivors are ranked by marginal distance, ties break toward the variance
ratio closest to 1, then toward the latest step.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import ks_statistic
from .wgan import GanError, load_checkpoint, sample_windows

COLLAPSE_EPS_FRACTION = 0.01
COLLAPSE_THRESHOLD = 0.5
SCORE_SAMPLES = 512


@dataclass(frozen=True)
class CheckpointScore:
    """All four criteria are computed for every checkpoint."""

    step: int
    critic_stability: float
    marginal_distance: float
    variance_ratio: float
    mode_collapsed: bool


def critic_stability(losses: list[float]) -> float:
    """Spread of the critic loss over the tail of the interval (last quarter,
    at least one step); lower means the loss has stabilized."""
    if not losses:
        raise GanError("critic_stability needs at least one recorded loss")
    tail = losses[-max(1, len(losses) // 4) :]
    return float(np.std(np.asarray(tail, dtype=np.float64)))


def mode_collapse_fraction(generated: np.ndarray, eps: float) -> float:
    """Fraction of generated windows whose nearest other generated window is
    closer than eps (euclidean, raw feature space)."""
    n = len(generated)
    if n < 2:
        raise GanError(f"collapse statistic needs >= 2 windows, got {n}")
    sq = np.sum(generated**2, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (generated @ generated.T)
    np.fill_diagonal(d2, np.inf)
    nearest = np.sqrt(np.maximum(np.min(d2, axis=1), 0.0))
    return float(np.mean(nearest < eps))


def feature_space_diameter(real: np.ndarray) -> float:
    """Diagonal of the real windows' axis-aligned bounding box."""
    if len(real) == 0:
        raise GanError("diameter needs at least one real window")
    span = real.max(axis=0) - real.min(axis=0)
    return float(np.sqrt(np.sum(span**2)))


def score_checkpoint(
    path: str | Path,
    real_windows: np.ndarray,
    n_samples: int = SCORE_SAMPLES,
    seed: int = 0,
) -> CheckpointScore:
    """Score one saved checkpoint against the raw human training windows."""
    ckpt = load_checkpoint(path)
    if real_windows.ndim != 2 or real_windows.shape[1] != 2 * ckpt["window_length"]:
        raise GanError(
            f"real windows {real_windows.shape} do not match"
            f" checkpoint window length {ckpt['window_length']}"
        )
    generated = sample_windows(ckpt, n_samples, seed, label=f"score:{ckpt['step']}")

    gen_ht, gen_ft = generated[:, 0::2].ravel(), generated[:, 1::2].ravel()
    real_ht, real_ft = real_windows[:, 0::2].ravel(), real_windows[:, 1::2].ravel()
    distance = 0.5 * (ks_statistic(gen_ht, real_ht) + ks_statistic(gen_ft, real_ft))
    ratio = 0.5 * (
        float(np.var(gen_ht) / np.var(real_ht)) + float(np.var(gen_ft) / np.var(real_ft))
    )
    eps = COLLAPSE_EPS_FRACTION * feature_space_diameter(real_windows)
    collapsed = mode_collapse_fraction(generated, eps) > COLLAPSE_THRESHOLD
    return CheckpointScore(
        step=int(ckpt["step"]),
        critic_stability=critic_stability(ckpt["critic_losses"]),
        marginal_distance=float(distance),
        variance_ratio=ratio,
        mode_collapsed=collapsed,
    )


def select_checkpoint(scores: list[CheckpointScore]) -> CheckpointScore:
    """Lexicographic selection; raises with a diagnostic when every
    checkpoint collapsed."""
    if not scores:
        raise GanError("no checkpoint scores to select from")
    survivors = [s for s in scores if not s.mode_collapsed]
    if not survivors:
        detail = ", ".join(
            f"step {s.step}: distance {s.marginal_distance:.4f}" for s in scores
        )
        raise GanError(f"all {len(scores)} checkpoints mode-collapsed ({detail})")
    return min(
        survivors,
        key=lambda s: (s.marginal_distance, abs(s.variance_ratio - 1.0), -s.step),
    )
