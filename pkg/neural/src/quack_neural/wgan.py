"""Adversarial timing-window generators (WGAN with gradient penalty).

Two variants: the unconditional model emits fixed-length timing windows from
noise alone; the conditional model also consumes the preceding timing events,
so consecutive windows can be chained into a session. Both train exclusively
on human sessions from the train split and never see synthetic or test-split
data; the checkpoint records a fingerprint of the ids actually read so that
downstream checks can prove it.

Training follows the standard gradient-penalty recipe (critic updates per
generator step, penalty weight 10, Adam with betas (0.5, 0.9)); one "step"
is one generator update. Network sizes are small fully connected stacks; the
originals are undisclosed, so these are a documented reproduction caveat.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .data import (
    HT_FLOOR_MS,
    MANIFEST_NAME,
    NormStats,
    fit_norm_stats,
    load_manifest,
    load_sessions,
    session_fingerprint,
    split_human_ids,
    window_sessions,
)

CHECKPOINT_MAGIC = "quack-neural-wgan v1"
VARIANTS = ("unconditional", "conditional")
LATENT_DIM = 64
HIDDEN_DIM = 256
GP_WEIGHT = 10.0
CRITIC_STEPS = 5
LEARNING_RATE = 1e-4
ADAM_BETAS = (0.5, 0.9)

FULL_STEPS = 20000
FULL_CHECKPOINT_EVERY = 5000
DESK_STEPS = 2000
DESK_CHECKPOINT_EVERY = 500


class GanError(ValueError):
    """Invalid training configuration or unusable corpus."""


@dataclass
class GanTrainingRun:
    variant: str
    steps: int = FULL_STEPS
    batch: int = 250
    checkpoint_every: int = FULL_CHECKPOINT_EVERY
    seed: int = 0
    window_length: int = 70
    history_length: int = 10

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise GanError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.steps < 1 or self.checkpoint_every < 1:
            raise GanError("steps and checkpoint_every must be positive")
        if self.steps % self.checkpoint_every:
            raise GanError(
                f"steps ({self.steps}) must be a multiple of"
                f" checkpoint_every ({self.checkpoint_every})"
            )
        if self.batch < 2:
            raise GanError(f"batch must be >= 2, got {self.batch}")
        if self.window_length < 2:
            raise GanError(f"window_length must be >= 2, got {self.window_length}")
        if self.history_length < 1:
            raise GanError(f"history_length must be >= 1, got {self.history_length}")
        if self.variant == "conditional" and self.window_length < self.history_length:
            raise GanError(
                "conditional windows must be at least as long as the history"
                f" ({self.window_length} < {self.history_length})"
            )

    @property
    def conditional(self) -> bool:
        return self.variant == "conditional"

    @property
    def cond_dim(self) -> int:
        return 2 * self.history_length if self.conditional else 0


def desk_run(variant: str, seed: int = 0, **overrides) -> GanTrainingRun:
    """Desk-scale override of the full recipe; mechanism identical."""
    params = dict(steps=DESK_STEPS, checkpoint_every=DESK_CHECKPOINT_EVERY, seed=seed)
    params.update(overrides)
    return GanTrainingRun(variant, **params)


class _Generator(nn.Module):
    def __init__(self, out_dim: int, cond_dim: int, latent: int, hidden: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(latent + cond_dim, hidden),
            nn.ReLU(),
            nn.Linear(hidden, hidden),
            nn.ReLU(),
            nn.Linear(hidden, out_dim),
        )

    def forward(self, z: torch.Tensor, cond: torch.Tensor | None = None) -> torch.Tensor:
        x = z if cond is None else torch.cat([z, cond], dim=1)
        return self.net(x)


class _Critic(nn.Module):
    def __init__(self, in_dim: int, cond_dim: int, hidden: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(in_dim + cond_dim, hidden),
            nn.LeakyReLU(0.2),
            nn.Linear(hidden, hidden),
            nn.LeakyReLU(0.2),
            nn.Linear(hidden, 1),
        )

    def forward(self, x: torch.Tensor, cond: torch.Tensor | None = None) -> torch.Tensor:
        h = x if cond is None else torch.cat([x, cond], dim=1)
        return self.net(h)


def gradient_penalty(
    critic: nn.Module,
    real: torch.Tensor,
    fake: torch.Tensor,
    cond: torch.Tensor | None,
    rng: torch.Generator,
) -> torch.Tensor:
    """Penalize the critic's gradient norm at points between real and fake.

    The conditioning input stays fixed; only the window is interpolated."""
    eps = torch.rand(real.shape[0], 1, generator=rng, dtype=real.dtype)
    x_hat = (eps * real + (1.0 - eps) * fake).requires_grad_(True)
    out = critic(x_hat, cond)
    grads = torch.autograd.grad(out.sum(), x_hat, create_graph=True)[0]
    norms = grads.norm(2, dim=1)
    return ((norms - 1.0) ** 2).mean()


def _conditional_pairs(sessions, length: int, history: int) -> tuple[np.ndarray, np.ndarray]:
    """(history, window) training pairs: non-overlapping windows whose full
    history precedes them within the same session."""
    conds = []
    targets = []
    for s in sorted(sessions, key=lambda s: s.session_id):
        start = history
        while start + length <= len(s):
            row = np.empty(2 * length, dtype=np.float64)
            row[0::2] = s.ht_ms[start : start + length]
            row[1::2] = s.ft_ms[start : start + length]
            hist = np.empty(2 * history, dtype=np.float64)
            hist[0::2] = s.ht_ms[start - history : start]
            hist[1::2] = s.ft_ms[start - history : start]
            targets.append(row)
            conds.append(hist)
            start += length
    if not targets:
        return np.empty((0, 2 * history)), np.empty((0, 2 * length))
    return np.array(conds), np.array(targets)


def _train_windows(sessions, run: GanTrainingRun) -> tuple[np.ndarray, np.ndarray | None]:
    if run.conditional:
        conds, targets = _conditional_pairs(sessions, run.window_length, run.history_length)
        return targets, conds
    X, _ = window_sessions(sessions, run.window_length)
    return X, None


def train_wgan_gp(
    corpus_root: str | Path,
    run: GanTrainingRun,
    out_dir: str | Path,
    train_ids: frozenset[str] | None = None,
) -> list[Path]:
    """Train one variant on the corpus's human train split; returns the
    checkpoint paths in step order (steps/checkpoint_every of them)."""
    root = Path(corpus_root)
    out = Path(out_dir)
    manifest = load_manifest(root / MANIFEST_NAME)
    if train_ids is None:
        train_ids, _ = split_human_ids(manifest, 0.8, run.seed)
    entries = [e for e in manifest.human_entries() if e.session_id in train_ids]
    if not entries:
        raise GanError("no human train sessions to learn from")
    sessions = load_sessions(root, entries)
    fingerprint = session_fingerprint(s.session_id for s in sessions)

    X_raw, cond_raw = _train_windows(sessions, run)
    if len(X_raw) < run.batch:
        raise GanError(
            f"corpus too small for batch size: {len(X_raw)} windows"
            f" at L={run.window_length}, batch {run.batch}"
        )
    stats = fit_norm_stats(X_raw)
    X = torch.from_numpy(stats.normalize(X_raw))
    cond = torch.from_numpy(stats.normalize(cond_raw)) if cond_raw is not None else None

    torch.manual_seed(run.seed)
    generator = _Generator(2 * run.window_length, run.cond_dim, LATENT_DIM, HIDDEN_DIM).double()
    critic = _Critic(2 * run.window_length, run.cond_dim, HIDDEN_DIM).double()
    g_opt = torch.optim.Adam(generator.parameters(), lr=LEARNING_RATE, betas=ADAM_BETAS)
    c_opt = torch.optim.Adam(critic.parameters(), lr=LEARNING_RATE, betas=ADAM_BETAS)

    draw = np.random.default_rng(np.random.SeedSequence([0xD15C, run.seed]))
    noise = torch.Generator().manual_seed(run.seed)

    def sample_real(n: int) -> tuple[torch.Tensor, torch.Tensor | None]:
        idx = draw.integers(0, len(X), size=n)
        return X[idx], (cond[idx] if cond is not None else None)

    def sample_z(n: int) -> torch.Tensor:
        return torch.randn(n, LATENT_DIM, generator=noise, dtype=torch.float64)

    paths: list[Path] = []
    interval_losses: list[float] = []
    out.mkdir(parents=True, exist_ok=True)
    for step in range(1, run.steps + 1):
        c_loss_val = 0.0
        for _ in range(CRITIC_STEPS):
            real, cond_batch = sample_real(run.batch)
            fake = generator(sample_z(run.batch), cond_batch).detach()
            c_opt.zero_grad()
            c_loss = (
                critic(fake, cond_batch).mean()
                - critic(real, cond_batch).mean()
                + GP_WEIGHT * gradient_penalty(critic, real, fake, cond_batch, noise)
            )
            c_loss.backward()
            c_opt.step()
            c_loss_val = float(c_loss.detach())
        _, cond_batch = sample_real(run.batch)
        g_opt.zero_grad()
        g_loss = -critic(generator(sample_z(run.batch), cond_batch), cond_batch).mean()
        g_loss.backward()
        g_opt.step()
        interval_losses.append(c_loss_val)

        if step % run.checkpoint_every == 0:
            path = out / f"checkpoint_{step:06d}.pt"
            torch.save(
                {
                    "format": CHECKPOINT_MAGIC,
                    "variant": run.variant,
                    "step": step,
                    "steps": run.steps,
                    "batch": run.batch,
                    "checkpoint_every": run.checkpoint_every,
                    "seed": run.seed,
                    "window_length": run.window_length,
                    "history_length": run.history_length,
                    "latent_dim": LATENT_DIM,
                    "hidden_dim": HIDDEN_DIM,
                    "norm_stats": {
                        "ht_mean": stats.ht_mean,
                        "ht_sd": stats.ht_sd,
                        "ft_mean": stats.ft_mean,
                        "ft_sd": stats.ft_sd,
                    },
                    "generator_state": generator.state_dict(),
                    "critic_state": critic.state_dict(),
                    "critic_losses": list(interval_losses),
                    "train_fingerprint": fingerprint,
                },
                path,
            )
            paths.append(path)
            interval_losses = []
    return paths


def load_checkpoint(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise GanError(f"{path}: no such checkpoint")
    ckpt = torch.load(path, weights_only=False)
    if not isinstance(ckpt, dict) or ckpt.get("format") != CHECKPOINT_MAGIC:
        raise GanError(f"{path}: not a {CHECKPOINT_MAGIC} checkpoint")
    return ckpt


def _restore(ckpt: dict) -> tuple[_Generator, NormStats]:
    cond_dim = 2 * ckpt["history_length"] if ckpt["variant"] == "conditional" else 0
    generator = _Generator(
        2 * ckpt["window_length"], cond_dim, ckpt["latent_dim"], ckpt["hidden_dim"]
    ).double()
    generator.load_state_dict(ckpt["generator_state"])
    generator.eval()
    ns = ckpt["norm_stats"]
    return generator, NormStats(ns["ht_mean"], ns["ht_sd"], ns["ft_mean"], ns["ft_sd"])


def _chain_seed(seed: int, label: str) -> int:
    digest = hashlib.blake2b(f"{seed}:{label}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") >> 1


def sample_windows(ckpt: dict, n: int, seed: int, label: str = "sample") -> np.ndarray:
    """Draw n raw-space windows the way the exporter emits them.

    Unconditional windows are independent; conditional windows are one chain
    whose history starts at the training mean (all-zero normalized) and then
    follows the generator's own output."""
    if n < 1:
        raise GanError(f"need n >= 1 windows, got {n}")
    generator, stats = _restore(ckpt)
    rng = torch.Generator().manual_seed(_chain_seed(seed, label))
    with torch.no_grad():
        if ckpt["variant"] == "unconditional":
            z = torch.randn(n, ckpt["latent_dim"], generator=rng, dtype=torch.float64)
            out = generator(z).numpy()
        else:
            history = 2 * ckpt["history_length"]
            cond = torch.zeros(1, history, dtype=torch.float64)
            rows = []
            for _ in range(n):
                z = torch.randn(1, ckpt["latent_dim"], generator=rng, dtype=torch.float64)
                window = generator(z, cond)
                rows.append(window[0].numpy())
                cond = window[:, -history:].detach()
            out = np.array(rows)
    return stats.denormalize(out)


def generate_session_timings(ckpt: dict, n_events: int, seed: int, label: str) -> tuple[np.ndarray, np.ndarray]:
    """Concatenated windows trimmed to n_events; returns (ht_ms, ft_ms) in
    raw space with the hold-time floor applied and the first flight zeroed."""
    length = ckpt["window_length"]
    n_windows = max(1, math.ceil(n_events / length))
    flat = sample_windows(ckpt, n_windows, seed, label).reshape(-1)
    ht = flat[0::2][:n_events]
    ft = flat[1::2][:n_events]
    ht = np.maximum(ht, HT_FLOOR_MS)
    ft = ft.copy()
    ft[0] = 0.0
    return ht, ft
