"""Adversarial window generators: run validation, the gradient penalty
against its closed form for a linear critic, checkpoint cadence and
provenance, and deterministic sampling."""

import numpy as np
import pytest
import torch
from torch import nn

from quack_neural.data import HT_FLOOR_MS, session_fingerprint
from quack_neural.wgan import (
    DESK_CHECKPOINT_EVERY,
    DESK_STEPS,
    FULL_CHECKPOINT_EVERY,
    FULL_STEPS,
    GanError,
    GanTrainingRun,
    desk_run,
    generate_session_timings,
    gradient_penalty,
    load_checkpoint,
    sample_windows,
    train_wgan_gp,
)


class TestRunValidation:
    def test_full_recipe_is_the_default(self):
        run = GanTrainingRun("unconditional")
        assert run.steps == FULL_STEPS == 20000
        assert run.checkpoint_every == FULL_CHECKPOINT_EVERY == 5000
        assert run.batch == 250
        assert run.window_length == 70
        assert run.cond_dim == 0

    def test_desk_run_shrinks_only_the_schedule(self):
        run = desk_run("conditional", seed=3)
        assert run.steps == DESK_STEPS == 2000
        assert run.checkpoint_every == DESK_CHECKPOINT_EVERY == 500
        assert run.batch == 250
        assert run.seed == 3
        assert run.cond_dim == 2 * run.history_length

    def test_unknown_variant_rejected(self):
        with pytest.raises(GanError, match="unknown variant"):
            GanTrainingRun("bidirectional")

    def test_steps_must_align_with_checkpoints(self):
        with pytest.raises(GanError, match="multiple of"):
            GanTrainingRun("unconditional", steps=7, checkpoint_every=2)

    def test_nonpositive_schedule_rejected(self):
        with pytest.raises(GanError, match="positive"):
            GanTrainingRun("unconditional", steps=0, checkpoint_every=1)

    def test_small_batch_rejected(self):
        with pytest.raises(GanError, match="batch"):
            GanTrainingRun("unconditional", batch=1)

    def test_conditional_window_must_cover_history(self):
        with pytest.raises(GanError, match="at least as long"):
            GanTrainingRun("conditional", window_length=4, history_length=10)


class _LinearCritic(nn.Module):
    """Affine critic whose input gradient is its weight vector everywhere."""

    def __init__(self, weight: torch.Tensor):
        super().__init__()
        self.lin = nn.Linear(weight.numel(), 1).double()
        with torch.no_grad():
            self.lin.weight.copy_(weight.unsqueeze(0))
            self.lin.bias.fill_(0.7)

    def forward(self, x, cond=None):
        h = x if cond is None else torch.cat([x, cond], dim=1)
        return self.lin(h)


class TestGradientPenalty:
    @pytest.mark.parametrize("scale", [0.5, 1.0, 2.0])
    def test_linear_critic_matches_closed_form(self, scale):
        d = 6
        w = torch.arange(1.0, d + 1.0, dtype=torch.float64)
        w *= scale / w.norm()
        critic = _LinearCritic(w)
        rng = torch.Generator().manual_seed(0)
        real = torch.randn(16, d, generator=rng, dtype=torch.float64)
        fake = torch.randn(16, d, generator=rng, dtype=torch.float64)
        pen = gradient_penalty(critic, real, fake, None, rng)
        assert pen.item() == pytest.approx((scale - 1.0) ** 2, abs=1e-12)

    def test_conditioning_is_not_interpolated(self):
        d, c = 4, 3
        w = torch.empty(d + c, dtype=torch.float64)
        w[:d] = 2.0 / np.sqrt(d)
        w[d:] = 9.0
        critic = _LinearCritic(w)
        rng = torch.Generator().manual_seed(1)
        real = torch.randn(8, d, generator=rng, dtype=torch.float64)
        fake = torch.randn(8, d, generator=rng, dtype=torch.float64)
        cond = torch.randn(8, c, generator=rng, dtype=torch.float64)
        pen = gradient_penalty(critic, real, fake, cond, rng)
        assert pen.item() == pytest.approx(1.0, abs=1e-12)


class TestTraining:
    def test_checkpoint_cadence_and_contents(self, human_corpus):
        root = human_corpus()
        run = desk_run(
            "unconditional", steps=6, checkpoint_every=2, batch=4, window_length=4
        )
        paths = train_wgan_gp(root, run, root / "ckpt")
        assert [p.name for p in paths] == [
            "checkpoint_000002.pt",
            "checkpoint_000004.pt",
            "checkpoint_000006.pt",
        ]
        ckpt = load_checkpoint(paths[-1])
        assert ckpt["variant"] == "unconditional"
        assert ckpt["step"] == 6
        assert ckpt["window_length"] == 4
        assert len(ckpt["critic_losses"]) == 2
        assert ckpt["norm_stats"]["ht_sd"] > 0.0

    def test_fingerprint_records_the_sessions_actually_read(self, human_corpus):
        root = human_corpus()
        ids = frozenset({"h00", "h02", "h03", "h04"})
        run = desk_run(
            "unconditional", steps=2, checkpoint_every=2, batch=4, window_length=4
        )
        paths = train_wgan_gp(root, run, root / "ckpt", train_ids=ids)
        ckpt = load_checkpoint(paths[0])
        assert ckpt["train_fingerprint"] == session_fingerprint(ids)

    def test_empty_train_split_rejected(self, human_corpus):
        root = human_corpus()
        run = desk_run(
            "unconditional", steps=2, checkpoint_every=2, batch=4, window_length=4
        )
        with pytest.raises(GanError, match="no human train sessions"):
            train_wgan_gp(root, run, root / "ckpt", train_ids=frozenset())

    def test_batch_larger_than_corpus_rejected(self, human_corpus):
        root = human_corpus(n_sessions=2, events=8)
        run = desk_run(
            "unconditional", steps=2, checkpoint_every=2, window_length=4
        )
        with pytest.raises(GanError, match="corpus too small"):
            train_wgan_gp(root, run, root / "ckpt")

    def test_conditional_variant_trains_and_samples(self, human_corpus):
        root = human_corpus()
        run = desk_run(
            "conditional",
            steps=2,
            checkpoint_every=2,
            batch=4,
            window_length=6,
            history_length=2,
        )
        ckpt = load_checkpoint(train_wgan_gp(root, run, root / "ckpt")[0])
        assert ckpt["variant"] == "conditional"
        a = sample_windows(ckpt, 5, seed=9, label="x")
        b = sample_windows(ckpt, 5, seed=9, label="x")
        np.testing.assert_array_equal(a, b)
        assert a.shape == (5, 12)

    def test_rejects_files_that_are_not_checkpoints(self, tmp_path):
        p = tmp_path / "weights.pt"
        torch.save({"step": 1}, p)
        with pytest.raises(GanError, match="not a"):
            load_checkpoint(p)
        with pytest.raises(GanError, match="no such"):
            load_checkpoint(tmp_path / "missing.pt")


class TestSampling:
    @pytest.fixture
    def ckpt(self, human_corpus):
        root = human_corpus()
        run = desk_run(
            "unconditional", steps=2, checkpoint_every=2, batch=4, window_length=4
        )
        return load_checkpoint(train_wgan_gp(root, run, root / "ckpt")[0])

    def test_same_seed_and_label_reproduce_windows(self, ckpt):
        a = sample_windows(ckpt, 7, seed=5, label="s01")
        b = sample_windows(ckpt, 7, seed=5, label="s01")
        np.testing.assert_array_equal(a, b)
        assert a.shape == (7, 8)

    def test_labels_decorrelate_streams(self, ckpt):
        a = sample_windows(ckpt, 7, seed=5, label="s01")
        c = sample_windows(ckpt, 7, seed=5, label="s02")
        assert not np.array_equal(a, c)

    def test_empty_draw_rejected(self, ckpt):
        with pytest.raises(GanError, match="n >= 1"):
            sample_windows(ckpt, 0, seed=5)

    def test_session_timings_are_trimmed_and_floored(self, ckpt):
        ht, ft = generate_session_timings(ckpt, 10, seed=5, label="s")
        assert len(ht) == len(ft) == 10
        assert np.all(ht >= HT_FLOOR_MS)
        assert ft[0] == 0.0
        ht2, ft2 = generate_session_timings(ckpt, 10, seed=5, label="s")
        np.testing.assert_array_equal(ht, ht2)
        np.testing.assert_array_equal(ft, ft2)
        ht3, _ = generate_session_timings(ckpt, 10, seed=5, label="other")
        assert not np.array_equal(ht, ht3)
