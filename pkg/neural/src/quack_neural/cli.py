"""quack-neural: adversarial generator training, export, and reference detectors.

Subcommands: train-gan (train, score, and select checkpoints), export (mirror
a corpus with generated timings), detectors (train the four reference
detectors on exported feature matrices). Exit codes: 0 success, 1 usage
error, 2 data/validation error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .data import MANIFEST_NAME, NeuralDataError, load_manifest, load_sessions, split_human_ids, window_sessions
from .detectors import ReferenceDetectorError, train_reference_detectors
from .export import export_synthetic_dataset
from .selection import score_checkpoint, select_checkpoint
from .wgan import (
    DESK_CHECKPOINT_EVERY,
    DESK_STEPS,
    FULL_CHECKPOINT_EVERY,
    FULL_STEPS,
    GanError,
    GanTrainingRun,
    train_wgan_gp,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2

_DATA_ERRORS = (NeuralDataError, GanError, ReferenceDetectorError, OSError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="quack-neural", description=__doc__)
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("train-gan", help="train one variant; score and select checkpoints")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--variant", choices=("unconditional", "conditional"), default="unconditional")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument(
        "--full",
        action="store_true",
        help=f"full recipe ({FULL_STEPS} steps, checkpoints every {FULL_CHECKPOINT_EVERY});"
        f" default is the desk run ({DESK_STEPS}/{DESK_CHECKPOINT_EVERY})",
    )
    p.add_argument("--steps", type=int)
    p.add_argument("--batch", type=int, default=250)
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--length", type=int, default=70)
    p.add_argument("--history", type=int, default=10)
    p.add_argument("--train-fraction", type=float, default=0.8)

    p = sub.add_parser("export", help="mirror the corpus with generated timings")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("detectors", help="train the reference detectors on feature CSVs")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _cmd_train_gan(args) -> str:
    steps = args.steps if args.steps is not None else (FULL_STEPS if args.full else DESK_STEPS)
    every = (
        args.checkpoint_every
        if args.checkpoint_every is not None
        else (FULL_CHECKPOINT_EVERY if args.full else DESK_CHECKPOINT_EVERY)
    )
    run = GanTrainingRun(
        args.variant,
        steps=steps,
        batch=args.batch,
        checkpoint_every=every,
        seed=args.seed,
        window_length=args.length,
        history_length=args.history,
    )
    manifest = load_manifest(Path(args.corpus) / MANIFEST_NAME)
    train_ids, _ = split_human_ids(manifest, args.train_fraction, args.seed)
    paths = train_wgan_gp(args.corpus, run, args.out, train_ids=train_ids)

    entries = [e for e in manifest.human_entries() if e.session_id in train_ids]
    sessions = load_sessions(args.corpus, entries)
    real, _ = window_sessions(sessions, run.window_length)
    scores = [score_checkpoint(p, real, seed=args.seed) for p in paths]
    chosen = select_checkpoint(scores)
    chosen_path = next(p for p, s in zip(paths, scores) if s.step == chosen.step)
    selection = {
        "selected": str(chosen_path),
        "checkpoints": [
            {"path": str(p), **dataclasses.asdict(s)} for p, s in zip(paths, scores)
        ],
    }
    selection_path = Path(args.out) / "selection.json"
    with open(selection_path, "w", encoding="utf-8") as fh:
        json.dump(selection, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return (
        f"trained {run.variant} for {run.steps} steps ({len(paths)} checkpoints);"
        f" selected step {chosen.step} -> {selection_path}"
    )


def _cmd_export(args) -> str:
    manifest_path = export_synthetic_dataset(args.checkpoint, args.corpus, args.out, seed=args.seed)
    manifest = load_manifest(manifest_path)
    n_syn = sum(1 for e in manifest.entries if e.label == "synthetic")
    return f"exported {n_syn} synthetic sessions -> {manifest_path.parent}"


def _cmd_detectors(args) -> str:
    report = train_reference_detectors(args.train, args.test, args.out, seed=args.seed)
    aucs = ", ".join(f"{k}={v:.4f}" for k, v in sorted(report.auc.items()))
    return f"trained {len(report.auc)} detectors (L={report.window_length}): {aucs}"


_COMMANDS = {
    "train-gan": _cmd_train_gan,
    "export": _cmd_export,
    "detectors": _cmd_detectors,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.command is None:
        print("error: a subcommand is required (train-gan, export, detectors)", file=sys.stderr)
        return EXIT_USAGE
    try:
        summary = _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    print(summary)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
