"""Command-line entry point wiring the pipeline into subcommands.

Exit codes: 0 success, 1 usage error, 2 data or validation error. Every
subcommand prints a one-line summary; `--dry-run` validates inputs and
writes nothing. `QUACK_LOG` selects verbosity (error, info, debug).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from ._io import ModelFileError
from .corpus import (
    MANIFEST_NAME,
    CorpusError,
    build_fixture_corpus,
    load_manifest,
    load_sessions,
    split_sessions,
)
from .detectors import DetectorError, load_model, model_info, save_model
from .empirical import (
    EmpiricalError,
    fit_empirical_model,
    load_empirical_model,
    save_empirical_model,
)
from .evaluation import (
    COARSE_LENGTHS,
    MIXTURE_PRESETS,
    REFINED_LENGTHS,
    EvalError,
    ExperimentConfig,
    build_matrices,
    fit_detector,
    load_experiment_config,
    load_results,
    render_matrix_svg,
    run_experiment,
    run_profile,
    save_profile,
    save_results,
)
from .features import FeatureError
from .generators import (
    NATIVE_KINDS,
    GeneratorError,
    generate_corpus,
)

log = logging.getLogger("quack")

_DATA_ERRORS = (
    CorpusError,
    EmpiricalError,
    GeneratorError,
    FeatureError,
    DetectorError,
    EvalError,
    ModelFileError,
    OSError,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class UsageError(Exception):
    """Bad flags or arguments; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # noqa: D102 - argparse hook
        raise UsageError(f"{self.prog}: {message}")


def _setup_logging() -> None:
    level = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(
        os.environ.get("QUACK_LOG", "info").lower(), logging.INFO
    )
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _int_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part != ""]
    except ValueError as exc:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from exc


def _build_parser() -> _Parser:
    parser = _Parser(prog="quack", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND")

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--seed", type=int, default=0, help="run seed (default 0)")
        p.add_argument(
            "--dry-run",
            action="store_true",
            help="validate inputs and print the summary without writing files",
        )
        return p

    p = add("fixture", "write a deterministic pseudo-human corpus")
    p.add_argument("--sessions", type=int, required=True)
    p.add_argument("--length", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sessions-per-user", type=int, default=5)

    p = add("fit", "fit the empirical timing model from a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--min-support", type=int, default=10)
    p.add_argument("--segment-len", type=int, default=50)
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument(
        "--all-sessions",
        action="store_true",
        help="fit on every human session instead of the train split",
    )

    p = add("generate", "synthesize attacker sessions mirroring the corpus")
    p.add_argument(
        "--kind",
        required=True,
        help="generator kind, or comma-separated kinds, or 'all'",
    )
    p.add_argument("--model", required=True, help="fitted empirical model file")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)

    p = add("train", "train a detector from corpus windows")
    p.add_argument("--corpus", required=True)
    p.add_argument("--kind", required=True, help="generator tag or preset (BC1..UC3)")
    p.add_argument("--length", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--detector", choices=["rf", "linear"], default="rf")
    p.add_argument("--trees", type=int, default=300)
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--max-train-windows", type=int, default=2000)

    p = add("evaluate", "run an experiment config and write a results CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--corpus", help="override the config's corpus path")
    p.add_argument("--workers", type=int, default=1)

    p = add("matrix", "cross-generator matrix without a config file")
    p.add_argument("--corpus", required=True)
    p.add_argument("--generators", required=True, help="comma-separated tags")
    p.add_argument("--length", type=int, default=70)
    p.add_argument("--out", required=True)
    p.add_argument("--detector", choices=["rf", "linear"], default="rf")
    p.add_argument("--trees", type=int, default=300)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--samples-per-test-set", type=int)
    p.add_argument("--workers", type=int, default=1)

    p = add("sweep", "re-run a config across a length grid")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    grid = p.add_mutually_exclusive_group()
    grid.add_argument("--refined", action="store_true", help=f"{list(REFINED_LENGTHS)}")
    grid.add_argument("--coarse", action="store_true", help=f"{list(COARSE_LENGTHS)}")
    grid.add_argument("--lengths", help="explicit comma-separated lengths")
    p.add_argument("--corpus", help="override the config's corpus path")
    p.add_argument("--workers", type=int, default=1)

    p = add("profile", "measure single-sample inference cost per length")
    p.add_argument("--corpus", required=True)
    p.add_argument("--kind", required=True, help="generator tag to train against")
    p.add_argument("--lengths", default="10,30,50,70,100,200")
    p.add_argument("--out", required=True)
    p.add_argument("--detector", choices=["rf", "linear"], default="rf")
    p.add_argument("--trees", type=int, default=300)
    p.add_argument("--repetitions", type=int, default=200)
    p.add_argument("--split-seed", type=int, default=0)

    p = add("report", "render a results CSV as an SVG heatmap")
    p.add_argument("--results", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--length", type=int, help="required when the CSV spans lengths")

    p = add("model-info", "print a saved model's summary as JSON")
    p.add_argument("--model", required=True)

    return parser


# --- subcommand bodies ------------------------------------------------------


def _cmd_fixture(args) -> str:
    if args.dry_run:
        if args.sessions < 2 or args.length < 2:
            raise CorpusError("fixture needs --sessions >= 2 and --length >= 2")
        return f"dry-run ok: would write {args.sessions} sessions to {args.out}"
    manifest = build_fixture_corpus(
        args.out, args.sessions, args.length, args.seed, args.sessions_per_user
    )
    return f"wrote {len(manifest.entries)} human sessions to {args.out}"


def _cmd_fit(args) -> str:
    manifest = load_manifest(Path(args.corpus) / MANIFEST_NAME)
    entries = manifest.human_entries()
    scope = "all"
    if not args.all_sessions:
        split = split_sessions(manifest, args.train_fraction, args.seed)
        entries = [e for e in entries if e.session_id in split.train_ids]
        scope = "train split"
    humans = load_sessions(args.corpus, entries)
    if args.dry_run:
        events = sum(len(s.vk) for s in humans)
        return (
            f"dry-run ok: {len(humans)} human sessions ({scope},"
            f" {events} events) parse cleanly"
        )
    model = fit_empirical_model(
        humans, min_support=args.min_support, segment_len=args.segment_len
    )
    size = save_empirical_model(model, args.out)
    return (
        f"fitted {model.n_sessions} sessions ({scope}, {model.n_events} events)"
        f" -> {args.out} ({size} bytes)"
    )


def _parse_kinds(text: str) -> list[str]:
    if text == "all":
        return list(NATIVE_KINDS)
    kinds = [k for k in text.split(",") if k]
    unknown = sorted(set(kinds) - set(NATIVE_KINDS))
    if unknown:
        raise GeneratorError(
            f"unknown generator kinds {unknown}; native kinds: {sorted(NATIVE_KINDS)}"
        )
    return kinds


def _cmd_generate(args) -> str:
    kinds = _parse_kinds(args.kind)
    model = load_empirical_model(args.model)
    manifest = load_manifest(Path(args.corpus) / MANIFEST_NAME)
    n_sources = len(manifest.human_entries())
    if args.dry_run:
        return (
            f"dry-run ok: would mirror {n_sources} sessions"
            f" x {len(kinds)} kinds into {args.out}"
        )
    out_root = None if Path(args.out).resolve() == Path(args.corpus).resolve() else args.out
    generate_corpus(args.corpus, model, kinds, args.seed, out_root=out_root)
    return f"generated {n_sources * len(kinds)} synthetic sessions in {args.out}"


def _train_config(args, kind: str) -> ExperimentConfig:
    if kind in MIXTURE_PRESETS:
        mixture = list(MIXTURE_PRESETS[kind])
        return ExperimentConfig(
            mode="mixed",
            name=kind,
            corpus=args.corpus,
            train_mixture=mixture,
            test_generators=[mixture[0][0]],
            lengths=[args.length],
            train_fraction=args.train_fraction,
            split_seed=args.split_seed,
            detector=args.detector,
            seeds=[args.seed],
            n_trees=args.trees,
            max_train_windows_per_class=args.max_train_windows,
        )
    return ExperimentConfig(
        mode="single",
        corpus=args.corpus,
        test_generators=[kind],
        lengths=[args.length],
        train_fraction=args.train_fraction,
        split_seed=args.split_seed,
        detector=args.detector,
        seeds=[args.seed],
        n_trees=args.trees,
        max_train_windows_per_class=args.max_train_windows,
    )


def _cmd_train(args) -> str:
    config = _train_config(args, args.kind)
    if args.dry_run:
        return f"dry-run ok: would train {config.detector} on {args.kind} at L={args.length}"
    model, n_windows = fit_detector(config, args.length, args.seed)
    size = save_model(model, args.out)
    return (
        f"trained {config.detector} on {n_windows} windows"
        f" (L={args.length}) -> {args.out} ({size} bytes)"
    )


def _load_config(args) -> ExperimentConfig:
    config = load_experiment_config(args.config)
    if getattr(args, "corpus", None):
        config = dataclasses.replace(config, corpus=args.corpus)
    return config


def _check_corpus(config: ExperimentConfig) -> None:
    manifest = load_manifest(Path(config.corpus) / MANIFEST_NAME)
    available = set(manifest.tags())
    if config.mode == "mixed":
        # An authored mixture must be fully coverable; enumerated single and
        # cross rows merely skip when a tag is absent.
        missing = sorted({k for k, _ in config.train_mixture} - available)
        if missing:
            raise EvalError(
                f"generators absent from corpus {config.corpus}: {missing}"
                f" (available: {sorted(available)})"
            )


def _cmd_evaluate(args) -> str:
    config = _load_config(args)
    if args.dry_run:
        _check_corpus(config)
        cells = len(config.lengths) * len(config.seeds)
        return f"dry-run ok: config {args.config} valid ({config.mode}, {cells} cells/row)"
    records = run_experiment(config, n_workers=args.workers)
    save_results(records, args.out)
    scored = sum(1 for r in records if r.roc_auc is not None)
    return f"wrote {len(records)} records ({scored} scored) to {args.out}"


def _cmd_matrix(args) -> str:
    generators = [g for g in args.generators.split(",") if g]
    if not generators:
        raise UsageError("--generators must name at least one tag")
    config = ExperimentConfig(
        mode="cross_matrix",
        corpus=args.corpus,
        test_generators=generators,
        lengths=[args.length],
        detector=args.detector,
        split_seed=args.split_seed,
        seeds=[args.seed],
        samples_per_test_set=args.samples_per_test_set,
        n_trees=args.trees,
    )
    if args.dry_run:
        _check_corpus(config)
        return f"dry-run ok: {len(generators)}x{len(generators)} matrix at L={args.length}"
    records = run_experiment(config, n_workers=args.workers)
    save_results(records, args.out)
    return f"wrote {len(generators)}x{len(generators)} matrix records to {args.out}"


def _cmd_sweep(args) -> str:
    config = _load_config(args)
    if args.lengths:
        lengths = _int_list(args.lengths)
    elif args.coarse:
        lengths = list(COARSE_LENGTHS)
    else:
        lengths = list(REFINED_LENGTHS)
    config = dataclasses.replace(config, lengths=lengths)
    if args.dry_run:
        _check_corpus(config)
        return f"dry-run ok: sweep over lengths {lengths}"
    records = run_experiment(config, n_workers=args.workers)
    save_results(records, args.out)
    return f"wrote sweep over {len(lengths)} lengths to {args.out}"


def _cmd_profile(args) -> str:
    lengths = _int_list(args.lengths)
    config = ExperimentConfig(
        mode="single",
        corpus=args.corpus,
        test_generators=[args.kind],
        lengths=lengths,
        detector=args.detector,
        split_seed=args.split_seed,
        seeds=[args.seed],
        n_trees=args.trees,
    )
    if args.dry_run:
        _check_corpus(config)
        return f"dry-run ok: would profile {len(lengths)} lengths x {args.repetitions} reps"
    records = run_profile(config, repetitions=args.repetitions)
    save_profile(records, args.out)
    return f"profiled {len(records)} lengths ({args.repetitions} reps each) -> {args.out}"


def _cmd_report(args) -> str:
    records = load_results(args.results)
    if not records:
        raise EvalError(f"{args.results}: no records")
    matrices = build_matrices(records)
    if args.length is not None:
        matrices = [m for m in matrices if m.length == args.length]
        if not matrices:
            raise EvalError(f"no records at length {args.length}")
    if len(matrices) != 1:
        lengths = [m.length for m in matrices]
        raise EvalError(f"results span lengths {lengths}; pick one with --length")
    svg = render_matrix_svg(matrices[0])
    if args.dry_run:
        return f"dry-run ok: would render L={matrices[0].length} matrix to {args.out}"
    Path(args.out).write_text(svg, encoding="utf-8")
    return f"rendered L={matrices[0].length} matrix to {args.out}"


def _cmd_model_info(args) -> str:
    from ._io import read_magic
    from .empirical import EMP_MAGIC

    if read_magic(args.model) == EMP_MAGIC:
        model = load_empirical_model(args.model)
        info = {
            "kind": "empirical",
            "n_sessions": model.n_sessions,
            "n_events": model.n_events,
            "byte_size": Path(args.model).stat().st_size,
            "fingerprint": model.fingerprint,
        }
    else:
        info = model_info(args.model)
    return json.dumps(info, sort_keys=True)


_COMMANDS = {
    "fixture": _cmd_fixture,
    "fit": _cmd_fit,
    "generate": _cmd_generate,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "matrix": _cmd_matrix,
    "sweep": _cmd_sweep,
    "profile": _cmd_profile,
    "report": _cmd_report,
    "model-info": _cmd_model_info,
}


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required (see --help)")
        log.debug("dispatching %s", args.command)
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
