"""Experiment harness: single, cross-matrix, and mixed-generator evaluation.

A run is a grid of independent cells (train recipe x window length x seed).
Each cell trains one detector and scores it against every configured test
generator with a balanced, seeded draw of test windows, so matrix columns
are comparable across rows. Output records are canonically ordered no
matter how the cells were scheduled.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

from .corpus import (
    MANIFEST_NAME,
    DatasetManifest,
    Session,
    load_manifest,
    load_sessions,
    session_fingerprint,
    split_sessions,
    stable_hash64,
)
from .detectors import (
    LinearBaselineModel,
    RandomForestModel,
    predict_score,
    predict_scores,
    predict_scores_linear,
    serialize_model,
    train_linear_baseline,
    train_random_forest,
)
from .features import fit_normalizer, vectorize, window_sessions

__all__ = [
    "EvalError",
    "ExperimentConfig",
    "ResultRecord",
    "CrossMatrix",
    "ProfileRecord",
    "MIXTURE_PRESETS",
    "REFINED_LENGTHS",
    "COARSE_LENGTHS",
    "RESULTS_HEADER",
    "PROFILE_HEADER",
    "roc_auc",
    "largest_remainder_counts",
    "mixture_counts",
    "run_experiment",
    "run_single_generator",
    "run_cross_matrix",
    "run_mixed",
    "run_length_sweep",
    "run_profile",
    "fit_detector",
    "profile_inference",
    "build_matrices",
    "render_matrix_svg",
    "save_results",
    "load_results",
    "save_profile",
    "load_experiment_config",
    "save_experiment_config",
]

HUMAN_KEY = "human"

REFINED_LENGTHS = (10, 30, 50, 70, 100, 200)
COARSE_LENGTHS = (10, 50, 100, 200, 500, 1000)

# Named training recipes: (generator tag, percent of synthetic train windows).
MIXTURE_PRESETS: dict[str, tuple[tuple[str, float], ...]] = {
    "BC1": (("conditional_prevbin", 50.0), ("prng_pcg64-style", 50.0)),
    "BC2": (("ns_histogram", 34.0), ("ctx_uniform", 33.0), ("ctx_gaussian", 33.0)),
    "BC3": (("ns_histogram", 50.0), ("conditional_prevbin", 50.0)),
    "UC1": (("ns_histogram", 70.0), ("conditional_prevbin", 30.0)),
    "UC2": (("ns_histogram", 70.0), ("conditional_prevbin", 25.0), ("ctx_average", 5.0)),
    "UC3": (
        ("ns_histogram", 70.0),
        ("conditional_prevbin", 20.0),
        ("wgan_uncond", 7.0),
        ("ctx_average", 3.0),
    ),
}

RESULTS_HEADER = [
    "train",
    "test",
    "length",
    "seed",
    "roc_auc",
    "n_train",
    "n_test",
    "fit_ms",
    "score_ms",
]
PROFILE_HEADER = [
    "length",
    "repetitions",
    "prep_median_ms",
    "prep_p95_ms",
    "score_median_ms",
    "score_p95_ms",
    "cpu_ratio",
    "model_bytes",
]

_TRAIN_DRAW_SALT = 0xE7A1
_TEST_DRAW_SALT = 0xE7A2


class EvalError(Exception):
    """Invalid experiment configuration or corpus state."""


# --- metric -----------------------------------------------------------------


def roc_auc(scores, labels) -> float:
    """Rank-based ROC-AUC (Mann-Whitney U over n0*n1), ties counted 0.5."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.ndim != 1 or y.shape != s.shape:
        raise EvalError("scores and labels must be 1-D and the same length")
    if len(s) == 0 or not np.all(np.isfinite(s)):
        raise EvalError("scores must be non-empty and finite")
    y = y.astype(np.int64)
    if not np.all((y == 0) | (y == 1)):
        raise EvalError("labels must be 0 or 1")
    n1 = int(y.sum())
    n0 = len(y) - n1
    if n0 == 0 or n1 == 0:
        raise EvalError("roc_auc needs both classes present")
    order = np.argsort(s, kind="mergesort")
    sorted_s = s[order]
    bounds = np.flatnonzero(np.r_[True, sorted_s[1:] != sorted_s[:-1], True])
    base = np.arange(1, len(s) + 1, dtype=np.float64)
    counts = np.diff(bounds)
    group_mean = np.add.reduceat(base, bounds[:-1]) / counts
    ranks = np.empty(len(s), dtype=np.float64)
    ranks[order] = np.repeat(group_mean, counts)
    u = ranks[y == 1].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n0))


# --- configuration ----------------------------------------------------------


@dataclass
class ExperimentConfig:
    mode: str
    corpus: str
    test_generators: list[str]
    lengths: list[int]
    train_mixture: list[tuple[str, float]] = field(default_factory=list)
    name: str = ""
    train_fraction: float = 0.8
    split_seed: int = 0
    detector: str = "rf"
    seeds: list[int] = field(default_factory=lambda: [0])
    samples_per_test_set: int | None = None
    n_trees: int = 300
    max_train_windows_per_class: int | None = 2000

    def __post_init__(self) -> None:
        if self.mode not in ("single", "cross_matrix", "mixed"):
            raise EvalError(f"unknown mode {self.mode!r}")
        if self.detector not in ("rf", "linear"):
            raise EvalError(f"unknown detector {self.detector!r}")
        if not self.test_generators:
            raise EvalError("test_generators must be non-empty")
        if not self.lengths or any(int(n) < 2 for n in self.lengths):
            raise EvalError("lengths must be non-empty integers >= 2")
        self.lengths = [int(n) for n in self.lengths]
        if not self.seeds:
            raise EvalError("seeds must be non-empty")
        self.seeds = [int(s) for s in self.seeds]
        if not 0.0 < self.train_fraction < 1.0:
            raise EvalError("train_fraction must be in (0, 1)")
        self.train_mixture = [(str(k), float(p)) for k, p in self.train_mixture]
        if self.train_mixture:
            total = sum(p for _, p in self.train_mixture)
            if abs(total - 100.0) > 1e-9:
                raise EvalError(f"mixture percents must sum to 100, got {total}")
            if any(p <= 0 for _, p in self.train_mixture):
                raise EvalError("mixture percents must be positive")
            if len({k for k, _ in self.train_mixture}) != len(self.train_mixture):
                raise EvalError("duplicate generator in train_mixture")
        if self.mode == "mixed" and not self.train_mixture:
            raise EvalError("mode=mixed requires a train_mixture")
        if self.samples_per_test_set is not None and self.samples_per_test_set < 1:
            raise EvalError("samples_per_test_set must be >= 1")
        if self.n_trees < 1:
            raise EvalError("n_trees must be >= 1")
        if (
            self.max_train_windows_per_class is not None
            and self.max_train_windows_per_class < 1
        ):
            raise EvalError("max_train_windows_per_class must be >= 1")

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "name": self.name,
            "corpus": self.corpus,
            "train_mixture": [[k, p] for k, p in self.train_mixture],
            "test_generators": list(self.test_generators),
            "lengths": list(self.lengths),
            "train_fraction": self.train_fraction,
            "split_seed": self.split_seed,
            "detector": self.detector,
            "seeds": list(self.seeds),
            "samples_per_test_set": self.samples_per_test_set,
            "n_trees": self.n_trees,
            "max_train_windows_per_class": self.max_train_windows_per_class,
        }


def _config_from_dict(raw: dict) -> ExperimentConfig:
    known = {
        "mode",
        "name",
        "corpus",
        "train_mixture",
        "test_generators",
        "lengths",
        "train_fraction",
        "split_seed",
        "detector",
        "seeds",
        "samples_per_test_set",
        "n_trees",
        "max_train_windows_per_class",
    }
    unknown = set(raw) - known
    if unknown:
        raise EvalError(f"unknown config fields: {sorted(unknown)}")
    for required in ("mode", "corpus", "test_generators", "lengths"):
        if required not in raw:
            raise EvalError(f"config missing required field {required!r}")
    kwargs = dict(raw)
    kwargs["train_mixture"] = [tuple(item) for item in raw.get("train_mixture", [])]
    return ExperimentConfig(**kwargs)


def load_experiment_config(path: str | Path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise EvalError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise EvalError(f"{path}: config must be a JSON object")
    return _config_from_dict(raw)


def save_experiment_config(config: ExperimentConfig, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


# --- records ----------------------------------------------------------------


@dataclass(frozen=True)
class ResultRecord:
    train: str
    test: str
    length: int
    seed: int
    roc_auc: float | None  # None marks an explicit skipped cell
    n_train: int
    n_test: int
    fit_ms: float
    score_ms: float


def _record_key(rec: ResultRecord) -> tuple:
    return (rec.train, rec.test, rec.length, rec.seed)


def save_results(records: list[ResultRecord], path: str | Path) -> None:
    rows = sorted(records, key=_record_key)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULTS_HEADER)
        for r in rows:
            auc = "" if r.roc_auc is None else repr(float(r.roc_auc))
            writer.writerow(
                [
                    r.train,
                    r.test,
                    r.length,
                    r.seed,
                    auc,
                    r.n_train,
                    r.n_test,
                    f"{r.fit_ms:.3f}",
                    f"{r.score_ms:.3f}",
                ]
            )


def load_results(path: str | Path) -> list[ResultRecord]:
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != RESULTS_HEADER:
            raise EvalError(f"{path}: unexpected results header {header}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(RESULTS_HEADER):
                raise EvalError(f"{path}:{lineno}: expected {len(RESULTS_HEADER)} fields")
            try:
                records.append(
                    ResultRecord(
                        train=row[0],
                        test=row[1],
                        length=int(row[2]),
                        seed=int(row[3]),
                        roc_auc=None if row[4] == "" else float(row[4]),
                        n_train=int(row[5]),
                        n_test=int(row[6]),
                        fit_ms=float(row[7]),
                        score_ms=float(row[8]),
                    )
                )
            except ValueError as exc:
                raise EvalError(f"{path}:{lineno}: {exc}") from exc
    return records


# --- mixture arithmetic -----------------------------------------------------


def largest_remainder_counts(total: int, percents: list[float]) -> list[int]:
    """Integer counts per percent summing exactly to total (largest remainder)."""
    if total < 0:
        raise EvalError("total must be >= 0")
    quotas = [total * p / 100.0 for p in percents]
    counts = [math.floor(q) for q in quotas]
    short = total - sum(counts)
    order = sorted(range(len(percents)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:short]:
        counts[i] += 1
    return counts


def mixture_counts(total: int, mixture: list[tuple[str, float]]) -> dict[str, int]:
    counts = largest_remainder_counts(total, [p for _, p in mixture])
    return {kind: n for (kind, _), n in zip(mixture, counts)}


# --- corpus assembly --------------------------------------------------------


@dataclass(frozen=True)
class _TrainSpec:
    desc: str
    mixture: tuple[tuple[str, float], ...]


@dataclass
class _SplitSessions:
    """Sessions grouped by tag, each tag split by the source session's side."""

    train: dict[str, list[Session]]
    test: dict[str, list[Session]]
    train_ids: frozenset[str]
    test_ids: frozenset[str]


def _source_id(session_id: str) -> str:
    return session_id.rsplit("--", 1)[0] if "--" in session_id else session_id


def _load_split_corpus(
    config: ExperimentConfig, tags: set[str], required: set[str] = frozenset()
) -> _SplitSessions:
    """Load humans plus the tagged synthetic sessions, split by source session.

    Tags in `required` must exist in the corpus (an authored train mixture);
    other absent tags simply yield empty groups, which the runners record as
    explicit skipped cells."""
    root = Path(config.corpus)
    manifest = load_manifest(root / MANIFEST_NAME)
    available = set(manifest.tags())
    missing = sorted(t for t in required if t != HUMAN_KEY and t not in available)
    if missing:
        raise EvalError(
            f"generators absent from corpus {root}: {missing} (available: {sorted(available)})"
        )
    split = split_sessions(manifest, config.train_fraction, config.split_seed)
    wanted = [
        e
        for e in manifest.entries
        if e.label == "human" or e.generator_tag in (tags | required)
    ]
    sessions = load_sessions(root, wanted)
    grouped = _SplitSessions({}, {}, split.train_ids, split.test_ids)
    for session in sessions:
        key = HUMAN_KEY if session.label == "human" else session.generator_tag
        source = _source_id(session.session_id)
        if source in split.train_ids:
            grouped.train.setdefault(key, []).append(session)
        elif source in split.test_ids:
            grouped.test.setdefault(key, []).append(session)
        else:
            raise EvalError(
                f"session {session.session_id}: source {source} is in neither split"
            )
    for side in (grouped.train, grouped.test):
        for key in side:
            side[key].sort(key=lambda s: s.session_id)
    return grouped


def _assert_hygiene(window_ids: np.ndarray, allowed_ids: frozenset[str], side: str) -> None:
    sources = {_source_id(sid) for sid in window_ids}
    combined = session_fingerprint(sorted(sources | set(allowed_ids)))
    if combined != session_fingerprint(sorted(allowed_ids)):
        raise EvalError(f"hygiene violation: {side} windows originate outside the {side} split")


def _draw_rng(salt: int, seed: int, tag: str, length: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence([salt, seed, stable_hash64(tag), length])
    )


def _draw(X: np.ndarray, ids: np.ndarray, count: int, rng: np.random.Generator):
    idx = np.sort(rng.choice(len(X), size=count, replace=False))
    return X[idx], ids[idx]


def _windows(sessions: list[Session], length: int):
    matrix = vectorize(window_sessions(sessions, length), length=length)
    return matrix.X, np.asarray(matrix.session_ids)


# --- grid execution ---------------------------------------------------------


def _skip_records(spec, config, length, seed, n_train=0):
    return [
        ResultRecord(spec.desc, tag, length, seed, None, n_train, 0, 0.0, 0.0)
        for tag in config.test_generators
    ]


def _assemble_train(
    config: ExperimentConfig,
    spec: _TrainSpec,
    grouped: _SplitSessions,
    length: int,
    seed: int,
):
    """Balanced training set per the mixture, or None when nothing fits.

    The synthetic budget is the largest total every mixture member can cover
    at its share, bounded by human availability and the per-class cap."""
    human_X, human_ids = _windows(grouped.train.get(HUMAN_KEY, []), length)
    avail = {}
    syn_train = {}
    for tag, _ in spec.mixture:
        X, ids = _windows(grouped.train.get(tag, []), length)
        syn_train[tag] = (X, ids)
        avail[tag] = len(X)
    total = min(
        (math.floor(avail[tag] * 100.0 / pct) for tag, pct in spec.mixture),
        default=0,
    )
    total = min(total, len(human_X))
    if config.max_train_windows_per_class is not None:
        total = min(total, config.max_train_windows_per_class)
    counts = mixture_counts(total, list(spec.mixture))
    while total > 0 and any(counts[tag] > avail[tag] for tag, _ in spec.mixture):
        total -= 1
        counts = mixture_counts(total, list(spec.mixture))
    if total == 0:
        return None
    parts = []
    part_ids = []
    for tag, _ in spec.mixture:
        X, ids = syn_train[tag]
        rng = _draw_rng(_TRAIN_DRAW_SALT, seed, tag, length)
        Xd, idd = _draw(X, ids, counts[tag], rng)
        parts.append(Xd)
        part_ids.append(idd)
    rng = _draw_rng(_TRAIN_DRAW_SALT, seed, HUMAN_KEY, length)
    Xh, idh = _draw(human_X, human_ids, total, rng)
    X_train = np.vstack([Xh] + parts)
    y_train = np.r_[np.zeros(total, dtype=np.int8), np.ones(total, dtype=np.int8)]
    origin_ids = np.concatenate([idh] + part_ids)
    return X_train, y_train, origin_ids


def _run_cell(
    config: ExperimentConfig,
    spec: _TrainSpec,
    length: int,
    seed: int,
    grouped: _SplitSessions,
) -> list[ResultRecord]:
    human_test_X, human_test_ids = _windows(grouped.test.get(HUMAN_KEY, []), length)
    assembled = _assemble_train(config, spec, grouped, length, seed)
    if assembled is None:
        return _skip_records(spec, config, length, seed)
    X_train, y_train, origin_ids = assembled
    _assert_hygiene(origin_ids, grouped.train_ids, "train")

    t0 = time.perf_counter()
    if config.detector == "rf":
        model = train_random_forest(X_train, y_train, n_trees=config.n_trees, seed=seed)
        score_fn = lambda X: predict_scores(model, X)
    else:
        stats = fit_normalizer(X_train)
        model = train_linear_baseline(X_train, y_train, stats, seed=seed)
        score_fn = lambda X: predict_scores_linear(model, X)
    fit_ms = (time.perf_counter() - t0) * 1000.0

    # Balanced test draw, identical across rows: per-test-set size defaults to
    # the minimum available over the human side and every non-empty test
    # generator (empty ones become skipped cells, not a global veto).
    syn_test = {}
    for tag in config.test_generators:
        syn_test[tag] = _windows(grouped.test.get(tag, []), length)
    sizes = [len(human_test_X)] + [
        len(X) for X, _ in syn_test.values() if len(X) > 0
    ]
    spt = config.samples_per_test_set
    if spt is None:
        spt = min(sizes)
    if spt == 0 or len(human_test_X) < spt:
        return _skip_records(spec, config, length, seed, n_train=len(X_train))

    rng = _draw_rng(_TEST_DRAW_SALT, seed, HUMAN_KEY, length)
    Xh_te, idh_te = _draw(human_test_X, human_test_ids, spt, rng)
    records = []
    for tag in config.test_generators:
        X, ids = syn_test[tag]
        if len(X) < spt:
            records.append(
                ResultRecord(spec.desc, tag, length, seed, None, len(X_train), 0, fit_ms, 0.0)
            )
            continue
        rng = _draw_rng(_TEST_DRAW_SALT, seed, tag, length)
        Xs_te, ids_te = _draw(X, ids, spt, rng)
        _assert_hygiene(np.concatenate([idh_te, ids_te]), grouped.test_ids, "test")
        X_test = np.vstack([Xh_te, Xs_te])
        y_test = np.r_[np.zeros(spt, dtype=np.int8), np.ones(spt, dtype=np.int8)]
        t0 = time.perf_counter()
        auc = roc_auc(score_fn(X_test), y_test)
        score_ms = (time.perf_counter() - t0) * 1000.0
        records.append(
            ResultRecord(
                spec.desc, tag, length, seed, auc, len(X_train), len(X_test), fit_ms, score_ms
            )
        )
    return records


def _train_specs(config: ExperimentConfig) -> list[_TrainSpec]:
    if config.mode == "single":
        return [_TrainSpec(tag, ((tag, 100.0),)) for tag in config.test_generators]
    if config.mode == "cross_matrix":
        rows = [k for k, _ in config.train_mixture] or list(config.test_generators)
        return [_TrainSpec(tag, ((tag, 100.0),)) for tag in rows]
    desc = config.name or "mixed:" + "+".join(
        f"{k}={p:g}" for k, p in config.train_mixture
    )
    return [_TrainSpec(desc, tuple(config.train_mixture))]


def run_experiment(config: ExperimentConfig, n_workers: int = 1) -> list[ResultRecord]:
    """Run the configured grid and return canonically ordered records."""
    specs = _train_specs(config)
    tags = {t for spec in specs for t, _ in spec.mixture} | set(config.test_generators)
    required = {t for t, _ in config.train_mixture} if config.mode == "mixed" else set()
    grouped = _load_split_corpus(config, tags, required)
    if config.mode == "single":
        # Each generator is scored only against itself.
        cells = [
            (replace(config, test_generators=[spec.desc]), spec, length, seed)
            for spec in specs
            for length in config.lengths
            for seed in config.seeds
        ]
    else:
        cells = [
            (config, spec, length, seed)
            for spec in specs
            for length in config.lengths
            for seed in config.seeds
        ]
    if n_workers > 1:
        chunks = Parallel(n_jobs=n_workers)(
            delayed(_run_cell)(cfg, spec, length, seed, grouped)
            for cfg, spec, length, seed in cells
        )
    else:
        chunks = [_run_cell(cfg, spec, length, seed, grouped) for cfg, spec, length, seed in cells]
    records = [rec for chunk in chunks for rec in chunk]
    return sorted(records, key=_record_key)


def run_single_generator(config: ExperimentConfig, n_workers: int = 1) -> list[ResultRecord]:
    if config.mode != "single":
        raise EvalError("run_single_generator requires mode=single")
    return run_experiment(config, n_workers)


def run_cross_matrix(config: ExperimentConfig, n_workers: int = 1) -> list[ResultRecord]:
    if config.mode != "cross_matrix":
        raise EvalError("run_cross_matrix requires mode=cross_matrix")
    return run_experiment(config, n_workers)


def run_mixed(config: ExperimentConfig, n_workers: int = 1) -> list[ResultRecord]:
    if config.mode != "mixed":
        raise EvalError("run_mixed requires mode=mixed")
    return run_experiment(config, n_workers)


def run_length_sweep(
    config: ExperimentConfig, lengths: list[int] | None = None, n_workers: int = 1
) -> list[ResultRecord]:
    """Re-run the configured mode across a length grid (default refined)."""
    swept = replace(config, lengths=list(lengths or REFINED_LENGTHS))
    return run_experiment(swept, n_workers)


# --- matrix rendering -------------------------------------------------------


@dataclass(frozen=True)
class CrossMatrix:
    train_kinds: tuple[str, ...]
    test_kinds: tuple[str, ...]
    length: int
    cells: np.ndarray  # (rows, cols), nan for skipped

    def __post_init__(self) -> None:
        if self.cells.shape != (len(self.train_kinds), len(self.test_kinds)):
            raise EvalError("matrix shape does not match its labels")


def build_matrices(records: list[ResultRecord]) -> list[CrossMatrix]:
    """Pivot records into one train x test AUC matrix per length.

    Multiple seeds average; skipped cells stay NaN."""
    matrices = []
    for length in sorted({r.length for r in records}):
        subset = [r for r in records if r.length == length]
        rows = sorted({r.train for r in subset})
        cols = sorted({r.test for r in subset})
        sums = np.zeros((len(rows), len(cols)))
        counts = np.zeros((len(rows), len(cols)))
        for r in subset:
            if r.roc_auc is None:
                continue
            i, j = rows.index(r.train), cols.index(r.test)
            sums[i, j] += r.roc_auc
            counts[i, j] += 1
        with np.errstate(invalid="ignore"):
            cells = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
        matrices.append(CrossMatrix(tuple(rows), tuple(cols), length, cells))
    return matrices


def _cell_color(value: float) -> tuple[str, str]:
    """Background and text color for one AUC cell."""
    if math.isnan(value):
        return "#e8e8e8", "#666666"
    t = min(max((value - 0.5) / 0.5, 0.0), 1.0)
    lo, hi = (247, 251, 255), (8, 72, 135)
    rgb = tuple(round(a + (b - a) * t) for a, b in zip(lo, hi))
    text = "#ffffff" if t > 0.55 else "#1a1a1a"
    return "#%02x%02x%02x" % rgb, text


def render_matrix_svg(matrix: CrossMatrix) -> str:
    """Self-contained SVG heatmap; cells annotated with AUC to 2 decimals."""
    cw, ch = 74, 34
    left, top = 190, 150
    width = left + cw * len(matrix.test_kinds) + 20
    height = top + ch * len(matrix.train_kinds) + 40
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="monospace" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="#ffffff"/>',
        f'<text x="{left}" y="24" font-size="14">'
        f"train → test ROC-AUC at L={matrix.length}</text>",
    ]
    for j, tag in enumerate(matrix.test_kinds):
        x = left + j * cw + cw // 2
        out.append(
            f'<text x="{x}" y="{top - 8}" text-anchor="start" '
            f'transform="rotate(-45 {x} {top - 8})">{tag}</text>'
        )
    for i, tag in enumerate(matrix.train_kinds):
        y = top + i * ch + ch // 2 + 4
        out.append(f'<text x="{left - 8}" y="{y}" text-anchor="end">{tag}</text>')
        for j in range(len(matrix.test_kinds)):
            value = float(matrix.cells[i, j])
            fill, text_color = _cell_color(value)
            x = left + j * cw
            y0 = top + i * ch
            label = "n/a" if math.isnan(value) else f"{value:.2f}"
            out.append(
                f'<rect x="{x}" y="{y0}" width="{cw - 2}" height="{ch - 2}" fill="{fill}"/>'
            )
            out.append(
                f'<text x="{x + (cw - 2) / 2}" y="{y0 + ch / 2 + 4}" '
                f'text-anchor="middle" fill="{text_color}">{label}</text>'
            )
    out.append("</svg>")
    return "\n".join(out) + "\n"


# --- inference profiling ----------------------------------------------------


@dataclass(frozen=True)
class ProfileRecord:
    length: int
    repetitions: int
    prep_median_ms: float
    prep_p95_ms: float
    score_median_ms: float
    score_p95_ms: float
    cpu_ratio: float
    model_bytes: int


def profile_inference(
    model,
    sessions: list[Session],
    length: int,
    repetitions: int = 200,
    seed: int = 0,
) -> ProfileRecord:
    """Per-sample preprocessing and scoring latency at one window length."""
    if repetitions < 100:
        raise EvalError("repetitions must be >= 100")
    eligible = [s for s in sessions if len(s.vk) >= length]
    if not eligible:
        raise EvalError(f"no session has >= {length} events")
    eligible.sort(key=lambda s: s.session_id)
    if isinstance(model, RandomForestModel):
        score_one = lambda x: predict_score(model, x)
    elif isinstance(model, LinearBaselineModel):
        score_one = lambda x: float(predict_scores_linear(model, x[None, :])[0])
    else:
        raise EvalError(f"cannot profile model of type {type(model).__name__}")

    rng = np.random.default_rng(np.random.SeedSequence([0xBE9C, seed, length]))
    picks = rng.integers(0, len(eligible), size=repetitions)
    starts = [
        int(rng.integers(0, len(eligible[k].vk) - length + 1)) for k in picks
    ]
    prep_ns = np.empty(repetitions)
    score_ns = np.empty(repetitions)
    wall0 = time.perf_counter()
    cpu0 = time.process_time()
    for i in range(repetitions):
        session = eligible[picks[i]]
        start = starts[i]
        t0 = time.perf_counter_ns()
        x = np.empty(2 * length)
        x[0::2] = session.ht_ms[start : start + length]
        x[1::2] = session.ft_ms[start : start + length]
        t1 = time.perf_counter_ns()
        score_one(x)
        t2 = time.perf_counter_ns()
        prep_ns[i] = t1 - t0
        score_ns[i] = t2 - t1
    wall = time.perf_counter() - wall0
    cpu = time.process_time() - cpu0
    return ProfileRecord(
        length=length,
        repetitions=repetitions,
        prep_median_ms=float(np.median(prep_ns)) / 1e6,
        prep_p95_ms=float(np.percentile(prep_ns, 95)) / 1e6,
        score_median_ms=float(np.median(score_ns)) / 1e6,
        score_p95_ms=float(np.percentile(score_ns, 95)) / 1e6,
        cpu_ratio=cpu / wall if wall > 0 else float("nan"),
        model_bytes=len(serialize_model(model)),
    )


def fit_detector(config: ExperimentConfig, length: int, seed: int | None = None):
    """Train one detector per the config's train recipe; returns (model, n_windows)."""
    spec = _train_specs(config)[0]
    seed = config.seeds[0] if seed is None else seed
    tags = {t for t, _ in spec.mixture}
    grouped = _load_split_corpus(config, tags, required=tags)
    assembled = _assemble_train(config, spec, grouped, length, seed)
    if assembled is None:
        raise EvalError(f"no training windows available at length {length}")
    X, y, origin_ids = assembled
    _assert_hygiene(origin_ids, grouped.train_ids, "train")
    if config.detector == "rf":
        model = train_random_forest(X, y, n_trees=config.n_trees, seed=seed)
    else:
        model = train_linear_baseline(X, y, fit_normalizer(X), seed=seed)
    return model, len(X)


def run_profile(
    config: ExperimentConfig, repetitions: int = 200, n_workers: int = 1
) -> list[ProfileRecord]:
    """Train the configured detector per length and profile single-sample cost."""
    spec = _train_specs(config)[0]
    profile_tags = {t for t, _ in spec.mixture}
    grouped = _load_split_corpus(config, profile_tags, required=profile_tags)
    seed = config.seeds[0]
    out = []
    for length in config.lengths:
        assembled = _assemble_train(config, spec, grouped, length, seed)
        if assembled is None:
            raise EvalError(f"no training windows available at length {length}")
        X, y, _ = assembled
        if config.detector == "rf":
            model = train_random_forest(X, y, n_trees=config.n_trees, seed=seed)
        else:
            model = train_linear_baseline(X, y, fit_normalizer(X), seed=seed)
        test_humans = grouped.test.get(HUMAN_KEY, [])
        out.append(profile_inference(model, test_humans, length, repetitions, seed))
    return out


def save_profile(records: list[ProfileRecord], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(PROFILE_HEADER)
        for r in sorted(records, key=lambda r: r.length):
            writer.writerow(
                [
                    r.length,
                    r.repetitions,
                    f"{r.prep_median_ms:.6f}",
                    f"{r.prep_p95_ms:.6f}",
                    f"{r.score_median_ms:.6f}",
                    f"{r.score_p95_ms:.6f}",
                    f"{r.cpu_ratio:.4f}",
                    r.model_bytes,
                ]
            )
