"""Synthetic session samplers mirroring human VK sequences.

Every generative kind copies the source session's key codes verbatim and
replaces only the timings. Per-session random streams are derived from
(kind, seed, session id), so generating sessions in any order or in
parallel yields identical output. Emitted hold times are floored at 1 ms
and the first event's flight time is 0 by the session-type definition.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import (
    MANIFEST_NAME,
    DatasetManifest,
    ManifestEntry,
    Session,
    load_manifest,
    parse_session_file,
    stable_hash64,
)
from .empirical import ContextHistogram, EmpiricalModel, bin_pair

_GEN_SALT = 0x6E3A7

HT_FLOOR_MS = 1.0

PRNG_KINDS = {
    "prng_mt19937-style": np.random.MT19937,
    "prng_pcg64-style": np.random.PCG64,
    "prng_philox-style": np.random.Philox,
}
CTX_KINDS = {
    "ctx_average": "average",
    "ctx_uniform": "uniform",
    "ctx_gaussian": "gaussian",
    "ctx_histogram": "histogram",
}
ADAPTIVE_TAGS = ("wgan_uncond", "wgan_cond")
NATIVE_KINDS = (
    *PRNG_KINDS,
    "empirical_pairs",
    "conditional_prevbin",
    *CTX_KINDS,
    "ns_histogram",
)
GENERATOR_KINDS = (*NATIVE_KINDS, "adaptive_import")

GENERATION_LOG_HEADER = ["session_id", "event_index", "fallback_level"]


class GeneratorError(ValueError):
    """Invalid generator spec, source, or adaptive import."""


@dataclass(frozen=True)
class GeneratorSpec:
    kind: str
    seed: int
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in GENERATOR_KINDS:
            raise GeneratorError(f"unknown generator kind {self.kind!r}")


@dataclass
class SyntheticSession(Session):
    source_session_id: str = ""

    def check_mirrors(self, source: Session) -> None:
        if len(self.vk) != len(source.vk) or not np.array_equal(self.vk, source.vk):
            raise GeneratorError(
                f"session {self.session_id}: vk sequence does not mirror {source.session_id}"
            )


@dataclass
class GenerationLog:
    """Fallback events (empty cell, context-order downgrade) per session."""

    rows: list = field(default_factory=list)

    def add(self, session_id: str, event_index: int, fallback_level: str) -> None:
        self.rows.append((session_id, int(event_index), fallback_level))

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(GENERATION_LOG_HEADER)
            writer.writerows(self.rows)


def _session_rng(kind: str, seed: int, source_id: str, bitgen=np.random.PCG64) -> np.random.Generator:
    seq = np.random.SeedSequence([_GEN_SALT, stable_hash64(kind), seed, stable_hash64(source_id)])
    return np.random.Generator(bitgen(seq))


def _mirror(source: Session, kind: str, ht: np.ndarray, ft: np.ndarray) -> SyntheticSession:
    ht = np.maximum(np.asarray(ht, dtype=np.float64), HT_FLOOR_MS)
    ft = np.asarray(ft, dtype=np.float64).copy()
    ft[0] = 0.0
    out = SyntheticSession(
        session_id=f"{source.session_id}--{kind}",
        vk=source.vk.copy(),
        ht_ms=ht,
        ft_ms=ft,
        label="synthetic",
        generator_tag=kind,
        source_session_id=source.session_id,
    )
    out.validate()
    return out


def gen_naive_prng(
    source: Session,
    model: EmpiricalModel,
    stream_kind: str,
    seed: int,
    log: GenerationLog | None = None,
) -> SyntheticSession:
    """HT and FT independently uniform over the global empirical ranges."""
    kind = f"prng_{stream_kind}-style"
    if kind not in PRNG_KINDS:
        raise GeneratorError(f"unknown prng stream kind {stream_kind!r}")
    rng = _session_rng(kind, seed, source.session_id, PRNG_KINDS[kind])
    n = len(source)
    r = model.ranges
    ht = rng.uniform(r.ht_min, r.ht_max, size=n)
    ft = rng.uniform(r.ft_min, r.ft_max, size=n)
    return _mirror(source, kind, ht, ft)


def gen_empirical_pairs(
    source: Session,
    model: EmpiricalModel,
    seed: int,
    log: GenerationLog | None = None,
) -> SyntheticSession:
    """Each event resamples one joint (HT, FT) pair from the global pool."""
    rng = _session_rng("empirical_pairs", seed, source.session_id)
    idx = rng.integers(0, len(model.pool), size=len(source))
    pairs = model.pool.pairs[idx]
    return _mirror(source, "empirical_pairs", pairs[:, 0], pairs[:, 1])


def gen_conditional_prevbin(
    source: Session,
    model: EmpiricalModel,
    seed: int,
    log: GenerationLog | None = None,
) -> SyntheticSession:
    """First-order chain over quantile-binned timing states.

    The first event resamples the global pool; each later event resamples
    the successor pool of the previously emitted pair's cell, falling back
    to the global pool when that cell is empty.
    """
    rng = _session_rng("conditional_prevbin", seed, source.session_id)
    cond = model.conditional
    pool = model.pool.pairs
    n = len(source)
    out = np.empty((n, 2), dtype=np.float64)
    pair = pool[rng.integers(0, len(pool))].copy()
    pair[0] = max(pair[0], HT_FLOOR_MS)
    pair[1] = 0.0  # emitted first-event FT
    out[0] = pair
    sid = f"{source.session_id}--conditional_prevbin"
    for i in range(1, n):
        hb, fb = bin_pair(cond, out[i - 1, 0], out[i - 1, 1])
        cell = cond.cell(hb, fb)
        if len(cell) == 0:
            if log is not None:
                log.add(sid, i, "global")
            cell = pool
        pair = cell[rng.integers(0, len(cell))].copy()
        pair[0] = max(pair[0], HT_FLOOR_MS)
        out[i] = pair
    return _mirror(source, "conditional_prevbin", out[:, 0], out[:, 1])


def _context_pools(source: Session, contexts: ContextHistogram) -> tuple[np.ndarray, np.ndarray]:
    prev = np.concatenate([[-1], source.vk[:-1].astype(np.int64)])
    return contexts.resolve_many(prev, source.vk.astype(np.int64))


def _log_downgrades(log: GenerationLog | None, sid: str, levels: np.ndarray) -> None:
    if log is None:
        return
    # Position 0 has no digraph context; order-1 is its natural tier there.
    for i in np.flatnonzero(levels < 2):
        if i == 0 and levels[0] == 1:
            continue
        log.add(sid, int(i), ("global", "order1")[levels[i]])


def _sample_context(
    source: Session,
    contexts: ContextHistogram,
    mode: str,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """(n, 2) raw timings sampled per the context mode, plus per-event levels."""
    n = len(source)
    pool_ids, levels = _context_pools(source, contexts)
    if mode == "average":
        raw = contexts.pool_mean[pool_ids].copy()
    elif mode == "uniform":
        lo = contexts.pool_min[pool_ids]
        hi = contexts.pool_max[pool_ids]
        raw = lo + rng.random((n, 2)) * (hi - lo)
    elif mode == "gaussian":
        mean = contexts.pool_mean[pool_ids]
        sd = contexts.pool_sd[pool_ids]
        raw = mean + sd * rng.standard_normal((n, 2))
        raw = np.clip(raw, contexts.pool_min[pool_ids], contexts.pool_max[pool_ids])
    elif mode == "histogram":
        lens = contexts.pool_lengths[pool_ids]
        idx = contexts.pool_offsets[pool_ids] + np.minimum(
            (rng.random(n) * lens).astype(np.int64), lens - 1
        )
        raw = contexts.values[idx].copy()
    else:
        raise GeneratorError(f"unknown context mode {mode!r}")
    return raw, levels


def gen_statistical_context(
    source: Session,
    model: EmpiricalModel,
    mode: str,
    seed: int,
    log: GenerationLog | None = None,
) -> SyntheticSession:
    """Context-conditioned sampling: average, uniform, gaussian, or histogram."""
    kind = f"ctx_{mode}"
    if kind not in CTX_KINDS:
        raise GeneratorError(f"unknown context mode {mode!r}")
    rng = _session_rng(kind, seed, source.session_id)
    raw, levels = _sample_context(source, model.contexts, mode, rng)
    _log_downgrades(log, f"{source.session_id}--{kind}", levels)
    return _mirror(source, kind, raw[:, 0], raw[:, 1])


def gen_ns_histogram(
    source: Session,
    model: EmpiricalModel,
    seed: int,
    log: GenerationLog | None = None,
) -> SyntheticSession:
    """Context histogram sampling plus non-stationary offsets.

    The base draw replays ctx_histogram's stream for the same seed, so with
    a zero drift step and a single stored offset the output is the
    ctx_histogram session shifted by exactly that offset (HT floor and the
    first-event FT aside). On top of the base: one per-session offset
    resampled from the fitted session offsets, plus a segment-wise random
    walk with the fitted step sd, bounded at 3 steps' magnitude.
    """
    base_rng = _session_rng("ctx_histogram", seed, source.session_id)
    raw, levels = _sample_context(source, model.contexts, "histogram", base_rng)
    _log_downgrades(log, f"{source.session_id}--ns_histogram", levels)

    ns = model.nonstat
    rng = _session_rng("ns_histogram", seed, source.session_id)
    offset = ns.session_offsets[rng.integers(0, len(ns.session_offsets))]
    n = len(source)
    n_seg = math.ceil(n / ns.segment_len)
    steps = rng.normal(0.0, ns.drift_step_sd, size=(n_seg, 2))
    bound = 3.0 * ns.drift_step_sd
    walk = np.clip(np.cumsum(steps, axis=0), -bound, bound)
    drift = np.repeat(walk, ns.segment_len, axis=0)[:n]
    raw = raw + offset + drift
    return _mirror(source, "ns_histogram", raw[:, 0], raw[:, 1])


def generate_session(
    source: Session,
    model: EmpiricalModel,
    spec: GeneratorSpec,
    log: GenerationLog | None = None,
) -> SyntheticSession:
    """Dispatch to the kind-specific sampler; deterministic in (source, model, seed)."""
    if source.label != "human":
        raise GeneratorError(f"source {source.session_id} is not human-labeled")
    kind = spec.kind
    if kind in PRNG_KINDS:
        stream = kind[len("prng_") : -len("-style")]
        return gen_naive_prng(source, model, stream, spec.seed, log)
    if kind == "empirical_pairs":
        return gen_empirical_pairs(source, model, spec.seed, log)
    if kind == "conditional_prevbin":
        return gen_conditional_prevbin(source, model, spec.seed, log)
    if kind in CTX_KINDS:
        return gen_statistical_context(source, model, CTX_KINDS[kind], spec.seed, log)
    if kind == "ns_histogram":
        return gen_ns_histogram(source, model, spec.seed, log)
    if kind == "adaptive_import":
        return _load_adaptive_for_source(source, spec)
    raise GeneratorError(f"unknown generator kind {kind!r}")


def _load_adaptive_for_source(source: Session, spec: GeneratorSpec) -> SyntheticSession:
    root = Path(spec.params.get("path", "."))
    tag = spec.params.get("tag", "wgan_uncond")
    if tag not in ADAPTIVE_TAGS:
        raise GeneratorError(f"unknown adaptive tag {tag!r}")
    sid = f"{source.session_id}--{tag}"
    path = root / "synthetic" / tag / f"{sid}.csv"
    if not path.exists():
        raise GeneratorError(f"adaptive session file missing: {path}")
    loaded = parse_session_file(path, label="synthetic", generator_tag=tag)
    out = SyntheticSession(
        session_id=sid,
        vk=loaded.vk,
        ht_ms=loaded.ht_ms,
        ft_ms=loaded.ft_ms,
        label="synthetic",
        generator_tag=tag,
        source_session_id=source.session_id,
    )
    _check_adaptive(out)
    out.check_mirrors(source)
    return out


def _check_adaptive(session: SyntheticSession) -> None:
    session.validate()
    if np.any(session.ht_ms < HT_FLOOR_MS):
        raise GeneratorError(
            f"session {session.session_id}: ht_ms below the {HT_FLOOR_MS} ms floor"
        )


def import_adaptive_sessions(path: str | Path, manifest_check: bool = False) -> list[SyntheticSession]:
    """Load externally generated adaptive sessions from a corpus directory.

    With manifest_check, each session's vk sequence is compared against its
    human source (resolved through the same manifest)."""
    root = Path(path)
    manifest = load_manifest(root / MANIFEST_NAME)
    entries = [e for e in manifest.entries if e.generator_tag in ADAPTIVE_TAGS]
    if not entries:
        raise GeneratorError(f"{root}: manifest lists no adaptive sessions")
    human_by_id = {e.session_id: e for e in manifest.human_entries()}
    out = []
    for entry in entries:
        loaded = parse_session_file(root / entry.path, "synthetic", entry.generator_tag)
        source_id = entry.session_id.rsplit("--", 1)[0]
        session = SyntheticSession(
            session_id=entry.session_id,
            vk=loaded.vk,
            ht_ms=loaded.ht_ms,
            ft_ms=loaded.ft_ms,
            label="synthetic",
            generator_tag=entry.generator_tag,
            source_session_id=source_id,
        )
        _check_adaptive(session)
        if len(session) != entry.event_count:
            raise GeneratorError(
                f"session {session.session_id}: manifest says {entry.event_count} events, "
                f"file has {len(session)}"
            )
        if manifest_check:
            src_entry = human_by_id.get(source_id)
            if src_entry is None:
                raise GeneratorError(
                    f"session {session.session_id}: source {source_id} not in manifest"
                )
            source = parse_session_file(root / src_entry.path, "human", "")
            session.check_mirrors(source)
        out.append(session)
    return out


def generate_corpus(
    corpus_root: str | Path,
    model: EmpiricalModel,
    kinds: list[str],
    seed: int,
    out_root: str | Path | None = None,
    session_ids: set[str] | None = None,
) -> DatasetManifest:
    """Generate synthetic sessions for every human session in the corpus.

    Writes session files under <out_root>/synthetic/<kind>/, one generation
    log per kind next to them, and an updated manifest that keeps the human
    entries. Returns the updated manifest."""
    import shutil

    from .corpus import load_sessions, save_manifest, write_session_file

    root = Path(corpus_root)
    out = Path(out_root) if out_root is not None else root
    manifest = load_manifest(root / MANIFEST_NAME)
    humans = manifest.human_entries()
    if session_ids is not None:
        humans = [e for e in humans if e.session_id in session_ids]
    if not humans:
        raise GeneratorError("no human sessions to mirror")
    for kind in kinds:
        if kind not in NATIVE_KINDS:
            raise GeneratorError(f"generate_corpus cannot synthesize kind {kind!r}")
    sources = load_sessions(root, humans)
    if out.resolve() != root.resolve():
        # Keep the output self-contained: mirror the human files across.
        for entry in humans:
            dest = out / entry.path
            dest.parent.mkdir(parents=True, exist_ok=True)
            shutil.copyfile(root / entry.path, dest)
        entries = [ManifestEntry(e.session_id, e.path, e.label, e.generator_tag, e.event_count) for e in humans]
    else:
        entries = [e for e in manifest.entries]
    known = {e.session_id for e in entries}
    for kind in kinds:
        log = GenerationLog()
        spec = GeneratorSpec(kind, seed)
        for source in sources:
            synth = generate_session(source, model, spec, log)
            rel = Path("synthetic") / kind / f"{synth.session_id}.csv"
            write_session_file(synth, out / rel)
            if synth.session_id not in known:
                entries.append(
                    ManifestEntry(synth.session_id, str(rel), "synthetic", kind, len(synth))
                )
                known.add(synth.session_id)
        log.save(out / "synthetic" / kind / "generation_log.csv")
    updated = DatasetManifest(entries, manifest.corpus_seed)
    save_manifest(updated, out / MANIFEST_NAME)
    return updated
