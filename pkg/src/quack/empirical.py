"""Statistics fit from human training sessions, consumed by the generators.

One fit produces five sub-models: global HT/FT ranges, the joint (HT, FT)
pair pool, first-order conditionals over quantile-binned timing states,
key-context histograms with an order-2 -> order-1 -> global fallback chain,
and a non-stationarity profile (per-session offsets + drift step scale).

Context pools are stored flattened (one values array + per-pool offset,
length, and moment arrays) so samplers can gather whole sessions in a few
vectorized operations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ._io import read_blocks, write_blocks
from .corpus import Session, session_fingerprint

EMP_MAGIC = "QUACK-EMP v1"
DEFAULT_MIN_SUPPORT = 10
DEFAULT_SEGMENT_LEN = 50
N_QUANTILE_BINS = 8

LEVEL_ORDER2 = "order2"
LEVEL_ORDER1 = "order1"
LEVEL_GLOBAL = "global"
LEVEL_NAMES = (LEVEL_GLOBAL, LEVEL_ORDER1, LEVEL_ORDER2)  # index = specificity


class EmpiricalError(ValueError):
    """Invalid fit input or corrupted model file."""


@dataclass(frozen=True)
class GlobalRanges:
    ht_min: float
    ht_max: float
    ft_min: float
    ft_max: float

    def __post_init__(self) -> None:
        if not (0 < self.ht_min <= self.ht_max) or not (self.ft_min <= self.ft_max):
            raise EmpiricalError(f"invalid ranges: {self}")


@dataclass(frozen=True)
class JointPairPool:
    """All training (ht_ms, ft_ms) pairs, shape (N, 2)."""

    pairs: np.ndarray

    def __post_init__(self) -> None:
        if self.pairs.ndim != 2 or self.pairs.shape[1] != 2 or len(self.pairs) == 0:
            raise EmpiricalError("pair pool must be a non-empty (N, 2) array")

    def __len__(self) -> int:
        return len(self.pairs)


@dataclass
class BinnedConditional:
    """Successor pools per (ht_bin, ft_bin) cell of the previous event.

    Edges are the interior quantile cut points; bin membership is half-open
    [lo, hi), values beyond the outer edges clamp to the outer bins. Cells
    are stored flattened: cell (hb, fb) owns values[offsets[c]:offsets[c+1]]
    with c = hb * n_ft_bins + fb.
    """

    ht_edges: np.ndarray
    ft_edges: np.ndarray
    offsets: np.ndarray
    values: np.ndarray

    @property
    def n_ht_bins(self) -> int:
        return len(self.ht_edges) + 1

    @property
    def n_ft_bins(self) -> int:
        return len(self.ft_edges) + 1

    @property
    def n_transitions(self) -> int:
        return len(self.values)

    def cell(self, ht_bin: int, ft_bin: int) -> np.ndarray:
        c = ht_bin * self.n_ft_bins + ft_bin
        return self.values[self.offsets[c] : self.offsets[c + 1]]

    def cell_ids(self, ht_ms: np.ndarray, ft_ms: np.ndarray) -> np.ndarray:
        hb = np.searchsorted(self.ht_edges, ht_ms, side="right")
        fb = np.searchsorted(self.ft_edges, ft_ms, side="right")
        return hb * self.n_ft_bins + fb


@dataclass
class ContextHistogram:
    """Key-context timing pools with order-2 -> order-1 -> global fallback.

    Pool i owns values[pool_offsets[i] : pool_offsets[i] + pool_lengths[i]].
    Pools are laid out order-2 digraphs first (lexicographic key order), then
    order-1 keys (sorted), then the single global pool last.
    """

    order2_keys: np.ndarray  # (K2, 2) int32, sorted
    order1_keys: np.ndarray  # (K1,) int32, sorted
    values: np.ndarray  # (V, 2) float64
    pool_offsets: np.ndarray  # (P,) int64
    pool_lengths: np.ndarray  # (P,) int64
    pool_mean: np.ndarray  # (P, 2)
    pool_sd: np.ndarray  # (P, 2), population sd
    pool_min: np.ndarray  # (P, 2)
    pool_max: np.ndarray  # (P, 2)
    min_support: int
    _o2_index: dict = field(default_factory=dict, repr=False)
    _o1_index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if self.min_support < 1:
            raise EmpiricalError("min_support must be >= 1")
        k2 = len(self.order2_keys)
        self._o2_index = {
            (int(pv), int(v)): i for i, (pv, v) in enumerate(self.order2_keys)
        }
        self._o1_index = {int(v): k2 + i for i, v in enumerate(self.order1_keys)}

    @property
    def global_pool_id(self) -> int:
        return len(self.order2_keys) + len(self.order1_keys)

    def pool_values(self, pool_id: int) -> np.ndarray:
        start = self.pool_offsets[pool_id]
        return self.values[start : start + self.pool_lengths[pool_id]]

    def order2_pool(self, prev_vk: int, vk: int) -> np.ndarray:
        i = self._o2_index.get((int(prev_vk), int(vk)))
        return self.pool_values(i) if i is not None else self.values[:0]

    def order1_pool(self, vk: int) -> np.ndarray:
        i = self._o1_index.get(int(vk))
        return self.pool_values(i) if i is not None else self.values[:0]

    @property
    def global_pool(self) -> np.ndarray:
        return self.pool_values(self.global_pool_id)

    def resolve(self, prev_vk: int | None, vk: int) -> tuple[int, str]:
        """Pool id + level answering (prev_vk, vk); prev_vk None skips order-2."""
        if prev_vk is not None:
            i = self._o2_index.get((int(prev_vk), int(vk)))
            if i is not None and self.pool_lengths[i] >= self.min_support:
                return i, LEVEL_ORDER2
        i = self._o1_index.get(int(vk))
        if i is not None and self.pool_lengths[i] >= self.min_support:
            return i, LEVEL_ORDER1
        return self.global_pool_id, LEVEL_GLOBAL

    def resolve_many(self, prev_vk: np.ndarray, vk: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized resolve for a whole session.

        prev_vk < 0 marks "no predecessor" (first event). Returns
        (pool_ids, levels) with levels 2/1/0 for order2/order1/global.
        """
        prev_vk = np.asarray(prev_vk, dtype=np.int64)
        vk = np.asarray(vk, dtype=np.int64)
        codes = np.where(prev_vk < 0, -1 - vk, (prev_vk << 32) | vk)
        uniq, inverse = np.unique(codes, return_inverse=True)
        u_pool = np.empty(len(uniq), dtype=np.int64)
        u_level = np.empty(len(uniq), dtype=np.int8)
        for j, code in enumerate(uniq):
            code = int(code)
            if code < 0:
                pid, level = self.resolve(None, -1 - code)
            else:
                pid, level = self.resolve(code >> 32, code & 0xFFFFFFFF)
            u_pool[j] = pid
            u_level[j] = LEVEL_NAMES.index(level)
        return u_pool[inverse], u_level[inverse]


@dataclass
class NonStationarityProfile:
    """Between-session offsets and within-session drift scale.

    session_offsets[i] = (session mean HT - global mean HT, same for FT).
    drift_step_sd is the sd of consecutive segment-mean differences, pooled
    over the HT and FT difference samples; segments are segment_len events.
    """

    session_offsets: np.ndarray  # (S, 2)
    drift_step_sd: float
    segment_len: int

    def __post_init__(self) -> None:
        if self.segment_len < 1:
            raise EmpiricalError("segment_len must be >= 1")
        if len(self.session_offsets) == 0:
            raise EmpiricalError("session_offsets must have one entry per session")


@dataclass
class EmpiricalModel:
    ranges: GlobalRanges
    pool: JointPairPool
    conditional: BinnedConditional
    contexts: ContextHistogram
    nonstat: NonStationarityProfile
    fingerprint: str
    n_sessions: int
    n_events: int


def _quantile_edges(values: np.ndarray, n_bins: int) -> np.ndarray:
    qs = np.arange(1, n_bins) / n_bins
    edges = np.quantile(values, qs)
    return np.unique(edges)


def _group_by_code(codes: np.ndarray, values: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sort values into contiguous runs per unique code.

    Returns (unique_codes, run_lengths, values_sorted). Within a run the
    original concatenation order is preserved (stable sort).
    """
    order = np.argsort(codes, kind="stable")
    sorted_codes = codes[order]
    uniq, counts = np.unique(sorted_codes, return_counts=True)
    return uniq, counts, values[order]


def _pool_stats(values: np.ndarray, offsets: np.ndarray, lengths: np.ndarray):
    """Per-pool mean, population sd, min, max over (N, 2) values."""
    starts = offsets.astype(np.intp)
    sums = np.add.reduceat(values, starts, axis=0)
    sq_sums = np.add.reduceat(values * values, starts, axis=0)
    mins = np.minimum.reduceat(values, starts, axis=0)
    maxs = np.maximum.reduceat(values, starts, axis=0)
    n = lengths[:, None].astype(np.float64)
    mean = sums / n
    var = np.maximum(sq_sums / n - mean * mean, 0.0)
    return mean, np.sqrt(var), mins, maxs


def _fit_conditional(sessions: Sequence[Session], ht_all, ft_all) -> BinnedConditional:
    ht_edges = _quantile_edges(ht_all, N_QUANTILE_BINS)
    ft_edges = _quantile_edges(ft_all, N_QUANTILE_BINS)
    n_ft_bins = len(ft_edges) + 1
    n_cells = (len(ht_edges) + 1) * n_ft_bins
    cell_chunks = []
    succ_chunks = []
    for s in sessions:
        if len(s) < 2:
            continue
        hb = np.searchsorted(ht_edges, s.ht_ms[:-1], side="right")
        fb = np.searchsorted(ft_edges, s.ft_ms[:-1], side="right")
        cell_chunks.append(hb * n_ft_bins + fb)
        succ_chunks.append(np.column_stack([s.ht_ms[1:], s.ft_ms[1:]]))
    if cell_chunks:
        cells = np.concatenate(cell_chunks)
        succs = np.concatenate(succ_chunks)
        order = np.argsort(cells, kind="stable")
        counts = np.bincount(cells, minlength=n_cells)
        values = succs[order]
    else:
        counts = np.zeros(n_cells, dtype=np.int64)
        values = np.empty((0, 2), dtype=np.float64)
    offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    return BinnedConditional(ht_edges, ft_edges, offsets, values)


def _fit_contexts(sessions: Sequence[Session], pairs_all: np.ndarray, min_support: int) -> ContextHistogram:
    dig_codes = []
    dig_vals = []
    for s in sessions:
        if len(s) < 2:
            continue
        code = (s.vk[:-1].astype(np.int64) << 32) | s.vk[1:].astype(np.int64)
        dig_codes.append(code)
        dig_vals.append(np.column_stack([s.ht_ms[1:], s.ft_ms[1:]]))
    if dig_codes:
        codes2, counts2, values2 = _group_by_code(
            np.concatenate(dig_codes), np.concatenate(dig_vals)
        )
    else:
        codes2 = np.empty(0, dtype=np.int64)
        counts2 = np.empty(0, dtype=np.int64)
        values2 = np.empty((0, 2), dtype=np.float64)
    order2_keys = np.column_stack([codes2 >> 32, codes2 & 0xFFFFFFFF]).astype(np.int32)
    if len(order2_keys) == 0:
        order2_keys = order2_keys.reshape(0, 2)

    vk_all = np.concatenate([s.vk for s in sessions]).astype(np.int64)
    codes1, counts1, values1 = _group_by_code(vk_all, pairs_all)
    order1_keys = codes1.astype(np.int32)

    values = np.concatenate([values2, values1, pairs_all])
    lengths = np.concatenate([counts2, counts1, [len(pairs_all)]]).astype(np.int64)
    offsets = np.concatenate([[0], np.cumsum(lengths)[:-1]]).astype(np.int64)
    mean, sd, mins, maxs = _pool_stats(values, offsets, lengths)
    return ContextHistogram(
        order2_keys=order2_keys,
        order1_keys=order1_keys,
        values=values,
        pool_offsets=offsets,
        pool_lengths=lengths,
        pool_mean=mean,
        pool_sd=sd,
        pool_min=mins,
        pool_max=maxs,
        min_support=min_support,
    )


def _fit_nonstat(sessions: Sequence[Session], gm_ht: float, gm_ft: float, segment_len: int) -> NonStationarityProfile:
    offsets = np.array(
        [[float(np.mean(s.ht_ms)) - gm_ht, float(np.mean(s.ft_ms)) - gm_ft] for s in sessions]
    )
    diffs = []
    for s in sessions:
        n_seg = len(s) // segment_len
        if n_seg < 2:
            continue
        trimmed = n_seg * segment_len
        seg_ht = s.ht_ms[:trimmed].reshape(n_seg, segment_len).mean(axis=1)
        seg_ft = s.ft_ms[:trimmed].reshape(n_seg, segment_len).mean(axis=1)
        diffs.append(np.diff(seg_ht))
        diffs.append(np.diff(seg_ft))
    drift_step_sd = float(np.std(np.concatenate(diffs))) if diffs else 0.0
    return NonStationarityProfile(offsets, drift_step_sd, segment_len)


def fit_empirical_model(
    sessions: Sequence[Session],
    min_support: int = DEFAULT_MIN_SUPPORT,
    segment_len: int = DEFAULT_SEGMENT_LEN,
) -> EmpiricalModel:
    """Fit all five sub-models from human sessions; deterministic and
    insensitive to the order sessions are passed in."""
    if not sessions:
        raise EmpiricalError("no sessions to fit")
    for s in sessions:
        if s.label != "human":
            raise EmpiricalError(f"session {s.session_id} is not human-labeled")
    ordered = sorted(sessions, key=lambda s: s.session_id)
    ids = [s.session_id for s in ordered]
    if len(set(ids)) != len(ids):
        raise EmpiricalError("duplicate session ids in fit input")
    ht_all = np.concatenate([s.ht_ms for s in ordered])
    ft_all = np.concatenate([s.ft_ms for s in ordered])
    if len(ht_all) < 100:
        raise EmpiricalError(f"need >= 100 training events, got {len(ht_all)}")
    pairs = np.column_stack([ht_all, ft_all])
    ranges = GlobalRanges(
        float(ht_all.min()), float(ht_all.max()), float(ft_all.min()), float(ft_all.max())
    )
    return EmpiricalModel(
        ranges=ranges,
        pool=JointPairPool(pairs),
        conditional=_fit_conditional(ordered, ht_all, ft_all),
        contexts=_fit_contexts(ordered, pairs, min_support),
        nonstat=_fit_nonstat(ordered, float(ht_all.mean()), float(ft_all.mean()), segment_len),
        fingerprint=session_fingerprint(ids),
        n_sessions=len(ordered),
        n_events=len(ht_all),
    )


def query_context(contexts: ContextHistogram, prev_vk: int, vk: int) -> tuple[np.ndarray, str]:
    """Most specific context pool meeting min_support, plus the tier name."""
    pool_id, level = contexts.resolve(prev_vk, vk)
    return contexts.pool_values(pool_id), level


def bin_pair(conditional: BinnedConditional, ht_ms: float, ft_ms: float) -> tuple[int, int]:
    """Timing-state cell of a pair; outer values clamp to the edge bins."""
    if not (math.isfinite(ht_ms) and math.isfinite(ft_ms)):
        raise EmpiricalError(f"non-finite pair ({ht_ms}, {ft_ms})")
    hb = int(np.searchsorted(conditional.ht_edges, ht_ms, side="right"))
    fb = int(np.searchsorted(conditional.ft_edges, ft_ms, side="right"))
    return hb, fb


def save_empirical_model(model: EmpiricalModel, path: str | Path) -> int:
    """Write the model file; returns its byte size."""
    meta = {
        "fingerprint": model.fingerprint,
        "n_sessions": model.n_sessions,
        "n_events": model.n_events,
        "ranges": [model.ranges.ht_min, model.ranges.ht_max, model.ranges.ft_min, model.ranges.ft_max],
        "min_support": model.contexts.min_support,
        "segment_len": model.nonstat.segment_len,
        "drift_step_sd": model.nonstat.drift_step_sd,
    }
    arrays = {
        "pool_pairs": model.pool.pairs,
        "cond_ht_edges": model.conditional.ht_edges,
        "cond_ft_edges": model.conditional.ft_edges,
        "cond_offsets": model.conditional.offsets,
        "cond_values": model.conditional.values,
        "ctx_order2_keys": model.contexts.order2_keys,
        "ctx_order1_keys": model.contexts.order1_keys,
        "ctx_values": model.contexts.values,
        "ctx_pool_offsets": model.contexts.pool_offsets,
        "ctx_pool_lengths": model.contexts.pool_lengths,
        "ctx_pool_mean": model.contexts.pool_mean,
        "ctx_pool_sd": model.contexts.pool_sd,
        "ctx_pool_min": model.contexts.pool_min,
        "ctx_pool_max": model.contexts.pool_max,
        "nonstat_session_offsets": model.nonstat.session_offsets,
    }
    return write_blocks(path, EMP_MAGIC, meta, arrays)


def load_empirical_model(path: str | Path) -> EmpiricalModel:
    meta, arrays = read_blocks(path, EMP_MAGIC)
    ranges = GlobalRanges(*meta["ranges"])
    contexts = ContextHistogram(
        order2_keys=arrays["ctx_order2_keys"].reshape(-1, 2),
        order1_keys=arrays["ctx_order1_keys"],
        values=arrays["ctx_values"],
        pool_offsets=arrays["ctx_pool_offsets"],
        pool_lengths=arrays["ctx_pool_lengths"],
        pool_mean=arrays["ctx_pool_mean"],
        pool_sd=arrays["ctx_pool_sd"],
        pool_min=arrays["ctx_pool_min"],
        pool_max=arrays["ctx_pool_max"],
        min_support=int(meta["min_support"]),
    )
    return EmpiricalModel(
        ranges=ranges,
        pool=JointPairPool(arrays["pool_pairs"]),
        conditional=BinnedConditional(
            arrays["cond_ht_edges"],
            arrays["cond_ft_edges"],
            arrays["cond_offsets"],
            arrays["cond_values"],
        ),
        contexts=contexts,
        nonstat=NonStationarityProfile(
            arrays["nonstat_session_offsets"],
            float(meta["drift_step_sd"]),
            int(meta["segment_len"]),
        ),
        fingerprint=str(meta["fingerprint"]),
        n_sessions=int(meta["n_sessions"]),
        n_events=int(meta["n_events"]),
    )
