"""Export a generator checkpoint as an adaptive corpus the core can import.

Each human session's key-code sequence is mirrored exactly; only the timings
are replaced with generator output (whole windows, concatenated, trimmed to
the session length). The result is a self-contained corpus directory: copied
human session files, synthetic files under synthetic/<tag>/, and one manifest
covering both.
"""

from __future__ import annotations

import shutil
from pathlib import Path

from .data import (
    MANIFEST_NAME,
    Manifest,
    ManifestEntry,
    NeuralDataError,
    Session,
    load_manifest,
    parse_session_file,
    save_manifest,
    write_session_file,
)
from .wgan import GanError, generate_session_timings, load_checkpoint

VARIANT_TAGS = {"unconditional": "wgan_uncond", "conditional": "wgan_cond"}


def export_synthetic_dataset(
    checkpoint_path: str | Path,
    corpus_root: str | Path,
    out_dir: str | Path,
    seed: int = 0,
) -> Path:
    """Mirror every human session with generated timings; returns the path of
    the manifest written under out_dir."""
    ckpt = load_checkpoint(checkpoint_path)
    tag = VARIANT_TAGS[ckpt["variant"]]
    root = Path(corpus_root)
    out = Path(out_dir)
    manifest = load_manifest(root / MANIFEST_NAME)
    humans = manifest.human_entries()
    if not humans:
        raise GanError(f"{root}: manifest lists no human sessions to mirror")

    entries: list[ManifestEntry] = []
    for entry in humans:
        try:
            source = parse_session_file(root / entry.path)
        except NeuralDataError as exc:
            raise GanError(f"cannot mirror {entry.session_id}: {exc}") from exc
        if len(source) != entry.event_count:
            raise GanError(
                f"cannot mirror {entry.session_id}: manifest says"
                f" {entry.event_count} events, file has {len(source)}"
            )
        dest = out / entry.path
        dest.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(root / entry.path, dest)
        entries.append(entry)

        sid = f"{entry.session_id}--{tag}"
        ht, ft = generate_session_timings(ckpt, len(source), seed, label=entry.session_id)
        synthetic = Session(sid, source.vk.copy(), ht, ft, "synthetic", tag)
        rel = f"synthetic/{tag}/{sid}.csv"
        write_session_file(synthetic, out / rel)
        entries.append(ManifestEntry(sid, rel, "synthetic", tag, len(source)))

    out_manifest = out / MANIFEST_NAME
    save_manifest(Manifest(entries, manifest.corpus_seed), out_manifest)
    return out_manifest
