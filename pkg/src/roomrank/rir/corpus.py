"""Seeded synthetic impulse-response corpus.

Rooms are assigned round-robin to the size classes small (1-10 m), medium
(10-30 m) and large (30-50 m); floor sides are uniform within the class range,
height uniform in 2-5 m, each surface's absorption uniform in [0.1, 0.9].
Every room hosts 100 random source/mic placements (the last room may be
partial). Random draws come from a SeedSequence keyed by (room, point), so the
corpus is identical whatever the rendering order or worker count.

On disk:
    DIR/manifest.json     CorpusManifest
    DIR/summary.csv       ir_path, room_id, point_id, room_class, rt60_est, sabine_rt60
    DIR/irs/*.wav         float32 impulse responses

Usage as library:
    from roomrank.rir.corpus import sample_corpus, load_corpus
    manifest = sample_corpus(300, seed=7, out_dir="corpus")
    manifest = load_corpus("corpus")

Usage as CLI:
    roomrank gen-corpus --count 300 --seed 7 --out corpus
"""

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd
from tqdm import tqdm

from roomrank.audio_io import AudioIOError, read_wav, write_wav
from roomrank.config import ConfigError, configure_logging, load_run_config
from roomrank.rir.synth import (
    DEFAULT_FS,
    DEFAULT_MAX_ORDER,
    WALL_MARGIN,
    ImpulseResponse,
    InsufficientDecayError,
    RoomSpec,
    estimate_rt60,
    sabine_rt60,
    simulate_rir,
)

logger = logging.getLogger(__name__)

MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"
SUMMARY_NAME = "summary.csv"
IR_DIR = "irs"

POINTS_PER_ROOM = 100

ROOM_CLASSES = ("small", "medium", "large")
CLASS_RANGES = {
    "small": (1.0, 10.0),
    "medium": (10.0, 30.0),
    "large": (30.0, 50.0),
}
HEIGHT_RANGE = (2.0, 5.0)
ABSORPTION_RANGE = (0.1, 0.9)
MIN_SOURCE_MIC_DISTANCE = 0.1

SUMMARY_COLUMNS = ["ir_path", "room_id", "point_id", "room_class", "rt60_est", "sabine_rt60"]


class ManifestError(Exception):
    """Corpus manifest missing, unreadable, or inconsistent."""
    pass


@dataclass
class CorpusEntry:
    ir_path: str
    room_id: str
    point_id: str
    room_class: str
    dims: list
    absorptions: list
    positions: dict
    seed: int
    rt60_est: float = None


@dataclass
class CorpusManifest:
    entries: list
    seed: int = 0
    fs: int = DEFAULT_FS
    max_order: int = DEFAULT_MAX_ORDER
    root: str = field(default=None, compare=False)

    def __len__(self):
        return len(self.entries)

    def class_counts(self):
        counts = {c: 0 for c in ROOM_CLASSES}
        for entry in self.entries:
            counts[entry.room_class] += 1
        return counts

    def to_dict(self):
        return {
            "version": MANIFEST_VERSION,
            "seed": self.seed,
            "fs": self.fs,
            "max_order": self.max_order,
            "count": len(self.entries),
            "entries": [asdict(e) for e in self.entries],
        }

    def validate(self):
        """Raise ManifestError on duplicate paths or class/dims disagreement."""
        paths = [e.ir_path for e in self.entries]
        if len(paths) != len(set(paths)):
            raise ManifestError("ir_path values must be unique")
        for e in self.entries:
            if e.room_class not in ROOM_CLASSES:
                raise ManifestError(f"Unknown room class '{e.room_class}' for {e.ir_path}")
            if classify_room(e.dims[0], e.dims[1]) != e.room_class:
                raise ManifestError(f"Room class '{e.room_class}' inconsistent with dims {e.dims}")


def classify_room(length, width):
    """Size class from the longer floor side."""
    side = max(length, width)
    if side <= CLASS_RANGES["small"][1]:
        return "small"
    if side <= CLASS_RANGES["medium"][1]:
        return "medium"
    return "large"


# --- Sampling ---

def _room_rng(seed, room_index):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(room_index, 0)))


def _point_sequence(seed, room_index, point_index):
    return np.random.SeedSequence(seed, spawn_key=(room_index, point_index + 1))


def _draw_room(seed, room_index):
    room_class = ROOM_CLASSES[room_index % len(ROOM_CLASSES)]
    rng = _room_rng(seed, room_index)
    lo, hi = CLASS_RANGES[room_class]
    length, width = rng.uniform(lo, hi, size=2)
    height = rng.uniform(*HEIGHT_RANGE)
    absorptions = rng.uniform(*ABSORPTION_RANGE, size=6)
    return room_class, [float(length), float(width), float(height)], [float(a) for a in absorptions]


def _draw_position(rng, dims):
    return [float(rng.uniform(WALL_MARGIN, d - WALL_MARGIN)) for d in dims]


def _draw_points(seed, room_index, point_index, dims):
    sequence = _point_sequence(seed, room_index, point_index)
    rng = np.random.default_rng(sequence)
    source = _draw_position(rng, dims)
    mic = _draw_position(rng, dims)
    while math.dist(source, mic) < MIN_SOURCE_MIC_DISTANCE:
        mic = _draw_position(rng, dims)
    entry_seed = int(sequence.generate_state(1, dtype=np.uint32)[0])
    return source, mic, entry_seed


def plan_corpus(count, seed, fs=DEFAULT_FS, max_order=DEFAULT_MAX_ORDER,
                points_per_room=POINTS_PER_ROOM):
    """Draw every room and placement without rendering.

    Returns:
        CorpusManifest with rt60_est unset.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")

    entries = []
    n_rooms = math.ceil(count / points_per_room)
    for r in range(n_rooms):
        room_class, dims, absorptions = _draw_room(seed, r)
        room_id = f"room_{r:04d}"
        n_points = min(points_per_room, count - r * points_per_room)
        for p in range(n_points):
            source, mic, entry_seed = _draw_points(seed, r, p, dims)
            point_id = f"p{p:03d}"
            entries.append(CorpusEntry(
                ir_path=f"{IR_DIR}/{room_id}_{point_id}.wav",
                room_id=room_id,
                point_id=point_id,
                room_class=room_class,
                dims=dims,
                absorptions=absorptions,
                positions={"source": source, "mic": mic},
                seed=entry_seed,
            ))
    return CorpusManifest(entries=entries, seed=seed, fs=fs, max_order=max_order)


def spec_from_entry(entry, fs=DEFAULT_FS, max_order=DEFAULT_MAX_ORDER):
    """Rebuild the RoomSpec behind a manifest entry."""
    length, width, height = entry.dims
    return RoomSpec(
        length=length,
        width=width,
        height=height,
        absorption=tuple(entry.absorptions),
        source_pos=tuple(entry.positions["source"]),
        mic_pos=tuple(entry.positions["mic"]),
        sample_rate=fs,
        max_order=max_order,
        seed=entry.seed,
    )


def render_entry(entry, fs=DEFAULT_FS, max_order=DEFAULT_MAX_ORDER):
    """Simulate one entry's IR and attach its RT60 estimate (None if undecidable)."""
    ir = simulate_rir(spec_from_entry(entry, fs, max_order), entry.room_id, entry.point_id)
    try:
        ir.rt60_est = estimate_rt60(ir)
    except InsufficientDecayError:
        ir.rt60_est = None
    return ir


def sample_corpus(count, seed, fs=DEFAULT_FS, out_dir=None, max_order=DEFAULT_MAX_ORDER,
                  workers=1, progress=False, points_per_room=POINTS_PER_ROOM):
    """Sample and render a corpus of `count` impulse responses.

    Args:
        count: Number of IRs (>= 1).
        seed: Non-negative integer seed; output is a pure function of it.
        fs: Sample rate in Hz.
        out_dir: If given, write IR WAVs, manifest.json and summary.csv there.
        max_order: Image-source reflection order.
        workers: Rendering threads; has no effect on the result.
        progress: Show a tqdm bar on stderr.
        points_per_room: Placements per room.

    Returns:
        CorpusManifest with rt60_est filled in.
    """
    manifest = plan_corpus(count, seed, fs, max_order, points_per_room)
    return render_corpus(manifest, out_dir, workers=workers, progress=progress)


def render_corpus(manifest, out_dir=None, workers=1, progress=False):
    """Render every entry of a planned manifest and fill in rt60_est.

    With `out_dir`, the IR WAVs, manifest.json and summary.csv are written
    there and the manifest's root points at it.
    """
    fs, max_order = manifest.fs, manifest.max_order
    if out_dir is not None:
        os.makedirs(os.path.join(out_dir, IR_DIR), exist_ok=True)
        manifest.root = out_dir

    def _render(entry):
        ir = render_entry(entry, fs, max_order)
        if out_dir is not None:
            write_wav(os.path.join(out_dir, entry.ir_path), ir.h, encoding="float32")
        return ir.rt60_est

    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = pool.map(_render, manifest.entries)
        for entry, rt60 in tqdm(zip(manifest.entries, results), total=len(manifest),
                                desc="Rendering IRs", disable=not progress, file=sys.stderr):
            entry.rt60_est = rt60

    rooms = len({e.room_id for e in manifest.entries})
    logger.info(f"Rendered {len(manifest)} impulse responses in {rooms} rooms")
    if out_dir is not None:
        write_manifest(manifest, out_dir)
        write_summary(manifest, out_dir)
    return manifest


# --- Manifest I/O ---

def write_manifest(manifest, out_dir):
    """Write manifest.json (stable key order, trailing newline). Returns path."""
    manifest.validate()
    path = os.path.join(out_dir, MANIFEST_NAME)
    with open(path, "w") as f:
        json.dump(manifest.to_dict(), f, indent=2)
        f.write("\n")
    return path


def summary_frame(manifest):
    """One row per IR with RT60 diagnostics."""
    rows = []
    for e in manifest.entries:
        spec = spec_from_entry(e, manifest.fs, manifest.max_order)
        rows.append({
            "ir_path": e.ir_path,
            "room_id": e.room_id,
            "point_id": e.point_id,
            "room_class": e.room_class,
            "rt60_est": e.rt60_est,
            "sabine_rt60": sabine_rt60(spec),
        })
    return pd.DataFrame(rows, columns=SUMMARY_COLUMNS)


def write_summary(manifest, out_dir):
    path = os.path.join(out_dir, SUMMARY_NAME)
    summary_frame(manifest).to_csv(path, index=False)
    return path


def load_corpus(corpus_dir):
    """Load DIR/manifest.json.

    Raises:
        ManifestError if the manifest is missing, malformed, or has no entries.
    """
    path = os.path.join(corpus_dir, MANIFEST_NAME)
    if not os.path.exists(path):
        raise ManifestError(f"No {MANIFEST_NAME} in {corpus_dir}")
    try:
        with open(path, "r") as f:
            data = json.load(f)
    except (json.JSONDecodeError, OSError) as e:
        raise ManifestError(f"Cannot read {path}: {e}")

    if data.get("version") != MANIFEST_VERSION:
        raise ManifestError(f"Unsupported manifest version {data.get('version')!r}")
    try:
        entries = [CorpusEntry(**e) for e in data["entries"]]
    except (KeyError, TypeError) as e:
        raise ManifestError(f"Malformed manifest entries in {path}: {e}")
    if not entries:
        raise ManifestError(f"Corpus {corpus_dir} has no entries")

    manifest = CorpusManifest(
        entries=entries,
        seed=data.get("seed", 0),
        fs=data.get("fs", DEFAULT_FS),
        max_order=data.get("max_order", DEFAULT_MAX_ORDER),
        root=corpus_dir,
    )
    manifest.validate()
    return manifest


def load_ir(manifest, index):
    """Read entry `index`'s WAV into an ImpulseResponse.

    Raises:
        AudioIOError if the file is missing or unreadable.
    """
    entry = manifest.entries[index]
    root = manifest.root or "."
    h = read_wav(os.path.join(root, entry.ir_path))
    spec = spec_from_entry(entry, manifest.fs, manifest.max_order)
    return ImpulseResponse(h=h, room_id=entry.room_id, point_id=entry.point_id,
                           spec=spec, rt60_est=entry.rt60_est)


# --- CLI ---

def cmd_gen_corpus(args, run):
    try:
        manifest = sample_corpus(args.count, run.seed, fs=args.fs, out_dir=args.out,
                                 max_order=args.max_order, workers=run.workers,
                                 progress=run.progress)
    except (OSError, AudioIOError, ManifestError) as e:
        print(f"Error: {e}", file=sys.stderr)
        sys.exit(1)

    print(f"Wrote {len(manifest)} impulse responses to {args.out}", file=sys.stderr)
    for room_class, n in manifest.class_counts().items():
        print(f"  {room_class:<8} {n:>7,}", file=sys.stderr)


def cli_main(argv=None):
    """CLI entry point for corpus generation."""
    parser = argparse.ArgumentParser(
        prog="roomrank gen-corpus",
        description="Generate a seeded corpus of synthetic room impulse responses",
        epilog="Examples:\n"
        "  roomrank gen-corpus --count 300 --seed 7 --out corpus\n"
        "  roomrank gen-corpus --count 60000 --out corpus --workers 8\n",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--count", type=int, required=True, help="Number of impulse responses")
    parser.add_argument("--seed", type=int, default=None, help="Random seed (default: 42)")
    parser.add_argument("--fs", type=int, default=DEFAULT_FS, help="Sample rate in Hz")
    parser.add_argument("--out", required=True, help="Output directory")
    parser.add_argument("--max-order", type=int, default=DEFAULT_MAX_ORDER,
                        help="Image-source reflection order")
    parser.add_argument("--workers", type=int, default=None, help="Rendering threads")
    parser.add_argument("--no-progress", action="store_true", help="Hide progress bar")
    parser.add_argument("--verbose", "-v", action="store_true", help="Debug logging")

    args = parser.parse_args(argv)
    if args.count < 1:
        parser.error(f"--count must be >= 1, got {args.count}")
    if args.fs < 1:
        parser.error(f"--fs must be positive, got {args.fs}")
    if args.max_order < 0:
        parser.error(f"--max-order must be >= 0, got {args.max_order}")

    configure_logging(args.verbose)
    try:
        run = load_run_config("gen-corpus", seed=args.seed, workers=args.workers,
                              paths={"out": args.out}, progress=not args.no_progress)
    except ConfigError as e:
        parser.error(str(e))
    if run.seed < 0:
        parser.error(f"--seed must be non-negative, got {run.seed}")

    cmd_gen_corpus(args, run)
