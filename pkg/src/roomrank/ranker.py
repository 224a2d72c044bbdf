"""Find the room in which a note sounds best.

For every impulse response in a corpus the note is convolved, trimmed,
peak-normalized and scored; the argmax (ties to the lowest corpus index) is the
best room. The identity impulse response is always scanned as index -1, so the
best score can never fall below the dry note's score. The scan is an ordered
thread-pool map, so results do not depend on the worker count.

Usage as library:
    from roomrank.ranker import score_note, enhance, batch_stats
    score = score_note(note, model)
    result, enhanced = enhance(note, corpus, model, k=10, workers=4)
    stats = batch_stats([("a.wav", note_a), ("b.wav", note_b)], corpus, model)

Usage as CLI:
    roomrank score --model scorer.rrsc --in note.wav
    roomrank enhance --model scorer.rrsc --corpus corpus --in note.wav --out best.wav --report r.json
    roomrank stats --model scorer.rrsc --corpus corpus --notes notes --out stats
"""

import argparse
import glob
import json
import logging
import os
import sys
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd
from tqdm import tqdm

from roomrank.audio_io import AudioIOError, canonicalize, read_wav, resample, write_wav
from roomrank.config import ConfigError, configure_logging, load_run_config
from roomrank.convolver import ConvolutionError, apply_room
from roomrank.features import FeatureError, mel_spectrogram, write_feature_csv
from roomrank.rir.corpus import ManifestError, load_corpus, load_ir
from roomrank.rir.synth import ImpulseResponse, RoomError, identity_ir
from roomrank.scorer.dataset import note_spectrogram
from roomrank.scorer.network import ModelError, forward
from roomrank.scorer.serialize import ModelFormatError, load_model

logger = logging.getLogger(__name__)

IDENTITY_INDEX = -1
DEFAULT_TOP_K = 10
DEFAULT_THRESHOLD = 0.5
HISTOGRAM_BINS = 20
SCORE_RANGE = (0.0, 1.0)
DELTA_RANGE = (-1.0, 1.0)
HISTOGRAM_FILES = {
    "before": "histogram_before.csv",
    "after": "histogram_after.csv",
    "delta": "histogram_delta.csv",
}
SUMMARY_NAME = "summary.json"


class RankerError(Exception):
    """Ranking cannot run (bad k, no readable notes)."""
    pass


class NothingToEnhanceError(RankerError):
    """No note scored below the enhancement threshold."""
    pass


@dataclass
class RankedIR:
    index: int
    room_id: str
    point_id: str
    score: float


@dataclass
class RankedResult:
    note_path: str
    original_score: float
    best_score: float
    best_ir: tuple
    best_index: int
    top_k: list
    best_room: dict = field(default_factory=dict)
    n_scored: int = 0
    skipped: list = field(default_factory=list)

    @property
    def score_delta(self):
        return self.best_score - self.original_score

    def to_dict(self):
        return {
            "note_path": self.note_path,
            "original_score": self.original_score,
            "best_score": self.best_score,
            "score_delta": self.score_delta,
            "room_id": self.best_ir[0],
            "point_id": self.best_ir[1],
            "best_index": self.best_index,
            "best_room": self.best_room,
            "top_k": [asdict(r) for r in self.top_k],
            "n_scored": self.n_scored,
            "skipped": self.skipped,
        }


@dataclass
class Histogram:
    edges: np.ndarray
    counts: np.ndarray

    @classmethod
    def of(cls, values, value_range, bins=HISTOGRAM_BINS):
        counts, edges = np.histogram(np.asarray(values, dtype=np.float64), bins=bins,
                                     range=value_range)
        return cls(edges=edges, counts=counts)

    @property
    def total(self):
        return int(self.counts.sum())

    def to_frame(self):
        return pd.DataFrame({
            "bin_low": self.edges[:-1],
            "bin_high": self.edges[1:],
            "count": self.counts.astype(int),
        })


@dataclass
class ScoreStats:
    histogram_before: Histogram
    histogram_after: Histogram
    histogram_delta: Histogram
    n_notes: int
    fraction_improved: float
    median_delta: float
    best_room_classes: dict
    threshold: float = DEFAULT_THRESHOLD
    n_input: int = 0
    results: list = field(default_factory=list)

    def summary(self):
        return {
            "n_input": self.n_input,
            "threshold": self.threshold,
            "n_notes": self.n_notes,
            "fraction_improved": self.fraction_improved,
            "median_delta": self.median_delta,
            "best_room_classes": self.best_room_classes,
            "notes": [
                {
                    "note_path": r.note_path,
                    "original_score": r.original_score,
                    "best_score": r.best_score,
                    "score_delta": r.score_delta,
                    "room_id": r.best_ir[0],
                    "point_id": r.best_ir[1],
                }
                for r in self.results
            ],
        }


# --- Scoring ---

def score_note(note, model):
    """Canonicalize, peak-normalize, log-mel, infer. Deterministic."""
    return forward(model, note_spectrogram(note), mode="infer")


def _load_candidate(corpus, index, sample_rate):
    if index == IDENTITY_INDEX:
        return identity_ir()
    ir = load_ir(corpus, index)
    if ir.h.sample_rate != sample_rate:
        ir = ImpulseResponse(h=resample(ir.h, sample_rate), room_id=ir.room_id,
                             point_id=ir.point_id, spec=ir.spec, rt60_est=ir.rt60_est)
    return ir


def _score_candidate(note, corpus, model, index):
    """(index, room_id, point_id, score, error); error is None on success."""
    try:
        ir = _load_candidate(corpus, index, note.sample_rate)
    except (AudioIOError, OSError, RoomError) as e:
        return index, None, None, None, str(e)
    result = apply_room(note, ir)
    score = forward(model, mel_spectrogram(result.audio), mode="infer")
    return index, ir.room_id, ir.point_id, score, None


def _best_room_metadata(corpus, index, ir):
    if index == IDENTITY_INDEX:
        return {"room_id": ir.room_id, "point_id": ir.point_id, "room_class": "identity",
                "dims": None, "absorptions": None, "rt60_est": None, "ir_path": None}
    entry = corpus.entries[index]
    return {
        "room_id": entry.room_id,
        "point_id": entry.point_id,
        "room_class": entry.room_class,
        "dims": entry.dims,
        "absorptions": entry.absorptions,
        "positions": entry.positions,
        "rt60_est": entry.rt60_est,
        "ir_path": entry.ir_path,
    }


def enhance(note, corpus, model, k=DEFAULT_TOP_K, workers=1, progress=False, note_path=None):
    """Scan every impulse response in `corpus` (plus the identity) and keep the best.

    Args:
        note: AudioBuffer (canonicalized here).
        corpus: CorpusManifest, or None for an identity-only scan.
        model: ScorerModel.
        k: Length of the reported top-k list (>= 1).
        workers: Scan threads; has no effect on the result.
        progress: Show a tqdm bar on stderr.
        note_path: Label stored on the result.

    Returns:
        (RankedResult, enhanced AudioBuffer)

    Raises:
        RankerError if k < 1. Unreadable IR files are logged and skipped.
    """
    if k < 1:
        raise RankerError(f"k must be >= 1, got {k}")
    canonical = canonicalize(note)
    original_score = score_note(canonical, model)

    n_entries = len(corpus) if corpus is not None else 0
    indices = [IDENTITY_INDEX] + list(range(n_entries))

    def scan(index):
        return _score_candidate(canonical, corpus, model, index)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        outcomes = list(tqdm(pool.map(scan, indices), total=len(indices), desc="Scanning rooms",
                             unit="ir", disable=not progress, file=sys.stderr))

    scored, skipped = [], []
    for index, room_id, point_id, score, error in outcomes:
        if error is not None:
            entry = corpus.entries[index]
            logger.warning(f"Skipping {entry.ir_path}: {error}")
            skipped.append({"index": index, "ir_path": entry.ir_path, "error": error})
            continue
        scored.append(RankedIR(index=index, room_id=room_id, point_id=point_id, score=score))

    ranking = sorted(scored, key=lambda r: (-r.score, r.index))
    best = ranking[0]
    best_ir = _load_candidate(corpus, best.index, canonical.sample_rate)
    enhanced = apply_room(canonical, best_ir).audio

    result = RankedResult(
        note_path=note_path,
        original_score=original_score,
        best_score=best.score,
        best_ir=(best.room_id, best.point_id),
        best_index=best.index,
        top_k=ranking[:k],
        best_room=_best_room_metadata(corpus, best.index, best_ir),
        n_scored=len(scored),
        skipped=skipped,
    )
    return result, enhanced


def _named(notes):
    named = []
    for i, item in enumerate(notes):
        if isinstance(item, tuple):
            named.append(item)
        else:
            named.append((f"note_{i:04d}", item))
    return named


def batch_stats(notes, corpus, model, threshold=DEFAULT_THRESHOLD, k=DEFAULT_TOP_K, workers=1,
                progress=False):
    """Enhance every note scoring below `threshold` and histogram the outcome.

    Args:
        notes: AudioBuffers or (name, AudioBuffer) pairs.
        corpus: CorpusManifest.
        model: ScorerModel.
        threshold: Only notes with original score < threshold are enhanced.

    Returns:
        ScoreStats; histograms have 20 bins over [0, 1] (scores) and [-1, 1] (delta).

    Raises:
        RankerError if notes is empty; NothingToEnhanceError if no note is below threshold.
    """
    named = _named(notes)
    if not named:
        raise RankerError("no notes given")

    low = []
    for name, note in named:
        score = score_note(note, model)
        logger.debug(f"{name}: {score:.4f}")
        if score < threshold:
            low.append((name, note))
    if not low:
        raise NothingToEnhanceError("nothing to enhance")
    logger.info(f"Enhancing {len(low)} of {len(named)} notes below {threshold}")

    results = []
    for name, note in tqdm(low, desc="Enhancing", unit="note", disable=not progress,
                           file=sys.stderr):
        result, _ = enhance(note, corpus, model, k=k, workers=workers, note_path=name)
        results.append(result)

    before = np.array([r.original_score for r in results])
    after = np.array([r.best_score for r in results])
    delta = after - before
    classes = Counter(r.best_room.get("room_class") for r in results)
    return ScoreStats(
        histogram_before=Histogram.of(before, SCORE_RANGE),
        histogram_after=Histogram.of(after, SCORE_RANGE),
        histogram_delta=Histogram.of(delta, DELTA_RANGE),
        n_notes=len(results),
        fraction_improved=float(np.mean(delta > 0)),
        median_delta=float(np.median(delta)),
        best_room_classes=dict(sorted(classes.items())),
        threshold=threshold,
        n_input=len(named),
        results=results,
    )


# --- Reports ---

def _write_json(data, path):
    with open(path, "w") as f:
        json.dump(data, f, indent=2)
        f.write("\n")
    return path


def write_report(result, path):
    """Per-note JSON report. OSError propagates."""
    return _write_json(result.to_dict(), path)


def write_stats(stats, out_dir):
    """Three histogram CSVs (bin_low, bin_high, count) plus summary.json.

    Returns:
        Dict of written paths.
    """
    os.makedirs(out_dir, exist_ok=True)
    histograms = {
        "before": stats.histogram_before,
        "after": stats.histogram_after,
        "delta": stats.histogram_delta,
    }
    paths = {}
    for key, histogram in histograms.items():
        path = os.path.join(out_dir, HISTOGRAM_FILES[key])
        histogram.to_frame().to_csv(path, index=False)
        paths[key] = path
    paths["summary"] = _write_json(stats.summary(), os.path.join(out_dir, SUMMARY_NAME))
    return paths


def write_feature_traces(original, enhanced, out_dir, stem="note"):
    """Envelope/centroid CSVs for the dry and enhanced versions of a note."""
    os.makedirs(out_dir, exist_ok=True)
    return {
        "original": write_feature_csv(canonicalize(original),
                                      os.path.join(out_dir, f"{stem}_original_features.csv")),
        "enhanced": write_feature_csv(enhanced,
                                      os.path.join(out_dir, f"{stem}_enhanced_features.csv")),
    }


# --- CLI ---

def _read_notes(notes_dir):
    paths = sorted(glob.glob(os.path.join(notes_dir, "*.wav")))
    notes = []
    for path in paths:
        try:
            notes.append((os.path.basename(path), read_wav(path)))
        except AudioIOError as e:
            logger.warning(f"Skipping note {path}: {e}")
    return notes


def cmd_score(args):
    try:
        model = load_model(args.model)
        score = score_note(read_wav(args.input), model)
    except (AudioIOError, ModelFormatError, ModelError, FeatureError, OSError) as e:
        print(f"Error: {e}", file=sys.stderr)
        sys.exit(1)
    print(f"{score:.4f}")


def cmd_enhance(args, run):
    try:
        model = load_model(args.model)
        corpus = load_corpus(args.corpus)
        note = read_wav(args.input)
        result, enhanced = enhance(note, corpus, model, k=args.top_k, workers=run.workers,
                                   progress=run.progress, note_path=args.input)
        write_wav(args.out, enhanced)
        write_report(result, args.report)
        if args.features:
            stem = os.path.splitext(os.path.basename(args.input))[0]
            write_feature_traces(note, enhanced, args.features, stem)
    except (AudioIOError, ModelFormatError, ModelError, ManifestError, ConvolutionError,
            FeatureError, RankerError, OSError) as e:
        print(f"Error: {e}", file=sys.stderr)
        sys.exit(1)

    print(f"Original score: {result.original_score:.4f}", file=sys.stderr)
    print(f"Best score:     {result.best_score:.4f}", file=sys.stderr)
    print(f"Best room:      {result.best_ir[0]} {result.best_ir[1]}", file=sys.stderr)
    if result.skipped:
        print(f"Skipped {len(result.skipped)} unreadable impulse responses", file=sys.stderr)


def cmd_stats(args, run):
    try:
        model = load_model(args.model)
        corpus = load_corpus(args.corpus)
        notes = _read_notes(args.notes)
        if not notes:
            raise RankerError(f"no readable notes in {args.notes}")
        stats = batch_stats(notes, corpus, model, threshold=args.threshold, k=args.top_k,
                            workers=run.workers, progress=run.progress)
        write_stats(stats, args.out)
    except (AudioIOError, ModelFormatError, ModelError, ManifestError, ConvolutionError,
            FeatureError, RankerError, OSError) as e:
        print(f"Error: {e}", file=sys.stderr)
        sys.exit(1)

    print(f"Enhanced {stats.n_notes} of {stats.n_input} notes below {stats.threshold}",
          file=sys.stderr)
    print(f"Fraction improved: {stats.fraction_improved:.3f}", file=sys.stderr)
    print(f"Median delta:      {stats.median_delta:.4f}", file=sys.stderr)


def cli_main(argv=None):
    """CLI entry point for scoring, enhancement and statistics."""
    parser = argparse.ArgumentParser(
        prog="roomrank",
        description="Score notes and find the room each one sounds best in",
        epilog="Examples:\n"
        "  roomrank score --model scorer.rrsc --in note.wav\n"
        "  roomrank enhance --model scorer.rrsc --corpus corpus --in note.wav \\\n"
        "      --out best.wav --report report.json --top-k 10 --workers 8\n"
        "  roomrank stats --model scorer.rrsc --corpus corpus --notes notes --out stats\n",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    def add_common_args(sp):
        sp.add_argument("--model", required=True, help="Scorer model file")
        sp.add_argument("--verbose", "-v", action="store_true", help="Debug logging")

    def add_scan_args(sp):
        sp.add_argument("--corpus", required=True, help="Corpus directory (manifest.json)")
        sp.add_argument("--top-k", type=int, default=DEFAULT_TOP_K, help="Rooms to report")
        sp.add_argument("--workers", type=int, default=None,
                        help="Scan threads (default: ROOMRANK_WORKERS or 1)")
        sp.add_argument("--seed", type=int, default=None, help="Random seed (default: 42)")
        sp.add_argument("--no-progress", action="store_true", help="Hide progress bar")

    sp_score = subparsers.add_parser("score", help="Score one note")
    add_common_args(sp_score)
    sp_score.add_argument("--in", dest="input", required=True, help="Note WAV")

    sp_enh = subparsers.add_parser("enhance", help="Find the best room for one note")
    add_common_args(sp_enh)
    add_scan_args(sp_enh)
    sp_enh.add_argument("--in", dest="input", required=True, help="Note WAV")
    sp_enh.add_argument("--out", required=True, help="Enhanced WAV")
    sp_enh.add_argument("--report", required=True, help="JSON report")
    sp_enh.add_argument("--features", default=None, metavar="DIR",
                        help="Also write envelope/centroid CSVs here")

    sp_stats = subparsers.add_parser("stats", help="Improvement histograms for low-scoring notes")
    add_common_args(sp_stats)
    add_scan_args(sp_stats)
    sp_stats.add_argument("--notes", required=True, help="Directory of note WAVs")
    sp_stats.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD,
                          help="Enhance notes scoring below this (default: 0.5)")
    sp_stats.add_argument("--out", required=True, help="Output directory")

    args = parser.parse_args(argv)
    configure_logging(args.verbose)

    if args.command == "score":
        cmd_score(args)
        return

    sub = sp_enh if args.command == "enhance" else sp_stats
    if args.top_k < 1:
        sub.error(f"--top-k must be >= 1, got {args.top_k}")
    try:
        run = load_run_config(args.command, seed=args.seed, workers=args.workers,
                              paths={"corpus": args.corpus}, progress=not args.no_progress)
    except ConfigError as e:
        sub.error(str(e))

    if args.command == "enhance":
        cmd_enhance(args, run)
    elif args.command == "stats":
        cmd_stats(args, run)
