"""Rated notes for the scorer: ratings manifest, consensus filtering, synthetic corpus.

Ratings manifest CSV (header required):
    audio_path,rater_id,rating
audio_path is relative to the audio directory; rating lies in [0, 1].

An item becomes a training example only when at least two distinct raters
scored it and their ratings span at most `agreement_epsilon`; its label is the
mean rating. The synthetic corpus stands in for a private rated-note dataset:
"good" notes are harmonic tones with a pulsing envelope, "bad" notes share their
partials but hold a flat envelope over an unsteady pitch.

Usage as library:
    from roomrank.scorer.dataset import RatingsManifest, build_training_set
    manifest = RatingsManifest.from_csv("ratings.csv")
    split = build_training_set(manifest, seed=42)
    train = load_examples(split.train, "audio/")
"""

import logging
import os
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from roomrank.audio_io import AudioBuffer, canonicalize, read_wav, write_wav
from roomrank.convolver import peak_normalize
from roomrank.features import mel_spectrogram

logger = logging.getLogger(__name__)

RATINGS_COLUMNS = ["audio_path", "rater_id", "rating"]
RATINGS_NAME = "ratings.csv"
AGREEMENT_EPSILON = 0.25
MIN_RATERS = 2
MAX_VALIDATION = 200
VALIDATION_FRACTION = 0.1

SYNTH_RATE = 16000
SYNTH_SECONDS = 5.0
SYNTH_PEAK = 0.5
VIBRATO_DEPTH = (0.005, 0.015)
RATERS = ("rater_a", "rater_b")
RATER_JITTER = 0.05


class RatingsError(Exception):
    """Ratings manifest is malformed or leaves no consensus labels."""
    pass


@dataclass
class RatingsManifest:
    frame: pd.DataFrame

    def __post_init__(self):
        self.validate()

    def __len__(self):
        return len(self.frame)

    def validate(self):
        missing = [c for c in RATINGS_COLUMNS if c not in self.frame.columns]
        if missing:
            raise RatingsError(f"Ratings manifest missing columns: {', '.join(missing)}")
        ratings = pd.to_numeric(self.frame["rating"], errors="coerce")
        if ratings.isna().any():
            raise RatingsError("Ratings manifest has non-numeric ratings")
        if ((ratings < 0.0) | (ratings > 1.0)).any():
            raise RatingsError("Ratings must lie in [0, 1]")
        self.frame = self.frame.assign(
            audio_path=self.frame["audio_path"].astype(str),
            rater_id=self.frame["rater_id"].astype(str),
            rating=ratings.astype(np.float64),
        )[RATINGS_COLUMNS]

    @classmethod
    def from_rows(cls, rows):
        """Build from (audio_path, rater_id, rating) tuples."""
        return cls(pd.DataFrame(list(rows), columns=RATINGS_COLUMNS))

    @classmethod
    def from_csv(cls, path):
        """Raises RatingsError if the file is missing or malformed."""
        if not os.path.exists(path):
            raise RatingsError(f"Ratings file not found: {path}")
        try:
            frame = pd.read_csv(path, dtype={"audio_path": str, "rater_id": str})
        except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
            raise RatingsError(f"Cannot parse ratings file {path}: {e}")
        return cls(frame)

    def to_csv(self, path):
        self.frame.to_csv(path, index=False, float_format="%.6f")
        return path


@dataclass
class LabeledItem:
    audio_path: str
    label: float
    n_raters: int


@dataclass
class LabeledExample:
    audio_path: str
    label: float
    mel: object


@dataclass
class TrainingSplit:
    train: list
    val: list
    n_dropped: int = 0
    dropped: list = field(default_factory=list)


def consensus_labels(manifest, agreement_epsilon=AGREEMENT_EPSILON):
    """Keep items rated by >= 2 raters whose ratings span <= agreement_epsilon.

    Returns:
        (kept LabeledItems sorted by audio_path, dropped audio paths)
    """
    frame = manifest.frame
    kept, dropped = [], []
    for path, group in frame.groupby("audio_path", sort=True):
        n_raters = group["rater_id"].nunique()
        spread = group["rating"].max() - group["rating"].min()
        if n_raters >= MIN_RATERS and spread <= agreement_epsilon + 1e-12:
            kept.append(LabeledItem(path, float(group["rating"].mean()), int(n_raters)))
        else:
            dropped.append(path)
    return kept, dropped


def validation_size(n):
    return min(MAX_VALIDATION, max(1, int(VALIDATION_FRACTION * n)))


def build_training_set(manifest, agreement_epsilon=AGREEMENT_EPSILON, seed=42):
    """Consensus-filter a ratings manifest and split it into train/validation.

    The validation share is min(200, 10%) of the kept items (at least one),
    chosen by a seeded permutation of the path-sorted items.

    Raises:
        RatingsError("no consensus labels") if nothing survives filtering.
    """
    kept, dropped = consensus_labels(manifest, agreement_epsilon)
    if not kept:
        raise RatingsError("no consensus labels")
    logger.info(f"Consensus labels: kept {len(kept)}, dropped {len(dropped)}")

    order = np.random.default_rng(seed).permutation(len(kept))
    n_val = validation_size(len(kept)) if len(kept) > 1 else 0
    val = [kept[i] for i in sorted(order[:n_val])]
    train = [kept[i] for i in sorted(order[n_val:])]
    return TrainingSplit(train=train, val=val, n_dropped=len(dropped), dropped=dropped)


def note_spectrogram(buffer):
    """Scoring front end: canonicalize, peak-normalize, log-mel."""
    canonical = canonicalize(buffer)
    normalized, _ = peak_normalize(canonical.samples)
    return mel_spectrogram(AudioBuffer(normalized, canonical.sample_rate))


def load_examples(items, audio_dir):
    """Read and featurize LabeledItems. AudioIOError propagates."""
    examples = []
    for item in items:
        buffer = read_wav(os.path.join(audio_dir, item.audio_path))
        examples.append(LabeledExample(item.audio_path, item.label, note_spectrogram(buffer)))
    return examples


# --- Synthetic rated notes ---

def _time_axis():
    return np.arange(int(SYNTH_RATE * SYNTH_SECONDS)) / SYNTH_RATE


def _fade(t, attack, release):
    env = np.ones_like(t)
    rise = t < attack
    env[rise] = 0.5 * (1.0 - np.cos(np.pi * t[rise] / attack))
    tail = t > t[-1] - release
    env[tail] *= 0.5 * (1.0 + np.cos(np.pi * (t[tail] - (t[-1] - release)) / release))
    return env


def _harmonic_tone(rng, t, f0, phase_track):
    """3-8 partials at 1/k amplitude following `phase_track` (radians of the fundamental)."""
    n_partials = int(rng.integers(3, 9))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=n_partials)
    tone = np.zeros_like(t)
    for k in range(1, n_partials + 1):
        if k * f0 >= SYNTH_RATE / 2 - 500.0:
            break
        tone += np.sin(k * phase_track + phases[k - 1]) / k
    return tone


def _finish(rng, samples, t):
    samples = samples * _fade(t, rng.uniform(0.05, 0.15), 0.1)
    return AudioBuffer(SYNTH_PEAK * samples / np.max(np.abs(samples)), SYNTH_RATE)


def synth_good_note(rng):
    """Steady-pitch harmonic tone with 3-6 Hz amplitude modulation."""
    t = _time_axis()
    f0 = rng.uniform(200.0, 800.0)
    tone = _harmonic_tone(rng, t, f0, 2.0 * np.pi * f0 * t)
    rate = rng.uniform(3.0, 6.0)
    depth = rng.uniform(0.2, 0.5)
    return _finish(rng, tone * (1.0 + depth * np.sin(2.0 * np.pi * rate * t)), t)


def synth_bad_note(rng):
    """Flat-envelope harmonic tone whose pitch wobbles by 0.5-1.5% at 4-7 Hz.

    The partials match a good note's; only the envelope is lifeless. A
    reverberant room turns the pitch wobble into energy modulation.
    """
    t = _time_axis()
    f0 = rng.uniform(200.0, 800.0)
    rate = rng.uniform(4.0, 7.0)
    depth = rng.uniform(VIBRATO_DEPTH[0], VIBRATO_DEPTH[1])
    phase_track = 2.0 * np.pi * f0 * t - f0 * depth / rate * np.cos(2.0 * np.pi * rate * t)
    return _finish(rng, _harmonic_tone(rng, t, f0, phase_track), t)


def generate_synthetic_labeled_corpus(n, seed, out_dir):
    """Write n synthetic notes (even indices good, odd bad) plus ratings.csv.

    Two raters rate every note 1.0 (good) or 0.0 (bad) plus uniform +/- 0.05
    jitter, clipped to [0, 1]. Each note draws from its own SeedSequence child,
    so regenerating with the same seed reproduces every file.

    Returns:
        RatingsManifest (audio paths relative to out_dir).

    Raises:
        ValueError if n < 2; AudioIOError if a file cannot be written.
    """
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    os.makedirs(out_dir, exist_ok=True)

    rows = []
    for i in range(n):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i,)))
        good = i % 2 == 0
        name = f"{'good' if good else 'bad'}_{i:04d}.wav"
        note = synth_good_note(rng) if good else synth_bad_note(rng)
        write_wav(os.path.join(out_dir, name), note, encoding="float32")
        target = 1.0 if good else 0.0
        for rater in RATERS:
            rating = float(np.clip(target + rng.uniform(-RATER_JITTER, RATER_JITTER), 0.0, 1.0))
            rows.append((name, rater, rating))

    manifest = RatingsManifest.from_rows(rows)
    manifest.to_csv(os.path.join(out_dir, RATINGS_NAME))
    logger.info(f"Wrote {n} synthetic notes to {out_dir}")
    return manifest
