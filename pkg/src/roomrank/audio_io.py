"""Audio buffers, WAV read/write, and the pipeline's canonical format.

Every signal entering the pipeline is canonicalized to mono, 16 kHz, 5 s
(80000 samples): resampled with a Kaiser-windowed sinc, then trimmed from the
front-aligned onset or zero-padded at the tail.

Usage as library:
    from roomrank.audio_io import read_wav, write_wav, canonicalize
    note = canonicalize(read_wav("note.wav"))
    write_wav("out.wav", note, encoding="float32")
"""

import os
import struct
from dataclasses import dataclass
from math import gcd

import numpy as np
from scipy import signal
from scipy.io import wavfile

TARGET_RATE = 16000
TARGET_SECONDS = 5.0

PCM16_SCALE = 32768.0
ENCODINGS = ("pcm16", "float32")

RESAMPLER_TAPS = 64
KAISER_BETA = 8.6


class AudioIOError(Exception):
    """Audio read/write failure. `kind` names the failure for callers and tests."""
    def __init__(self, message, kind="invalid"):
        super().__init__(message)
        self.kind = kind


@dataclass(frozen=True)
class AudioBuffer:
    """Mono float64 samples at a sample rate in Hz."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise AudioIOError(f"AudioBuffer must be mono (1-D), got shape {samples.shape}")
        if int(self.sample_rate) <= 0:
            raise AudioIOError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise AudioIOError("AudioBuffer samples must be finite")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self):
        """Length in seconds."""
        return len(self) / self.sample_rate

    def is_canonical(self):
        return self.sample_rate == TARGET_RATE and len(self) == canonical_length()


def canonical_length(target_rate=TARGET_RATE, target_len=TARGET_SECONDS):
    return int(round(target_rate * target_len))


# --- WAV I/O ---

def read_wav(path):
    """Read a PCM16 or float32 WAV file, mixing stereo down to mono.

    Args:
        path: File path.

    Returns:
        AudioBuffer at the file's sample rate; int16 samples are divided by 32768.

    Raises:
        AudioIOError with kind "not_found", "malformed", "unsupported_encoding" or "empty".
    """
    if not os.path.exists(path):
        raise AudioIOError(f"WAV file not found: {path}", kind="not_found")
    try:
        rate, data = wavfile.read(path)
    except (ValueError, EOFError, IndexError, struct.error) as e:
        raise AudioIOError(f"malformed WAV: {path} ({e})", kind="malformed")

    if data.dtype == np.int16:
        samples = data.astype(np.float64) / PCM16_SCALE
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise AudioIOError(
            f"unsupported encoding {data.dtype} in {path}; expected PCM16 or float32",
            kind="unsupported_encoding",
        )

    if samples.ndim == 2:
        if samples.shape[1] > 2:
            raise AudioIOError(
                f"unsupported encoding: {samples.shape[1]} channels in {path}",
                kind="unsupported_encoding",
            )
        samples = samples.mean(axis=1)

    if samples.shape[0] == 0:
        raise AudioIOError(f"zero-length data in {path}", kind="empty")
    if not np.all(np.isfinite(samples)):
        raise AudioIOError(f"malformed WAV: non-finite samples in {path}", kind="malformed")

    return AudioBuffer(samples, rate)


def write_wav(path, buffer, encoding="float32"):
    """Write an AudioBuffer as a mono WAV file.

    Args:
        path: Destination path.
        buffer: AudioBuffer to write (must be non-empty).
        encoding: "pcm16" (clipped to [-1, 1], scaled by 32768) or "float32".

    Raises:
        AudioIOError with kind "empty", "invalid" or "unwritable".
    """
    if encoding not in ENCODINGS:
        raise AudioIOError(f"Unknown encoding '{encoding}'. Use one of: {', '.join(ENCODINGS)}")
    if len(buffer) == 0:
        raise AudioIOError("Cannot write an empty buffer", kind="empty")

    if encoding == "pcm16":
        clipped = np.clip(buffer.samples, -1.0, 1.0)
        data = np.clip(np.round(clipped * PCM16_SCALE), -32768, 32767).astype(np.int16)
    else:
        data = buffer.samples.astype(np.float32)

    try:
        wavfile.write(path, buffer.sample_rate, data)
    except OSError as e:
        raise AudioIOError(f"Cannot write {path}: {e}", kind="unwritable")


# --- Canonical format ---

def _resampling_filter(up, down):
    """Kaiser-windowed sinc low-pass for resample_poly at the intermediate rate."""
    max_rate = max(up, down)
    numtaps = RESAMPLER_TAPS * max_rate + 1
    return signal.firwin(numtaps, 1.0 / max_rate, window=("kaiser", KAISER_BETA))


def resample(buffer, target_rate):
    """Band-limited rational resampling. Identity when the rate already matches."""
    if buffer.sample_rate == target_rate:
        return buffer
    g = gcd(buffer.sample_rate, target_rate)
    up, down = target_rate // g, buffer.sample_rate // g
    taps = _resampling_filter(up, down)
    out = signal.resample_poly(buffer.samples, up, down, window=taps)
    return AudioBuffer(out, target_rate)


def fit_length(samples, length):
    """Keep the first `length` samples, zero-padding the tail if short."""
    if samples.shape[0] >= length:
        return samples[:length].copy()
    out = np.zeros(length, dtype=np.float64)
    out[:samples.shape[0]] = samples
    return out


def canonicalize(buffer, target_rate=TARGET_RATE, target_len=TARGET_SECONDS):
    """Resample to `target_rate` and fit to exactly `target_len` seconds.

    Idempotent: a canonical buffer is returned unchanged (bit-exact).
    """
    resampled = resample(buffer, target_rate)
    length = canonical_length(target_rate, target_len)
    return AudioBuffer(fit_length(resampled.samples, length), target_rate)
