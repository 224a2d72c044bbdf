"""Spectral features: the scorer's mel spectrogram and the analysis traces.

All three features share one framing: 400-sample (25 ms) Hann frames, 160-sample
(10 ms) hop, centred with reflection padding, and ceil(N / hop) frames, i.e.
500 frames for a canonical 5 s note. librosa computes one frame more for
centred analysis; the trailing frame is dropped.

Usage as library:
    from roomrank.features import mel_spectrogram, energy_envelope, spectral_centroid
    mel = mel_spectrogram(note)          # MelSpectrogram, values shape (96, 500)
    rms = energy_envelope(note)          # (500,)
    centroid = spectral_centroid(note)   # (500,) Hz
"""

import math
from dataclasses import dataclass
from functools import lru_cache

import librosa
import numpy as np
import pandas as pd
from scipy import signal

SAMPLE_RATE = 16000
FRAME_LENGTH = 400
HOP_LENGTH = 160
N_FFT = 512
N_MELS = 96
F_MIN = 0.0
F_MAX = 8000.0
LOG_FLOOR_POWER = 1e-10
LOG_FLOOR = float(np.log(LOG_FLOOR_POWER))
CENTROID_SILENCE = 1e-8
PEAK_PROMINENCE = 0.05

CANONICAL_SAMPLES = 80000
CANONICAL_FRAMES = math.ceil(CANONICAL_SAMPLES / HOP_LENGTH)


class FeatureError(Exception):
    """Input is not in the canonical 16 kHz / 80000-sample format."""
    pass


@dataclass(frozen=True)
class MelSpectrogram:
    """Log mel power, shape (n_mels, frames)."""

    values: np.ndarray

    @property
    def shape(self):
        return self.values.shape


def hz_to_mel(f):
    """HTK mel scale."""
    return librosa.hz_to_mel(np.asarray(f, dtype=np.float64), htk=True)


def mel_to_hz(m):
    return librosa.mel_to_hz(np.asarray(m, dtype=np.float64), htk=True)


@lru_cache(maxsize=None)
def mel_points(n_mels=N_MELS, f_min=F_MIN, f_max=F_MAX):
    """n_mels + 2 band edges in Hz, equally spaced on the mel scale."""
    points = librosa.mel_frequencies(n_mels=n_mels + 2, fmin=f_min, fmax=f_max, htk=True)
    points.setflags(write=False)
    return points


def mel_centers(n_mels=N_MELS):
    """Centre frequency of each triangular filter."""
    return mel_points(n_mels)[1:-1]


@lru_cache(maxsize=None)
def mel_filterbank(n_mels=N_MELS, n_fft=N_FFT, sample_rate=SAMPLE_RATE):
    """Triangular HTK filters (n_mels, n_fft // 2 + 1), peak 1, no area normalization."""
    bank = librosa.filters.mel(sr=sample_rate, n_fft=n_fft, n_mels=n_mels, fmin=F_MIN,
                               fmax=sample_rate / 2.0, htk=True, norm=None, dtype=np.float64)
    bank.setflags(write=False)
    return bank


def _require_canonical(x):
    if x.sample_rate != SAMPLE_RATE or len(x) != CANONICAL_SAMPLES:
        raise FeatureError(
            f"non-canonical input: expected {CANONICAL_SAMPLES} samples at {SAMPLE_RATE} Hz, "
            f"got {len(x)} at {x.sample_rate} Hz"
        )


def frame_count(n_samples):
    return math.ceil(n_samples / HOP_LENGTH)


def stft_magnitude(samples):
    """|STFT| with Hann window, shape (frames, N_FFT // 2 + 1)."""
    samples = np.asarray(samples, dtype=np.float64)
    spectrum = librosa.stft(samples, n_fft=N_FFT, hop_length=HOP_LENGTH,
                            win_length=FRAME_LENGTH, window="hann", center=True,
                            pad_mode="reflect")
    return np.abs(spectrum[:, :frame_count(samples.size)]).T


def mel_spectrogram(x):
    """Log mel power spectrogram of a canonical note.

    Raises:
        FeatureError on non-canonical input.
    """
    _require_canonical(x)
    power = stft_magnitude(x.samples) ** 2
    mel_power = power @ mel_filterbank().T
    floored = mel_power <= LOG_FLOOR_POWER
    values = np.where(floored, LOG_FLOOR, np.log(np.maximum(mel_power, LOG_FLOOR_POWER))).T
    return MelSpectrogram(np.ascontiguousarray(values))


def energy_envelope(x):
    """Per-frame RMS (unwindowed) on the shared framing."""
    _require_canonical(x)
    rms = librosa.feature.rms(y=np.asarray(x.samples, dtype=np.float64),
                              frame_length=FRAME_LENGTH, hop_length=HOP_LENGTH,
                              center=True, pad_mode="reflect", dtype=np.float64)
    return rms[0, :frame_count(len(x))]


def spectral_centroid(x):
    """Per-frame magnitude-weighted mean frequency in Hz; 0 for near-silent frames."""
    _require_canonical(x)
    magnitude = stft_magnitude(x.samples)
    centroid = librosa.feature.spectral_centroid(S=magnitude.T, sr=SAMPLE_RATE, n_fft=N_FFT)[0]
    silent = magnitude.sum(axis=1) < CENTROID_SILENCE
    return np.where(silent, 0.0, centroid)


def count_envelope_peaks(envelope, prominence=PEAK_PROMINENCE):
    """Count modulation peaks whose prominence exceeds `prominence` x envelope max."""
    envelope = np.asarray(envelope, dtype=np.float64)
    top = envelope.max() if envelope.size else 0.0
    if top <= 0.0:
        return 0
    peaks, _ = signal.find_peaks(envelope, prominence=prominence * top)
    return int(peaks.size)


def feature_table(x):
    """Per-frame analysis traces as a DataFrame (frame_index, rms, centroid_hz)."""
    rms = energy_envelope(x)
    centroid = spectral_centroid(x)
    return pd.DataFrame({
        "frame_index": np.arange(rms.size),
        "rms": rms,
        "centroid_hz": centroid,
    })


def write_feature_csv(x, path):
    """Dump feature_table(x) to CSV. Returns path."""
    feature_table(x).to_csv(path, index=False)
    return path
