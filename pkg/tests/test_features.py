"""Tests for roomrank.features: mel spectrogram, envelope, centroid."""

import numpy as np
import pandas as pd
import pytest

from roomrank.audio_io import AudioBuffer
from roomrank.features import (
    LOG_FLOOR,
    FeatureError,
    count_envelope_peaks,
    energy_envelope,
    feature_table,
    frame_count,
    hz_to_mel,
    mel_centers,
    mel_filterbank,
    mel_spectrogram,
    mel_to_hz,
    spectral_centroid,
    stft_magnitude,
    write_feature_csv,
)


def _tone(freq, amp=0.5):
    t = np.arange(80000) / 16000
    return AudioBuffer(amp * np.sin(2 * np.pi * freq * t), 16000)


SILENCE = AudioBuffer(np.zeros(80000), 16000)


# --- Mel scale ---

def test_hz_to_mel_reference_point():
    assert hz_to_mel(700.0) == pytest.approx(2595.0 * np.log10(2.0))


def test_mel_round_trip():
    freqs = np.array([0.0, 100.0, 1000.0, 8000.0])
    np.testing.assert_allclose(mel_to_hz(hz_to_mel(freqs)), freqs, atol=1e-9)


def test_filterbank_shape_and_peak():
    bank = mel_filterbank()
    assert bank.shape == (96, 257)
    assert bank.max() <= 1.0
    assert np.all(bank.sum(axis=1) > 0)


def test_mel_centers_increasing():
    centers = mel_centers()
    assert centers.shape == (96,)
    assert np.all(np.diff(centers) > 0)
    assert 0.0 < centers[0] and centers[-1] < 8000.0


# --- Framing ---

def test_frame_count():
    assert stft_magnitude(np.zeros(80000)).shape == (500, 257)
    assert frame_count(80000) == 500


def test_frame_count_uneven_length():
    assert stft_magnitude(np.zeros(1000)).shape[0] == 7


# --- Shapes ---

def test_feature_shapes():
    note = _tone(440)
    assert mel_spectrogram(note).shape == (96, 500)
    assert energy_envelope(note).shape == (500,)
    assert spectral_centroid(note).shape == (500,)


def test_non_canonical_length():
    with pytest.raises(FeatureError):
        mel_spectrogram(AudioBuffer(np.zeros(1000), 16000))


def test_non_canonical_rate():
    with pytest.raises(FeatureError):
        energy_envelope(AudioBuffer(np.zeros(80000), 22050))


# --- Values ---

def test_silence_hits_floor():
    assert np.all(mel_spectrogram(SILENCE).values == LOG_FLOOR)
    assert np.all(spectral_centroid(SILENCE) == 0.0)
    assert np.all(energy_envelope(SILENCE) == 0.0)


def test_tone_argmax_is_nearest_band():
    mel = mel_spectrogram(_tone(1000)).values
    nearest = int(np.argmin(np.abs(mel_centers() - 1000.0)))
    # frames 0, 1 and the last one reach into the reflection padding
    bands = np.argmax(mel[:, 2:-2], axis=0)
    assert np.all(bands == nearest)


def test_tone_centroid():
    centroid = spectral_centroid(_tone(1000))
    assert np.all(np.abs(centroid[10:-10] - 1000.0) < 50.0)


def test_low_tone_centroid():
    centroid = spectral_centroid(_tone(440))
    assert np.all(np.abs(centroid[10:-10] - 440.0) <= 20.0)


def test_tone_envelope_is_rms():
    envelope = energy_envelope(_tone(1000, amp=0.5))
    np.testing.assert_allclose(envelope[10:-10], 0.5 / np.sqrt(2), rtol=1e-3)


def test_mel_shifts_by_log_gain_squared():
    gain = 0.5
    loud = mel_spectrogram(_tone(700)).values
    quiet = mel_spectrogram(_tone(700, amp=0.5 * gain)).values
    shift = np.log(gain ** 2)
    above = (loud + shift > LOG_FLOOR + 1.0) & (quiet > LOG_FLOOR)
    assert above.sum() > 1000
    np.testing.assert_allclose(quiet[above], loud[above] + shift, atol=1e-6)


def test_centroid_ignores_gain():
    note = _tone(1200)
    quieter = AudioBuffer(note.samples * 0.1, 16000)
    a = spectral_centroid(note)
    b = spectral_centroid(quieter)
    assert np.all(np.abs(b - a) <= 1e-6 * np.abs(a))


def test_two_equal_tones_centroid_midway():
    t = np.arange(80000) / 16000
    both = 0.25 * np.sin(2 * np.pi * 1000 * t) + 0.25 * np.sin(2 * np.pi * 3000 * t)
    centroid = spectral_centroid(AudioBuffer(both, 16000))
    assert np.all(np.abs(centroid[10:-10] - 2000.0) <= 40.0)


def test_am_tone_envelope_peaks():
    t = np.arange(80000) / 16000
    samples = 0.5 * (1 + 0.5 * np.sin(2 * np.pi * 4 * t)) * np.sin(2 * np.pi * 440 * t)
    peaks = count_envelope_peaks(energy_envelope(AudioBuffer(samples, 16000)))
    assert 19 <= peaks <= 21


def test_mel_is_deterministic():
    a = mel_spectrogram(_tone(330)).values
    b = mel_spectrogram(_tone(330)).values
    np.testing.assert_array_equal(a, b)


# --- Envelope peaks ---

def test_count_envelope_peaks_sinusoid():
    t = np.arange(500) / 100.0
    envelope = 1.0 + 0.3 * np.sin(2 * np.pi * 3.0 * t)
    assert count_envelope_peaks(envelope) == 15


def test_count_envelope_peaks_flat():
    assert count_envelope_peaks(np.ones(500)) == 0
    assert count_envelope_peaks(np.zeros(500)) == 0


def test_count_envelope_peaks_ignores_ripple():
    t = np.arange(500) / 100.0
    envelope = 1.0 + 0.001 * np.sin(2 * np.pi * 20.0 * t)
    assert count_envelope_peaks(envelope) == 0


# --- Tables ---

def test_feature_table_and_csv(tmp_path):
    table = feature_table(_tone(500))
    assert list(table.columns) == ["frame_index", "rms", "centroid_hz"]
    assert len(table) == 500
    path = write_feature_csv(_tone(500), str(tmp_path / "f.csv"))
    back = pd.read_csv(path)
    assert len(back) == 500
