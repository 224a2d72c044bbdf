"""Training-time augmentation of log-mel spectrograms.

Each step fires independently with probability 0.5:
    volume      constant log-power offset for a gain uniform in +/- 6 dB
    flip_mel    reverse the mel axis
    flip_time   reverse the time axis
    noise       additive Gaussian noise on log values, sigma 0.1
    cutout      rectangle of up to 24 mel bins x 100 frames set to the log floor

Values are clamped to the log floor after noise; cut-out runs last so a masked
rectangle is exactly the floor in the output.
"""

import math
from dataclasses import dataclass

import numpy as np

from roomrank.features import LOG_FLOOR, MelSpectrogram

FIRE_PROBABILITY = 0.5
MAX_GAIN_DB = 6.0
MAX_CUTOUT_MELS = 24
MAX_CUTOUT_FRAMES = 100
NOISE_SIGMA = 0.1

STEPS = ("volume", "flip_mel", "flip_time", "noise", "cutout")


@dataclass(frozen=True)
class AugmentConfig:
    volume: bool = True
    flip_mel: bool = True
    flip_time: bool = True
    noise: bool = True
    cutout: bool = True
    probability: float = FIRE_PROBABILITY


def gain_offset(gain_db):
    """Log-power shift equivalent to scaling the waveform by gain_db."""
    return 2.0 * math.log(10.0 ** (gain_db / 20.0))


def volume_shift(values, gain_db):
    return values + gain_offset(gain_db)


def flip_mel(values):
    return values[::-1, :].copy()


def flip_time(values):
    return values[:, ::-1].copy()


def add_noise(values, rng, sigma=NOISE_SIGMA):
    return values + rng.normal(0.0, sigma, size=values.shape)


def cutout(values, mel_start, frame_start, n_mels, n_frames):
    out = values.copy()
    out[mel_start:mel_start + n_mels, frame_start:frame_start + n_frames] = LOG_FLOOR
    return out


def _draw_cutout(rng, shape):
    rows, cols = shape
    n_mels = int(rng.integers(1, min(MAX_CUTOUT_MELS, rows) + 1))
    n_frames = int(rng.integers(1, min(MAX_CUTOUT_FRAMES, cols) + 1))
    mel_start = int(rng.integers(0, rows - n_mels + 1))
    frame_start = int(rng.integers(0, cols - n_frames + 1))
    return mel_start, frame_start, n_mels, n_frames


def augment(spec, rng, config=None):
    """Randomly augment a spectrogram; shape is always preserved.

    Args:
        spec: MelSpectrogram.
        rng: numpy Generator. One gate draw per step, in STEPS order, then the
            step's own parameters when it fires.
        config: AugmentConfig toggles (default: all steps on).

    Returns:
        New MelSpectrogram; the input is not modified.
    """
    config = config or AugmentConfig()
    values = np.array(spec.values, dtype=np.float64)
    fired = {step: rng.random() < config.probability for step in STEPS}

    if config.volume and fired["volume"]:
        values = volume_shift(values, rng.uniform(-MAX_GAIN_DB, MAX_GAIN_DB))
    if config.flip_mel and fired["flip_mel"]:
        values = flip_mel(values)
    if config.flip_time and fired["flip_time"]:
        values = flip_time(values)
    if config.noise and fired["noise"]:
        values = add_noise(values, rng)
    values = np.maximum(values, LOG_FLOOR)
    if config.cutout and fired["cutout"]:
        values = cutout(values, *_draw_cutout(rng, values.shape))

    return MelSpectrogram(values)
