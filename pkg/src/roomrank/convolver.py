"""Apply a room to a note: y[n] = x[n] * h[n], then level-normalize.

Usage as library:
    from roomrank.convolver import apply_room
    result = apply_room(canonical_note, ir)
    result.audio, result.gain_applied
"""

from dataclasses import dataclass

import numpy as np

from roomrank.audio_io import AudioBuffer, canonical_length

PEAK_TARGET = 0.99
OLA_BLOCK = 2 ** 16


class ConvolutionError(Exception):
    """Convolution inputs are empty or disagree on sample rate."""
    pass


@dataclass
class ConvolutionResult:
    audio: AudioBuffer
    room_id: str
    point_id: str
    gain_applied: float

    @property
    def ir_ref(self):
        return (self.room_id, self.point_id)


def _check_inputs(x, h):
    if len(x) == 0 or len(h) == 0:
        raise ConvolutionError("Cannot convolve an empty signal")
    if x.sample_rate != h.sample_rate:
        raise ConvolutionError(
            f"sample-rate mismatch: signal {x.sample_rate} Hz, impulse response {h.sample_rate} Hz"
        )


def next_pow2(n):
    """Smallest power of two >= n."""
    return 1 << max(int(n) - 1, 0).bit_length()


def convolve_direct(x, h):
    """Exact time-domain linear convolution, length |x| + |h| - 1."""
    _check_inputs(x, h)
    return AudioBuffer(np.convolve(x.samples, h.samples), x.sample_rate)


def _fft_full(x, h, n_out):
    nfft = next_pow2(n_out)
    spectrum = np.fft.rfft(x, nfft) * np.fft.rfft(h, nfft)
    return np.fft.irfft(spectrum, nfft)[:n_out]


def _overlap_add(x, h, n_out, block=OLA_BLOCK):
    step = block - h.size + 1
    h_spec = np.fft.rfft(h, block)
    y = np.zeros(n_out + block)
    for start in range(0, x.size, step):
        segment = np.fft.rfft(x[start:start + step], block)
        y[start:start + block] += np.fft.irfft(segment * h_spec, block)
    return y[:n_out]


def convolve_fft(x, h):
    """FFT linear convolution matching convolve_direct to ~1e-12 relative L2.

    One zero-padded transform of size next_pow2(|x| + |h| - 1), or overlap-add
    with 2**16-point blocks when the full transform would be larger and the
    filter fits in half a block. A one-sample filter is a plain gain.
    """
    _check_inputs(x, h)
    xs, hs = x.samples, h.samples
    if hs.size == 1:
        return AudioBuffer(xs * hs[0], x.sample_rate)
    if xs.size == 1:
        return AudioBuffer(hs * xs[0], x.sample_rate)

    n_out = xs.size + hs.size - 1
    if next_pow2(n_out) > OLA_BLOCK and hs.size <= OLA_BLOCK // 2:
        y = _overlap_add(xs, hs, n_out)
    else:
        y = _fft_full(xs, hs, n_out)
    return AudioBuffer(y, x.sample_rate)


def peak_normalize(samples, target=PEAK_TARGET):
    """Scale so max |sample| == target. Returns (samples, gain); silence gets gain 1."""
    peak = np.max(np.abs(samples)) if samples.size else 0.0
    if peak == 0.0:
        return samples.copy(), 1.0
    gain = target / peak
    return samples * gain, float(gain)


def apply_room(x, ir):
    """Convolve a canonical note with an IR, trim to 5 s, peak-normalize to 0.99.

    Args:
        x: Canonical AudioBuffer (80000 samples at 16 kHz).
        ir: ImpulseResponse at the note's sample rate.

    Returns:
        ConvolutionResult with exactly 80000 samples.

    Raises:
        ConvolutionError on empty inputs or sample-rate mismatch.
    """
    y = convolve_fft(x, ir.h)
    length = canonical_length()
    trimmed = np.zeros(length)
    n = min(length, len(y))
    trimmed[:n] = y.samples[:n]
    normalized, gain = peak_normalize(trimmed)
    return ConvolutionResult(
        audio=AudioBuffer(normalized, x.sample_rate),
        room_id=ir.room_id,
        point_id=ir.point_id,
        gain_applied=gain,
    )
