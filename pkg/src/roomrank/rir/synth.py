"""Room impulse responses for rectangular rooms, plus decay diagnostics.

Early part: each image source up to `max_order` reflections that arrives
before the mixing time contributes an impulse of amplitude (product of
sqrt(1 - alpha) over the walls it bounced off) / (4 pi d), placed at fractional
delay d / c * fs with an 81-tap Hann-windowed sinc.

Late part: after the mixing time (direct arrival + sqrt(V) ms, at least 10 ms)
the response is a seeded Gaussian diffuse tail whose energy decays at the
Sabine rate. Its level is matched to the summed energy of the image sources
arriving in the first two mixing offsets after the mixing time; those images
are not rendered themselves. A room whose reflections carry no energy (alpha = 1,
or max_order 0) therefore has no tail.

Absorption is frequency independent and air absorption is ignored.

Surface order for absorption coefficients:
    (x = 0, x = length, y = 0, y = width, floor z = 0, ceiling z = height)

Usage as library:
    from roomrank.rir.synth import RoomSpec, simulate_rir, estimate_rt60
    spec = RoomSpec(10, 8, 3, (0.3,) * 6, (2, 3, 1.5), (7, 4, 1.2))
    ir = simulate_rir(spec)
    rt60 = estimate_rt60(ir)
"""

import math
from dataclasses import dataclass, field

import numpy as np

from roomrank.audio_io import AudioBuffer

SPEED_OF_SOUND = 343.0
DEFAULT_FS = 16000
DEFAULT_MAX_ORDER = 40

WALL_MARGIN = 0.1
KERNEL_TAPS = 81
KERNEL_HALF = KERNEL_TAPS // 2
AMPLITUDE_CUTOFF = 1e-6
IMAGE_CHUNK = 16384

MIN_MIXING_TIME = 0.01
CALIBRATION_SPAN = 2.0
DECAY_NEPERS = 6.0 * math.log(10.0)

FIT_START_DB = -5.0
FIT_END_DB = -25.0
MIN_FIT_POINTS = 3

SURFACES = ("x0", "x1", "y0", "y1", "floor", "ceiling")


class RoomError(Exception):
    """Invalid room geometry, absorption, or source/mic placement."""
    pass


class InsufficientDecayError(Exception):
    """The energy decay curve never spans the -5 dB to -25 dB fit range."""
    pass


@dataclass(frozen=True)
class RoomSpec:
    """Box room geometry (meters), per-surface absorption, and one source/mic pair.

    `seed` drives the diffuse tail; equal specs render identical responses.
    """

    length: float
    width: float
    height: float
    absorption: tuple
    source_pos: tuple
    mic_pos: tuple
    sample_rate: int = DEFAULT_FS
    max_order: int = DEFAULT_MAX_ORDER
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "absorption", tuple(float(a) for a in self.absorption))
        object.__setattr__(self, "source_pos", tuple(float(p) for p in self.source_pos))
        object.__setattr__(self, "mic_pos", tuple(float(p) for p in self.mic_pos))
        self.validate()

    @property
    def dims(self):
        return (float(self.length), float(self.width), float(self.height))

    @property
    def volume(self):
        return self.length * self.width * self.height

    def surface_areas(self):
        """Areas matching SURFACES order."""
        lx, ly, lz = self.dims
        return (ly * lz, ly * lz, lx * lz, lx * lz, lx * ly, lx * ly)

    def validate(self):
        """Raise RoomError if any construction invariant fails."""
        if any(d <= 0 for d in self.dims):
            raise RoomError(f"Degenerate room: dimensions must be positive, got {self.dims}")
        if len(self.absorption) != 6:
            raise RoomError(f"Need 6 absorption coefficients, got {len(self.absorption)}")
        if any(not (0.0 < a <= 1.0) for a in self.absorption):
            raise RoomError(f"Absorption coefficients must lie in (0, 1], got {self.absorption}")
        if self.sample_rate <= 0:
            raise RoomError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.max_order < 0:
            raise RoomError(f"max_order must be non-negative, got {self.max_order}")
        if self.seed < 0:
            raise RoomError(f"seed must be non-negative, got {self.seed}")
        for name, pos in (("source", self.source_pos), ("mic", self.mic_pos)):
            if len(pos) != 3:
                raise RoomError(f"{name} position must be a 3-vector, got {pos}")
            for coord, limit in zip(pos, self.dims):
                if not (WALL_MARGIN <= coord <= limit - WALL_MARGIN):
                    raise RoomError(
                        f"{name} position {pos} outside room {self.dims} "
                        f"(must be >= {WALL_MARGIN} m from every wall)"
                    )
        if self.source_pos == self.mic_pos:
            raise RoomError("source and mic positions must differ")

    @property
    def direct_distance(self):
        return math.dist(self.source_pos, self.mic_pos)


@dataclass
class ImpulseResponse:
    """A rendered h_pr[n] with provenance."""

    h: AudioBuffer
    room_id: str
    point_id: str
    spec: RoomSpec = None
    rt60_est: float = None
    meta: dict = field(default_factory=dict)

    @property
    def energy(self):
        return float(np.sum(self.h.samples ** 2))

    def first_arrival_index(self, fraction=0.5):
        """First sample reaching `fraction` of the direct-path amplitude.

        The fractional-delay kernel rings before its centre, so the literal first
        nonzero sample sits up to 40 taps early; the half-amplitude crossing lands
        within one sample of the geometric delay.
        """
        samples = np.abs(self.h.samples)
        if self.spec is not None:
            threshold = fraction / (4.0 * math.pi * self.spec.direct_distance)
        else:
            threshold = fraction * samples.max()
        hits = np.nonzero(samples >= threshold)[0]
        if hits.size == 0:
            raise RoomError("impulse response has no sample above the arrival threshold")
        return int(hits[0])


def identity_ir():
    """Pure delta at 16 kHz. Convolving with it leaves a note unchanged."""
    return ImpulseResponse(
        h=AudioBuffer(np.array([1.0]), DEFAULT_FS),
        room_id="identity",
        point_id="identity",
    )


# --- Image-source rendering ---

def _axis_images(order):
    """Per-axis image indices a = 2l - u for |a| <= order.

    Returns (a, l, u) integer arrays. An image at index a sits at
    (1 - 2u) * s + 2 l L and has |l - u| hits on the near wall, |l| on the far wall.
    """
    a = np.arange(-order, order + 1)
    u = np.abs(a) % 2
    l = (a + u) // 2
    return a, l, u


def _image_sources(spec):
    """Positions (N, 3) and reflection gains (N,) of all images up to max_order."""
    order = spec.max_order
    a, l, u = _axis_images(order)
    ai, aj, ak = np.meshgrid(np.arange(a.size), np.arange(a.size), np.arange(a.size),
                             indexing="ij")
    ai, aj, ak = ai.ravel(), aj.ravel(), ak.ravel()
    keep = np.abs(a[ai]) + np.abs(a[aj]) + np.abs(a[ak]) <= order
    idx = (ai[keep], aj[keep], ak[keep])

    beta = np.sqrt(1.0 - np.asarray(spec.absorption))
    positions = np.empty((idx[0].size, 3))
    gains = np.ones(idx[0].size)
    for axis, (sel, size) in enumerate(zip(idx, spec.dims)):
        la, ua = l[sel], u[sel]
        positions[:, axis] = (1 - 2 * ua) * spec.source_pos[axis] + 2 * la * size
        near, far = beta[2 * axis], beta[2 * axis + 1]
        gains *= np.power(near, np.abs(la - ua)) * np.power(far, np.abs(la))
    return positions, gains


def _fractional_kernel(delays):
    """81-tap Hann-windowed sinc rows centred on each (fractional) delay."""
    offsets = np.arange(-KERNEL_HALF, KERNEL_HALF + 1)
    centres = np.round(delays).astype(np.int64)
    taps = centres[:, None] + offsets[None, :]
    x = taps - delays[:, None]
    window = 0.5 * (1.0 + np.cos(np.pi * x / (KERNEL_HALF + 1)))
    return taps, np.sinc(x) * window


def mixing_time(spec):
    """Seconds after emission at which the diffuse tail takes over."""
    direct = spec.direct_distance / SPEED_OF_SOUND
    return direct + max(math.sqrt(spec.volume) / 1000.0, MIN_MIXING_TIME)


def _tail_level(spec, arrivals, amplitudes, t_mix):
    """Per-sample tail variance at t_mix and its energy decay rate (1/s).

    The variance is chosen so the tail carries the same energy as the images
    arriving in [t_mix, t_mix + CALIBRATION_SPAN * (t_mix - direct arrival)).
    """
    rate = DECAY_NEPERS / sabine_rt60(spec)
    span = CALIBRATION_SPAN * (t_mix - spec.direct_distance / SPEED_OF_SOUND)
    window = (arrivals >= t_mix) & (arrivals < t_mix + span)
    energy = float(np.sum(amplitudes[window] ** 2))
    if energy <= 0.0:
        return 0.0, rate
    return energy * rate / (spec.sample_rate * -math.expm1(-rate * span)), rate


def simulate_rir(spec, room_id="room", point_id="point"):
    """Render the impulse response of `spec`: specular images, then a diffuse tail.

    Args:
        spec: RoomSpec (validated on construction).
        room_id: Identifier stored on the result.
        point_id: Identifier stored on the result.

    Returns:
        ImpulseResponse covering the latest early image plus kernel, and the
        tail down to 60 dB below its start.

    Raises:
        RoomError on invalid specs.
    """
    spec.validate()
    fs = spec.sample_rate
    mic = np.asarray(spec.mic_pos)

    positions, gains = _image_sources(spec)
    distances = np.linalg.norm(positions - mic, axis=1)
    amplitudes = gains / (4.0 * np.pi * distances)
    arrivals = distances / SPEED_OF_SOUND

    t_mix = mixing_time(spec)
    direct_amp = 1.0 / (4.0 * np.pi * spec.direct_distance)
    early = (arrivals < t_mix) & (amplitudes >= AMPLITUDE_CUTOFF * direct_amp)
    delays = arrivals[early] * fs
    early_amps = amplitudes[early]

    variance, rate = _tail_level(spec, arrivals, amplitudes, t_mix)
    tail_start = math.ceil(t_mix * fs)
    tail_len = math.ceil(DECAY_NEPERS / rate * fs) if variance > 0.0 else 0

    length = max(int(np.round(delays.max())) + KERNEL_HALF + 1, tail_start + tail_len)
    h = np.zeros(length)
    for start in range(0, delays.size, IMAGE_CHUNK):
        stop = start + IMAGE_CHUNK
        taps, kernel = _fractional_kernel(delays[start:stop])
        weights = kernel * early_amps[start:stop, None]
        valid = taps >= 0
        h += np.bincount(taps[valid], weights=weights[valid], minlength=length)[:length]

    if tail_len:
        t = (tail_start + np.arange(tail_len)) / fs - t_mix
        noise = np.random.default_rng(spec.seed).standard_normal(tail_len)
        h[tail_start:tail_start + tail_len] += math.sqrt(variance) * np.exp(-0.5 * rate * t) * noise

    return ImpulseResponse(
        h=AudioBuffer(h, fs),
        room_id=room_id,
        point_id=point_id,
        spec=spec,
        meta={"images": int(delays.size), "mixing_time": t_mix, "tail_samples": tail_len},
    )


# --- Decay diagnostics ---

def energy_decay_curve_db(samples):
    """Schroeder backward-integrated energy in dB relative to total energy."""
    power = np.asarray(samples, dtype=np.float64) ** 2
    energy = np.cumsum(power[::-1])[::-1]
    if energy[0] <= 0 or not np.isfinite(energy[0]):
        raise InsufficientDecayError("insufficient decay: impulse response has no energy")
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(energy / energy[0])


def estimate_rt60(ir):
    """Estimate RT60 from the -5 dB to -25 dB slope of the Schroeder curve.

    The fitted decay rate is extrapolated to a 60 dB drop, so the estimate is
    independent of the IR's gain and of its initial delay.

    Args:
        ir: ImpulseResponse (or AudioBuffer).

    Returns:
        RT60 in seconds.

    Raises:
        InsufficientDecayError if the curve never spans the fit range.
    """
    buffer = ir.h if isinstance(ir, ImpulseResponse) else ir
    edc = energy_decay_curve_db(buffer.samples)

    below_start = np.nonzero(edc <= FIT_START_DB)[0]
    below_end = np.nonzero(edc <= FIT_END_DB)[0]
    if below_start.size == 0 or below_end.size == 0:
        raise InsufficientDecayError("insufficient decay: curve never reaches -25 dB")

    i_start, i_end = below_start[0], below_end[0]
    segment = edc[i_start:i_end + 1]
    times = np.arange(i_start, i_end + 1) / buffer.sample_rate
    finite = np.isfinite(segment)
    if np.count_nonzero(finite) < MIN_FIT_POINTS:
        raise InsufficientDecayError("insufficient decay: too few points between -5 and -25 dB")

    slope, _ = np.polyfit(times[finite], segment[finite], 1)
    if slope >= 0:
        raise InsufficientDecayError("insufficient decay: non-negative decay slope")
    return float(-60.0 / slope)


def sabine_rt60(spec):
    """Sabine estimate 0.161 V / sum(S_i alpha_i)."""
    absorbing = sum(s * a for s, a in zip(spec.surface_areas(), spec.absorption))
    return 0.161 * spec.volume / absorbing


def eyring_rt60(spec):
    """Eyring estimate 0.161 V / (-S ln(1 - mean alpha)); 0 for an anechoic room."""
    areas = spec.surface_areas()
    total = sum(areas)
    mean_alpha = sum(s * a for s, a in zip(areas, spec.absorption)) / total
    if mean_alpha >= 1.0:
        return 0.0
    return 0.161 * spec.volume / (-total * math.log(1.0 - mean_alpha))
