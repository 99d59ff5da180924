"""Forearm-activation pipeline: signal synthesis, RMS envelope, calibration.

Eight channels of zero-mean Gaussian noise stand in for the armband
hardware; the grip command scales each channel's standard deviation, so the
moving-RMS envelope recovers the grip level.  The maximum-contraction
calibration records three repetitions at full grip and averages them into a
reference value; trial activations are divided by this reference to give
the normalized activation r used by the adaptive authority modes.
"""

import math
from dataclasses import dataclass

import numpy as np

CHANNEL_COUNT = 8
REST_NOISE_FLOOR = 0.05


class CalibrationError(Exception):
    """A maximum-contraction repetition did not rise above rest noise."""


@dataclass
class EmgFrame:
    timestamp: float
    channels: np.ndarray  # shape (CHANNEL_COUNT,)


@dataclass
class EnvelopeConfig:
    sample_rate: float = 200.0
    window: float = 0.15       # moving-RMS span, s

    def __post_init__(self):
        if self.sample_rate <= 0 or self.window <= 0:
            raise ValueError("sample rate and window must be positive")
        if self.window_samples < 2:
            raise ValueError("window must cover at least 2 samples")

    @property
    def window_samples(self) -> int:
        return int(round(self.window * self.sample_rate))


@dataclass
class SynthParams:
    """Per-subject channel noise model: sigma_i = base_i + grip * gain_i."""
    base: np.ndarray
    gain: np.ndarray

    def __post_init__(self):
        self.base = np.asarray(self.base, dtype=float)
        self.gain = np.asarray(self.gain, dtype=float)
        if self.base.shape != (CHANNEL_COUNT,) or self.gain.shape != (CHANNEL_COUNT,):
            raise ValueError(f"need {CHANNEL_COUNT} per-channel values")
        if np.any(self.base <= 0) or np.any(self.gain < 0):
            raise ValueError("rest noise must be positive, gains non-negative")


def draw_synth_params(rng) -> SynthParams:
    """Subject-specific channel model from a seeded generator."""
    return SynthParams(base=rng.uniform(0.015, 0.025, CHANNEL_COUNT),
                       gain=rng.uniform(0.9, 1.1, CHANNEL_COUNT))


def synthesize_emg(grip: float, timestamp: float, params: SynthParams,
                   rng) -> EmgFrame:
    if not math.isfinite(grip) or grip < 0:
        raise ValueError("grip must be finite and >= 0")
    sigma = params.base + grip * params.gain
    return EmgFrame(timestamp=timestamp,
                    channels=sigma * rng.standard_normal(CHANNEL_COUNT))


class EnvelopeTracker:
    """Streaming per-channel moving RMS, aggregated as the channel mean.

    During warm-up (fewer samples than the window) the RMS is taken over
    the samples seen so far.  push() returns the aggregate activation; the
    per-channel values of the latest step stay readable on channel_rms.
    """

    def __init__(self, cfg: EnvelopeConfig = None):
        cfg = cfg or EnvelopeConfig()
        self.cfg = cfg
        self._n = cfg.window_samples
        self._ring = np.zeros((self._n, CHANNEL_COUNT))
        self._sums = np.zeros(CHANNEL_COUNT)
        self._pos = 0
        self._count = 0
        self.channel_rms = np.zeros(CHANNEL_COUNT)

    def push(self, frame: EmgFrame) -> float:
        ch = np.asarray(frame.channels, dtype=float)
        if ch.shape != (CHANNEL_COUNT,):
            raise ValueError(f"expected {CHANNEL_COUNT} channels, "
                             f"got shape {ch.shape}")
        if not np.all(np.isfinite(ch)):
            raise ValueError("non-finite channel sample")
        sq = ch * ch
        self._sums += sq - self._ring[self._pos]
        self._ring[self._pos] = sq
        self._pos = (self._pos + 1) % self._n
        if self._count < self._n:
            self._count += 1
        mean_sq = self._sums / self._count
        # running subtraction can leave a tiny negative residue
        np.maximum(mean_sq, 0.0, out=mean_sq)
        self.channel_rms = np.sqrt(mean_sq)
        return float(self.channel_rms.mean())


def rms_envelope(frames, cfg: EnvelopeConfig = None):
    """Aggregate activation stream for a frame sequence.

    Returns a list of (timestamp, activation) pairs, one per input frame;
    the first window's worth of values is computed over the samples
    available so far.
    """
    tracker = EnvelopeTracker(cfg)
    return [(frame.timestamp, tracker.push(frame)) for frame in frames]


@dataclass
class Calibration:
    reference: float          # normalization denominator
    rep_values: tuple         # the three per-repetition activations

    def __post_init__(self):
        self.rep_values = tuple(float(v) for v in self.rep_values)
        if len(self.rep_values) != 3:
            raise ValueError("expected exactly 3 repetition values")
        if any(v <= 0 for v in self.rep_values) or self.reference <= 0:
            raise ValueError("calibration values must be positive")


def calibrate(recordings, cfg: EnvelopeConfig = None,
              noise_floor: float = REST_NOISE_FLOOR) -> Calibration:
    """Reference activation from three maximum-contraction recordings.

    Each repetition must cover at least 2 s; its value is the mean
    aggregate envelope over the central 1.5 s, trimming the ramp at both
    ends.  The reference is the mean of the three repetition values.
    """
    cfg = cfg or EnvelopeConfig()
    if len(recordings) != 3:
        raise ValueError("expected exactly 3 recordings")
    span = int(round(1.5 * cfg.sample_rate))
    min_len = int(round(2.0 * cfg.sample_rate))
    reps = []
    for frames in recordings:
        if len(frames) < min_len:
            raise ValueError("each recording must cover at least 2 s")
        activations = np.array([act for _, act in rms_envelope(frames, cfg)])
        start = (len(activations) - span) // 2
        value = float(np.mean(activations[start:start + span]))
        if value <= noise_floor:
            raise CalibrationError(
                f"repetition activation {value:.4f} is at rest-noise level "
                f"(floor {noise_floor})")
        reps.append(value)
    return Calibration(reference=sum(reps) / 3.0, rep_values=tuple(reps))


def normalize(activation: float, cal: Calibration) -> float:
    """Normalized activation r = activation / reference, never clamped."""
    if not math.isfinite(cal.reference) or cal.reference <= 0:
        raise ValueError("invalid calibration reference")
    return activation / cal.reference


def mvc_calibration(params: SynthParams, rng, cfg: EnvelopeConfig = None,
                    rep_duration: float = 2.0) -> Calibration:
    """Run the three-repetition maximum-contraction protocol end to end."""
    cfg = cfg or EnvelopeConfig()
    n = int(round(rep_duration * cfg.sample_rate))
    recordings = []
    for _ in range(3):
        recordings.append([synthesize_emg(1.0, i / cfg.sample_rate, params, rng)
                           for i in range(n)])
    return calibrate(recordings, cfg)
