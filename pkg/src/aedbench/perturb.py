"""Temporal occlusion, strong-label masking, and additive Gaussian noise.

Feature-domain masks write a fill value (silence = the log-power floor)
into whole frame columns.  Time intervals map to frames by the frame-center
rule: frame i belongs to [t0, t1) iff its center (i*hop + hop/2)/sample_rate
does.  Centers sit half a hop off the interval edges, so hop-aligned
intervals never produce boundary ties.

Intermittent masking blanks every other interval of length d: for a clip of
length T, the intervals [(n-1)d, nd) for n in {2, 4, 6, ..., T/d}.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .dsp import LogMelSpectrogram, SpectrogramGeometry, Waveform, log_floor_value

__all__ = [
    "FrameRange",
    "FillPolicy",
    "LOG_FLOOR_FILL",
    "MaskSpec",
    "NoiseSpec",
    "IntermittentCoverageWarning",
    "seconds_to_frames",
    "consecutive_mask",
    "intermittent_mask",
    "intermittent_frame_mask",
    "concat_unmasked",
    "strong_label_mask",
    "gaussian_spectrogram",
    "gaussian_waveform",
    "waveform_silence_mask",
]


class IntermittentCoverageWarning(UserWarning):
    """T/d is not an even integer, so coverage is not exactly half the clip."""


@dataclass(frozen=True)
class FrameRange:
    """Half-open frame interval [start, end)."""

    start: int
    end: int

    def __post_init__(self) -> None:
        if not 0 <= self.start <= self.end:
            raise ValueError(f"need 0 <= start <= end, got [{self.start}, {self.end})")

    def __len__(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class FillPolicy:
    """Value written into masked cells; the default is the log-power floor."""

    constant: float | None = None

    @classmethod
    def constant_value(cls, value: float) -> "FillPolicy":
        return cls(constant=float(value))

    def resolve(self, geometry: SpectrogramGeometry) -> np.float32:
        if self.constant is None:
            return log_floor_value(geometry)
        return np.float32(self.constant)


LOG_FLOOR_FILL = FillPolicy()


@dataclass(frozen=True)
class NoiseSpec:
    """Additive Gaussian noise: standard deviation, target domain, seed."""

    sigma: float
    domain: str  # "waveform" | "spectrogram"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if self.domain not in ("waveform", "spectrogram"):
            raise ValueError(f"unknown noise domain {self.domain!r}")

    @classmethod
    def from_level(
        cls, level: float, domain: str, seed: int = 0, level_is_variance: bool = False
    ) -> "NoiseSpec":
        """Build from a noise level that may denote a variance instead of a std."""
        sigma = math.sqrt(level) if level_is_variance else level
        return cls(sigma=sigma, domain=domain, seed=seed)


@dataclass(frozen=True)
class MaskSpec:
    """Declarative occlusion pattern, usable in both feature and sample domain."""

    kind: str  # "consecutive" | "intermittent" | "strong_label"
    start_s: float = 0.0
    duration_s: float = 0.0
    interval_s: float = 0.0
    events: tuple[tuple[float, float], ...] = ()
    fill: FillPolicy = LOG_FLOOR_FILL

    @classmethod
    def consecutive(cls, start_s: float, duration_s: float, fill: FillPolicy = LOG_FLOOR_FILL):
        return cls(kind="consecutive", start_s=start_s, duration_s=duration_s, fill=fill)

    @classmethod
    def intermittent(cls, interval_s: float, fill: FillPolicy = LOG_FLOOR_FILL):
        if interval_s <= 0:
            raise ValueError(f"interval must be positive, got {interval_s}")
        return cls(kind="intermittent", interval_s=interval_s, fill=fill)

    @classmethod
    def strong_label(cls, events, fill: FillPolicy = LOG_FLOOR_FILL):
        return cls(kind="strong_label", events=tuple((float(a), float(b)) for a, b in events), fill=fill)

    def time_intervals(self, total_s: float) -> list[tuple[float, float]]:
        """The masked [t0, t1) intervals within a clip of the given length."""
        if self.kind == "consecutive":
            return [(self.start_s, self.start_s + self.duration_s)]
        if self.kind == "strong_label":
            return list(self.events)
        return _intermittent_intervals(self.interval_s, total_s)

    def apply_to_features(self, x: LogMelSpectrogram) -> LogMelSpectrogram:
        if self.kind == "consecutive":
            return consecutive_mask(x, self.start_s, self.duration_s, self.fill)
        if self.kind == "intermittent":
            return intermittent_mask(x, self.interval_s, self.fill)
        return strong_label_mask(x, self.events, self.fill)


def seconds_to_frames(
    t0_s: float,
    t1_s: float,
    geometry: SpectrogramGeometry,
    n_frames: int | None = None,
) -> FrameRange:
    """Frames whose center (i*hop + hop/2)/sample_rate lies in [t0, t1)."""
    if not 0 <= t0_s <= t1_s:
        raise ValueError(f"need 0 <= t0 <= t1, got [{t0_s}, {t1_s})")
    fps = geometry.frames_per_second
    start = max(0, math.ceil(t0_s * fps - 0.5))
    end = max(start, math.ceil(t1_s * fps - 0.5))
    if n_frames is not None:
        start = min(start, n_frames)
        end = min(end, n_frames)
    return FrameRange(start, end)


def _masked_copy(x: LogMelSpectrogram, ranges, fill: FillPolicy) -> LogMelSpectrogram:
    values = x.values.copy()
    fill_value = fill.resolve(x.geometry)
    for r in ranges:
        values[:, r.start : r.end] = fill_value
    return LogMelSpectrogram(values, x.geometry)


def consecutive_mask(
    x: LogMelSpectrogram, start_s: float, duration_s: float, fill: FillPolicy = LOG_FLOOR_FILL
) -> LogMelSpectrogram:
    """Blank one contiguous block [start_s, start_s + duration_s)."""
    if duration_s < 0:
        raise ValueError(f"duration must be >= 0, got {duration_s}")
    total = x.duration_s
    if start_s < 0 or start_s + duration_s > total + 1e-9:
        raise ValueError(
            f"interval [{start_s}, {start_s + duration_s}) outside clip of {total} s"
        )
    r = seconds_to_frames(start_s, start_s + duration_s, x.geometry, x.n_frames)
    return _masked_copy(x, [r], fill)


def _intermittent_intervals(d_s: float, total_s: float) -> list[tuple[float, float]]:
    if d_s <= 0:
        raise ValueError(f"masking interval must be positive, got {d_s}")
    ratio = total_s / d_s
    if abs(ratio / 2 - round(ratio / 2)) > 1e-9:
        warnings.warn(
            f"clip length {total_s} s is not an even multiple of d={d_s} s; "
            "coverage will not be exactly half",
            IntermittentCoverageWarning,
            stacklevel=3,
        )
    intervals = []
    n = 2
    while (n - 1) * d_s < total_s - 1e-12:
        intervals.append(((n - 1) * d_s, min(n * d_s, total_s)))
        n += 2
    return intervals


def intermittent_frame_mask(
    d_s: float, geometry: SpectrogramGeometry, n_frames: int
) -> np.ndarray:
    """Boolean frame mask (True = blanked) for every-other-d masking."""
    total_s = n_frames * geometry.hop / geometry.sample_rate
    mask = np.zeros(n_frames, dtype=bool)
    for t0, t1 in _intermittent_intervals(d_s, total_s):
        r = seconds_to_frames(t0, t1, geometry, n_frames)
        mask[r.start : r.end] = True
    return mask


def intermittent_mask(
    x: LogMelSpectrogram, d_s: float, fill: FillPolicy = LOG_FLOOR_FILL
) -> LogMelSpectrogram:
    """Blank every other interval of length d across the clip."""
    mask = intermittent_frame_mask(d_s, x.geometry, x.n_frames)
    values = x.values.copy()
    values[:, mask] = fill.resolve(x.geometry)
    return LogMelSpectrogram(values, x.geometry)


def concat_unmasked(x: LogMelSpectrogram, d_s: float) -> LogMelSpectrogram:
    """Keep only the frames intermittent masking would spare, in order."""
    mask = intermittent_frame_mask(d_s, x.geometry, x.n_frames)
    return LogMelSpectrogram(x.values[:, ~mask].copy(), x.geometry)


def strong_label_mask(
    x: LogMelSpectrogram, events, fill: FillPolicy = LOG_FLOOR_FILL
) -> LogMelSpectrogram:
    """Blank the union of labeled [t0, t1) intervals."""
    total = x.duration_s
    ranges = []
    for t0, t1 in events:
        if t0 < 0 or t1 > total + 1e-9:
            raise ValueError(f"event [{t0}, {t1}) outside clip of {total} s")
        ranges.append(seconds_to_frames(t0, t1, x.geometry, x.n_frames))
    return _masked_copy(x, ranges, fill)


def _counter_normals(seed: int, count: int) -> np.ndarray:
    """Standard normals from a Philox counter stream via Box-Muller.

    Cell k consumes raw words 2k and 2k+1 of the keyed stream, so its value
    depends only on (seed, k), never on evaluation order.
    """
    bit_gen = np.random.Philox(key=int(seed) & ((1 << 64) - 1))
    raw = bit_gen.random_raw(2 * count) if count else np.empty(0, dtype=np.uint64)
    u1 = (raw[0::2] >> 11) * 2.0**-53  # [0, 1)
    u2 = (raw[1::2] >> 11) * 2.0**-53
    radius = np.sqrt(-2.0 * np.log1p(-u1))
    return radius * np.cos(2.0 * np.pi * u2)


def gaussian_spectrogram(x: LogMelSpectrogram, spec: NoiseSpec) -> LogMelSpectrogram:
    """Add i.i.d. Gaussian(0, sigma^2) to every feature cell."""
    if spec.domain != "spectrogram":
        raise ValueError(f"expected spectrogram-domain noise, got {spec.domain!r}")
    if spec.sigma == 0.0:
        return LogMelSpectrogram(x.values.copy(), x.geometry)
    noise = _counter_normals(spec.seed, x.values.size).reshape(x.values.shape)
    values = (x.values.astype(np.float64) + spec.sigma * noise).astype(np.float32)
    return LogMelSpectrogram(values, x.geometry)


def gaussian_waveform(w: Waveform, spec: NoiseSpec) -> Waveform:
    """Add i.i.d. Gaussian(0, sigma^2) to every sample; no clipping."""
    if spec.domain != "waveform":
        raise ValueError(f"expected waveform-domain noise, got {spec.domain!r}")
    if spec.sigma == 0.0:
        return Waveform(w.samples.copy(), w.sample_rate)
    noise = _counter_normals(spec.seed, w.samples.size)
    return Waveform(w.samples + spec.sigma * noise, w.sample_rate)


def waveform_silence_mask(w: Waveform, mask: MaskSpec) -> Waveform:
    """Zero the masked sample ranges (demonstrates FFT leakage at mask edges)."""
    total_s = w.duration_s
    samples = w.samples.copy()
    for t0, t1 in mask.time_intervals(total_s):
        if t0 < 0 or t1 > total_s + 1e-9:
            raise ValueError(f"interval [{t0}, {t1}) outside clip of {total_s} s")
        i0 = int(round(t0 * w.sample_rate))
        i1 = min(int(round(t1 * w.sample_rate)), samples.size)
        samples[i0:i1] = 0.0
    return Waveform(samples, w.sample_rate)
