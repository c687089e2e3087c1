"""Waveform decoding, resampling, and logMel spectrogram extraction.

Feature frontend: 16 kHz mono audio, 1024-sample (64 ms) Hann-windowed
frames hopped by 400 samples (25 ms), zero-padded to 4096 points before the
FFT, 64 triangular mel filters spanning 0-8 kHz, natural log with a 1e-10
power floor.  A 10 s clip yields a 64x400 feature matrix.

Frame i covers samples [i*hop, i*hop + window_len); the clip tail is
zero-padded so a clip of N samples yields ceil(N/hop) frames.  This keeps
the frame count at exactly N/hop for hop-aligned clips and makes appended
silence produce exactly floor-valued frames.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "FormatError",
    "UnsupportedFormatError",
    "Waveform",
    "SpectrogramGeometry",
    "MelFilterbank",
    "LogMelSpectrogram",
    "decode_wav",
    "resample",
    "hann_window",
    "hz_to_mel",
    "mel_to_hz",
    "mel_filterbank",
    "logmel",
    "log_floor_value",
]


class FormatError(ValueError):
    """The byte stream is not a well-formed container."""


class UnsupportedFormatError(FormatError):
    """Well-formed container, but a codec/layout this toolkit does not handle."""


@dataclass(frozen=True)
class Waveform:
    """Mono audio: float64 samples (nominal range [-1, 1]) at a fixed rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self) -> None:
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"samples must be 1-D, got shape {samples.shape}")
        object.__setattr__(self, "samples", samples)

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class SpectrogramGeometry:
    """All knobs of the feature frontend; the defaults are the benchmark's."""

    sample_rate: int = 16000
    window_len: int = 1024
    hop: int = 400
    fft_len: int = 4096
    n_mels: int = 64
    f_min: float = 0.0
    f_max: float = 8000.0
    log_floor: float = 1e-10

    def __post_init__(self) -> None:
        if min(self.sample_rate, self.window_len, self.hop, self.fft_len, self.n_mels) <= 0:
            raise ValueError("geometry sizes must be positive")
        if self.window_len > self.fft_len:
            raise ValueError(f"window_len {self.window_len} exceeds fft_len {self.fft_len}")
        if not 0.0 <= self.f_min < self.f_max <= self.sample_rate / 2:
            raise ValueError(
                f"need 0 <= f_min < f_max <= sample_rate/2, got [{self.f_min}, {self.f_max}]"
            )
        if self.log_floor <= 0.0:
            raise ValueError("log_floor must be positive")

    @property
    def frames_per_second(self) -> float:
        return self.sample_rate / self.hop


def log_floor_value(geometry: SpectrogramGeometry) -> np.float32:
    """Feature value of silence: log of the power floor, in feature dtype."""
    return np.float32(np.log(geometry.log_floor))


@dataclass(frozen=True)
class MelFilterbank:
    """Triangular filters: nonnegative weights (n_mels, fft_len/2+1), peak 1."""

    weights: np.ndarray
    center_freqs: np.ndarray


@dataclass(frozen=True)
class LogMelSpectrogram:
    """Log-power feature matrix, float32, shape (n_mels, n_frames)."""

    values: np.ndarray
    geometry: SpectrogramGeometry

    def __post_init__(self) -> None:
        values = np.asarray(self.values)
        if values.ndim != 2:
            raise ValueError(f"values must be 2-D, got shape {values.shape}")
        if values.shape[0] != self.geometry.n_mels:
            raise ValueError(
                f"expected {self.geometry.n_mels} mel rows, got {values.shape[0]}"
            )
        object.__setattr__(self, "values", values.astype(np.float32, copy=False))

    @property
    def n_mels(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_frames * self.geometry.hop / self.geometry.sample_rate


def decode_wav(data: bytes) -> Waveform:
    """Decode a RIFF/WAVE PCM16 byte string to a mono waveform in [-1, 1].

    Stereo channels are averaged; samples are scaled by 1/32768 so the PCM
    extremes map to [-1.0, 32767/32768].
    """
    if len(data) < 12 or data[0:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise FormatError("not a RIFF/WAVE container")
    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos : pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8 : pos + 8 + size]
        if len(body) < size:
            raise FormatError(f"truncated {chunk_id!r} chunk")
        if chunk_id == b"fmt ":
            if size < 16:
                raise FormatError("fmt chunk too short")
            audio_format, channels, sample_rate, _, _, bits = struct.unpack_from(
                "<HHIIHH", body, 0
            )
            if audio_format == 0xFFFE and size >= 26:
                # WAVE_FORMAT_EXTENSIBLE: the real codec is the subformat tag.
                (audio_format,) = struct.unpack_from("<H", body, 24)
            fmt = (audio_format, channels, sample_rate, bits)
        elif chunk_id == b"data":
            payload = body
        pos += 8 + size + (size & 1)
    if fmt is None:
        raise FormatError("missing fmt chunk")
    if payload is None:
        raise FormatError("missing data chunk")
    audio_format, channels, sample_rate, bits = fmt
    if audio_format != 1:
        raise UnsupportedFormatError(f"unsupported codec {audio_format}, only PCM is handled")
    if bits != 16:
        raise UnsupportedFormatError(f"unsupported bit depth {bits}, only 16-bit PCM is handled")
    if channels not in (1, 2):
        raise UnsupportedFormatError(f"unsupported channel count {channels}")
    if sample_rate <= 0:
        raise FormatError("non-positive sample rate")
    if len(payload) % (2 * channels) != 0:
        raise FormatError("data chunk does not hold whole 16-bit frames")
    pcm = np.frombuffer(payload, dtype="<i2").astype(np.float64)
    if channels == 2:
        pcm = pcm.reshape(-1, 2).mean(axis=1)
    return Waveform(pcm / 32768.0, sample_rate)


_RESAMPLE_TAPS = 16  # sinc taps per polyphase branch
_KAISER_BETA = 8.555


def resample(waveform: Waveform, target_sr: int) -> Waveform:
    """Polyphase windowed-sinc resampling to target_sr.

    Kaiser-windowed sinc with 16 taps per branch; each branch is normalized
    to unit DC gain and the input edges are replicated, so constant signals
    pass through exactly.  Output length is round(len * target_sr / sr).
    """
    if target_sr <= 0:
        raise ValueError(f"target sample rate must be positive, got {target_sr}")
    if target_sr == waveform.sample_rate:
        return waveform
    x = waveform.samples
    if x.size == 0:
        return Waveform(x.copy(), target_sr)
    g = math.gcd(waveform.sample_rate, target_sr)
    up, down = target_sr // g, waveform.sample_rate // g
    out_len = int(round(x.size * target_sr / waveform.sample_rate))
    return Waveform(_polyphase_resample(x, up, down, out_len), target_sr)


def _polyphase_resample(x: np.ndarray, up: int, down: int, out_len: int) -> np.ndarray:
    # Odd filter length keeps the group delay at a whole number of
    # upsampled samples, so output n lands exactly at input time n*down/up.
    half = (_RESAMPLE_TAPS // 2) * up
    k = np.arange(-half, half + 1)
    fc = 1.0 / max(up, down)
    h = fc * np.sinc(fc * k) * np.kaiser(2 * half + 1, _KAISER_BETA)

    n_branch = -(-len(h) // up)
    branches = np.zeros((up, n_branch))
    for phase in range(up):
        taps = h[phase::up]
        branches[phase, : len(taps)] = taps / taps.sum()

    u = np.arange(out_len, dtype=np.int64) * down + half
    phase = u % up
    base = u // up

    pad = n_branch + 1
    xp = np.concatenate([np.full(pad, x[0]), x, np.full(pad, x[-1])])
    windows = np.lib.stride_tricks.sliding_window_view(xp, n_branch)
    rows = windows[base - (n_branch - 1) + pad]
    return np.einsum("ij,ij->i", rows, branches[phase][:, ::-1])


def hann_window(n: int) -> np.ndarray:
    """Symmetric Hann window, w[i] = 0.5*(1 - cos(2*pi*i/(n-1)))."""
    if n < 2:
        raise ValueError(f"window length must be >= 2, got {n}")
    return np.hanning(n)


def hz_to_mel(f):
    """HTK mel scale: 2595*log10(1 + f/700)."""
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def mel_filterbank(geometry: SpectrogramGeometry) -> MelFilterbank:
    """Peak-1 triangular filters with edges uniformly spaced on the mel scale.

    n_mels+2 edge points between mel(f_min) and mel(f_max); filter m rises
    from edge m to m+1 and falls to m+2, evaluated at the FFT bin frequencies.
    """
    edges_mel = np.linspace(
        hz_to_mel(geometry.f_min), hz_to_mel(geometry.f_max), geometry.n_mels + 2
    )
    edges_hz = mel_to_hz(edges_mel)
    edges_hz[0], edges_hz[-1] = geometry.f_min, geometry.f_max

    bin_hz = np.arange(geometry.fft_len // 2 + 1) * (geometry.sample_rate / geometry.fft_len)
    left = edges_hz[:-2, None]
    center = edges_hz[1:-1, None]
    right = edges_hz[2:, None]
    rising = (bin_hz - left) / (center - left)
    falling = (right - bin_hz) / (right - center)
    weights = np.clip(np.minimum(rising, falling), 0.0, None)
    return MelFilterbank(weights, edges_hz[1:-1].copy())


def logmel(waveform: Waveform, geometry: SpectrogramGeometry) -> LogMelSpectrogram:
    """Full frontend: frame, Hann-window, zero-pad FFT, mel power, floored log."""
    if waveform.sample_rate != geometry.sample_rate:
        raise ValueError(
            f"waveform rate {waveform.sample_rate} != geometry rate "
            f"{geometry.sample_rate}; resample first"
        )
    x = waveform.samples
    if x.size == 0:
        raise ValueError("empty waveform")

    n_frames = -(-x.size // geometry.hop)
    padded_len = (n_frames - 1) * geometry.hop + geometry.window_len
    xp = np.zeros(max(padded_len, x.size))
    xp[: x.size] = x

    frames = np.lib.stride_tricks.sliding_window_view(xp, geometry.window_len)[:: geometry.hop]
    frames = frames[:n_frames]
    spectrum = np.fft.rfft(frames * hann_window(geometry.window_len), n=geometry.fft_len, axis=1)
    power = spectrum.real**2 + spectrum.imag**2
    mel_power = power @ mel_filterbank(geometry).weights.T
    values = np.log(np.maximum(mel_power, geometry.log_floor)).T.astype(np.float32)
    return LogMelSpectrogram(values, geometry)
