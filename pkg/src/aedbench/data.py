"""Dataset ingestion, the synthetic desk-scale generator, and feature caching.

Label files follow the segment-CSV convention: '#'-prefixed comment lines,
then rows of `clip_id, start_s, end_s, "label,label,..."` for weak (clip
level) labels and `clip_id, t0, t1, label` rows for temporally-strong event
labels.

The synthetic generator renders 10 sound-event classes from four primitive
types (pure tones, chirps, band-limited noise, AM tones).  Class 0 is a
stationary full-clip AM tone, so some content always survives strong-label
masking experiments.  Everything is a pure function of (config, seed):
amplitudes land on the PCM16 grid and event times on a 1 ms grid, so a
round-trip through WAV/CSV files reproduces the in-memory dataset exactly.

Feature cache (.lmel): b"LMEL", u32 version, u32 n_mels, u32 n_frames,
u32 sample_rate, u32 window_len, u32 hop, u32 fft_len, f64 f_min, f64 f_max,
f64 log_floor, then the matrix as row-major little-endian float32.
"""

from __future__ import annotations

import csv
import struct
import wave
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dsp import LogMelSpectrogram, SpectrogramGeometry, Waveform, decode_wav

__all__ = [
    "ParseError",
    "CacheFormatError",
    "EventLabel",
    "ClipRecord",
    "DatasetManifest",
    "SynthConfig",
    "SYNTH_CLASS_NAMES",
    "load_weak_csv",
    "load_strong_csv",
    "generate_synthetic",
    "save_dataset",
    "load_dataset",
    "save_wav",
    "write_feature_cache",
    "read_feature_cache",
]


class ParseError(ValueError):
    """A label file row could not be parsed; the message carries the line number."""


class CacheFormatError(ValueError):
    """A feature cache file is malformed or inconsistent."""


@dataclass(frozen=True)
class EventLabel:
    class_id: int
    t0_s: float
    t1_s: float

    def __post_init__(self) -> None:
        if not 0 <= self.t0_s < self.t1_s:
            raise ValueError(f"need 0 <= t0 < t1, got [{self.t0_s}, {self.t1_s})")


@dataclass
class ClipRecord:
    clip_id: str
    weak_labels: frozenset[int]
    strong_labels: tuple[EventLabel, ...] = ()
    waveform: Waveform | None = None
    audio_path: Path | None = None

    def load_waveform(self) -> Waveform:
        if self.waveform is not None:
            return self.waveform
        if self.audio_path is None:
            raise ValueError(f"clip {self.clip_id!r} has no audio")
        return decode_wav(Path(self.audio_path).read_bytes())


@dataclass
class DatasetManifest:
    class_names: list[str]
    clips: list[ClipRecord]
    split: str = "train"

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def label_vector(self, clip: ClipRecord) -> np.ndarray:
        y = np.zeros(self.n_classes)
        for c in clip.weak_labels:
            y[c] = 1.0
        return y


def _data_rows(path) -> list[tuple[int, list[str]]]:
    rows = []
    with open(path, newline="") as f:
        for line_no, record in enumerate(csv.reader(f, skipinitialspace=True), start=1):
            if not record or (record[0].strip().startswith("#")):
                continue
            rows.append((line_no, record))
    return rows


def load_weak_csv(path, class_names: list[str] | None = None) -> DatasetManifest:
    """Parse clip-level labels; builds the class list when none is given."""
    rows = _data_rows(path)
    if not rows:
        warnings.warn(f"{path}: no data rows, producing an empty manifest", stacklevel=2)
        return DatasetManifest(class_names or [], [], split="eval")

    parsed = []
    seen_labels: set[str] = set()
    for line_no, record in rows:
        if len(record) != 4:
            raise ParseError(f"{path}:{line_no}: expected 4 fields, got {len(record)}")
        clip_id = record[0].strip()
        try:
            float(record[1])
            float(record[2])
        except ValueError as exc:
            raise ParseError(f"{path}:{line_no}: bad start/end time: {exc}") from exc
        labels = [s.strip() for s in record[3].split(",") if s.strip()]
        if not clip_id or not labels:
            raise ParseError(f"{path}:{line_no}: empty clip id or label list")
        parsed.append((line_no, clip_id, labels))
        seen_labels.update(labels)

    if class_names is None:
        class_names = sorted(seen_labels)
    index = {name: i for i, name in enumerate(class_names)}
    clips = []
    for line_no, clip_id, labels in parsed:
        unknown = [l for l in labels if l not in index]
        if unknown:
            raise ParseError(f"{path}:{line_no}: unknown labels {unknown} for clip {clip_id!r}")
        clips.append(ClipRecord(clip_id, frozenset(index[l] for l in labels)))
    return DatasetManifest(list(class_names), clips, split="eval")


def load_strong_csv(
    path, class_names: list[str], clip_s: float = 10.0
) -> dict[str, list[EventLabel]]:
    """Parse per-clip event rows; events come back sorted by onset."""
    index = {name: i for i, name in enumerate(class_names)}
    table: dict[str, list[EventLabel]] = {}
    for line_no, record in _data_rows(path):
        if len(record) != 4:
            raise ParseError(f"{path}:{line_no}: expected 4 fields, got {len(record)}")
        clip_id = record[0].strip()
        label = record[3].strip()
        try:
            t0, t1 = float(record[1]), float(record[2])
        except ValueError as exc:
            raise ParseError(f"{path}:{line_no}: bad event time: {exc}") from exc
        if t1 <= t0:
            raise ParseError(f"{path}:{line_no}: event end {t1} not after start {t0}")
        if t0 < 0 or t1 > clip_s:
            raise ParseError(f"{path}:{line_no}: event [{t0}, {t1}) outside [0, {clip_s}]")
        if label not in index:
            raise ParseError(f"{path}:{line_no}: unknown label {label!r}")
        table.setdefault(clip_id, []).append(EventLabel(index[label], t0, t1))
    for events in table.values():
        events.sort(key=lambda e: (e.t0_s, e.t1_s, e.class_id))
    return table


# --------------------------------------------------------------------------
# Synthetic sound events
# --------------------------------------------------------------------------

SYNTH_CLASS_NAMES = [
    "steady_am_800",
    "tone_300",
    "tone_520",
    "tone_900",
    "tone_1500",
    "tone_2500",
    "chirp_up_1800_3600",
    "chirp_down_5200_2600",
    "noiseband_3800_4600",
    "am_tone_4200",
]

# Carrier/center frequency per class; tone-like classes must map to distinct
# mel filters, which the test suite checks against the filterbank.
SYNTH_CLASS_FREQS = [800.0, 300.0, 520.0, 900.0, 1500.0, 2500.0, None, None, None, 4200.0]


@dataclass(frozen=True)
class SynthConfig:
    n_classes: int = 10
    n_clips: int = 32
    clip_s: float = 10.0
    min_event_s: float = 1.5
    max_event_s: float = 3.0
    max_events_per_clip: int = 3
    # Wide amplitude range keeps some events near the decision boundary, so
    # trained models stay sensitive to small perturbations.
    amp_min: float = 0.1
    amp_max: float = 0.45
    background_sigma: float = 0.01
    steady_class_prob: float = 0.3
    sample_rate: int = 16000

    def __post_init__(self) -> None:
        if not 2 <= self.n_classes <= len(SYNTH_CLASS_NAMES):
            raise ValueError(
                f"n_classes must be in [2, {len(SYNTH_CLASS_NAMES)}], got {self.n_classes}"
            )
        if self.n_clips < 1:
            raise ValueError("n_clips must be >= 1")
        if not 0.5 <= self.min_event_s <= self.max_event_s:
            raise ValueError("event lengths must satisfy 0.5 <= min <= max")
        if self.max_event_s > self.clip_s:
            raise ValueError(
                f"events of {self.max_event_s} s do not fit a {self.clip_s} s clip"
            )
        if self.max_events_per_clip < 1:
            raise ValueError("max_events_per_clip must be >= 1")
        if self.background_sigma < 0:
            raise ValueError("background_sigma must be >= 0")
        if not 0 < self.amp_min <= self.amp_max:
            raise ValueError("need 0 < amp_min <= amp_max")


def _edge_ramp(n: int, sr: int, ramp_s: float = 0.01) -> np.ndarray:
    k = min(int(ramp_s * sr), n // 2)
    env = np.ones(n)
    if k > 0:
        ramp = 0.5 * (1.0 - np.cos(np.linspace(0.0, np.pi, k)))
        env[:k] = ramp
        env[-k:] = ramp[::-1]
    return env


def _render_event(class_id: int, n: int, sr: int, amp: float, rng) -> np.ndarray:
    t = np.arange(n) / sr
    phase = rng.uniform(0.0, 2.0 * np.pi)
    name = SYNTH_CLASS_NAMES[class_id]
    if name.startswith("tone_"):
        x = np.sin(2.0 * np.pi * SYNTH_CLASS_FREQS[class_id] * t + phase)
    elif name == "steady_am_800":
        x = (0.55 + 0.45 * np.sin(2.0 * np.pi * 4.0 * t)) * np.sin(
            2.0 * np.pi * 800.0 * t + phase
        )
    elif name == "am_tone_4200":
        x = (0.55 + 0.45 * np.sin(2.0 * np.pi * 8.0 * t)) * np.sin(
            2.0 * np.pi * 4200.0 * t + phase
        )
    elif name.startswith("chirp_"):
        f0, f1 = (1800.0, 3600.0) if name == "chirp_up_1800_3600" else (5200.0, 2600.0)
        dur = n / sr
        x = np.sin(2.0 * np.pi * (f0 * t + (f1 - f0) / (2.0 * dur) * t * t) + phase)
    elif name == "noiseband_3800_4600":
        white = rng.standard_normal(n)
        spectrum = np.fft.rfft(white)
        freqs = np.fft.rfftfreq(n, d=1.0 / sr)
        spectrum[(freqs < 3800.0) | (freqs > 4600.0)] = 0.0
        x = np.fft.irfft(spectrum, n=n)
        rms = np.sqrt(np.mean(x * x))
        x = x / rms if rms > 0 else x
        x *= 1.0 / np.sqrt(2.0)  # comparable power to a unit sine
    else:  # pragma: no cover - class table and names are kept in sync
        raise ValueError(f"no renderer for class {name!r}")
    return amp * x * _edge_ramp(n, sr)


def _quantize_pcm16(x: np.ndarray) -> np.ndarray:
    q = np.clip(np.round(x * 32768.0), -32768, 32767)
    return q / 32768.0


def generate_synthetic(cfg: SynthConfig, seed: int, split: str = "train") -> DatasetManifest:
    """Deterministic synthetic dataset with exact strong labels."""
    rng = np.random.default_rng(seed)
    sr = cfg.sample_rate
    n = int(round(cfg.clip_s * sr))
    clips = []
    for i in range(cfg.n_clips):
        clip_id = f"{split}-{i:04d}"
        samples = rng.standard_normal(n) * cfg.background_sigma
        events: list[EventLabel] = []

        if cfg.n_classes >= 1 and rng.uniform() < cfg.steady_class_prob:
            amp = rng.uniform(cfg.amp_min, 0.7 * cfg.amp_max)
            samples += _render_event(0, n, sr, amp, rng)
            events.append(EventLabel(0, 0.0, cfg.clip_s))

        n_events = int(rng.integers(1, cfg.max_events_per_clip + 1))
        choices = rng.choice(
            np.arange(1, cfg.n_classes), size=min(n_events, cfg.n_classes - 1), replace=False
        )
        for class_id in choices:
            # 1 ms grid, end computed from integer ms, so the CSV round-trip
            # reproduces the exact same floats
            dur_ms = int(rng.integers(int(cfg.min_event_s * 1000), int(cfg.max_event_s * 1000) + 1))
            t0_ms = int(rng.integers(0, int(cfg.clip_s * 1000) - dur_ms + 1))
            t0, t1 = t0_ms / 1000.0, (t0_ms + dur_ms) / 1000.0
            amp = rng.uniform(cfg.amp_min, cfg.amp_max)
            i0 = int(round(t0 * sr))
            i1 = int(round(t1 * sr))
            samples[i0:i1] += _render_event(int(class_id), i1 - i0, sr, amp, rng)
            events.append(EventLabel(int(class_id), t0, t1))

        events.sort(key=lambda e: (e.t0_s, e.t1_s, e.class_id))
        clips.append(
            ClipRecord(
                clip_id,
                weak_labels=frozenset(e.class_id for e in events),
                strong_labels=tuple(events),
                waveform=Waveform(_quantize_pcm16(samples), sr),
            )
        )
    return DatasetManifest(SYNTH_CLASS_NAMES[: cfg.n_classes], clips, split=split)


# --------------------------------------------------------------------------
# On-disk dataset layout: classes.csv, weak.csv, strong.csv, clips/*.wav
# --------------------------------------------------------------------------


def save_wav(waveform: Waveform, path) -> None:
    """Write mono PCM16; samples are clipped to the representable range."""
    pcm = np.clip(np.round(waveform.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(waveform.sample_rate)
        f.writeframes(pcm.tobytes())


def save_dataset(manifest: DatasetManifest, out_dir) -> Path:
    out = Path(out_dir)
    (out / "clips").mkdir(parents=True, exist_ok=True)
    with open(out / "classes.csv", "w", newline="") as f:
        writer = csv.writer(f)
        for i, name in enumerate(manifest.class_names):
            writer.writerow([i, name])
    with open(out / "weak.csv", "w", newline="") as f:
        f.write("# clip_id, start_seconds, end_seconds, labels\n")
        for clip in manifest.clips:
            names = ",".join(manifest.class_names[c] for c in sorted(clip.weak_labels))
            dur = clip.load_waveform().duration_s
            f.write(f'{clip.clip_id}, 0.000, {dur:.3f}, "{names}"\n')
    with open(out / "strong.csv", "w", newline="") as f:
        f.write("# clip_id, t0, t1, label\n")
        writer = csv.writer(f)
        for clip in manifest.clips:
            for e in clip.strong_labels:
                writer.writerow(
                    [clip.clip_id, f"{e.t0_s:.3f}", f"{e.t1_s:.3f}", manifest.class_names[e.class_id]]
                )
    for clip in manifest.clips:
        save_wav(clip.load_waveform(), out / "clips" / f"{clip.clip_id}.wav")
    return out


def load_dataset(in_dir, split: str = "eval", load_audio: bool = True) -> DatasetManifest:
    in_dir = Path(in_dir)
    class_names = []
    with open(in_dir / "classes.csv", newline="") as f:
        for row in csv.reader(f):
            if row:
                class_names.append(row[1])
    manifest = load_weak_csv(in_dir / "weak.csv", class_names)
    manifest.split = split
    clip_s = 10.0
    strong_path = in_dir / "strong.csv"
    strong = load_strong_csv(strong_path, class_names, clip_s) if strong_path.exists() else {}
    for clip in manifest.clips:
        clip.strong_labels = tuple(strong.get(clip.clip_id, ()))
        clip.audio_path = in_dir / "clips" / f"{clip.clip_id}.wav"
        if load_audio:
            clip.waveform = clip.load_waveform()
    return manifest


# --------------------------------------------------------------------------
# Feature cache
# --------------------------------------------------------------------------

CACHE_MAGIC = b"LMEL"
CACHE_VERSION = 1
_CACHE_HEADER = struct.Struct("<4sIIIIIIIddd")


def write_feature_cache(spec: LogMelSpectrogram, path) -> None:
    g = spec.geometry
    header = _CACHE_HEADER.pack(
        CACHE_MAGIC,
        CACHE_VERSION,
        spec.n_mels,
        spec.n_frames,
        g.sample_rate,
        g.window_len,
        g.hop,
        g.fft_len,
        g.f_min,
        g.f_max,
        g.log_floor,
    )
    with open(path, "wb") as f:
        f.write(header)
        f.write(spec.values.astype("<f4").tobytes())


def read_feature_cache(path) -> LogMelSpectrogram:
    data = Path(path).read_bytes()
    if len(data) < _CACHE_HEADER.size:
        raise CacheFormatError("file shorter than the cache header")
    (
        magic,
        version,
        n_mels,
        n_frames,
        sample_rate,
        window_len,
        hop,
        fft_len,
        f_min,
        f_max,
        log_floor,
    ) = _CACHE_HEADER.unpack_from(data, 0)
    if magic != CACHE_MAGIC:
        raise CacheFormatError(f"bad magic {magic!r}")
    if version != CACHE_VERSION:
        raise CacheFormatError(f"unsupported cache version {version}")
    expected = n_mels * n_frames * 4
    payload = data[_CACHE_HEADER.size :]
    if len(payload) != expected:
        raise CacheFormatError(
            f"payload is {len(payload)} bytes but header promises {expected}"
        )
    geometry = SpectrogramGeometry(
        sample_rate=sample_rate,
        window_len=window_len,
        hop=hop,
        fft_len=fft_len,
        n_mels=n_mels,
        f_min=f_min,
        f_max=f_max,
        log_floor=log_floor,
    )
    values = np.frombuffer(payload, dtype="<f4").reshape(n_mels, n_frames)
    return LogMelSpectrogram(values.copy(), geometry)
