"""Experiment runner: a grid of (model x perturbation condition).

Per-clip randomness is pre-seeded from sha256(experiment seed, clip id,
condition name), and per-clip results are reduced in clip order, so the
report is byte-identical at any worker count.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .attack import AttackConfig, fgsm, pgd
from .data import DatasetManifest, load_dataset
from .dsp import LogMelSpectrogram, SpectrogramGeometry, Waveform, logmel, resample
from .metrics import MetricTriple, PredictionSet, evaluate_set
from .nn import Model, load_model
from .perturb import (
    NoiseSpec,
    concat_unmasked,
    consecutive_mask,
    gaussian_spectrogram,
    gaussian_waveform,
    intermittent_mask,
    strong_label_mask,
)

__all__ = [
    "ConditionSpec",
    "ConfigError",
    "ExperimentConfig",
    "EvalClip",
    "CellResult",
    "EvalReport",
    "ModelRobustness",
    "RobustnessSummary",
    "parse_experiment_config",
    "clips_from_manifest",
    "evaluate_grid",
    "run_experiment",
    "robustness_summary",
    "derive_seed",
]

log = logging.getLogger(__name__)

CONDITION_KINDS = (
    "clean",
    "consecutive",
    "intermittent",
    "concat",
    "strong_label",
    "gaussian_spec",
    "gaussian_wav",
    "fgsm",
    "pgd",
)


def _fmt_num(v: float) -> str:
    return f"{v:g}"


@dataclass(frozen=True)
class ConditionSpec:
    """One named perturbation condition of the evaluation grid."""

    name: str
    kind: str
    start_s: float | None = None
    duration_s: float | None = None
    d_s: float | None = None
    sigma: float | None = None
    noise_seed: int = 0
    eps: float | None = None
    alpha: float | None = None
    steps: int = 20
    norm: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in CONDITION_KINDS:
            raise ValueError(f"unknown condition kind {self.kind!r}")

    @classmethod
    def clean(cls) -> "ConditionSpec":
        return cls(name="clean", kind="clean")

    @classmethod
    def consecutive(cls, start_s: float, duration_s: float, name: str | None = None):
        name = name or f"block_{_fmt_num(start_s)}s_{_fmt_num(duration_s)}s"
        return cls(name=name, kind="consecutive", start_s=start_s, duration_s=duration_s)

    @classmethod
    def intermittent(cls, d_s: float, name: str | None = None):
        return cls(name=name or f"every_{_fmt_num(d_s)}s", kind="intermittent", d_s=d_s)

    @classmethod
    def concat(cls, d_s: float, name: str | None = None):
        return cls(name=name or f"concat_{_fmt_num(d_s)}s", kind="concat", d_s=d_s)

    @classmethod
    def strong_label(cls, name: str = "mask_strong"):
        return cls(name=name, kind="strong_label")

    @classmethod
    def gaussian_spec(cls, sigma: float, noise_seed: int = 0, name: str | None = None):
        name = name or f"noise2d_{_fmt_num(sigma)}"
        return cls(name=name, kind="gaussian_spec", sigma=sigma, noise_seed=noise_seed)

    @classmethod
    def gaussian_wav(cls, sigma: float, noise_seed: int = 0, name: str | None = None):
        name = name or f"noise1d_{_fmt_num(sigma)}"
        return cls(name=name, kind="gaussian_wav", sigma=sigma, noise_seed=noise_seed)

    @classmethod
    def fgsm_attack(cls, eps: float, name: str | None = None):
        return cls(name=name or f"fgsm_{_fmt_num(eps)}", kind="fgsm", eps=eps)

    @classmethod
    def pgd_attack(
        cls, eps: float, alpha: float, steps: int = 20, norm: str = "linf", name: str | None = None
    ):
        name = name or f"pgd_{norm}_{_fmt_num(eps)}"
        return cls(name=name, kind="pgd", eps=eps, alpha=alpha, steps=steps, norm=norm)

    def to_dict(self) -> dict:
        out = {"name": self.name, "kind": self.kind}
        for key in ("start_s", "duration_s", "d_s", "sigma", "eps", "alpha", "norm"):
            value = getattr(self, key)
            if value is not None:
                out[key] = value
        if self.kind in ("gaussian_spec", "gaussian_wav"):
            out["noise_seed"] = self.noise_seed
        if self.kind == "pgd":
            out["steps"] = self.steps
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ConditionSpec":
        return cls(**d)


class ConfigError(ValueError):
    """Experiment config file problem (unknown key, missing value, ...)."""


@dataclass
class ExperimentConfig:
    data_dir: Path
    checkpoints: list[Path]
    conditions: list[ConditionSpec]
    seed: int = 0
    jobs: int = 1
    out_dir: Path | None = None


_TOP_KEYS = {"data", "model", "seed", "jobs", "out"}
_CONDITION_KEYS = {
    "clean": set(),
    "consecutive": {"start_s", "duration_s"},
    "intermittent": {"d_s"},
    "concat": {"d_s"},
    "strong_label": set(),
    "gaussian_spec": {"sigma", "noise_seed", "sigma_is_variance"},
    "gaussian_wav": {"sigma", "noise_seed", "sigma_is_variance"},
    "fgsm": {"eps"},
    "pgd": {"eps", "alpha", "steps", "norm"},
}
_REQUIRED_CONDITION_KEYS = {
    "clean": set(),
    "consecutive": {"start_s", "duration_s"},
    "intermittent": {"d_s"},
    "concat": {"d_s"},
    "strong_label": set(),
    "gaussian_spec": {"sigma"},
    "gaussian_wav": {"sigma"},
    "fgsm": {"eps"},
    "pgd": {"eps", "alpha", "norm"},
}


def _parse_condition_block(entries: dict[str, str], line_no: int) -> ConditionSpec:
    if "kind" not in entries:
        raise ConfigError(f"line {line_no}: [condition] block lacks a 'kind'")
    kind = entries.pop("kind")
    if kind not in CONDITION_KINDS:
        raise ConfigError(f"line {line_no}: unknown condition kind {kind!r}")
    name = entries.pop("name", None)
    allowed = _CONDITION_KEYS[kind]
    unknown = set(entries) - allowed
    if unknown:
        raise ConfigError(
            f"line {line_no}: unknown keys {sorted(unknown)} for condition kind {kind!r}"
        )
    missing = _REQUIRED_CONDITION_KEYS[kind] - set(entries)
    if missing:
        raise ConfigError(f"line {line_no}: condition kind {kind!r} needs keys {sorted(missing)}")

    def num(key):
        return float(entries[key]) if key in entries else None

    if kind == "clean":
        return ConditionSpec(name=name or "clean", kind="clean")
    if kind == "consecutive":
        return ConditionSpec.consecutive(num("start_s"), num("duration_s"), name)
    if kind == "intermittent":
        return ConditionSpec.intermittent(num("d_s"), name)
    if kind == "concat":
        return ConditionSpec.concat(num("d_s"), name)
    if kind == "strong_label":
        return ConditionSpec.strong_label(name or "mask_strong")
    if kind in ("gaussian_spec", "gaussian_wav"):
        sigma = num("sigma")
        if entries.get("sigma_is_variance", "false").lower() in ("true", "1", "yes"):
            sigma = math.sqrt(sigma)
        seed = int(entries.get("noise_seed", "0"))
        maker = ConditionSpec.gaussian_spec if kind == "gaussian_spec" else ConditionSpec.gaussian_wav
        return maker(sigma, seed, name)
    if kind == "fgsm":
        return ConditionSpec.fgsm_attack(num("eps"), name)
    norm = entries.get("norm", "linf")
    if norm not in ("linf", "l2"):
        raise ConfigError(f"line {line_no}: pgd norm must be linf or l2, got {norm!r}")
    return ConditionSpec.pgd_attack(
        num("eps"), num("alpha"), int(entries.get("steps", "20")), norm, name
    )


def parse_experiment_config(text: str, base_dir: Path | None = None) -> ExperimentConfig:
    """Parse the flat key/value + repeated [condition] block format."""
    base = Path(base_dir) if base_dir else Path(".")
    top: dict[str, str] = {}
    models: list[str] = []
    blocks: list[tuple[int, dict[str, str]]] = []
    current: dict[str, str] | None = None
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line == "[condition]":
            current = {}
            blocks.append((line_no, current))
            continue
        if line.startswith("["):
            raise ConfigError(f"line {line_no}: unknown section {line!r}")
        if "=" not in line:
            raise ConfigError(f"line {line_no}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if current is not None:
            if key in current:
                raise ConfigError(f"line {line_no}: duplicate key {key!r} in condition block")
            current[key] = value
        else:
            if key not in _TOP_KEYS:
                raise ConfigError(f"line {line_no}: unknown key {key!r}")
            if key == "model":
                models.append(value)
            elif key in top:
                raise ConfigError(f"line {line_no}: duplicate key {key!r}")
            else:
                top[key] = value

    if "data" not in top:
        raise ConfigError("config lacks a 'data' entry")
    if not models:
        raise ConfigError("config lists no 'model' checkpoints")
    conditions = [_parse_condition_block(dict(entries), ln) for ln, entries in blocks]
    if not any(c.kind == "clean" for c in conditions):
        conditions.insert(0, ConditionSpec.clean())
    names = [c.name for c in conditions]
    if len(set(names)) != len(names):
        raise ConfigError(f"condition names are not unique: {names}")
    return ExperimentConfig(
        data_dir=base / top["data"],
        checkpoints=[base / m for m in models],
        conditions=conditions,
        seed=int(top.get("seed", "0")),
        jobs=int(top.get("jobs", "1")),
        out_dir=(base / top["out"]) if "out" in top else None,
    )


def derive_seed(experiment_seed: int, clip_id: str, condition_name: str, extra: int = 0) -> int:
    """Order-independent per-clip seed."""
    digest = hashlib.sha256(
        f"{experiment_seed}:{clip_id}:{condition_name}:{extra}".encode()
    ).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass
class EvalClip:
    clip_id: str
    features: LogMelSpectrogram
    labels: np.ndarray
    waveform: Waveform | None = None
    events: tuple[tuple[float, float], ...] = ()


def clips_from_manifest(
    manifest: DatasetManifest, geometry: SpectrogramGeometry, keep_audio: bool = True
) -> list[EvalClip]:
    """Featurize a manifest once; strong events become plain time intervals."""
    clips = []
    for record in manifest.clips:
        w = record.load_waveform()
        if w.sample_rate != geometry.sample_rate:
            w = resample(w, geometry.sample_rate)
        clips.append(
            EvalClip(
                clip_id=record.clip_id,
                features=logmel(w, geometry),
                labels=manifest.label_vector(record),
                waveform=w if keep_audio else None,
                events=tuple((e.t0_s, e.t1_s) for e in record.strong_labels),
            )
        )
    return clips


def _clip_scores(cond: ConditionSpec, clip: EvalClip, model: Model, seed: int) -> np.ndarray:
    g = clip.features.geometry
    if cond.kind == "clean":
        feats = clip.features
    elif cond.kind == "consecutive":
        feats = consecutive_mask(clip.features, cond.start_s, cond.duration_s)
    elif cond.kind == "intermittent":
        feats = intermittent_mask(clip.features, cond.d_s)
    elif cond.kind == "concat":
        feats = concat_unmasked(clip.features, cond.d_s)
    elif cond.kind == "strong_label":
        feats = strong_label_mask(clip.features, clip.events)
    elif cond.kind == "gaussian_spec":
        spec = NoiseSpec(cond.sigma, "spectrogram", derive_seed(seed, clip.clip_id, cond.name, cond.noise_seed))
        feats = gaussian_spectrogram(clip.features, spec)
    elif cond.kind == "gaussian_wav":
        if clip.waveform is None:
            raise ValueError(f"clip {clip.clip_id!r} has no audio for waveform noise")
        spec = NoiseSpec(cond.sigma, "waveform", derive_seed(seed, clip.clip_id, cond.name, cond.noise_seed))
        feats = logmel(gaussian_waveform(clip.waveform, spec), g)
    elif cond.kind == "fgsm":
        x = clip.features.values.astype(np.float64)
        return model.forward(fgsm(model, x, clip.labels, cond.eps))
    elif cond.kind == "pgd":
        x = clip.features.values.astype(np.float64)
        attack_cfg = AttackConfig.from_norm_name(
            cond.norm, epsilon=cond.eps, alpha=cond.alpha, steps=cond.steps
        )
        return model.forward(pgd(model, x, clip.labels, attack_cfg))
    else:  # pragma: no cover - guarded by ConditionSpec validation
        raise ValueError(f"unknown condition kind {cond.kind!r}")
    return model.forward(feats.values.astype(np.float64))


@dataclass
class CellResult:
    model: str
    condition: str
    triple: MetricTriple | None = None
    per_class_ap: list | None = None
    scores: np.ndarray | None = None
    error: str | None = None


@dataclass
class EvalReport:
    model_names: list[str]
    conditions: list[ConditionSpec]
    class_names: list[str]
    clip_ids: list[str]
    labels: np.ndarray
    cells: dict[tuple[str, str], CellResult]
    provenance: dict = field(default_factory=dict)

    @property
    def condition_names(self) -> list[str]:
        return [c.name for c in self.conditions]

    def cell(self, model: str, condition: str) -> CellResult:
        return self.cells[(model, condition)]

    def to_json(self) -> str:
        payload = {
            "model_names": self.model_names,
            "conditions": [c.to_dict() for c in self.conditions],
            "class_names": self.class_names,
            "clip_ids": self.clip_ids,
            "labels": self.labels.astype(int).tolist(),
            "cells": [
                {
                    "model": cell.model,
                    "condition": cell.condition,
                    "triple": None
                    if cell.triple is None
                    else {"map": cell.triple.map, "auc": cell.triple.auc, "d_prime": cell.triple.d_prime},
                    "per_class_ap": cell.per_class_ap,
                    "scores": None if cell.scores is None else cell.scores.tolist(),
                    "error": cell.error,
                }
                for cell in (self.cells[(m, c.name)] for m in self.model_names for c in self.conditions)
            ],
            "provenance": self.provenance,
        }
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        payload = json.loads(text)
        conditions = [ConditionSpec.from_dict(d) for d in payload["conditions"]]
        cells = {}
        for entry in payload["cells"]:
            triple = entry["triple"]
            cells[(entry["model"], entry["condition"])] = CellResult(
                model=entry["model"],
                condition=entry["condition"],
                triple=None if triple is None else MetricTriple(triple["map"], triple["auc"], triple["d_prime"]),
                per_class_ap=entry["per_class_ap"],
                scores=None if entry["scores"] is None else np.asarray(entry["scores"]),
                error=entry["error"],
            )
        return cls(
            model_names=payload["model_names"],
            conditions=conditions,
            class_names=payload["class_names"],
            clip_ids=payload["clip_ids"],
            labels=np.asarray(payload["labels"]),
            cells=cells,
            provenance=payload.get("provenance", {}),
        )


def evaluate_grid(
    models: list[tuple[str, Model]],
    clips: list[EvalClip],
    conditions: list[ConditionSpec],
    seed: int = 0,
    jobs: int = 1,
    provenance: dict | None = None,
    class_names: list[str] | None = None,
) -> EvalReport:
    """Score every (model, condition) cell over the clips and compute metrics."""
    if not models or not clips:
        raise ValueError("need at least one model and one clip")
    conditions = list(conditions)
    if not any(c.kind == "clean" for c in conditions):
        conditions.insert(0, ConditionSpec.clean())
    names = [c.name for c in conditions]
    if len(set(names)) != len(names):
        raise ValueError(f"condition names are not unique: {names}")

    labels = np.stack([clip.labels for clip in clips])
    cells: dict[tuple[str, str], CellResult] = {}
    log.info(
        "evaluating %d models x %d conditions over %d clips (jobs=%d)",
        len(models), len(conditions), len(clips), jobs,
    )
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        for model_name, model in models:
            for cond in conditions:
                cell = CellResult(model=model_name, condition=cond.name)
                try:
                    rows = list(
                        pool.map(lambda clip: _clip_scores(cond, clip, model, seed), clips)
                    )
                    scores = np.stack(rows)
                    result = evaluate_set(PredictionSet(scores, labels))
                    cell.triple = result.triple
                    cell.per_class_ap = [
                        None if math.isnan(v) else float(v) for v in result.per_class_ap
                    ]
                    cell.scores = scores
                    log.debug("%s / %s: mAP %.3f", model_name, cond.name, result.triple.map)
                except Exception as exc:  # cell failures are recorded, the run continues
                    cell.error = f"{type(exc).__name__}: {exc}"
                    log.debug("%s / %s failed: %s", model_name, cond.name, cell.error)
                cells[(model_name, cond.name)] = cell

    return EvalReport(
        model_names=[name for name, _ in models],
        conditions=conditions,
        class_names=list(class_names or []),
        clip_ids=[c.clip_id for c in clips],
        labels=labels,
        cells=cells,
        provenance=provenance or {},
    )


def run_experiment(cfg: ExperimentConfig, geometry: SpectrogramGeometry | None = None) -> EvalReport:
    """Load data and checkpoints, run the grid, attach provenance."""
    geometry = geometry or SpectrogramGeometry()
    missing = [str(p) for p in [cfg.data_dir, *cfg.checkpoints] if not Path(p).exists()]
    if missing:
        raise ConfigError(f"missing inputs: {missing}")
    manifest = load_dataset(cfg.data_dir, split="eval")
    needs_audio = any(c.kind == "gaussian_wav" for c in cfg.conditions)
    clips = clips_from_manifest(manifest, geometry, keep_audio=needs_audio)
    models = []
    for path in cfg.checkpoints:
        model = load_model(path)
        name = Path(path).stem
        models.append((name, model))
    provenance = {
        "seed": cfg.seed,
        "jobs": cfg.jobs,
        "toolkit_version": __version__,
        "data_dir": str(cfg.data_dir),
        "checkpoints": [str(p) for p in cfg.checkpoints],
        "config_hash": hashlib.sha256(
            json.dumps(
                [c.to_dict() for c in cfg.conditions], sort_keys=True
            ).encode()
        ).hexdigest(),
    }
    return evaluate_grid(
        models,
        clips,
        cfg.conditions,
        seed=cfg.seed,
        jobs=cfg.jobs,
        provenance=provenance,
        class_names=manifest.class_names,
    )


@dataclass
class ModelRobustness:
    clean_map: float
    d_half: float | None
    d_half_bound: str | None
    attack_map: dict[str, float]

    def to_dict(self) -> dict:
        return {
            "clean_map": self.clean_map,
            "d_half": self.d_half,
            "d_half_bound": self.d_half_bound,
            "attack_map": self.attack_map,
        }


@dataclass
class RobustnessSummary:
    per_model: dict[str, ModelRobustness]

    def to_json(self) -> str:
        return json.dumps(
            {name: r.to_dict() for name, r in self.per_model.items()}, sort_keys=True, indent=2
        )


def robustness_summary(report: EvalReport, d_grid: list[float] | None = None) -> RobustnessSummary:
    """Per model: clean mAP, the interval that halves it, and attack mAPs.

    d_half interpolates mAP linearly against log2(d) between the bracketing
    grid points (scanned from the largest d).  When no bracket exists the
    bound is censored: "< min d" if mAP stayed above half-clean everywhere,
    "> max d" if it was already below at the largest interval.
    """
    inter = [
        (c.d_s, c.name)
        for c in report.conditions
        if c.kind == "intermittent" and (d_grid is None or c.d_s in d_grid)
    ]
    if len(inter) < 2:
        raise ValueError("need at least two intermittent conditions for a summary")
    inter.sort(key=lambda item: -item[0])
    clean_name = next(c.name for c in report.conditions if c.kind == "clean")

    per_model = {}
    for model in report.model_names:
        clean_cell = report.cell(model, clean_name)
        if clean_cell.triple is None:
            continue
        clean_map = clean_cell.triple.map
        target = 0.5 * clean_map
        points = []
        for d, name in inter:
            cell = report.cell(model, name)
            if cell.triple is not None:
                points.append((d, cell.triple.map))
        d_half = None
        bound = None
        for (d_hi, m_hi), (d_lo, m_lo) in zip(points, points[1:]):
            if (m_hi - target) * (m_lo - target) <= 0:
                if m_hi == m_lo:
                    d_half = d_hi
                else:
                    frac = (m_hi - target) / (m_hi - m_lo)
                    d_half = 2.0 ** (math.log2(d_hi) + frac * (math.log2(d_lo) - math.log2(d_hi)))
                break
        if d_half is None:
            if all(m > target for _, m in points):
                bound = f"< {_fmt_num(points[-1][0])} s"
            else:
                bound = f"> {_fmt_num(points[0][0])} s"
        attack_map = {}
        for cond in report.conditions:
            if cond.kind in ("fgsm", "pgd"):
                cell = report.cell(model, cond.name)
                if cell.triple is not None:
                    attack_map[cond.name] = cell.triple.map
        per_model[model] = ModelRobustness(clean_map, d_half, bound, attack_map)
    return RobustnessSummary(per_model)
