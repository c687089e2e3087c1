"""Command-line entry points: featurize, gen-data, train, run, report."""

from __future__ import annotations

import logging
import sys
from pathlib import Path

import click
import numpy as np

from .bench import (
    EvalReport,
    clips_from_manifest,
    parse_experiment_config,
    robustness_summary,
    run_experiment,
)
from .data import (
    SynthConfig,
    generate_synthetic,
    load_dataset,
    save_dataset,
    write_feature_cache,
)
from .dsp import SpectrogramGeometry, decode_wav, logmel, resample
from .nn import save_model, train
from .report import emit_report
from .zoo import FamilyConfig, ModelFamily, build_model, desk_train_config


@click.group()
@click.option("--seed", type=int, default=None, help="Global seed (default 0).")
@click.option("--jobs", type=int, default=None, help="Worker threads (default 1).")
@click.option("--verbose", is_flag=True, help="Chatty logging.")
@click.pass_context
def main(ctx, seed, jobs, verbose):
    """Robustness benchmark for audio event classifiers."""
    logging.basicConfig(level=logging.WARNING, format="%(message)s", stream=sys.stderr)
    logging.getLogger("aedbench").setLevel(logging.DEBUG if verbose else logging.INFO)
    ctx.obj = {"seed": seed, "jobs": jobs}


def _pick(*values, fallback=None):
    """First explicitly-set value wins: command flag, then global flag."""
    for value in values:
        if value is not None:
            return value
    return fallback


@main.command()
@click.argument("wav_dir", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--out", required=True, type=click.Path(path_type=Path), help="Cache directory.")
def featurize(wav_dir, out):
    """Extract logMel features from WAV files into .lmel cache files."""
    geometry = SpectrogramGeometry()
    out.mkdir(parents=True, exist_ok=True)
    count = 0
    for wav_path in sorted(wav_dir.glob("*.wav")):
        waveform = decode_wav(wav_path.read_bytes())
        waveform = resample(waveform, geometry.sample_rate)
        features = logmel(waveform, geometry)
        write_feature_cache(features, out / (wav_path.stem + ".lmel"))
        count += 1
    click.echo(f"featurized {count} clips -> {out}")


@main.command("gen-data")
@click.option("--seed", type=int, default=None, help="Override the global seed.")
@click.option("--clips", type=int, default=96, show_default=True, help="Training clips.")
@click.option("--eval-clips", type=int, default=64, show_default=True, help="Eval clips.")
@click.option("--out", required=True, type=click.Path(path_type=Path))
@click.pass_context
def gen_data(ctx, seed, clips, eval_clips, out):
    """Generate the synthetic 10-class dataset (train/ and eval/ splits)."""
    seed = _pick(seed, ctx.obj["seed"], fallback=0)
    for split, count, offset in (("train", clips, 0), ("eval", eval_clips, 1)):
        manifest = generate_synthetic(SynthConfig(n_clips=count), seed + offset, split=split)
        save_dataset(manifest, out / split)
        click.echo(f"wrote {count} {split} clips -> {out / split}")


@main.command("train")
@click.option(
    "--family",
    "family_name",
    required=True,
    type=click.Choice([f.value for f in ModelFamily]),
)
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path))
@click.option("--epochs", type=int, default=None, help="Default: the family's desk recipe.")
@click.option("--batch-size", type=int, default=None, help="Default: the family's desk recipe.")
@click.option("--lr", type=float, default=None, help="Default: the family's desk recipe.")
@click.option("--seed", type=int, default=None, help="Override the global seed.")
@click.pass_context
def train_cmd(ctx, family_name, data_dir, out_path, epochs, batch_size, lr, seed):
    """Train one desk-scale model family on a generated dataset."""
    seed = _pick(seed, ctx.obj["seed"], fallback=0)
    geometry = SpectrogramGeometry()
    manifest = load_dataset(data_dir / "train", split="train")
    clips = clips_from_manifest(manifest, geometry, keep_audio=False)
    dataset = [(clip.features.values.astype(np.float64), clip.labels) for clip in clips]
    family = ModelFamily.from_name(family_name)
    model = build_model(family, FamilyConfig(n_classes=manifest.n_classes), seed=seed)
    overrides = {
        key: value
        for key, value in (("epochs", epochs), ("batch_size", batch_size), ("lr", lr))
        if value is not None
    }
    history = train(model, dataset, desk_train_config(family, seed=seed, **overrides))
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out_path)
    click.echo(
        f"trained {family_name} ({model.n_parameters()} params): "
        f"loss {history[0]:.4f} -> {history[-1]:.4f}; saved {out_path}"
    )


@main.command("run")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path))
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--jobs", type=int, default=None, help="Override the config worker count.")
@click.pass_context
def run_cmd(ctx, config_path, out_dir, seed, jobs):
    """Run the (model x condition) grid and write all report artifacts."""
    cfg = parse_experiment_config(config_path.read_text(), base_dir=config_path.parent)
    cfg.seed = _pick(seed, ctx.obj["seed"], fallback=cfg.seed)
    cfg.jobs = _pick(jobs, ctx.obj["jobs"], fallback=cfg.jobs)
    report = run_experiment(cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(report.to_json())
    try:
        summary = robustness_summary(report)
    except ValueError:
        summary = None
    paths = emit_report(report, summary, out_dir, formats=("csv", "md", "svg"))
    click.echo(f"wrote {out_dir / 'report.json'}")
    for path in paths:
        click.echo(f"wrote {path}")


@main.command("report")
@click.option("--in", "in_dir", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--formats", default="csv,md,svg", show_default=True, help="Comma-separated list.")
def report_cmd(in_dir, formats):
    """Re-emit report artifacts from a previous run's report.json."""
    report = EvalReport.from_json((in_dir / "report.json").read_text())
    wanted = tuple(s.strip() for s in formats.split(",") if s.strip())
    try:
        summary = robustness_summary(report)
    except ValueError:
        summary = None
    for path in emit_report(report, summary, in_dir, formats=wanted):
        click.echo(f"wrote {path}")


if __name__ == "__main__":
    main()
