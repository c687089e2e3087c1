import csv

import numpy as np
import pytest
from click.testing import CliRunner

from aedbench import data, dsp
from aedbench.cli import main


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """gen-data -> featurize -> train one tiny checkpoint, shared across tests."""
    root = tmp_path_factory.mktemp("ws")
    runner = CliRunner()

    result = runner.invoke(
        main, ["gen-data", "--seed", "5", "--clips", "6", "--eval-clips", "5", "--out", str(root / "ds")]
    )
    assert result.exit_code == 0, result.output

    result = runner.invoke(
        main, ["featurize", str(root / "ds" / "eval" / "clips"), "--out", str(root / "cache")]
    )
    assert result.exit_code == 0, result.output

    result = runner.invoke(
        main,
        [
            "train",
            "--family", "resnet",
            "--data", str(root / "ds"),
            "--out", str(root / "ckpts" / "resnet.apnn"),
            "--epochs", "2",
            "--seed", "1",
        ],
    )
    assert result.exit_code == 0, result.output
    return root


def test_gen_data_layout(workspace):
    for split in ("train", "eval"):
        base = workspace / "ds" / split
        assert (base / "classes.csv").exists()
        assert (base / "weak.csv").exists()
        assert (base / "strong.csv").exists()
        assert list((base / "clips").glob("*.wav"))


def test_featurize_cache_files(workspace):
    caches = sorted((workspace / "cache").glob("*.lmel"))
    assert len(caches) == 5
    feats = data.read_feature_cache(caches[0])
    assert feats.values.shape == (64, 400)
    # cache contents match featurizing the wav directly
    wav = workspace / "ds" / "eval" / "clips" / (caches[0].stem + ".wav")
    direct = dsp.logmel(dsp.decode_wav(wav.read_bytes()), dsp.SpectrogramGeometry())
    assert np.array_equal(feats.values, direct.values)


def test_run_and_report(workspace):
    runner = CliRunner()
    config = workspace / "exp.cfg"
    config.write_text(
        "data = ds/eval\n"
        "model = ckpts/resnet.apnn\n"
        "seed = 3\n"
        "[condition]\n"
        "kind = intermittent\n"
        "d_s = 1.0\n"
        "[condition]\n"
        "kind = intermittent\n"
        "d_s = 0.5\n"
        "[condition]\n"
        "kind = gaussian_spec\n"
        "sigma = 0.1\n"
    )
    out = workspace / "out"
    result = runner.invoke(main, ["run", "--config", str(config), "--out", str(out), "--jobs", "2"])
    assert result.exit_code == 0, result.output
    assert (out / "report.json").exists()
    assert (out / "report.md").exists()
    assert (out / "summary.json").exists()
    assert (out / "plots" / "map_vs_d.svg").exists()

    with open(out / "report.csv") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 4  # 1 model x (3 conditions + clean)
    assert rows[0]["condition"] == "clean"
    assert 0.0 <= float(rows[0]["mAP"]) <= 1.0

    # re-emitting from report.json reproduces the csv bytes
    before = (out / "report.csv").read_bytes()
    result = runner.invoke(main, ["report", "--in", str(out), "--formats", "csv"])
    assert result.exit_code == 0, result.output
    assert (out / "report.csv").read_bytes() == before


def test_run_rejects_unknown_config_key(workspace):
    runner = CliRunner()
    config = workspace / "bad.cfg"
    config.write_text("data = ds/eval\nmodel = ckpts/resnet.apnn\ntypo_key = 1\n")
    result = runner.invoke(main, ["run", "--config", str(config), "--out", str(workspace / "x")])
    assert result.exit_code != 0
    assert "typo_key" in str(result.exception)


def test_global_seed_flows_into_subcommands(tmp_path):
    runner = CliRunner()
    a = runner.invoke(
        main, ["--seed", "7", "gen-data", "--clips", "2", "--eval-clips", "1", "--out", str(tmp_path / "a")]
    )
    b = runner.invoke(
        main, ["gen-data", "--seed", "7", "--clips", "2", "--eval-clips", "1", "--out", str(tmp_path / "b")]
    )
    assert a.exit_code == 0 and b.exit_code == 0
    wav_a = (tmp_path / "a" / "train" / "clips" / "train-0000.wav").read_bytes()
    wav_b = (tmp_path / "b" / "train" / "clips" / "train-0000.wav").read_bytes()
    assert wav_a == wav_b


def test_train_rejects_unknown_family(workspace):
    runner = CliRunner()
    result = runner.invoke(
        main, ["train", "--family", "mlp", "--data", str(workspace / "ds"), "--out", "x.apnn"]
    )
    assert result.exit_code != 0
