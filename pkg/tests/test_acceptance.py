"""Acceptance gate: one test per criterion, at the stated tolerances.

The heavy desk grid (4 families x 3 seeds, trained and evaluated over the
full condition list) comes from the session fixture in conftest; the
terminal summary prints a pass/fail line per criterion.
"""

import math
import time

import numpy as np
import pytest

from aedbench import attack, bench, data, dsp, metrics, perturb, zoo
from aedbench.nn import Linear, Model, Sigmoid, grad_check, save_model
from aedbench.report import emit_report
from reference_values import AUC_DPRIME_PAIRS
from test_metrics import brute_force_ap, brute_force_auc
from test_nn import single_layer_models

GEOM = dsp.SpectrogramGeometry()


def test_criterion_1_dprime_auc_consistency():
    start = time.perf_counter()
    assert len(AUC_DPRIME_PAIRS) == 18
    for auc_value, printed in AUC_DPRIME_PAIRS:
        computed = math.sqrt(2.0) * metrics.probit(auc_value)
        assert abs(computed - printed) <= 0.02, (auc_value, printed, computed)
    assert time.perf_counter() - start < 1.0


def test_criterion_2_feature_shape():
    start = time.perf_counter()
    w = dsp.Waveform(np.sin(2 * np.pi * 440 * np.arange(160000) / 16000), 16000)
    feats = dsp.logmel(w, GEOM)
    assert feats.values.shape == (64, 400)
    assert time.perf_counter() - start < 1.0


def test_criterion_3_coverage_exactness():
    for d in (0.125, 0.25, 0.5, 1.0):
        mask = perturb.intermittent_frame_mask(d, GEOM, 400)
        assert int(mask.sum()) == 200, d
        x = dsp.LogMelSpectrogram(np.zeros((64, 400), dtype=np.float32), GEOM)
        assert perturb.concat_unmasked(x, d).values.shape == (64, 200)
    with pytest.warns(perturb.IntermittentCoverageWarning):
        mask = perturb.intermittent_frame_mask(2.0, GEOM, 400)
    assert int(mask.sum()) == 160  # exactly 40%


def test_criterion_4_gradient_correctness(desk_grid):
    start = time.perf_counter()
    y3 = np.array([1.0, 0.0, 1.0])
    for name, model, shape in single_layer_models():
        x = np.random.default_rng(50).normal(0.0, 1.0, shape)
        err = grad_check(model, x, y3, h=1e-5, n_coords=100, seed=13)
        assert err < 1e-4, (name, err)
    y10 = np.zeros(10)
    y10[[1, 4]] = 1.0
    rng = np.random.default_rng(51)
    for family in zoo.ModelFamily:
        model = desk_grid.models[(family.value, 0)]
        x = rng.normal(-8.0, 4.0, (64, 64))
        err = grad_check(model, x, y10, h=1e-5, n_coords=100, seed=17)
        assert err < 1e-4, (family.value, err)
    assert time.perf_counter() - start < 120.0


def test_criterion_5_attack_feasibility_and_oracle():
    start = time.perf_counter()
    # feasibility on a nonlinear model, both norms, several budgets
    from test_attack import small_conv_model

    model = small_conv_model(2)
    x = np.random.default_rng(0).normal(0, 1, (8, 10))
    y = np.array([1.0, 0.0])
    for norm in (math.inf, 2.0):
        for eps in (0.03, 0.1, 0.3):
            cfg = attack.AttackConfig(norm=norm, epsilon=eps, alpha=eps / 4, steps=9)
            delta = attack.pgd(model, x, y, cfg) - x
            measured = np.abs(delta).max() if norm == math.inf else np.linalg.norm(delta)
            assert measured <= eps * (1 + 1e-6)
            delta = attack.fgsm(model, x, y, eps) - x
            assert np.abs(delta).max() <= eps * (1 + 1e-6)

    # closed-form linear logistic oracle
    w = np.array([1.0, -2.0])
    lin = Linear(2, 1)
    lin.weight.value = w.reshape(2, 1)
    lin.bias.value = np.zeros(1)
    oracle = Model([lin, Sigmoid()], 1)
    y1 = np.array([1.0])

    adv = attack.fgsm(oracle, np.zeros(2), y1, 0.1)
    assert adv == pytest.approx([-0.1, 0.1], abs=1e-15)  # eps * sign((sigma(0)-1) * w)
    assert oracle.loss_value(np.zeros(2), y1) == pytest.approx(math.log(2.0), abs=1e-12)
    assert oracle.loss_value(adv, y1) == pytest.approx(float(np.logaddexp(0.0, 0.3)), abs=1e-12)

    cfg = attack.AttackConfig(norm=2.0, epsilon=0.1, alpha=0.01, steps=15)
    adv = attack.pgd(oracle, np.zeros(2), y1, cfg)
    analytic = -0.1 * w / np.linalg.norm(w)
    assert np.abs(adv - analytic).max() < 1e-6
    assert time.perf_counter() - start < 10.0


def test_criterion_6_metric_oracles():
    start = time.perf_counter()
    rng = np.random.default_rng(4242)
    for _ in range(1000):
        n = int(rng.integers(2, 51))
        scores = np.round(rng.uniform(size=n), 2)
        labels = (rng.uniform(size=n) < 0.5).astype(int)
        if labels.sum() == 0:
            labels[int(rng.integers(n))] = 1
        assert abs(
            metrics.average_precision(scores, labels)
            - brute_force_ap(scores.tolist(), labels.tolist())
        ) < 1e-12
        if 0 < labels.sum() < n:
            assert abs(
                metrics.auc(scores, labels) - brute_force_auc(scores.tolist(), labels.tolist())
            ) < 1e-12
    assert time.perf_counter() - start < 30.0


def test_criterion_7_qualitative_trend_reproduction(desk_grid):
    for family in zoo.ModelFamily:
        name = family.value
        clean = desk_grid.seed_mean(name, "clean")

        # (a) shorter masking intervals hurt more
        every_1s = desk_grid.seed_mean(name, "every_1s")
        every_125ms = desk_grid.seed_mean(name, "every_0.125s")
        assert clean > every_1s > every_125ms, (name, clean, every_1s, every_125ms)

        # (b) reassembling the surviving fragments recovers performance
        for d in ("1s", "0.5s", "0.25s", "0.125s"):
            concat = desk_grid.seed_mean(name, f"concat_{d}")
            masked = desk_grid.seed_mean(name, f"every_{d}")
            assert concat > masked, (name, d, concat, masked)

        # (c) white-box attacks hurt under both norms
        for cond in ("pgd_linf_0.1", "pgd_l2_0.1"):
            attacked = desk_grid.seed_mean(name, cond)
            assert attacked < clean, (name, cond, attacked, clean)

        # (d) masking the labeled event regions hurts but leaves signal
        strong = desk_grid.seed_mean(name, "mask_strong")
        assert 0.0 < strong < clean, (name, strong, clean)

    # runtime target: generate + train 4 families x 3 seeds + grid well
    # under the half-hour budget
    assert desk_grid.train_seconds < 1800.0


def test_criterion_8_determinism_across_jobs(tmp_path, desk_grid):
    manifest = data.generate_synthetic(data.SynthConfig(n_clips=12), 3000, split="eval")
    data.save_dataset(manifest, tmp_path / "ds")
    save_model(desk_grid.models[("resnet", 0)], tmp_path / "resnet.apnn")
    (tmp_path / "exp.cfg").write_text(
        "data = ds\n"
        "model = resnet.apnn\n"
        "[condition]\nkind = intermittent\nd_s = 1.0\n"
        "[condition]\nkind = intermittent\nd_s = 0.25\n"
        "[condition]\nkind = gaussian_spec\nsigma = 0.1\n"
        "[condition]\nkind = gaussian_wav\nsigma = 0.05\n"
        "[condition]\nkind = fgsm\neps = 0.1\n"
    )
    outputs = {}
    for jobs in (1, 4):
        cfg = bench.parse_experiment_config(
            (tmp_path / "exp.cfg").read_text(), base_dir=tmp_path
        )
        cfg.seed = 55
        cfg.jobs = jobs
        report = bench.run_experiment(cfg)
        out_dir = tmp_path / f"out_{jobs}"
        emit_report(report, None, out_dir, formats=("csv",))
        outputs[jobs] = (out_dir / "report.csv").read_bytes()
    assert outputs[1] == outputs[4]


def test_criterion_9_gibbs_leakage_demonstration():
    start = time.perf_counter()
    t = np.arange(160000) / 16000
    w = dsp.Waveform(0.5 * np.sin(2 * np.pi * 1000 * t), 16000)
    mask = perturb.MaskSpec.consecutive(2.0, 1.0)

    via_wav = dsp.logmel(perturb.waveform_silence_mask(w, mask), GEOM)
    via_feat = mask.apply_to_features(dsp.logmel(w, GEOM))
    fill = dsp.log_floor_value(GEOM)
    frames = perturb.seconds_to_frames(2.0, 3.0, GEOM, 400)
    boundary = frames.end - 1  # masked frame whose window reaches live audio

    assert np.all(via_feat.values[:, frames.start : frames.end] == fill)
    assert via_wav.values[:, boundary].max() > fill
    assert time.perf_counter() - start < 5.0


# ---------------------------------------------------------------------------
# Module invariants that need the trained grid
# ---------------------------------------------------------------------------


def test_desk_training_sanity_floor(desk_grid):
    """Every family reaches mAP > 0.9 on the synthetic eval split."""
    for (family, seed), _ in desk_grid.models.items():
        clean = desk_grid.reports[seed].cell(family, "clean").triple.map
        assert clean > 0.9, (family, seed, clean)


def test_monotone_harm_per_model(desk_grid):
    """PGD at the benchmark budget strictly lowers mAP for every model."""
    for (family, seed), _ in desk_grid.models.items():
        report = desk_grid.reports[seed]
        clean = report.cell(family, "clean").triple.map
        for cond in ("pgd_linf_0.1", "pgd_l2_0.1"):
            attacked = report.cell(family, cond).triple.map
            assert attacked < clean, (family, seed, cond, attacked, clean)


def test_attack_shifts_true_label_scores_down(desk_grid):
    """Mean score change under PGD, restricted to true-label cells, is negative."""
    report = desk_grid.reports[0]
    labels = report.labels.astype(bool)
    for family in zoo.ModelFamily:
        clean = report.cell(family.value, "clean").scores
        attacked = report.cell(family.value, "pgd_linf_0.1").scores
        shift = metrics.distribution_shift(
            metrics.PredictionSet(clean, report.labels),
            metrics.PredictionSet(attacked, report.labels),
        )
        assert shift.deltas.shape == (10,)
        true_label_delta = float((attacked - clean)[labels].mean())
        assert true_label_delta < 0.0, family.value


def test_robustness_summary_over_grid(desk_grid):
    summary = bench.robustness_summary(desk_grid.reports[0])
    for family in zoo.ModelFamily:
        r = summary.per_model[family.value]
        assert r.clean_map > 0.9
        if r.d_half is not None:
            assert 0.125 <= r.d_half <= 1.0
        else:
            assert r.d_half_bound is not None
        assert set(r.attack_map) == {"pgd_linf_0.1", "pgd_l2_0.1"}
