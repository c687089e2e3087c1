"""Shared fixtures: the trained desk-scale model grid, and a terminal
summary that prints one pass/fail line per acceptance criterion."""

import re
import time
from dataclasses import dataclass

import numpy as np
import pytest

from aedbench import bench, data, dsp, zoo
from aedbench.bench import ConditionSpec
from aedbench.nn import Model, train

TRAIN_CLIPS = 96
EVAL_CLIPS = 72
TRAIN_SEED = 1000
EVAL_SEED = 2000
MODEL_SEEDS = (0, 1, 2)

GRID_CONDITIONS = [
    ConditionSpec.clean(),
    ConditionSpec.intermittent(1.0),
    ConditionSpec.intermittent(0.5),
    ConditionSpec.intermittent(0.25),
    ConditionSpec.intermittent(0.125),
    ConditionSpec.concat(1.0),
    ConditionSpec.concat(0.5),
    ConditionSpec.concat(0.25),
    ConditionSpec.concat(0.125),
    ConditionSpec.strong_label(),
    ConditionSpec.pgd_attack(0.1, 0.01, 20, "linf"),
    ConditionSpec.pgd_attack(0.1, 0.01, 20, "l2"),
]


@dataclass
class DeskGrid:
    """Everything the trend/determinism criteria need, built once per session."""

    geometry: dsp.SpectrogramGeometry
    eval_clips: list
    train_dataset: list
    models: dict  # (family_value, seed) -> Model
    reports: dict  # seed -> EvalReport over all four families
    train_seconds: float

    def seed_mean(self, family: str, condition: str) -> float:
        values = [self.reports[s].cell(family, condition).triple.map for s in MODEL_SEEDS]
        return float(np.mean(values))


@pytest.fixture(scope="session")
def desk_grid():
    """Train all four families x 3 seeds and run the full condition grid."""
    t0 = time.perf_counter()
    geometry = dsp.SpectrogramGeometry()
    train_man = data.generate_synthetic(
        data.SynthConfig(n_clips=TRAIN_CLIPS), TRAIN_SEED, split="train"
    )
    eval_man = data.generate_synthetic(
        data.SynthConfig(n_clips=EVAL_CLIPS), EVAL_SEED, split="eval"
    )
    train_clips = bench.clips_from_manifest(train_man, geometry, keep_audio=False)
    eval_clips = bench.clips_from_manifest(eval_man, geometry, keep_audio=False)
    dataset = [(c.features.values.astype(np.float64), c.labels) for c in train_clips]

    models: dict[tuple[str, int], Model] = {}
    reports = {}
    for seed in MODEL_SEEDS:
        row = []
        for family in zoo.ModelFamily:
            model = zoo.build_model(family, seed=seed)
            train(model, dataset, zoo.desk_train_config(family, seed=seed))
            models[(family.value, seed)] = model
            row.append((family.value, model))
        reports[seed] = bench.evaluate_grid(
            row, eval_clips, GRID_CONDITIONS, seed=777, jobs=2,
            class_names=eval_man.class_names,
        )
    return DeskGrid(
        geometry=geometry,
        eval_clips=eval_clips,
        train_dataset=dataset,
        models=models,
        reports=reports,
        train_seconds=time.perf_counter() - t0,
    )


# ---------------------------------------------------------------------------
# Acceptance reporting: one line per criterion in the terminal summary.
# ---------------------------------------------------------------------------

_CRITERION_RESULTS: dict[int, tuple[str, str]] = {}
_CRITERION_RE = re.compile(r"test_criterion_(\d+)")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    match = _CRITERION_RE.search(item.name)
    if match and rep.when == "call":
        _CRITERION_RESULTS[int(match.group(1))] = (
            "PASS" if rep.passed else "FAIL",
            item.name,
        )


def pytest_terminal_summary(terminalreporter):
    if not _CRITERION_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for number in sorted(_CRITERION_RESULTS):
        status, name = _CRITERION_RESULTS[number]
        terminalreporter.write_line(f"[{status}] criterion {number}: {name}")
