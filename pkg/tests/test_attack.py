import math

import numpy as np
import pytest

from aedbench import attack
from aedbench.nn import (
    AddChannelDim,
    Conv2D,
    GlobalMeanPool,
    Linear,
    Model,
    ReLU,
    Sigmoid,
)


def logistic_model(w=(1.0, -2.0), b=0.0):
    lin = Linear(len(w), 1)
    lin.weight.value = np.array(w, dtype=np.float64).reshape(-1, 1)
    lin.bias.value = np.array([b])
    return Model([lin, Sigmoid()], 1)


def small_conv_model(seed=0):
    r = np.random.default_rng(seed)
    layers = [
        AddChannelDim(),
        Conv2D(1, 3, 3, 1, 1, r),
        ReLU(),
        GlobalMeanPool(),
        Linear(3, 2, r),
        Sigmoid(),
    ]
    return Model(layers, 2)


class TestProjectLp:
    def test_linf_clamp(self):
        out = attack.project_lp(np.array([0.2, -0.05]), math.inf, 0.1)
        assert np.array_equal(out, [0.1, -0.05])

    def test_l2_radial_scaling(self):
        delta = np.array([0.12, -0.16])  # norm 0.2
        out = attack.project_lp(delta, 2.0, 0.1)
        assert np.linalg.norm(out) == pytest.approx(0.1, abs=1e-15)
        assert np.allclose(out / np.linalg.norm(out), delta / np.linalg.norm(delta))

    def test_inside_ball_unchanged(self):
        delta = np.array([0.01, 0.02])
        assert np.array_equal(attack.project_lp(delta, 2.0, 0.1), delta)
        assert np.array_equal(attack.project_lp(delta, math.inf, 0.1), delta)

    def test_bad_args(self):
        with pytest.raises(ValueError):
            attack.project_lp(np.zeros(2), 1.0, 0.1)
        with pytest.raises(ValueError):
            attack.project_lp(np.zeros(2), 2.0, 0.0)


class TestFgsm:
    def test_closed_form_logistic_example(self):
        # grad = (sigma(0) - 1) * w = (-0.5, 1.0); the sign step moves each
        # coordinate by exactly eps
        m = logistic_model()
        x = np.zeros(2)
        y = np.array([1.0])
        adv = attack.fgsm(m, x, y, 0.1)
        assert adv == pytest.approx([-0.1, 0.1], abs=1e-15)
        logit = float(adv @ m.parameters()[0].value)
        assert logit == pytest.approx(-0.3, abs=1e-12)
        loss_before = m.loss_value(x, y)
        loss_after = m.loss_value(adv, y)
        assert loss_before == pytest.approx(math.log(2.0), abs=1e-12)
        assert loss_after == pytest.approx(np.logaddexp(0.0, 0.3), abs=1e-12)
        assert loss_after > loss_before

    def test_step_magnitude_where_gradient_nonzero(self):
        m = small_conv_model()
        x = np.random.default_rng(1).normal(0, 1, (8, 10))
        _, g = m.loss_and_input_gradient(x, np.array([1.0, 0.0]))
        adv = attack.fgsm(m, x, np.array([1.0, 0.0]), 0.05)
        moved = np.abs(adv - x)
        assert np.allclose(moved[g != 0], 0.05)
        assert np.all(moved[g == 0] == 0.0)

    def test_zero_gradient_leaves_input(self):
        m = logistic_model(w=(0.0, 0.0), b=1.0)
        x = np.array([0.4, -0.2])
        assert np.array_equal(attack.fgsm(m, x, np.array([1.0]), 0.1), x)


class TestPgd:
    @pytest.mark.parametrize("norm", [math.inf, 2.0])
    def test_feasibility(self, norm):
        m = small_conv_model(3)
        x = np.random.default_rng(2).normal(0, 1, (8, 10))
        cfg = attack.AttackConfig(norm=norm, epsilon=0.1, alpha=0.03, steps=12)
        adv = attack.pgd(m, x, np.array([1.0, 1.0]), cfg)
        delta = adv - x
        measured = np.abs(delta).max() if norm == math.inf else np.linalg.norm(delta)
        assert measured <= 0.1 * (1 + 1e-6)

    def test_single_linf_step_reduces_to_fgsm_bitwise(self):
        m = small_conv_model(4)
        x = np.random.default_rng(3).normal(0, 1, (8, 10))
        y = np.array([0.0, 1.0])
        cfg = attack.AttackConfig(norm=math.inf, epsilon=0.07, alpha=0.07, steps=1)
        assert np.array_equal(attack.pgd(m, x, y, cfg), attack.fgsm(m, x, y, 0.07))

    def test_l2_converges_to_analytic_maximizer(self):
        # for a linear logit with label 1, the in-ball loss maximizer is
        # -eps * w / ||w||
        w = np.array([1.0, -2.0])
        m = logistic_model(w)
        x = np.zeros(2)
        eps, alpha = 0.1, 0.01
        steps = math.ceil(eps / alpha) + 5
        cfg = attack.AttackConfig(norm=2.0, epsilon=eps, alpha=alpha, steps=steps)
        adv = attack.pgd(m, x, np.array([1.0]), cfg)
        expected = -eps * w / np.linalg.norm(w)
        assert np.abs(adv - expected).max() < 1e-6

    def test_budget_monotonicity_on_linear_model(self):
        m = logistic_model()
        x = np.array([0.3, 0.1])
        y = np.array([1.0])
        losses = []
        for eps in (0.01, 0.05, 0.1, 0.2, 0.5):
            cfg = attack.AttackConfig(norm=2.0, epsilon=eps, alpha=eps / 10, steps=15)
            losses.append(m.loss_value(attack.pgd(m, x, y, cfg), y))
        assert all(b >= a - 1e-12 for a, b in zip(losses, losses[1:]))

    def test_deterministic(self):
        m = small_conv_model(5)
        x = np.random.default_rng(6).normal(0, 1, (8, 10))
        y = np.array([1.0, 0.0])
        cfg = attack.AttackConfig(norm=2.0, epsilon=0.1, alpha=0.02, steps=10)
        assert np.array_equal(attack.pgd(m, x, y, cfg), attack.pgd(m, x, y, cfg))

    @pytest.mark.filterwarnings("ignore:invalid value encountered")
    def test_non_finite_gradient_raises(self):
        m = logistic_model(w=(float("nan"), 0.0))
        cfg = attack.AttackConfig(norm=2.0, epsilon=0.1, alpha=0.02, steps=3)
        with pytest.raises(attack.AttackNumericsError):
            attack.pgd(m, np.zeros(2), np.array([1.0]), cfg)

    def test_normalized_linf_step_flag(self):
        m = logistic_model()
        x = np.zeros(2)
        y = np.array([1.0])
        cfg = attack.AttackConfig(
            norm=math.inf, epsilon=0.1, alpha=0.1, steps=1, linf_normalized_step=True
        )
        adv = attack.pgd(m, x, y, cfg)
        # grad = (-0.5, 1.0); normalized by max|g| -> (-0.05, 0.1) after one step
        assert adv == pytest.approx([-0.05, 0.1], abs=1e-12)


class TestAttackConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            attack.AttackConfig(norm=1.0, epsilon=0.1, alpha=0.01)
        with pytest.raises(ValueError):
            attack.AttackConfig(norm=2.0, epsilon=0.0, alpha=0.01)
        with pytest.raises(ValueError):
            attack.AttackConfig(norm=2.0, epsilon=0.1, alpha=0.01, steps=0)

    def test_from_norm_name(self):
        cfg = attack.AttackConfig.from_norm_name("linf", epsilon=0.1, alpha=0.01)
        assert cfg.norm == math.inf
        with pytest.raises(ValueError):
            attack.AttackConfig.from_norm_name("l1", epsilon=0.1, alpha=0.01)
