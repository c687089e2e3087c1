import numpy as np
import pytest

from aedbench import zoo
from aedbench.nn import Linear, TrainConfig

CFG = zoo.FamilyConfig()


class TestPatchGrid:
    def test_overlapping_default(self):
        assert zoo.patch_grid((64, 400), (16, 16), 8, 8) == (7, 49, 343)

    def test_non_overlapping(self):
        assert zoo.patch_grid((64, 400), (16, 16), 16, 16) == (4, 25, 100)

    def test_patch_exceeding_input_rejected(self):
        with pytest.raises(ValueError):
            zoo.patch_grid((8, 8), (16, 16), 8, 8)

    def test_bad_stride_rejected(self):
        with pytest.raises(ValueError):
            zoo.patch_grid((64, 400), (16, 16), 0, 8)


def expected_parameter_count(family: zoo.ModelFamily, cfg: zoo.FamilyConfig) -> int:
    """Closed-form per-layer sums for each blueprint."""

    def conv(cin, cout, k=3):
        return (cin * k * k + 1) * cout

    def linear(nin, nout):
        return nin * nout + nout

    def transformer(dim, mlp):
        attn = 4 * linear(dim, dim)
        return 2 * 2 * dim + attn + linear(dim, mlp) + linear(mlp, dim)

    def conv_stack():
        total, cin = 0, 1
        for cout in cfg.conv_channels():
            total += conv(cin, cout)
            cin = cout
        return total, cin

    embed_rows = cfg.n_mels // (2**cfg.n_conv_blocks)
    if family is zoo.ModelFamily.CNN_TRANSFORMER:
        total, last = conv_stack()
        total += linear(last * embed_rows, cfg.d_model)
        total += cfg.n_transformer_layers * transformer(cfg.d_model, cfg.mlp_dim)
        total += linear(cfg.d_model, cfg.n_classes)
        return total
    if family is zoo.ModelFamily.VIT:
        total = (cfg.patch_f * cfg.patch_t + 1) * cfg.d_model
        total += cfg.n_patch_layers * transformer(cfg.d_model, cfg.mlp_dim)
        total += linear(cfg.d_model, cfg.n_classes)
        return total
    if family is zoo.ModelFamily.CRNN:
        total, last = conv_stack()
        gru_in = last * embed_rows
        per_cell = 3 * cfg.rnn_hidden * (gru_in + cfg.rnn_hidden + 2)
        total += 2 * per_cell
        total += linear(2 * cfg.rnn_hidden, cfg.n_classes)
        return total
    stem = cfg.base_channels * 2
    total = conv(1, stem)
    cin = stem
    for cout in (stem * 2, stem * 4, stem * 4):
        # every stage strides, so each block carries a 1x1 projection skip
        total += conv(cin, cout) + conv(cout, cout) + conv(cin, cout, k=1)
        cin = cout
    total += linear(cin, cfg.n_classes)
    return total


class TestBuildModel:
    @pytest.mark.parametrize("family", list(zoo.ModelFamily))
    def test_scores_shape_and_range(self, family):
        m = zoo.build_model(family, seed=0)
        x = np.random.default_rng(0).normal(-8.0, 4.0, (64, 64))
        s = m.forward(x)
        assert s.shape == (CFG.n_classes,)
        assert np.all((s > 0.0) & (s < 1.0))

    @pytest.mark.parametrize("family", list(zoo.ModelFamily))
    def test_accepts_200_and_400_frames(self, family):
        m = zoo.build_model(family, seed=1)
        x = np.random.default_rng(1).normal(-8.0, 4.0, (64, 400))
        s400 = m.forward(x)
        s200 = m.forward(x[:, :200])
        assert s400.shape == s200.shape == (CFG.n_classes,)

    @pytest.mark.parametrize("family", list(zoo.ModelFamily))
    def test_minimum_frame_count(self, family):
        m = zoo.build_model(family, seed=2)
        n_min = zoo.min_frames(family, CFG)
        x = np.random.default_rng(2).normal(-8.0, 4.0, (64, n_min))
        assert m.forward(x).shape == (CFG.n_classes,)
        with pytest.raises(ValueError):
            m.forward(x[:, : max(1, n_min // 4)])

    @pytest.mark.parametrize("family", list(zoo.ModelFamily))
    def test_parameter_count_matches_closed_form(self, family):
        m = zoo.build_model(family)
        assert m.n_parameters() == expected_parameter_count(family, CFG)

    def test_linear_head_contributes_expected_parameters(self):
        lin = Linear(10, 5)
        assert sum(p.value.size for _, p in [("w", lin.weight), ("b", lin.bias)]) == 55

    def test_same_seed_same_init(self):
        a = zoo.build_model(zoo.ModelFamily.VIT, seed=5)
        b = zoo.build_model(zoo.ModelFamily.VIT, seed=5)
        for (_, pa), (_, pb) in zip(a.named_parameters(), b.named_parameters()):
            assert np.array_equal(pa.value, pb.value)

    def test_meta_records_family_and_config(self):
        m = zoo.build_model(zoo.ModelFamily.CRNN, seed=1)
        assert m.meta["family"] == "crnn"
        assert m.meta["config"]["rnn_hidden"] == CFG.rnn_hidden

    def test_unknown_family_name(self):
        with pytest.raises(ValueError):
            zoo.ModelFamily.from_name("mlp")


class TestVitPatchConsistency:
    def test_embedding_grid_matches_patch_grid(self):
        m = zoo.build_model(zoo.ModelFamily.VIT, seed=0)
        patch_conv = m.layers[1]
        for n_frames in (400, 200, 48):
            rows, cols, n_patches = zoo.patch_grid(
                (64, n_frames), (CFG.patch_f, CFG.patch_t), CFG.f_stride, CFG.t_stride
            )
            out, _ = patch_conv.forward(np.zeros((1, 64, n_frames)))
            assert out.shape == (CFG.d_model, rows, cols)
            assert rows * cols == n_patches


class TestDeskTrainConfig:
    def test_recipes_exist_per_family(self):
        for family in zoo.ModelFamily:
            cfg = zoo.desk_train_config(family, seed=3)
            assert isinstance(cfg, TrainConfig)
            assert cfg.seed == 3
            assert cfg.epochs <= 30

    def test_overrides(self):
        cfg = zoo.desk_train_config(zoo.ModelFamily.VIT, epochs=2)
        assert cfg.epochs == 2
