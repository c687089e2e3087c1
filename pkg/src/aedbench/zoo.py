"""Desk-scale constructors for the four classifier families.

All families consume a (n_mels, n_frames) logMel matrix with any n_frames at
or above the family minimum, and emit per-class sigmoid scores whose shape
does not depend on n_frames (global pooling):

  cnntrans  - conv blocks, then transformer encoder layers over time steps
  vit       - overlapping patch embedding + positional encoding + transformer
  resnet    - residual conv stages with a global pool head
  crnn      - conv blocks, then a bidirectional GRU over time steps
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass

import numpy as np

from .nn import (
    AddChannelDim,
    BiGRU,
    Conv2D,
    ConvToPatchSequence,
    ConvToTimeSequence,
    GlobalMeanPool,
    Linear,
    MaxPool2D,
    Model,
    ReLU,
    ResidualConvBlock,
    Sigmoid,
    SinusoidalPositionalEncoding,
    TrainConfig,
    TransformerEncoderLayer,
)

__all__ = [
    "ModelFamily",
    "FamilyConfig",
    "patch_grid",
    "build_model",
    "min_frames",
    "desk_train_config",
]


class ModelFamily(enum.Enum):
    CNN_TRANSFORMER = "cnntrans"
    VIT = "vit"
    RESNET_MINI = "resnet"
    CRNN = "crnn"

    @classmethod
    def from_name(cls, name: str) -> "ModelFamily":
        for member in cls:
            if member.value == name:
                return member
        raise ValueError(f"unknown model family {name!r}")


@dataclass(frozen=True)
class FamilyConfig:
    """Desk-scale defaults; conv widths are base_channels * (1, 2, 4, ...)."""

    n_classes: int = 10
    n_mels: int = 64
    base_channels: int = 4
    n_conv_blocks: int = 4
    n_transformer_layers: int = 2
    n_patch_layers: int = 2
    patch_f: int = 16
    patch_t: int = 16
    f_stride: int = 8
    t_stride: int = 8
    d_model: int = 32
    n_heads: int = 4
    mlp_dim: int = 64
    rnn_hidden: int = 24

    def __post_init__(self) -> None:
        if self.n_classes < 1:
            raise ValueError("n_classes must be >= 1")
        if min(self.f_stride, self.t_stride) < 1:
            raise ValueError("strides must be >= 1")
        if self.patch_f > self.n_mels:
            raise ValueError(f"patch_f {self.patch_f} exceeds n_mels {self.n_mels}")
        if self.n_mels % (2**self.n_conv_blocks) != 0:
            raise ValueError(
                f"n_mels {self.n_mels} must be divisible by 2^{self.n_conv_blocks} "
                "so the conv stack pools evenly"
            )
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")

    def conv_channels(self) -> list[int]:
        return [self.base_channels * (2**i) for i in range(self.n_conv_blocks)]


def patch_grid(input_shape, patch, f_stride: int, t_stride: int):
    """Sliding-patch counts: rows x cols positions, and their product."""
    n_mels, n_frames = input_shape
    patch_f, patch_t = patch
    if f_stride < 1 or t_stride < 1:
        raise ValueError("strides must be >= 1")
    if patch_f > n_mels or patch_t > n_frames:
        raise ValueError(
            f"patch {patch_f}x{patch_t} exceeds input {n_mels}x{n_frames}"
        )
    rows = (n_mels - patch_f) // f_stride + 1
    cols = (n_frames - patch_t) // t_stride + 1
    return rows, cols, rows * cols


def _conv_blocks(cfg: FamilyConfig, rng) -> tuple[list, int]:
    layers: list = []
    in_ch = 1
    for out_ch in cfg.conv_channels():
        layers.append(Conv2D(in_ch, out_ch, 3, stride=1, padding=1, rng=rng))
        layers.append(ReLU())
        layers.append(MaxPool2D(2))
        in_ch = out_ch
    embed_dim = in_ch * (cfg.n_mels // (2**cfg.n_conv_blocks))
    return layers, embed_dim


def _build_cnn_transformer(cfg: FamilyConfig, rng) -> list:
    layers, embed_dim = _conv_blocks(cfg, rng)
    layers += [ConvToTimeSequence(), Linear(embed_dim, cfg.d_model, rng)]
    layers.append(SinusoidalPositionalEncoding(cfg.d_model))
    for _ in range(cfg.n_transformer_layers):
        layers.append(TransformerEncoderLayer(cfg.d_model, cfg.n_heads, cfg.mlp_dim, rng))
    layers += [GlobalMeanPool(), Linear(cfg.d_model, cfg.n_classes, rng), Sigmoid()]
    return layers


def _build_vit(cfg: FamilyConfig, rng) -> list:
    layers = [
        AddChannelDim(),
        Conv2D(
            1,
            cfg.d_model,
            (cfg.patch_f, cfg.patch_t),
            stride=(cfg.f_stride, cfg.t_stride),
            padding=0,
            rng=rng,
        ),
        ConvToPatchSequence(),
        SinusoidalPositionalEncoding(cfg.d_model),
    ]
    for _ in range(cfg.n_patch_layers):
        layers.append(TransformerEncoderLayer(cfg.d_model, cfg.n_heads, cfg.mlp_dim, rng))
    layers += [GlobalMeanPool(), Linear(cfg.d_model, cfg.n_classes, rng), Sigmoid()]
    return layers


def _build_crnn(cfg: FamilyConfig, rng) -> list:
    layers, embed_dim = _conv_blocks(cfg, rng)
    layers += [
        ConvToTimeSequence(),
        BiGRU(embed_dim, cfg.rnn_hidden, rng),
        GlobalMeanPool(),
        Linear(2 * cfg.rnn_hidden, cfg.n_classes, rng),
        Sigmoid(),
    ]
    return layers


def _build_resnet_mini(cfg: FamilyConfig, rng) -> list:
    stem_ch = cfg.base_channels * 2
    widths = [stem_ch * 2, stem_ch * 4, stem_ch * 4]
    layers = [
        AddChannelDim(),
        Conv2D(1, stem_ch, 3, stride=1, padding=1, rng=rng),
        ReLU(),
        MaxPool2D(2),
    ]
    in_ch = stem_ch
    for out_ch in widths:
        layers.append(ResidualConvBlock(in_ch, out_ch, stride=2, rng=rng))
        in_ch = out_ch
    layers += [GlobalMeanPool(), Linear(in_ch, cfg.n_classes, rng), Sigmoid()]
    return layers


_BUILDERS = {
    ModelFamily.CNN_TRANSFORMER: _build_cnn_transformer,
    ModelFamily.VIT: _build_vit,
    ModelFamily.RESNET_MINI: _build_resnet_mini,
    ModelFamily.CRNN: _build_crnn,
}


def min_frames(family: ModelFamily, cfg: FamilyConfig) -> int:
    """Smallest n_frames the family accepts."""
    if family is ModelFamily.VIT:
        return cfg.patch_t
    if family is ModelFamily.RESNET_MINI:
        return 2  # the stem pool is the only hard divider
    return 2**cfg.n_conv_blocks


# Per-family desk training recipes.  Epoch counts are deliberately modest:
# saturated desk models stop reacting to small-budget attacks, which would
# hide the degradation the benchmark measures.
_DESK_TRAIN = {
    ModelFamily.CNN_TRANSFORMER: {"epochs": 8, "lr": 2e-3},
    ModelFamily.VIT: {"epochs": 14, "lr": 2e-3},
    ModelFamily.RESNET_MINI: {"epochs": 9, "lr": 2e-3},
    ModelFamily.CRNN: {"epochs": 26, "lr": 2e-3},
}


def desk_train_config(family: ModelFamily, seed: int = 0, **overrides) -> TrainConfig:
    """TrainConfig with the family's desk recipe; kwargs override fields."""
    kwargs = {"batch_size": 8, "seed": seed, **_DESK_TRAIN[family], **overrides}
    return TrainConfig(**kwargs)


def build_model(
    family: ModelFamily, cfg: FamilyConfig | None = None, seed: int = 0
) -> Model:
    """Construct the family blueprint with seeded initialization.

    The first layer lifts the (n_mels, n_frames) matrix to one conv channel
    for the conv-stack families; the ViT embeds overlapping patches directly.
    """
    cfg = cfg or FamilyConfig()
    rng = np.random.default_rng(seed)
    if family in (ModelFamily.CNN_TRANSFORMER, ModelFamily.CRNN):
        layers = [AddChannelDim()] + _BUILDERS[family](cfg, rng)
    else:
        layers = _BUILDERS[family](cfg, rng)
    meta = {
        "family": family.value,
        "config": asdict(cfg),
        "min_frames": min_frames(family, cfg),
        "init_seed": seed,
    }
    return Model(layers, cfg.n_classes, meta=meta)
