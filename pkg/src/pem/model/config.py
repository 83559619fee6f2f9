"""Model architecture and training hyperparameter configuration.

A config fully determines the network: parameter shapes, layout of the flat
weight vector, and the canonical JSON text that the model-file hash covers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

from pem.errors import PemError

CHANNELS = 4  # consecutive frames per input stack


@dataclass(frozen=True)
class ConvLayerSpec:
    """One conv layer (ReLU after it; optional max pool after the ReLU)."""

    out_channels: int
    kernel: int
    stride: int = 1
    padding: int = 0
    pool_size: int = 0  # 0 = no pooling
    pool_stride: int = 0


@dataclass
class ModelConfig:
    side: int = 256
    channels: int = CHANNELS
    conv_spec: tuple[ConvLayerSpec, ...] = ()
    fc_spec: tuple[int, ...] = ()
    lr: float = 1e-4
    momentum: float = 0.9
    epochs: int = 20
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        self.conv_spec = tuple(
            c if isinstance(c, ConvLayerSpec) else ConvLayerSpec(**c) for c in self.conv_spec
        )
        self.fc_spec = tuple(int(w) for w in self.fc_spec)
        if self.channels != CHANNELS:
            raise PemError(f"input channels must be {CHANNELS}")
        if self.side < 32:
            raise PemError("side must be >= 32")
        if not self.conv_spec:
            raise PemError("at least one conv layer required")
        if self.lr <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise PemError("invalid training hyperparameters")
        self.feature_shape()  # validates spatial dimensions stay positive

    def feature_shape(self) -> tuple[int, int]:
        """(channels, spatial side) after the conv stack."""
        c, s = self.channels, self.side
        for spec in self.conv_spec:
            if spec.kernel < 1 or spec.stride < 1 or spec.padding < 0:
                raise PemError(f"invalid conv layer: {spec}")
            s = (s + 2 * spec.padding - spec.kernel) // spec.stride + 1
            c = spec.out_channels
            if s < 1:
                raise PemError(f"conv stack shrinks spatial size to {s}")
            if spec.pool_size:
                stride = spec.pool_stride or spec.pool_size
                s = (s - spec.pool_size) // stride + 1
                if s < 1:
                    raise PemError(f"pooling shrinks spatial size to {s}")
        return c, s

    def flat_features(self) -> int:
        c, s = self.feature_shape()
        return c * s * s

    def param_layout(self) -> list[tuple[str, tuple[int, ...], int]]:
        """(name, shape, offset) for every parameter tensor, in layer order."""
        layout = []
        offset = 0
        in_ch = self.channels
        for i, spec in enumerate(self.conv_spec):
            wshape = (spec.out_channels, in_ch, spec.kernel, spec.kernel)
            layout.append((f"conv{i}.w", wshape, offset))
            offset += _size(wshape)
            layout.append((f"conv{i}.b", (spec.out_channels,), offset))
            offset += spec.out_channels
            in_ch = spec.out_channels
        in_features = self.flat_features()
        for i, width in enumerate((*self.fc_spec, 1)):
            layout.append((f"fc{i}.w", (width, in_features), offset))
            offset += width * in_features
            layout.append((f"fc{i}.b", (width,), offset))
            offset += width
            in_features = width
        return layout

    def param_count(self) -> int:
        layout = self.param_layout()
        name, shape, offset = layout[-1]
        return offset + _size(shape)

    def to_dict(self) -> dict:
        return {
            "side": self.side,
            "channels": self.channels,
            "conv_spec": [vars(c) for c in self.conv_spec],
            "fc_spec": list(self.fc_spec),
            "lr": self.lr,
            "momentum": self.momentum,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    def canonical_text(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def with_overrides(self, **kwargs) -> "ModelConfig":
        return replace(self, **{k: v for k, v in kwargs.items() if v is not None})


def _size(shape: tuple[int, ...]) -> int:
    n = 1
    for s in shape:
        n *= s
    return n


def alexnet_config(side: int = 256, **overrides) -> ModelConfig:
    """Canonical AlexNet layout with a 4-channel input and scalar head."""
    cfg = ModelConfig(
        side=side,
        conv_spec=(
            ConvLayerSpec(96, 11, stride=4, pool_size=3, pool_stride=2),
            ConvLayerSpec(256, 5, padding=2, pool_size=3, pool_stride=2),
            ConvLayerSpec(384, 3, padding=1),
            ConvLayerSpec(384, 3, padding=1),
            ConvLayerSpec(256, 3, padding=1, pool_size=3, pool_stride=2),
        ),
        fc_spec=(4096, 4096),
    )
    return cfg.with_overrides(**overrides)


def small_config(side: int = 64, **overrides) -> ModelConfig:
    """Reduced config for desk-scale training runs."""
    cfg = ModelConfig(
        side=side,
        conv_spec=(
            ConvLayerSpec(16, 5, stride=2, padding=2, pool_size=2),
            ConvLayerSpec(32, 3, padding=1, pool_size=2),
            ConvLayerSpec(32, 3, padding=1, pool_size=2),
        ),
        fc_spec=(64,),
    )
    return cfg.with_overrides(**overrides)


def tiny_config(side: int = 32, **overrides) -> ModelConfig:
    """Two-conv-layer config small enough for finite-difference checks."""
    cfg = ModelConfig(
        side=side,
        conv_spec=(
            ConvLayerSpec(3, 5, stride=4, padding=2, pool_size=2),
            ConvLayerSpec(6, 3, padding=1, pool_size=2),
        ),
        fc_spec=(12,),
    )
    return cfg.with_overrides(**overrides)


PRESETS = {
    "alexnet": alexnet_config,
    "small": small_config,
    "tiny": tiny_config,
}


def config_from_json(d: dict) -> ModelConfig:
    """Config from a JSON dict: either a preset name plus overrides or a
    full explicit spec."""
    d = dict(d)
    preset = d.pop("preset", None)
    if preset is not None:
        if preset not in PRESETS:
            raise PemError(f"unknown model preset {preset!r} (have {sorted(PRESETS)})")
        return PRESETS[preset](**d)
    return ModelConfig.from_dict(d)
