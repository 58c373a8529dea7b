"""Model and training configuration with strict JSON round-tripping.

Unknown keys in a config file are rejected outright so that typos fail fast
instead of silently falling back to defaults.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .encoder import StageConfig
from .errors import ConfigError
from .losses import LossWeights

PLACEMENTS = ("none", "mhsa", "ffn", "both")
STREAM_MODES = ("duplicate", "zero")


@dataclass
class ModelConfig:
    input_height: int = 128
    input_width: int = 128
    stage_channels: list = field(default_factory=lambda: [16, 32, 64, 128])
    stage_depths: list = field(default_factory=lambda: [1, 1, 2, 1])
    stage_heads: list = field(default_factory=lambda: [1, 2, 4, 8])
    stage_reductions: list = field(default_factory=lambda: [8, 4, 2, 1])
    patch_kernels: list = field(default_factory=lambda: [7, 3, 3, 3])
    patch_strides: list = field(default_factory=lambda: [4, 2, 2, 2])
    lora_rank: int = 8
    lora_placement: str = "both"
    lora_attn_out: bool = True
    decoder_width: int = 64
    cbam_reduction: int = 8
    cbam_spatial_kernel: int = 7
    isrm_enabled: bool = True
    isrm_weight_mode: str = "shared_denominator"
    isrm_eps: float = 1e-6
    loss: LossWeights = field(default_factory=LossWeights)
    learning_rate: float = 1e-4
    weight_decay: float = 0.01
    batch_size: int = 4
    binarize_threshold: float = 0.5
    single_stream_mode: str = "duplicate"

    def validate(self) -> None:
        if self.input_height % 32 or self.input_width % 32:
            raise ConfigError(
                f"input {self.input_height}x{self.input_width} must be divisible by 32")
        for name in ("stage_channels", "stage_depths", "stage_heads",
                     "stage_reductions", "patch_kernels", "patch_strides"):
            if len(getattr(self, name)) != 4:
                raise ConfigError(f"{name} must list exactly 4 stages")
        total = 1
        for s in self.patch_strides:
            total *= s
        if total != 32:
            raise ConfigError(f"stage strides {self.patch_strides} must compose to 32")
        if self.lora_placement not in PLACEMENTS:
            raise ConfigError(f"lora_placement must be one of {PLACEMENTS}")
        if self.single_stream_mode not in STREAM_MODES:
            raise ConfigError(f"single_stream_mode must be one of {STREAM_MODES}")
        for c, h in zip(self.stage_channels, self.stage_heads):
            if c % h:
                raise ConfigError(f"stage channels {c} not divisible by heads {h}")
        self.loss.validate()

    def stage_configs(self) -> list[StageConfig]:
        return [StageConfig(channels=c, depth=d, heads=h, reduction_ratio=r,
                            patch_kernel=k, patch_stride=s)
                for c, d, h, r, k, s in zip(
                    self.stage_channels, self.stage_depths, self.stage_heads,
                    self.stage_reductions, self.patch_kernels, self.patch_strides)]

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return d

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2)


def config_from_dict(data: dict) -> ModelConfig:
    data = dict(data)
    loss_data = data.pop("loss", None)
    known = {f.name for f in dataclasses.fields(ModelConfig)} - {"loss"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    cfg = ModelConfig(**data)
    if loss_data is not None:
        loss_known = {f.name for f in dataclasses.fields(LossWeights)}
        bad = set(loss_data) - loss_known
        if bad:
            raise ConfigError(f"unknown loss config keys: {sorted(bad)}")
        cfg.loss = LossWeights(**loss_data)
    cfg.validate()
    return cfg


def load_config(path) -> ModelConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}")
    return config_from_dict(data)


def tiny_config() -> ModelConfig:
    """Small double-precision-friendly setup for gradient checking."""
    return ModelConfig(
        input_height=32, input_width=32,
        stage_channels=[4, 8, 16, 32],
        stage_depths=[1, 1, 1, 1],
        stage_heads=[1, 2, 4, 8],
        stage_reductions=[4, 2, 1, 1],
        patch_kernels=[7, 3, 3, 3],
        patch_strides=[4, 2, 2, 2],
        lora_rank=2,
        decoder_width=8,
        cbam_reduction=4,
    )


def ablation_config() -> ModelConfig:
    """Channels wide enough that every rank in the sweep satisfies the
    rank <= min(d,k)/2 bound."""
    return ModelConfig(
        input_height=64, input_width=64,
        stage_channels=[32, 64, 128, 256],
        stage_depths=[1, 1, 1, 1],
        stage_heads=[1, 2, 4, 8],
        stage_reductions=[4, 2, 1, 1],
        patch_kernels=[7, 3, 3, 3],
        patch_strides=[4, 2, 2, 2],
        lora_rank=8,
        decoder_width=32,
        cbam_reduction=8,
        batch_size=2,
    )
