"""Full network assembly from a ModelConfig."""

from __future__ import annotations

import numpy as np

from .config import ModelConfig
from .decoder import Decoder, TwoRoundOutput, predict_two_round
from .encoder import TrunkCollateralEncoder, count_parameters
from .layers import Module
from .refine import SaliencyRefiner
from .rng import Rng
from .tensor import Tensor


class SegModel(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float32):
        cfg.validate()
        self.cfg = cfg
        self.dtype = dtype
        rng = Rng(seed, stream=11)
        self.encoder = TrunkCollateralEncoder(
            cfg.stage_configs(), rng.child(1), dtype=dtype,
            rank=cfg.lora_rank, placement=cfg.lora_placement,
            decorate_attn_out=cfg.lora_attn_out)
        self.refiner = SaliencyRefiner(
            cfg.stage_channels[3], cfg.stage_heads[3], rng.child(2), dtype=dtype,
            weight_mode=cfg.isrm_weight_mode, eps=cfg.isrm_eps,
            bypass=not cfg.isrm_enabled)
        self.decoder = Decoder(
            cfg.stage_channels, cfg.decoder_width, rng.child(3), dtype=dtype,
            cbam_reduction=cfg.cbam_reduction, cbam_kernel=cfg.cbam_spatial_kernel)

    def predict(self, image: Tensor, flow_rgb: Tensor) -> TwoRoundOutput:
        return predict_two_round(image, flow_rgb, self)

    def parameter_counts(self) -> dict:
        return count_parameters(self)

    def param_bytes_digest(self) -> str:
        import hashlib
        h = hashlib.sha256()
        for name, p in sorted(self.named_parameters()):
            h.update(name.encode())
            h.update(p.data.tobytes())
        return h.hexdigest()


def build_model(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> SegModel:
    return SegModel(cfg, seed=seed, dtype=dtype)
