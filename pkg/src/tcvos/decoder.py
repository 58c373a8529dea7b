"""Multi-level decoder with attention-gated fusion and the mask head.

Levels decode deepest-first: each level adds the two stream features, concats
the already-decoded deeper feature (upsampled to its grid), applies a 3x3
conv + relu, channel/spatial attention gating, and a x2 bilinear upsample.
The head maps the finest decoded feature to one channel and upsamples to the
input resolution; probabilities are the sigmoid of the retained logits.

The full pipeline decodes twice: round 1 without refinement produces the
saliency map, round 2 decodes again with the refined level-4 feature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .layers import Conv2d, Linear, Module, ModuleList
from .refine import RefineState
from .rng import Rng
from .tensor import Tensor


class Cbam(Module):
    """Channel gate from pooled descriptors through a shared bottleneck MLP,
    then a spatial gate from a 7x7 conv over channelwise avg/max maps."""

    def __init__(self, channels: int, rng: Rng, dtype, reduction: int = 8,
                 spatial_kernel: int = 7):
        if channels % reduction:
            raise ConfigError(f"channels {channels} not divisible by reduction {reduction}")
        self.fc1 = Linear(channels, channels // reduction, rng, dtype=dtype)
        self.fc2 = Linear(channels // reduction, channels, rng, dtype=dtype)
        self.spatial = Conv2d(2, 1, spatial_kernel, rng, padding=spatial_kernel // 2,
                              dtype=dtype)

    def _mlp(self, x: Tensor) -> Tensor:
        return self.fc2(T.relu(self.fc1(x)))

    def __call__(self, x: Tensor) -> Tensor:
        b, c, h, w = x.shape
        avg = T.reduce_mean(x, axis=(2, 3))
        mx = T.reduce_max(x, axis=(2, 3))
        chan_gate = T.sigmoid(T.add(self._mlp(avg), self._mlp(mx)))
        x = T.mul(x, T.reshape(chan_gate, (b, c, 1, 1)))
        sp_avg = T.reduce_mean(x, axis=1, keepdims=True)
        sp_max = T.reduce_max(x, axis=1, keepdims=True)
        sp_gate = T.sigmoid(self.spatial(T.concat_channels(sp_avg, sp_max)))
        return T.mul(x, sp_gate)


class DecodeLevel(Module):
    def __init__(self, in_ch: int, width: int, rng: Rng, dtype, cbam_reduction: int,
                 cbam_kernel: int):
        self.conv = Conv2d(in_ch, width, 3, rng, padding=1, dtype=dtype)
        self.cbam = Cbam(width, rng, dtype, reduction=cbam_reduction,
                         spatial_kernel=cbam_kernel)

    def __call__(self, fused: Tensor, deeper: Tensor | None) -> Tensor:
        if deeper is not None:
            if deeper.shape[2:] != fused.shape[2:]:
                raise DimensionError(
                    f"deeper feature grid {deeper.shape} vs level grid {fused.shape}")
            fused = T.concat_channels(fused, deeper)
        y = self.cbam(T.relu(self.conv(fused)))
        return T.resize_bilinear(y, 2 * y.shape[2], 2 * y.shape[3])


class Decoder(Module):
    def __init__(self, level_channels: list[int], width: int, rng: Rng,
                 dtype=np.float32, cbam_reduction: int = 8, cbam_kernel: int = 7):
        if len(level_channels) != 4:
            raise ConfigError(f"expected 4 level widths, got {level_channels}")
        self.width = width
        levels = []
        for i, c in enumerate(level_channels):
            in_ch = c if i == 3 else c + width
            levels.append(DecodeLevel(in_ch, width, rng, dtype, cbam_reduction, cbam_kernel))
        self.levels = ModuleList(levels)
        self.head = Conv2d(width, 1, 1, rng, dtype=dtype)

    def decode_full(self, pyr_i, pyr_o, f4_override: Tensor | None = None):
        """Returns (probabilities, logits), both [B,1,H,W] at input scale."""
        fused = [T.add(pyr_i[i], pyr_o[i]) for i in range(4)]
        if f4_override is not None:
            if f4_override.shape != fused[3].shape:
                raise DimensionError(
                    f"override shape {f4_override.shape} vs level-4 {fused[3].shape}")
            fused[3] = f4_override
        deeper = None
        for i in (3, 2, 1, 0):
            deeper = self.levels[i](fused[i], deeper)
        logits = self.head(deeper)
        logits = T.resize_bilinear(logits, 2 * logits.shape[2], 2 * logits.shape[3])
        return T.sigmoid(logits), logits


@dataclass
class TwoRoundOutput:
    saliency: Tensor        # round-1 probabilities [B,1,H,W]
    saliency_logits: Tensor
    mask: Tensor            # round-2 probabilities [B,1,H,W]
    mask_logits: Tensor
    refine_state: RefineState | None


def predict_two_round(image: Tensor, flow_rgb: Tensor, model) -> TwoRoundOutput:
    """Encode once, decode twice: the first pass yields the saliency map that
    guides the level-4 refinement for the second pass."""
    if image.shape != flow_rgb.shape:
        raise DimensionError(f"image {image.shape} vs flow {flow_rgb.shape}")
    pyr_i = model.encoder.encode_appearance(image)
    pyr_o = model.encoder.encode_motion(flow_rgb)
    saliency, saliency_logits = model.decoder.decode_full(pyr_i, pyr_o)
    refined, state = model.refiner(pyr_i[3], pyr_o[3], saliency)
    mask, mask_logits = model.decoder.decode_full(pyr_i, pyr_o, f4_override=refined)
    return TwoRoundOutput(saliency=saliency, saliency_logits=saliency_logits,
                          mask=mask, mask_logits=mask_logits, refine_state=state)
