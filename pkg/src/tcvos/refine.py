"""Intrinsic-saliency-guided refinement of the level-4 features.

The round-1 probability map is embedded onto the level-4 grid, key maps are
computed for it and for both feature streams, and per-pixel cosine agreement
with the saliency key decides how much each stream contributes to the fused
feature. A single self-attention block then refines the fused feature plus
the saliency embedding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, DimensionError
from .layers import Conv2d, LayerNorm, Linear, Module, grid_to_tokens, tokens_to_grid
from .rng import Rng
from .tensor import Tensor

WEIGHT_MODES = ("shared_denominator", "sequential_literal")


@dataclass
class RefineState:
    """Intermediate maps, kept for diagnostics and heatmap dumps."""
    s_embed: Tensor
    s_key: Tensor
    o_key: Tensor
    i_key: Tensor
    w_o: Tensor
    w_i: Tensor
    fused: Tensor
    refined: Tensor


class _RefineAttention(Module):
    """One pre-norm multi-head self-attention block with residual; no FFN."""

    def __init__(self, channels: int, heads: int, rng: Rng, dtype):
        if channels % heads:
            raise ConfigError(f"channels {channels} not divisible by heads {heads}")
        self.heads = heads
        self.head_dim = channels // heads
        self.norm = LayerNorm(channels, dtype=dtype)
        self.q = Linear(channels, channels, rng, dtype=dtype)
        self.k = Linear(channels, channels, rng, dtype=dtype)
        self.v = Linear(channels, channels, rng, dtype=dtype)
        self.out = Linear(channels, channels, rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        b, c, h, w = x.shape
        tok = grid_to_tokens(x)
        nrm = self.norm(tok)

        def split(t):
            return T.permute(T.reshape(t, (b, h * w, self.heads, self.head_dim)), (0, 2, 1, 3))

        q, k, v = split(self.q(nrm)), split(self.k(nrm)), split(self.v(nrm))
        attn = T.softmax(T.mul(T.matmul(q, T.permute(k, (0, 1, 3, 2))), self.head_dim ** -0.5),
                         axis=-1)
        ctx = T.reshape(T.permute(T.matmul(attn, v), (0, 2, 1, 3)), (b, h * w, c))
        return tokens_to_grid(T.add(tok, self.out(ctx)), h, w)


class SaliencyRefiner(Module):
    def __init__(self, channels: int, heads: int, rng: Rng, dtype=np.float32,
                 weight_mode: str = "shared_denominator", eps: float = 1e-6,
                 bypass: bool = False):
        if weight_mode not in WEIGHT_MODES:
            raise ConfigError(f"unknown weight mode {weight_mode!r}")
        self.channels = channels
        self.weight_mode = weight_mode
        self.eps = eps
        self.bypass = bypass
        self.embed = Conv2d(1, channels, 1, rng, dtype=dtype)
        self.key_s = Conv2d(channels, channels, 1, rng, dtype=dtype)
        self.key_io = Conv2d(channels, channels, 1, rng, dtype=dtype)
        self.attn = _RefineAttention(channels, heads, rng, dtype)

    def embed_saliency(self, s: Tensor, grid_h: int, grid_w: int) -> Tensor:
        """Downsample the full-resolution map to the level-4 grid, then a
        pointwise conv and relu."""
        if s.data.ndim != 4 or s.shape[1] != 1:
            raise DimensionError(f"saliency map must be [B,1,H,W], got {s.shape}")
        if s.shape[2] % grid_h or s.shape[3] % grid_w:
            raise DimensionError(
                f"saliency {s.shape[2]}x{s.shape[3]} does not reduce to grid {grid_h}x{grid_w}")
        small = T.resize_bilinear(s, grid_h, grid_w)
        return T.relu(self.embed(small))

    def compute_keys(self, s_embed: Tensor, o4: Tensor, i4: Tensor):
        """One encoder for the saliency embedding, one shared encoder for
        both feature streams."""
        if o4.shape != i4.shape or o4.shape != s_embed.shape:
            raise DimensionError(
                f"level-4 grids differ: {s_embed.shape}, {o4.shape}, {i4.shape}")
        return self.key_s(s_embed), self.key_io(o4), self.key_io(i4)

    def fuse_weighted(self, o4: Tensor, i4: Tensor, s_key: Tensor,
                      o_key: Tensor, i_key: Tensor):
        """Cosine agreement with the saliency key, clamped at zero, then
        normalized into summation weights for the two streams."""
        c_o = T.relu(T.cosine_channel(s_key, o_key, eps=self.eps))
        c_i = T.relu(T.cosine_channel(s_key, i_key, eps=self.eps))
        if self.weight_mode == "shared_denominator":
            denom = T.add(T.add(c_o, c_i), self.eps)
            w_o = T.div(c_o, denom)
            w_i = T.div(c_i, denom)
        else:
            # literal sequential reading: the second weight's denominator
            # sees the already-normalized first weight
            w_o = T.div(c_o, T.add(T.add(c_o, c_i), self.eps))
            w_i = T.div(c_i, T.add(T.add(w_o, c_i), self.eps))
        fused = T.add(T.mul(w_o, o4), T.mul(w_i, i4))
        return w_o, w_i, fused

    def __call__(self, i4: Tensor, o4: Tensor, s: Tensor) -> tuple[Tensor, RefineState | None]:
        smin, smax = float(s.data.min()), float(s.data.max())
        if smin < -1e-6 or smax > 1.0 + 1e-6:
            raise ContractError(f"saliency values outside [0,1]: [{smin}, {smax}]")
        if self.bypass:
            return T.add(i4, o4), None
        b, c, gh, gw = o4.shape
        s_embed = self.embed_saliency(s, gh, gw)
        s_key, o_key, i_key = self.compute_keys(s_embed, o4, i4)
        w_o, w_i, fused = self.fuse_weighted(o4, i4, s_key, o_key, i_key)
        refined = self.attn(T.add(fused, s_embed))
        state = RefineState(s_embed=s_embed, s_key=s_key, o_key=o_key, i_key=i_key,
                            w_o=w_o, w_i=w_i, fused=fused, refined=refined)
        return refined, state
