"""Four-stage hierarchical transformer trunk shared by the appearance and
motion streams, with low-rank collateral branches on the motion path.

Both streams run through identical trunk weights. The motion stream
additionally applies a low-rank delta B(Ax) at each decorated dense layer:
the attention projections and the post-residual FFN output. With B at its
zero initialization the two streams are numerically identical.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .layers import Conv2d, LayerNorm, Linear, Module, ModuleList, grid_to_tokens, tokens_to_grid
from .rng import Rng
from .tensor import Tensor, parameter

ATTACH_POINTS = ("query", "key", "value", "attn_out", "ffn_post_residual")


@dataclass
class StageConfig:
    channels: int
    depth: int
    heads: int
    reduction_ratio: int
    patch_kernel: int
    patch_stride: int

    def validate(self) -> None:
        if self.channels % self.heads:
            raise ConfigError(f"channels {self.channels} not divisible by heads {self.heads}")
        if self.patch_kernel % 2 == 0:
            raise ConfigError(f"patch kernel {self.patch_kernel} must be odd")


@dataclass
class FeaturePyramid:
    """Per-level features; level i sits at H/2^(i+1) x W/2^(i+1)."""
    levels: list

    def __getitem__(self, i: int) -> Tensor:
        return self.levels[i]

    def __len__(self) -> int:
        return len(self.levels)


class LoraPair(Module):
    """Low-rank branch attached to one dense trunk layer.

    A is [r, k], B is [d, r]; B starts at zero so the branch contributes
    nothing until trained. The dense d x k product is never materialized.
    """

    def __init__(self, d: int, k: int, rank: int, attach_point: str, rng: Rng,
                 dtype=np.float32):
        if attach_point not in ATTACH_POINTS:
            raise ConfigError(f"unknown attach point {attach_point!r}")
        if rank < 1 or 2 * rank > min(d, k):
            raise ConfigError(
                f"rank {rank} too large for a {d}x{k} layer (need rank <= min(d,k)/2)")
        self.rank = rank
        self.d = d
        self.k = k
        self.attach_point = attach_point
        self.A = parameter(rng.normal((rank, k), std=0.02, dtype=dtype))
        self.B = parameter(np.zeros((d, rank), dtype=dtype))

    def delta(self, x: Tensor) -> Tensor:
        """B(Ax) for row-major token batches [..., k]."""
        return T.matmul(T.matmul(x, T.permute(self.A, (1, 0))), T.permute(self.B, (1, 0)))

    def param_total(self) -> int:
        return self.rank * (self.d + self.k)


def lora_apply(x: Tensor, w0: Tensor, pair: LoraPair) -> Tensor:
    """W0 x + B(Ax) for tokens [..., k] and trunk weight [d, k]."""
    if w0.shape != (pair.d, pair.k):
        raise DimensionError(f"trunk weight {w0.shape} vs lora pair ({pair.d}, {pair.k})")
    return T.add(T.matmul(x, T.permute(w0, (1, 0))), pair.delta(x))


class _DecoratedLinear(Module):
    """Trunk linear plus an optional collateral applied only on request."""

    def __init__(self, in_f: int, out_f: int, rng: Rng, dtype, rank: int,
                 attach_point: str, decorated: bool):
        self.lin = Linear(in_f, out_f, rng, dtype=dtype)
        self.lora: Optional[LoraPair] = (
            LoraPair(out_f, in_f, rank, attach_point, rng, dtype=dtype) if decorated else None)

    def __call__(self, x: Tensor, collateral: bool) -> Tensor:
        y = self.lin(x)
        if collateral and self.lora is not None:
            y = T.add(y, self.lora.delta(x))
        return y


class EfficientSelfAttention(Module):
    """Multi-head attention whose keys/values come from spatially reduced
    tokens (pointwise strided conv + layernorm, applied for every ratio so
    the reduction path is structurally uniform)."""

    def __init__(self, cfg: StageConfig, rng: Rng, dtype, rank: int,
                 decorate_qkv: bool, decorate_out: bool):
        c = cfg.channels
        self.heads = cfg.heads
        self.head_dim = c // cfg.heads
        self.ratio = cfg.reduction_ratio
        self.q = _DecoratedLinear(c, c, rng, dtype, rank, "query", decorate_qkv)
        self.reduce = Conv2d(c, c, 1, rng, stride=self.ratio, dtype=dtype)
        self.reduce_norm = LayerNorm(c, dtype=dtype)
        self.k = _DecoratedLinear(c, c, rng, dtype, rank, "key", decorate_qkv)
        self.v = _DecoratedLinear(c, c, rng, dtype, rank, "value", decorate_qkv)
        self.out = _DecoratedLinear(c, c, rng, dtype, rank, "attn_out", decorate_out)

    def _split(self, x: Tensor) -> Tensor:
        b, n, c = x.shape
        return T.permute(T.reshape(x, (b, n, self.heads, self.head_dim)), (0, 2, 1, 3))

    def __call__(self, x: Tensor, h: int, w: int, collateral: bool) -> Tensor:
        b, n, c = x.shape
        if n != h * w:
            raise DimensionError(f"token count {n} does not match grid {h}x{w}")
        q = self._split(self.q(x, collateral))
        red = self.reduce_norm(grid_to_tokens(self.reduce(tokens_to_grid(x, h, w))))
        k = self._split(self.k(red, collateral))
        v = self._split(self.v(red, collateral))
        scores = T.mul(T.matmul(q, T.permute(k, (0, 1, 3, 2))), self.head_dim ** -0.5)
        attn = T.softmax(scores, axis=-1)
        ctx = T.matmul(attn, v)
        merged = T.reshape(T.permute(ctx, (0, 2, 1, 3)), (b, n, c))
        return self.out(merged, collateral)


class MixFFN(Module):
    """Expand 4x, depthwise 3x3 over the spatial grid, gelu, contract."""

    def __init__(self, cfg: StageConfig, rng: Rng, dtype):
        c = cfg.channels
        hidden = 4 * c
        self.fc1 = Linear(c, hidden, rng, dtype=dtype)
        self.dw = Conv2d(hidden, hidden, 3, rng, padding=1, groups=hidden, dtype=dtype)
        self.fc2 = Linear(hidden, c, rng, dtype=dtype)

    def __call__(self, x: Tensor, h: int, w: int) -> Tensor:
        y = self.fc1(x)
        y = grid_to_tokens(self.dw(tokens_to_grid(y, h, w)))
        y = T.gelu(y)
        return self.fc2(y)


class TransformerBlock(Module):
    """Pre-norm attention and FFN sublayers; the motion path adds a
    post-residual low-rank delta after the FFN when decorated."""

    def __init__(self, cfg: StageConfig, rng: Rng, dtype, rank: int,
                 decorate_mhsa: bool, decorate_out: bool, decorate_ffn: bool):
        c = cfg.channels
        self.norm1 = LayerNorm(c, dtype=dtype)
        self.attn = EfficientSelfAttention(cfg, rng, dtype, rank, decorate_mhsa,
                                           decorate_mhsa and decorate_out)
        self.norm2 = LayerNorm(c, dtype=dtype)
        self.ffn = MixFFN(cfg, rng, dtype)
        self.ffn_lora: Optional[LoraPair] = (
            LoraPair(c, c, rank, "ffn_post_residual", rng, dtype=dtype) if decorate_ffn else None)

    def mix_ffn(self, x: Tensor, h: int, w: int, collateral: bool) -> Tensor:
        post = T.add(x, self.ffn(self.norm2(x), h, w))
        if collateral and self.ffn_lora is not None:
            post = T.add(post, self.ffn_lora.delta(post))
        return post

    def __call__(self, x: Tensor, h: int, w: int, collateral: bool) -> Tensor:
        x = T.add(x, self.attn(self.norm1(x), h, w, collateral))
        return self.mix_ffn(x, h, w, collateral)


class Stage(Module):
    def __init__(self, in_ch: int, cfg: StageConfig, rng: Rng, dtype, rank: int,
                 decorate_mhsa: bool, decorate_out: bool, decorate_ffn: bool):
        cfg.validate()
        self.cfg = cfg
        self.patch = Conv2d(in_ch, cfg.channels, cfg.patch_kernel, rng,
                            stride=cfg.patch_stride, padding=cfg.patch_kernel // 2,
                            dtype=dtype)
        self.patch_norm = LayerNorm(cfg.channels, dtype=dtype)
        self.blocks = ModuleList(
            TransformerBlock(cfg, rng, dtype, rank, decorate_mhsa, decorate_out, decorate_ffn)
            for _ in range(cfg.depth))
        self.norm = LayerNorm(cfg.channels, dtype=dtype)

    def __call__(self, x: Tensor, collateral: bool) -> Tensor:
        grid = self.patch(x)
        b, c, h, w = grid.shape
        tok = self.patch_norm(grid_to_tokens(grid))
        for blk in self.blocks:
            tok = blk(tok, h, w, collateral)
        return tokens_to_grid(self.norm(tok), h, w)


class TrunkCollateralEncoder(Module):
    """Shared trunk over both streams; collateral branches fire only for the
    motion stream."""

    def __init__(self, stage_cfgs: list[StageConfig], rng: Rng, dtype=np.float32,
                 rank: int = 8, placement: str = "both", decorate_attn_out: bool = True):
        if placement not in ("none", "mhsa", "ffn", "both"):
            raise ConfigError(f"unknown collateral placement {placement!r}")
        if len(stage_cfgs) != 4:
            raise ConfigError(f"expected 4 stages, got {len(stage_cfgs)}")
        self.placement = placement
        self.total_stride = 1
        mhsa = placement in ("mhsa", "both")
        ffn = placement in ("ffn", "both")
        stages = []
        in_ch = 3
        for cfg in stage_cfgs:
            stages.append(Stage(in_ch, cfg, rng, dtype, rank, mhsa, decorate_attn_out, ffn))
            in_ch = cfg.channels
            self.total_stride *= cfg.patch_stride
        self.stages = ModuleList(stages)

    def _forward(self, x: Tensor, collateral: bool) -> FeaturePyramid:
        if x.data.ndim != 4 or x.shape[1] != 3:
            raise DimensionError(f"expected [B,3,H,W] input, got {x.shape}")
        if x.shape[2] % self.total_stride or x.shape[3] % self.total_stride:
            raise DimensionError(
                f"input {x.shape[2]}x{x.shape[3]} not divisible by total stride "
                f"{self.total_stride}")
        levels = []
        cur = x
        for stage in self.stages:
            cur = stage(cur, collateral)
            levels.append(cur)
        return FeaturePyramid(levels)

    def encode_appearance(self, image: Tensor) -> FeaturePyramid:
        return self._forward(image, collateral=False)

    def encode_motion(self, flow_rgb: Tensor) -> FeaturePyramid:
        return self._forward(flow_rgb, collateral=True)

    def lora_pairs(self):
        for stage in self.stages:
            for blk in stage.blocks:
                for dec in (blk.attn.q, blk.attn.k, blk.attn.v, blk.attn.out):
                    if dec.lora is not None:
                        yield dec.lora
                if blk.ffn_lora is not None:
                    yield blk.ffn_lora


def count_parameters(model: Module) -> dict:
    """Split the exact parameter count into trunk and collateral totals."""
    lora_param_ids = set()
    collateral = 0
    enc = model if isinstance(model, TrunkCollateralEncoder) else getattr(model, "encoder", None)
    if enc is not None:
        for pair in enc.lora_pairs():
            for _, p in pair.named_parameters():
                lora_param_ids.add(id(p))
                collateral += p.size
    trunk = sum(p.size for _, p in model.named_parameters() if id(p) not in lora_param_ids)
    return {"trunk": trunk, "collateral": collateral}
