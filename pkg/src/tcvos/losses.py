"""Composite segmentation objective: weighted focal + BCE + Dice on the
final mask, with the same combination applied to the round-1 saliency map at
a reduced auxiliary weight.

Focal and BCE consume logits and are computed in log space (softplus based)
so large-magnitude logits never overflow. Dice consumes probabilities.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError
from .tensor import Tensor


@dataclass
class LossWeights:
    focal_weight: float = 20.0
    bce_weight: float = 10.0
    dice_weight: float = 1.0
    aux_weight: float = 0.3
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25
    focal_class_balance: bool = True
    dice_smooth: float = 1.0

    def validate(self) -> None:
        for name in ("focal_weight", "bce_weight", "dice_weight", "aux_weight"):
            if getattr(self, name) < 0:
                raise ContractError(f"{name} must be >= 0")
        if not 0.0 <= self.aux_weight <= 1.0:
            raise ContractError("aux_weight must lie in [0,1]")


@dataclass
class LossBreakdown:
    total: float
    focal_final: float = 0.0
    bce_final: float = 0.0
    dice_final: float = 0.0
    focal_aux: float = 0.0
    bce_aux: float = 0.0
    dice_aux: float = 0.0

    def as_row(self) -> dict:
        return {k: getattr(self, k) for k in
                ("total", "focal_final", "bce_final", "dice_final",
                 "focal_aux", "bce_aux", "dice_aux")}


def _check_binary(target: Tensor) -> None:
    d = target.data
    if not np.all((d == 0) | (d == 1)):
        raise ContractError("target mask must be strictly binary")


def _check_shapes(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: prediction {a.shape} vs target {b.shape}")


def focal_loss(logits: Tensor, target: Tensor, gamma_f: float = 2.0,
               alpha_f: float = 0.25, class_balance: bool = True) -> Tensor:
    """Mean of -alpha_t * (1 - p_t)^gamma * log(p_t) over all pixels."""
    _check_shapes(logits, target, "focal_loss")
    _check_binary(target)
    y = target
    # log p_t and (1 - p_t) from logits, stable on both tails
    log_pt = T.neg(T.add(T.mul(y, T.softplus(T.neg(logits))),
                         T.mul(T.sub(1.0, y), T.softplus(logits))))
    one_minus_pt = T.add(T.mul(y, T.sigmoid(T.neg(logits))),
                         T.mul(T.sub(1.0, y), T.sigmoid(logits)))
    term = T.mul(T.pow_scalar(one_minus_pt, gamma_f), T.neg(log_pt))
    if class_balance:
        alpha_t = T.add(T.mul(y, alpha_f), T.mul(T.sub(1.0, y), 1.0 - alpha_f))
        term = T.mul(alpha_t, term)
    return T.reduce_mean(term)


def bce_loss(logits: Tensor, target: Tensor) -> Tensor:
    """Mean binary cross-entropy from logits: softplus(l) - l*y."""
    _check_shapes(logits, target, "bce_loss")
    return T.reduce_mean(T.sub(T.softplus(logits), T.mul(logits, target)))


def dice_loss(probs: Tensor, target: Tensor, smooth: float = 1.0) -> Tensor:
    """1 - (2*sum(p*g) + s) / (sum(p) + sum(g) + s) over the whole batch."""
    _check_shapes(probs, target, "dice_loss")
    pmin, pmax = float(probs.data.min()), float(probs.data.max())
    if pmin < -1e-6 or pmax > 1.0 + 1e-6:
        raise ContractError(f"dice_loss expects probabilities in [0,1], got [{pmin},{pmax}]")
    inter = T.reduce_sum(T.mul(probs, target))
    denom = T.add(T.reduce_sum(probs), T.reduce_sum(target))
    return T.sub(1.0, T.div(T.add(T.mul(inter, 2.0), smooth), T.add(denom, smooth)))


def _weighted(logits: Tensor, target: Tensor, w: LossWeights):
    focal = focal_loss(logits, target, w.focal_gamma, w.focal_alpha, w.focal_class_balance)
    bce = bce_loss(logits, target)
    dice = dice_loss(T.sigmoid(logits), target, w.dice_smooth)
    total = T.add(T.add(T.mul(focal, w.focal_weight), T.mul(bce, w.bce_weight)),
                  T.mul(dice, w.dice_weight))
    return total, focal, bce, dice


def combined_loss(final_logits: Tensor, aux_logits: Tensor, target: Tensor,
                  w: LossWeights) -> tuple[Tensor, LossBreakdown]:
    """Weighted sum on the final mask plus aux-weighted sum on the saliency
    map; returns the scalar loss and a per-term float breakdown."""
    w.validate()
    main, f2, b2, d2 = _weighted(final_logits, target, w)
    aux, f1, b1, d1 = _weighted(aux_logits, target, w)
    total = T.add(main, T.mul(aux, w.aux_weight))
    breakdown = LossBreakdown(
        total=total.item(),
        focal_final=f2.item(), bce_final=b2.item(), dice_final=d2.item(),
        focal_aux=f1.item(), bce_aux=b1.item(), dice_aux=d1.item())
    return total, breakdown
