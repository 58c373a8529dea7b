"""Loss terms against closed forms and an independent assembly."""

import numpy as np
import pytest

from tcvos import tensor as T
from tcvos.errors import ContractError, DimensionError
from tcvos.gradcheck import gradcheck
from tcvos.losses import LossWeights, bce_loss, combined_loss, dice_loss, focal_loss
from tcvos.rng import Rng
from tcvos.tensor import Tensor


def logit(p):
    return float(np.log(p / (1 - p)))


class TestFocal:
    def test_confident_correct_vanishes(self):
        logits = Tensor(np.full((1, 1, 4, 4), 30.0))
        target = Tensor(np.ones((1, 1, 4, 4)))
        assert focal_loss(logits, target).item() < 1e-8

    def test_single_pixel_closed_form(self):
        # y=1, p=0.5, gamma=2, alpha=0.25: 0.25 * 0.25 * ln 2
        out = focal_loss(Tensor(np.zeros((1, 1, 1, 1))), Tensor(np.ones((1, 1, 1, 1))),
                         gamma_f=2.0, alpha_f=0.25)
        assert abs(out.item() - 0.25 * 0.25 * np.log(2)) < 1e-12
        assert abs(out.item() - 0.04332) < 5e-6

    def test_gamma0_alpha_half_is_half_bce(self):
        rng = Rng(0)
        logits = Tensor(rng.normal((1, 1, 8, 8), std=2.0, dtype=np.float64))
        target = Tensor((rng.uniform((1, 1, 8, 8), dtype=np.float64) > 0.5).astype(np.float64))
        f = focal_loss(logits, target, gamma_f=0.0, alpha_f=0.5)
        b = bce_loss(logits, target)
        assert abs(f.item() - 0.5 * b.item()) < 1e-12

    def test_class_balance_off(self):
        rng = Rng(1)
        logits = Tensor(rng.normal((1, 1, 4, 4), dtype=np.float64))
        target = Tensor((rng.uniform((1, 1, 4, 4), dtype=np.float64) > 0.5).astype(np.float64))
        f = focal_loss(logits, target, gamma_f=0.0, alpha_f=0.25, class_balance=False)
        b = bce_loss(logits, target)
        assert abs(f.item() - b.item()) < 1e-12

    def test_non_binary_target_rejected(self):
        with pytest.raises(ContractError):
            focal_loss(Tensor(np.zeros((2, 2))), Tensor(np.full((2, 2), 0.5)))

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            focal_loss(Tensor(np.zeros((2, 2))), Tensor(np.zeros((3, 3))))


class TestBce:
    def test_logit_zero(self):
        out = bce_loss(Tensor(np.zeros((1, 1))), Tensor(np.ones((1, 1))))
        assert abs(out.item() - np.log(2)) < 1e-12

    def test_large_margin_saturates(self):
        out = bce_loss(Tensor(np.full((2, 2), 20.0)), Tensor(np.ones((2, 2))))
        assert out.item() < 1e-4

    def test_symmetry(self):
        rng = Rng(2)
        l = rng.normal((4, 4), std=3.0, dtype=np.float64)
        a = bce_loss(Tensor(l), Tensor(np.ones((4, 4))))
        b = bce_loss(Tensor(-l), Tensor(np.zeros((4, 4))))
        assert abs(a.item() - b.item()) < 1e-12

    def test_extreme_logits_finite(self):
        out = bce_loss(Tensor(np.array([[1000.0, -1000.0]])),
                       Tensor(np.array([[0.0, 1.0]])))
        assert np.isfinite(out.item())


class TestDice:
    def test_exact_match_zero(self):
        g = (Rng(3).uniform((1, 1, 6, 6), dtype=np.float64) > 0.4).astype(np.float64)
        assert dice_loss(Tensor(g), Tensor(g)).item() == 0.0

    def test_empty_empty_guarded(self):
        z = Tensor(np.zeros((1, 1, 4, 4)))
        assert dice_loss(z, Tensor(np.zeros((1, 1, 4, 4)))).item() == 0.0

    def test_hand_sums(self):
        probs = Tensor(np.ones((1, 1, 2, 2)))
        target = np.zeros((1, 1, 2, 2))
        target[0, 0, 0] = 1.0  # 2 of 4 pixels
        out = dice_loss(probs, Tensor(target), smooth=1e-9)
        assert abs(out.item() - (1 - 4 / 6)) < 1e-8
        out_default = dice_loss(probs, Tensor(target), smooth=1.0)
        assert abs(out_default.item() - (1 - 5 / 7)) < 1e-12

    def test_probability_contract(self):
        with pytest.raises(ContractError):
            dice_loss(Tensor(np.full((2, 2), 1.5)), Tensor(np.ones((2, 2))))


class TestNonnegativity:
    def test_all_losses_nonneg_and_zero_iff_match(self):
        rng = Rng(4)
        for _ in range(20):
            logits = Tensor(rng.normal((1, 1, 6, 6), std=3.0, dtype=np.float64))
            target = Tensor((rng.uniform((1, 1, 6, 6), dtype=np.float64) > 0.5).astype(np.float64))
            assert focal_loss(logits, target).item() >= 0
            assert bce_loss(logits, target).item() >= 0
            assert dice_loss(T.sigmoid(logits), target).item() >= 0


class TestGradients:
    @pytest.mark.parametrize("which", ["focal", "bce", "dice"])
    def test_gradcheck_random_maps(self, which):
        for seed in range(10):
            rng = Rng(seed)
            logits = Tensor(rng.normal((1, 1, 8, 8), std=2.0, dtype=np.float64))
            target = Tensor((rng.uniform((1, 1, 8, 8), dtype=np.float64) > 0.5)
                            .astype(np.float64))
            fn = {
                "focal": lambda l: focal_loss(l, target),
                "bce": lambda l: bce_loss(l, target),
                "dice": lambda l: dice_loss(T.sigmoid(l), target),
            }[which]
            assert gradcheck(fn, [logits], rng=Rng(seed)) <= 1e-5


class TestCombined:
    def test_zero_aux_weight(self):
        rng = Rng(5)
        l2 = Tensor(rng.normal((1, 1, 4, 4), dtype=np.float64))
        l1 = Tensor(rng.normal((1, 1, 4, 4), dtype=np.float64))
        tgt = Tensor((rng.uniform((1, 1, 4, 4), dtype=np.float64) > 0.5).astype(np.float64))
        w = LossWeights(aux_weight=0.0)
        total, bd = combined_loss(l2, l1, tgt, w)
        main_only = (w.focal_weight * focal_loss(l2, tgt).item()
                     + w.bce_weight * bce_loss(l2, tgt).item()
                     + w.dice_weight * dice_loss(T.sigmoid(l2), tgt).item())
        assert abs(total.item() - main_only) < 1e-12

    def test_hand_assembled_2x2(self):
        # independent evaluation straight from the formulas, double precision
        l2 = np.array([[[[0.3, -1.2], [2.0, 0.0]]]])
        l1 = np.array([[[[-0.5, 0.7], [0.1, -2.0]]]])
        gt = np.array([[[[1.0, 0.0], [1.0, 0.0]]]])
        w = LossWeights()  # alpha=20 beta=10 gamma=1 omega=0.3

        def hand_terms(logits):
            p = 1 / (1 + np.exp(-logits))
            pt = np.where(gt == 1, p, 1 - p)
            at = np.where(gt == 1, w.focal_alpha, 1 - w.focal_alpha)
            focal = np.mean(-at * (1 - pt) ** w.focal_gamma * np.log(pt))
            bce = np.mean(-(gt * np.log(p) + (1 - gt) * np.log(1 - p)))
            dice = 1 - (2 * np.sum(p * gt) + w.dice_smooth) / (
                np.sum(p) + np.sum(gt) + w.dice_smooth)
            return 20 * focal + 10 * bce + 1 * dice

        expected = hand_terms(l2) + 0.3 * hand_terms(l1)
        total, bd = combined_loss(Tensor(l2), Tensor(l1), Tensor(gt), w)
        assert abs(total.item() - expected) < 1e-12

    def test_breakdown_matches_terms(self):
        rng = Rng(6)
        l2 = Tensor(rng.normal((1, 1, 4, 4), dtype=np.float64))
        l1 = Tensor(rng.normal((1, 1, 4, 4), dtype=np.float64))
        tgt = Tensor((rng.uniform((1, 1, 4, 4), dtype=np.float64) > 0.5).astype(np.float64))
        w = LossWeights()
        total, bd = combined_loss(l2, l1, tgt, w)
        recombined = (20 * bd.focal_final + 10 * bd.bce_final + bd.dice_final
                      + 0.3 * (20 * bd.focal_aux + 10 * bd.bce_aux + bd.dice_aux))
        assert abs(total.item() - recombined) < 1e-9

    def test_scaling_focal_weight_scales_contribution(self):
        rng = Rng(7)
        l2 = Tensor(rng.normal((1, 1, 4, 4), dtype=np.float64))
        l1 = Tensor(rng.normal((1, 1, 4, 4), dtype=np.float64))
        tgt = Tensor((rng.uniform((1, 1, 4, 4), dtype=np.float64) > 0.5).astype(np.float64))
        base, bd = combined_loss(l2, l1, tgt, LossWeights(focal_weight=20.0))
        doubled, _ = combined_loss(l2, l1, tgt, LossWeights(focal_weight=40.0))
        extra = 20 * (bd.focal_final + 0.3 * bd.focal_aux)
        assert abs(doubled.item() - base.item() - extra) < 1e-9

    def test_default_weights(self):
        w = LossWeights()
        assert (w.focal_weight, w.bce_weight, w.dice_weight, w.aux_weight) == (20.0, 10.0, 1.0, 0.3)

    def test_weight_validation(self):
        with pytest.raises(ContractError):
            LossWeights(aux_weight=1.5).validate()
        with pytest.raises(ContractError):
            LossWeights(bce_weight=-1.0).validate()
