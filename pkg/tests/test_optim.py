"""AdamW update rules."""

import numpy as np
import pytest

from tcvos.errors import DimensionError
from tcvos.optim import AdamW
from tcvos.rng import Rng
from tcvos.tensor import parameter


def make(vals, **kw):
    p = parameter(np.asarray(vals, dtype=np.float64))
    opt = AdamW([("p", p)], **kw)
    return p, opt


def test_zero_grad_zero_decay_identity():
    p, opt = make([1.0, -2.0, 3.0], weight_decay=0.0)
    before = p.data.copy()
    for _ in range(5):
        opt.step({p: np.zeros(3)})
    assert np.array_equal(p.data, before)


def test_beta_zero_closed_form():
    g = np.array([0.5, -2.0, 1e-3])
    p, opt = make([1.0, 1.0, 1.0], lr=0.1, beta1=0.0, beta2=0.0,
                  eps=1e-8, weight_decay=0.0)
    opt.step({p: g})
    expected = 1.0 - 0.1 * g / (np.abs(g) + 1e-8)
    assert np.abs(p.data - expected).max() < 1e-15


def test_decoupled_decay_scales_params():
    p, opt = make([2.0, -4.0], lr=0.01, weight_decay=0.5)
    opt.step({p: np.zeros(2)})
    assert np.abs(p.data - np.array([2.0, -4.0]) * (1 - 0.01 * 0.5)).max() < 1e-15


def test_decay_not_in_moments():
    p, opt = make([10.0], lr=0.01, weight_decay=0.5)
    opt.step({p: np.zeros(1)})
    assert opt.state.first_moment["p"].tolist() == [0.0]
    assert opt.state.second_moment["p"].tolist() == [0.0]


def test_bias_correction_first_step_full_magnitude():
    # with defaults, step 1 moves by ~lr regardless of raw moment scaling
    p, opt = make([0.0], lr=0.1, weight_decay=0.0)
    opt.step({p: np.array([1.0])})
    assert abs(p.data[0] + 0.1) < 1e-6


def test_shape_mismatch():
    p, opt = make([1.0, 2.0])
    with pytest.raises(DimensionError):
        opt.step({p: np.zeros(3)})


def test_missing_grad_treated_as_zero():
    p, opt = make([1.0], weight_decay=0.0)
    opt.step({})
    assert p.data.tolist() == [1.0]


def test_convergence_on_quadratic():
    rng = Rng(0)
    target = rng.normal((8,), dtype=np.float64)
    p = parameter(np.zeros(8))
    opt = AdamW([("p", p)], lr=0.05, weight_decay=0.0)
    for _ in range(500):
        opt.step({p: 2 * (p.data - target)})
    assert np.abs(p.data - target).max() < 1e-3
