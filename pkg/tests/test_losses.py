import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from c3rec.losses import (info_nce, main_loss, margin_loss, negative_loss,
                          positive_loss, total_loss)
from c3rec.numcore import Tensor, grad_check

scores = st.lists(st.floats(0.001, 0.999), min_size=1, max_size=8)


def t(values, grad=False):
    return Tensor(np.asarray(values, dtype=np.float64), requires_grad=grad)


# -- positive loss ----------------------------------------------------------------

def test_positive_loss_perfect_prediction():
    assert float(positive_loss(t([1.0, 1.0])).data) == pytest.approx(0.0, abs=1e-7)


def test_positive_loss_half():
    out = float(positive_loss(t([0.5]), epsilon=1e-8).data)
    assert out == pytest.approx(0.6931471, abs=1e-6)


def test_positive_loss_zero_score_stays_finite():
    out = float(positive_loss(t([0.0]), epsilon=1e-8).data)
    assert out == pytest.approx(-math.log(1e-8), abs=1e-6)  # ~18.42


@given(scores)
@settings(max_examples=30, deadline=None)
def test_positive_loss_nonnegative_and_decreasing(vals):
    base = float(positive_loss(t(vals)).data)
    assert base >= -1e-9
    bumped = [min(v + 1e-4, 0.9999) for v in vals]
    assert float(positive_loss(t(bumped)).data) <= base + 1e-12


# -- negative loss ----------------------------------------------------------------

def test_negative_loss_zero_scores():
    assert float(negative_loss(t([0.0, 0.0])).data) == 0.0


def test_negative_loss_one():
    assert float(negative_loss(t([1.0])).data) == pytest.approx(math.e - 1, abs=1e-10)


def test_negative_loss_halves():
    out = float(negative_loss(t([0.5, 0.5])).data)
    assert out == pytest.approx(math.exp(0.5) - 1, abs=1e-10)


@given(scores)
@settings(max_examples=30, deadline=None)
def test_negative_loss_nonnegative_and_increasing(vals):
    base = float(negative_loss(t(vals)).data)
    assert base >= 0.0
    bumped = [min(v + 1e-4, 0.9999) for v in vals]
    assert float(negative_loss(t(bumped)).data) >= base - 1e-12


# -- margin loss ------------------------------------------------------------------

def test_margin_satisfied_pairs_cost_nothing():
    out = margin_loss(t([0.9, 0.8]), t([[0.1, 0.0], [0.05, 0.2]]), delta=0.5)
    assert float(out.data) == 0.0


def test_margin_scalar_oracle():
    out = margin_loss(t([0.9]), t([[0.2]]), delta=1.0)
    assert float(out.data) == pytest.approx(0.3, abs=1e-12)


def test_margin_equal_scores():
    out = margin_loss(t([0.5]), t([[0.5]]), delta=1.0)
    assert float(out.data) == pytest.approx(1.0, abs=1e-12)


def test_margin_averages_over_pairs():
    # pairs: (0.9,0.2)->0.3, (0.9,0.6)->0.7 with delta=1
    out = margin_loss(t([0.9]), t([[0.2, 0.6]]), delta=1.0)
    assert float(out.data) == pytest.approx(0.5, abs=1e-12)


# -- main / total combination -------------------------------------------------------

def test_main_loss_boundaries():
    lp, ln, lm = t([0.2]).sum(), t([0.4]).sum(), t([0.6]).sum()
    assert float(main_loss(lp, ln, lm, alpha=1.0).data) == pytest.approx(0.6000000000000001 - 0.0, abs=0)  # 0.2+0.4
    assert float(main_loss(lp, ln, lm, alpha=1.0).data) == pytest.approx(0.6, abs=1e-12)
    assert float(main_loss(lp, ln, lm, alpha=0.0).data) == pytest.approx(0.6, abs=1e-12)
    assert float(main_loss(lp, ln, lm, alpha=0.5).data) == pytest.approx(0.6, abs=1e-12)


def test_total_loss_beta_zero_is_main():
    lm, lc = t([0.5]).sum(), t([1.0986]).sum()
    assert float(total_loss(lm, lc, beta=0.0).data) == 0.5


def test_total_loss_scalar_oracle():
    lm, lc = t([0.5]).sum(), t([math.log(3.0)]).sum()
    assert float(total_loss(lm, lc, beta=0.05).data) == pytest.approx(0.554930, abs=1e-6)


def test_total_loss_zero_contrastive():
    lm, lc = t([0.7]).sum(), t([0.0]).sum()
    assert float(total_loss(lm, lc, beta=0.05).data) == 0.7


# -- InfoNCE ----------------------------------------------------------------------

@pytest.mark.parametrize("tau", [0.5, 1.0, 2.0])
def test_info_nce_identical_views(tau, rng):
    v = rng.standard_normal(6)
    views = t(np.tile(v, (4, 1)))  # B=2 pairs, all identical
    out = float(info_nce(views, tau).data)
    assert out == pytest.approx(math.log(3.0), abs=1e-10)


def test_info_nce_antipodal_oracle():
    views = t([[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [-1.0, 0.0]])
    out = float(info_nce(views, tau=1.0).data)
    expected = -math.log(math.e / (math.e + 2 * math.exp(-1.0)))
    assert out == pytest.approx(expected, abs=1e-10)
    assert out == pytest.approx(0.2395, abs=5e-4)


def test_info_nce_scale_invariance(rng):
    base = rng.standard_normal((6, 4))
    a = float(info_nce(t(base), 1.0).data)
    scaled = base.copy()
    scaled[2] *= 37.5
    b = float(info_nce(t(scaled), 1.0).data)
    assert a == pytest.approx(b, abs=1e-10)


def test_info_nce_single_pair_warns_and_returns_zero(rng):
    views = t(rng.standard_normal((2, 4)))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        out = float(info_nce(views, 1.0).data)
    assert out == 0.0
    assert caught


# -- gradients ----------------------------------------------------------------------

def test_loss_gradients_pass_grad_check(rng):
    s_pos = Tensor(rng.uniform(0.1, 0.9, 3), requires_grad=True)
    s_neg = Tensor(rng.uniform(0.1, 0.9, (3, 2)), requires_grad=True)
    views = Tensor(rng.standard_normal((4, 5)), requires_grad=True)

    def objective():
        lm = main_loss(positive_loss(s_pos),
                       negative_loss(s_neg.reshape(6)),
                       margin_loss(s_pos, s_neg, 1.0), alpha=0.5)
        return total_loss(lm, info_nce(views, 1.0), beta=0.05)

    err = grad_check(objective, [s_pos, s_neg, views], rng)
    assert err <= 1e-4


def test_margin_monotonicity(rng):
    # margin loss never increases when a positive score rises
    s_neg = t(rng.uniform(0.1, 0.9, (2, 3)))
    lo = float(margin_loss(t([0.3, 0.4]), s_neg, 1.0).data)
    hi = float(margin_loss(t([0.5, 0.6]), s_neg, 1.0).data)
    assert hi <= lo
