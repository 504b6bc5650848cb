import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from appl import autodiff as ad
from appl.autodiff import Tape, backward
from appl.losses import (ce_labeled, ce_transductive, class_probs, l_coh, l_dis, loss_finetune,
                         loss_train)


def _episode(seed=0, n=5, k=5, q=15, d=16):
    rng = np.random.default_rng(seed)
    protos = rng.standard_normal((n, d))
    s = rng.standard_normal((n * k, d))
    qx = rng.standard_normal((n * q, d))
    return protos, s, np.repeat(np.arange(n), k), qx, np.repeat(np.arange(n), q)


# --- class probabilities ----------------------------------------------------

def test_equidistant_prototypes_give_uniform_probs():
    protos = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    np.testing.assert_allclose(class_probs(np.zeros(2), protos).data, 0.25, atol=1e-15)


def test_nearest_prototype_wins():
    p = class_probs(np.array([0.9, 0.0]), np.array([[1.0, 0.0], [-1.0, 0.0]])).data
    assert p.argmax() == 0


def test_probs_hand_value():
    # distances 0 and ln 3 -> [0.75, 0.25]
    p = class_probs(np.zeros(1), np.array([[0.0], [math.sqrt(math.log(3.0))]])).data
    np.testing.assert_allclose(p, [0.75, 0.25], atol=1e-15)


def test_probs_match_loop_oracle():
    protos, s, _, _, _ = _episode(1)
    ours = class_probs(s, protos).data
    for i in range(len(s)):
        np.testing.assert_allclose(ours[i], oracles.probs(s[i], protos), atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.1, 10.0))
def test_argmax_invariant_under_positive_scaling_of_probs(seed, c):
    rng = np.random.default_rng(seed)
    p = class_probs(rng.standard_normal((6, 3)), rng.standard_normal((4, 3))).data
    assert (np.argmax(c * p, axis=1) == np.argmax(p, axis=1)).all()


# --- labeled cross-entropy --------------------------------------------------

def test_ce_near_zero_when_embeddings_sit_on_far_apart_prototypes():
    protos = np.array([[0.0, 0.0], [100.0, 0.0]])
    assert ce_labeled(protos, [0, 1], protos).item() < 1e-12


def test_ce_uniform_is_m_log_n():
    # identical prototypes make every query equidistant
    ce = ce_labeled(np.ones((75, 2)), np.repeat(np.arange(5), 15), np.zeros((5, 2))).item()
    assert ce == pytest.approx(75 * math.log(5), rel=1e-12)


def test_ce_matches_loop_oracle():
    protos, _, _, qx, qy = _episode(2)
    assert ce_labeled(qx, qy, protos).item() == pytest.approx(oracles.ce(qx, qy, protos), rel=1e-10)


# --- discriminative loss ----------------------------------------------------

def test_l_dis_hand_values():
    assert l_dis(np.array([[0.0], [1.0]])).item() == pytest.approx(1.0, rel=1e-11)
    assert l_dis(np.array([[0.0, 0.0], [2.0, 0.0]])).item() == pytest.approx(0.25, rel=1e-11)


def test_l_dis_collapsed_prototypes_are_large_but_finite():
    assert l_dis(np.ones((3, 4))).item() == pytest.approx(1e12)


def test_l_dis_needs_two_prototypes():
    with pytest.raises(ValueError):
        l_dis(np.ones((1, 3)))


def test_l_dis_matches_oracle_and_decreases_with_spread():
    protos = _episode(3)[0]
    assert l_dis(protos).item() == pytest.approx(oracles.l_dis(protos), rel=1e-12)
    assert l_dis(2 * protos).item() < l_dis(protos).item()


# --- cohesive loss ----------------------------------------------------------

def test_l_coh_hand_values():
    protos = np.array([[0.0, 0.0], [5.0, 5.0]])
    assert l_coh(protos, protos, [0, 1]).item() == 0.0
    assert l_coh(protos, np.array([[2.0, 0.0]]), [0]).item() == 4.0


def test_l_coh_matches_oracle():
    protos, s, sy, _, _ = _episode(4)
    assert l_coh(protos, s, sy).item() == pytest.approx(oracles.l_coh(protos, s, sy), rel=1e-12)


# --- transductive cross-entropy ---------------------------------------------

def _soft(seed, m=10, n=5):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((m, n))
    return np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)


def test_gate_at_one_admits_nothing_and_has_no_gradient():
    tape = Tape()
    probs = ad.softmax_neg(tape.leaf(np.random.default_rng(0).standard_normal((10, 5))))
    loss, n = ce_transductive(probs, _soft(1), 1.0)
    assert loss.item() == 0.0 and n == 0
    assert not loss.requires_grad


def test_gate_at_zero_admits_every_query():
    probs = ad.softmax_neg(ad.Tensor(np.random.default_rng(2).standard_normal((10, 5))))
    soft = _soft(3)
    loss, n = ce_transductive(probs, soft, 0.0)
    assert n == 10
    assert loss.item() == pytest.approx(-(soft * np.log(probs.data)).sum(), rel=1e-12)


def test_gate_is_strict():
    soft = np.array([[0.4, 0.6], [0.7, 0.3]])
    _, n = ce_transductive(ad.Tensor(np.full((2, 2), 0.5)), soft, 0.6)
    assert n == 1


def test_one_hot_targets_on_confident_predictions_are_near_zero():
    probs = ad.Tensor(np.array([[1 - 1e-12, 1e-12], [1e-12, 1 - 1e-12]]))
    loss, n = ce_transductive(probs, np.eye(2), 0.5)
    assert n == 2 and loss.item() < 1e-10


# --- composites -------------------------------------------------------------

def test_loss_train_without_regularizers_is_query_ce():
    protos, _, _, qx, qy = _episode(5)
    out = loss_train(qx, qy, protos, 0.0, 0.0)
    assert out.total == ce_labeled(qx, qy, protos).item()


def test_loss_train_components_sum_to_total():
    protos, _, _, qx, qy = _episode(6)
    out = loss_train(qx, qy, protos, 0.1, 1e-3)
    assert out.total == pytest.approx(out.ce_query + 0.1 * out.l_dis + 1e-3 * out.l_coh, abs=1e-12)


def test_loss_finetune_components_sum_to_total():
    protos, s, sy, qx, _ = _episode(7)
    out = loss_finetune(s, sy, qx, protos, _soft(8, 75), 0.1, 1e-3, 0.4)
    expected = out.ce_support + out.ce_transductive + 0.1 * out.l_dis + 1e-3 * out.l_coh
    assert out.n_confident > 0
    assert out.total == pytest.approx(expected, abs=1e-10)


def _grad(fn, protos):
    tape = Tape()
    p = tape.leaf(protos)
    backward(tape, fn(p).tensor)
    return p.grad


def test_gate_at_one_equals_transductive_term_off_bitwise():
    protos, s, sy, qx, _ = _episode(9)
    soft = _soft(10, 75)
    on = loss_finetune(s, sy, qx, protos, soft, 0.1, 1e-3, 1.0)
    off = loss_finetune(s, sy, qx, protos, soft, 0.1, 1e-3, 0.4, use_ce_transductive=False)
    assert on.total == off.total
    g_on = _grad(lambda p: loss_finetune(s, sy, qx, p, soft, 0.1, 1e-3, 1.0), protos)
    g_off = _grad(lambda p: loss_finetune(s, sy, qx, p, soft, 0.1, 1e-3, 0.4,
                                          use_ce_transductive=False), protos)
    assert g_on.tobytes() == g_off.tobytes()


def test_pure_support_ce():
    protos, s, sy, qx, _ = _episode(11)
    out = loss_finetune(s, sy, qx, protos, _soft(12, 75), 0.0, 0.0, 1.0)
    assert out.total == ce_labeled(s, sy, protos).item()

