"""Reference-loss evaluations against closed forms and hand traces."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stvox.losses import (
    focal_loss,
    gaussian_nll,
    gradient_check,
    l1_flow_loss,
    lovasz_softmax,
    total_loss,
)


class TestFocal:
    def test_peaked_logits_vanish(self):
        logits = np.array([[30.0, 0.0, 0.0]])
        assert focal_loss(logits, [0]) == pytest.approx(0.0, abs=1e-9)

    def test_gamma_zero_uniform_is_log_n(self):
        logits = np.zeros((1, 4))
        got = focal_loss(logits, [2], gamma=0.0, alpha_weight=1.0)
        assert got == pytest.approx(np.log(4.0), abs=1e-12)

    def test_gamma_two_half_probability(self):
        # p_t = 0.5 with two equal logits: loss = 0.25 * ln 2.
        logits = np.zeros((1, 2))
        got = focal_loss(logits, [0], gamma=2.0, alpha_weight=1.0)
        assert got == pytest.approx(0.25 * np.log(2.0), abs=1e-12)

    def test_gamma_zero_equals_cross_entropy(self):
        rng = np.random.default_rng(0)
        logits = rng.normal(size=(64, 6))
        targets = rng.integers(0, 6, 64)
        probs = np.exp(logits - logits.max(axis=1, keepdims=True))
        probs /= probs.sum(axis=1, keepdims=True)
        ce = -np.mean(np.log(probs[np.arange(64), targets]))
        assert focal_loss(logits, targets, gamma=0.0) == pytest.approx(ce, abs=1e-9)

    def test_alpha_weight_scales(self):
        logits = np.zeros((1, 4))
        base = focal_loss(logits, [0], gamma=0.0, alpha_weight=1.0)
        assert focal_loss(logits, [0], gamma=0.0, alpha_weight=0.25) == pytest.approx(base / 4)

    def test_negative_gamma_rejected(self):
        with pytest.raises(ValueError):
            focal_loss(np.zeros((1, 2)), [0], gamma=-1.0)


class TestLovasz:
    def test_perfect_one_hot_is_zero(self):
        probs = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert lovasz_softmax(probs, [0, 1]) == pytest.approx(0.0)

    def test_single_voxel_error_is_loss(self):
        # One voxel, two classes, p(target) = 0.3: the one-element Lovasz
        # extension equals the error itself, 0.7.
        probs = np.array([[0.3, 0.7]])
        assert lovasz_softmax(probs, [0]) == pytest.approx(0.7)

    def test_two_voxel_hand_trace(self):
        # Both voxels belong to class 0 with p = (0.2, 0.8): sorted errors
        # (0.8, 0.2); cumulative intersection (1, 0), union (2, 2) give the
        # jaccard steps (0.5, 0.5); loss = 0.8*0.5 + 0.2*0.5 = 0.5.
        probs = np.array([[0.2, 0.8], [0.8, 0.2]])
        assert lovasz_softmax(probs, [0, 0]) == pytest.approx(0.5, abs=1e-9)

    def test_non_negative(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            probs = rng.dirichlet(np.ones(4), size=6)
            targets = rng.integers(0, 4, 6)
            assert lovasz_softmax(probs, targets) >= 0.0

    def test_zero_only_for_exact_predictions(self):
        probs = np.array([[0.9, 0.1], [0.1, 0.9]])
        assert lovasz_softmax(probs, [0, 1]) > 0.0

    def test_empty_batch_is_zero(self):
        assert lovasz_softmax(np.zeros((0, 3)), np.zeros(0, dtype=int)) == 0.0


class TestGaussianNLL:
    def test_zero_everything(self):
        loss, grad = gaussian_nll(np.zeros(1), np.zeros(1))
        assert loss == 0.0
        assert grad[0] == pytest.approx(0.5)

    def test_plug_in_value(self):
        loss, _ = gaussian_nll(np.zeros(1), np.array([2.0]))
        assert loss == pytest.approx(2.0)

    def test_gradient_zero_at_log_r_squared(self):
        r = np.array([2.0])
        _, grad = gaussian_nll(np.log(r**2), r)
        assert grad[0] == pytest.approx(0.0, abs=1e-12)

    def test_analytic_gradient_matches_finite_differences(self):
        assert gradient_check(seed=1, n_points=50) < 1e-5

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            gaussian_nll(np.zeros(2), np.zeros(3))


class TestL1Flow:
    def test_exact_prediction_zero(self):
        f = np.array([[1.0, -2.0]])
        assert l1_flow_loss(f, f) == 0.0

    def test_unit_offsets(self):
        assert l1_flow_loss(np.array([[1.0, 1.0]]), np.zeros((1, 2))) == pytest.approx(1.0)

    def test_batch_hand_sum(self):
        pred = np.array([[1.0, 0.0], [0.0, -3.0]])
        gt = np.array([[0.0, 0.0], [0.0, 1.0]])
        assert l1_flow_loss(pred, gt) == pytest.approx((1.0 + 0.0 + 0.0 + 4.0) / 4.0)


class TestTotal:
    def test_component_sum(self):
        assert total_loss({"a": 0.5, "b": 0.25, "c": 0.25}) == pytest.approx(1.0)

    def test_all_zero(self):
        assert total_loss({"a": 0.0, "b": 0.0}) == 0.0

    def test_weights_apply(self):
        assert total_loss({"a": 2.0, "b": 1.0}, weights={"a": 0.5}) == pytest.approx(2.0)

    def test_matches_individual_terms_on_shared_batch(self):
        rng = np.random.default_rng(2)
        logits = rng.normal(size=(16, 4))
        targets = rng.integers(0, 4, 16)
        probs = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
        s = rng.normal(size=16)
        r = rng.normal(size=16)
        flow_pred, flow_gt = rng.normal(size=(16, 2)), rng.normal(size=(16, 2))
        parts = {
            "focal": focal_loss(logits, targets),
            "lovasz": lovasz_softmax(probs, targets),
            "nll": gaussian_nll(s, r)[0],
            "flow": l1_flow_loss(flow_pred, flow_gt),
        }
        assert total_loss(parts) == pytest.approx(sum(parts.values()))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_losses_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    n = 12
    logits = rng.normal(size=(n, 4))
    targets = rng.integers(0, 4, n)
    probs = rng.dirichlet(np.ones(4), size=n)
    s, r = rng.normal(size=n), rng.normal(size=n)
    perm = rng.permutation(n)
    assert focal_loss(logits, targets) == pytest.approx(
        focal_loss(logits[perm], targets[perm]), abs=1e-12)
    assert lovasz_softmax(probs, targets) == pytest.approx(
        lovasz_softmax(probs[perm], targets[perm]), abs=1e-12)
    assert gaussian_nll(s, r)[0] == pytest.approx(gaussian_nll(s[perm], r[perm])[0], abs=1e-9)
