"""Deterministic forward evaluation of the training objectives.

Covers the focal classification loss, the Lovasz softmax loss, the Gaussian
negative log-likelihood for log-variance prediction (with its analytic
gradient) and the L1 flow loss.  No backpropagation machinery lives here;
these are reference evaluations used by tests and the ``loss-check`` CLI.
"""

from __future__ import annotations

from typing import Mapping

import numpy as np

from .util import softmax

_P_MIN = 1e-12


def focal_loss(logits: np.ndarray, targets: np.ndarray, gamma: float = 2.0,
               alpha_weight: float = 1.0) -> float:
    """Mean focal loss: ``-alpha * (1 - p_t)^gamma * log(p_t)`` per voxel.

    With ``gamma=0`` and ``alpha_weight=1`` this reduces to cross-entropy.
    Probabilities are clamped at 1e-12 before the log.
    """
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    targets = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    if targets.shape[0] != logits.shape[0]:
        raise ValueError("one target per logit row required")
    probs = softmax(logits, axis=-1)
    p_t = np.clip(probs[np.arange(len(targets)), targets], _P_MIN, 1.0)
    per_voxel = -alpha_weight * (1.0 - p_t) ** gamma * np.log(p_t)
    return float(per_voxel.mean())


def _lovasz_grad(gt_sorted: np.ndarray) -> np.ndarray:
    """Gradient of the Lovasz extension of the Jaccard set function."""
    gts = gt_sorted.sum()
    intersection = gts - np.cumsum(gt_sorted)
    union = gts + np.cumsum(1.0 - gt_sorted)
    jaccard = 1.0 - intersection / union
    if len(gt_sorted) > 1:
        jaccard[1:] = jaccard[1:] - jaccard[:-1]
    return jaccard


def lovasz_softmax(probabilities: np.ndarray, targets: np.ndarray) -> float:
    """Lovasz softmax loss averaged over classes present in the targets.

    Per class the error vector is ``1 - p(c)`` on voxels of that class and
    ``p(c)`` elsewhere; errors are sorted descending and weighted by the
    Jaccard-extension gradient.
    """
    probabilities = np.atleast_2d(np.asarray(probabilities, dtype=np.float64))
    targets = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    if targets.shape[0] != probabilities.shape[0]:
        raise ValueError("one target per probability row required")
    present = np.unique(targets)
    if present.size == 0:
        return 0.0
    losses = []
    for c in present:
        fg = (targets == c).astype(np.float64)
        errors = np.abs(fg - probabilities[:, c])
        order = np.argsort(-errors, kind="stable")
        losses.append(float(np.dot(errors[order], _lovasz_grad(fg[order]))))
    return float(np.mean(losses))


def gaussian_nll(s: np.ndarray, residual: np.ndarray) -> tuple[float, np.ndarray]:
    """Gaussian negative log-likelihood over per-element log variances.

    Returns ``(sum_i 0.5 * (exp(-s_i) * r_i**2 + s_i), d/ds_i)`` where the
    analytic gradient is ``0.5 * (1 - exp(-s_i) * r_i**2)``.
    """
    s = np.asarray(s, dtype=np.float64)
    r = np.asarray(residual, dtype=np.float64)
    if s.shape != r.shape:
        raise ValueError("log variance and residual shapes must match")
    exp_neg = np.exp(-s)
    loss = float(np.sum(0.5 * (exp_neg * r**2 + s)))
    grad = 0.5 * (1.0 - exp_neg * r**2)
    return loss, grad


def l1_flow_loss(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean absolute error over flow components."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError("flow prediction and ground truth shapes must match")
    return float(np.mean(np.abs(pred - gt)))


def total_loss(components: Mapping[str, float],
               weights: Mapping[str, float] | None = None) -> float:
    """Weighted sum of loss components; every weight defaults to 1."""
    weights = weights or {}
    return float(sum(float(v) * float(weights.get(k, 1.0)) for k, v in components.items()))


def gradient_check(seed: int = 0, n_points: int = 1000, step: float = 1e-4) -> float:
    """Max relative error between analytic and central-difference NLL gradients."""
    rng = np.random.default_rng(seed)
    s = rng.uniform(-2.0, 2.0, n_points)
    r = rng.uniform(-3.0, 3.0, n_points)
    _, grad = gaussian_nll(s, r)
    worst = 0.0
    for i in range(n_points):
        up, dn = s.copy(), s.copy()
        up[i] += step
        dn[i] -= step
        fd = (gaussian_nll(up, r)[0] - gaussian_nll(dn, r)[0]) / (2.0 * step)
        denom = max(abs(grad[i]), 1e-8)
        worst = max(worst, abs(fd - grad[i]) / denom)
    return worst
