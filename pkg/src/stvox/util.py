"""Small numeric helpers used by several modules."""

from __future__ import annotations

import os

import numpy as np


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax along ``axis``."""
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # Split by sign to avoid overflow in exp for large |x|.
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def snap_near_integers(a: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Snap values within ``tol`` (scaled by magnitude) of an integer onto it.

    Coordinate chains like ``(origin + i * vs - origin2) / vs`` accumulate
    last-ulp noise that would otherwise break node-exact interpolation and
    nearest-neighbor rounding at integer-aligned poses.
    """
    r = np.round(a)
    return np.where(np.abs(a - r) <= tol * (1.0 + np.abs(r)), r, a)


def worker_count() -> int:
    """Parallelism cap from the STOCC_THREADS environment variable (>= 1)."""
    raw = os.environ.get("STOCC_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        return 1
    return max(1, n)


def fmt_float(x: float) -> str:
    """Deterministic, compact decimal rendering for report files."""
    return f"{float(x):.10g}"
