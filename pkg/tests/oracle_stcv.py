"""Brute-force STCV oracle: explicit scene-coordinate correspondences.

Used by the metrics tests and the acceptance suite.  Works on integer-voxel
translations only, where nearest-neighbor label writes are exact, and counts
flips by direct enumeration over a dictionary keyed by scene voxel.
"""

import numpy as np


def stcv_oracle(frames, free_class, apply_mask):
    """Per-frame STCV by enumeration.

    ``frames`` is a list of ``(offset, labels, visibility)`` tuples where
    ``offset`` is the integer ``(dx, dy, dz)`` voxel translation of the frame
    and ``labels``/``visibility`` have shape ``(Z, H, W)``.  STCV for a frame
    is evaluated against the store *before* that frame's labels are written.
    """
    stored: dict[tuple[int, int, int], int] = {}
    stcvs = []
    for offset, labels, visibility in frames:
        dx, dy, dz = offset
        changed = 0
        non_free = 0
        z_dim, h_dim, w_dim = labels.shape
        for z in range(z_dim):
            for y in range(h_dim):
                for x in range(w_dim):
                    if apply_mask and not visibility[z, y, x]:
                        continue
                    cur = int(labels[z, y, x])
                    if cur == free_class:
                        continue
                    non_free += 1
                    prev = stored.get((x + dx, y + dy, z + dz), free_class)
                    if prev != free_class and prev != cur:
                        changed += 1
        stcvs.append(changed / non_free if non_free else 0.0)
        for z in range(z_dim):
            for y in range(h_dim):
                for x in range(w_dim):
                    stored[(x + dx, y + dy, z + dz)] = int(labels[z, y, x])
    return stcvs


def random_case(rng, max_dims=(2, 4, 4), max_frames=3, n_classes=4):
    """One randomized oracle case: dims, integer offsets, labels, visibility."""
    z = int(rng.integers(1, max_dims[0] + 1))
    h = int(rng.integers(1, max_dims[1] + 1))
    w = int(rng.integers(1, max_dims[2] + 1))
    n_frames = int(rng.integers(1, max_frames + 1))
    frames = []
    for _ in range(n_frames):
        offset = (int(rng.integers(-2, 3)), int(rng.integers(-2, 3)), 0)
        labels = rng.integers(0, n_classes, size=(z, h, w)).astype(np.uint8)
        visibility = rng.random((z, h, w)) < 0.8
        frames.append((offset, labels, visibility))
    return frames
