"""Occupancy evaluation: mIoU, temporal-consistency (STCV) and eval scopes.

STCV for one frame is the fraction of currently non-free voxels whose class
differs from the prediction previously stored in the scene memory at the
same physical location.  Memory voxels never written read as the free class
and therefore never count as changes, which keeps the first frame of a scene
at exactly zero.  mSTCV averages STCV over frames.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import GridSpec, Pose, grid_to_world, voxel_index_coords, world_to_grid
from .memory import SceneMemory, nearest_gather_labels
from .util import fmt_float, snap_near_integers


@dataclass
class LabelGrid:
    """Per-voxel class labels plus a visibility mask on a frame grid."""

    spec: GridSpec
    labels: np.ndarray
    visibility: np.ndarray
    n_classes: int
    free_class: int

    def __post_init__(self) -> None:
        shape = (self.spec.z, self.spec.h, self.spec.w)
        self.labels = np.asarray(self.labels)
        if self.labels.shape != shape:
            raise ValueError(f"labels shape {self.labels.shape} != {shape}")
        if self.visibility is None:
            self.visibility = np.ones(shape, dtype=bool)
        self.visibility = np.asarray(self.visibility, dtype=bool)
        if self.visibility.shape != shape:
            raise ValueError("visibility shape does not match grid")
        if self.labels.min() < 0 or self.labels.max() >= self.n_classes:
            raise ValueError("labels outside [0, n_classes)")


@dataclass
class IoUReport:
    """Per-class IoU with absent classes reported as NaN and excluded from the mean."""

    per_class: np.ndarray
    mean: float
    free_class: int

    def present(self) -> np.ndarray:
        return ~np.isnan(self.per_class)


def miou(preds: list[LabelGrid], gts: list[LabelGrid], apply_mask: bool = True) -> IoUReport:
    """Intersection-over-union accumulated over frames.

    The free class is excluded from the mean (benchmark convention); classes
    with an empty union are absent (NaN).  With ``apply_mask`` only voxels
    visible in the ground-truth grid are counted.
    """
    if len(preds) != len(gts) or not preds:
        raise ValueError("need equally many prediction and ground-truth frames")
    n = gts[0].n_classes
    free = gts[0].free_class
    confusion = np.zeros((n, n), dtype=np.int64)
    for pred, gt in zip(preds, gts):
        if pred.labels.shape != gt.labels.shape:
            raise ValueError("prediction / ground-truth grid shapes differ")
        p = pred.labels.ravel()
        g = gt.labels.ravel()
        if apply_mask:
            keep = gt.visibility.ravel()
            p, g = p[keep], g[keep]
        confusion += np.bincount(g.astype(np.int64) * n + p.astype(np.int64),
                                 minlength=n * n).reshape(n, n)
    tp = np.diag(confusion).astype(np.float64)
    fp = confusion.sum(axis=0) - tp
    fn = confusion.sum(axis=1) - tp
    union = tp + fp + fn
    per_class = np.full(n, np.nan)
    nonzero = union > 0
    per_class[nonzero] = tp[nonzero] / union[nonzero]
    semantic = [c for c in range(n) if c != free and nonzero[c]]
    mean = float(np.mean(per_class[semantic])) if semantic else float("nan")
    return IoUReport(per_class, mean, free)


@dataclass
class FrameConsistency:
    """One frame's STCV along with the per-class flip attribution."""

    stcv: float
    flips_per_class: np.ndarray
    changed: int
    non_free: int


def _memory_pred_at(mem: SceneMemory, pose: Pose, spec: GridSpec) -> np.ndarray:
    coords = voxel_index_coords(spec.dims)
    world = grid_to_world(spec, coords)
    frac = snap_near_integers(world_to_grid(mem.spec, pose.apply(world)))
    shape = (spec.z, spec.h, spec.w)
    return nearest_gather_labels(mem.pred_labels, frac, mem.free_class).reshape(shape)


def _consistency_against(previous: np.ndarray, pred: LabelGrid,
                         apply_mask: bool) -> FrameConsistency:
    free = pred.free_class
    current = pred.labels
    cur_non_free = current != free
    if apply_mask:
        cur_non_free = cur_non_free & pred.visibility
    changed = cur_non_free & (previous != free) & (previous != current)

    flips = np.bincount(previous[changed].astype(np.int64).ravel(),
                        minlength=pred.n_classes)
    n_changed = int(changed.sum())
    n_non_free = int(cur_non_free.sum())
    stcv = n_changed / n_non_free if n_non_free else 0.0
    return FrameConsistency(stcv, flips, n_changed, n_non_free)


def stcv_frame_detail(mem: SceneMemory, pose: Pose, pred: LabelGrid,
                      apply_mask: bool = True) -> FrameConsistency:
    """STCV numerator/denominator bookkeeping for one frame.

    A voxel counts as changed when the current prediction and the stored
    memory prediction are both non-free and disagree; the denominator counts
    currently non-free voxels.  ``apply_mask`` restricts both counts to the
    frame's visible voxels.  Flips are attributed to the memory-stored
    (previous) class.
    """
    return _consistency_against(_memory_pred_at(mem, pose, pred.spec), pred, apply_mask)


def stcv_frame(mem: SceneMemory, pose: Pose, pred: LabelGrid, apply_mask: bool = True) -> float:
    """Spatiotemporal classification variability of one frame, in [0, 1]."""
    return stcv_frame_detail(mem, pose, pred, apply_mask).stcv


@dataclass
class ConsistencyLedger:
    """Accumulated per-frame STCV values and flip counts, masked and unmasked."""

    n_classes: int
    stcv_masked: list[float] = field(default_factory=list)
    stcv_unmasked: list[float] = field(default_factory=list)
    flips_masked: np.ndarray = None
    flips_unmasked: np.ndarray = None

    def __post_init__(self) -> None:
        if self.flips_masked is None:
            self.flips_masked = np.zeros(self.n_classes, dtype=np.int64)
        if self.flips_unmasked is None:
            self.flips_unmasked = np.zeros(self.n_classes, dtype=np.int64)

    def add_frame(self, masked: FrameConsistency, unmasked: FrameConsistency) -> None:
        self.stcv_masked.append(masked.stcv)
        self.stcv_unmasked.append(unmasked.stcv)
        self.flips_masked += masked.flips_per_class
        self.flips_unmasked += unmasked.flips_per_class

    def record(self, mem: SceneMemory, pose: Pose, pred: LabelGrid) -> None:
        """Evaluate both mask variants against the memory and accumulate them."""
        previous = _memory_pred_at(mem, pose, pred.spec)
        self.add_frame(
            _consistency_against(previous, pred, apply_mask=True),
            _consistency_against(previous, pred, apply_mask=False),
        )


def mstcv(ledger: ConsistencyLedger, masked: bool = True) -> float:
    """Mean STCV across all recorded frames."""
    series = ledger.stcv_masked if masked else ledger.stcv_unmasked
    if not series:
        raise ValueError("ledger holds no frames")
    return float(np.mean(series))


def per_class_stcv(method: ConsistencyLedger, baseline: ConsistencyLedger,
                   masked: bool = True) -> np.ndarray:
    """Per-class flip counts of a method relative to a baseline.

    Classes where the baseline recorded no flips are undefined and reported
    as NaN rather than infinity.
    """
    m = method.flips_masked if masked else method.flips_unmasked
    b = baseline.flips_masked if masked else baseline.flips_unmasked
    out = np.full(method.n_classes, np.nan)
    ok = b > 0
    out[ok] = m[ok] / b[ok]
    return out


def extended_eval_scope(current_vis: np.ndarray, mem: SceneMemory, pose: Pose,
                        dynamic_mask: np.ndarray | None = None,
                        frame_spec: GridSpec | None = None) -> np.ndarray:
    """Evaluation mask extended with historically observed static voxels.

    Returns ``current_vis | (historically_observed & ~dynamic)``: voxels seen
    in earlier frames stay evaluated if they never belonged to a dynamic
    object.
    """
    frame_spec = frame_spec or mem.frame_spec
    coords = voxel_index_coords(frame_spec.dims)
    world = grid_to_world(frame_spec, coords)
    frac = snap_near_integers(world_to_grid(mem.spec, pose.apply(world)))
    shape = (frame_spec.z, frame_spec.h, frame_spec.w)
    historic = nearest_gather_labels(mem.observed, frac, False).reshape(shape)
    if dynamic_mask is not None:
        historic = historic & ~np.asarray(dynamic_mask, dtype=bool)
    return np.asarray(current_vis, dtype=bool) | historic


def write_per_class_csv(path, n_classes: int, free_class: int, columns: dict[str, np.ndarray],
                        class_names: list[str] | None = None) -> None:
    """Write a per-class CSV report with deterministic formatting."""
    names = class_names or [f"class_{i}" for i in range(n_classes)]
    header = ["class_id", "class_name", "is_free"] + list(columns)
    lines = [",".join(header)]
    for c in range(n_classes):
        row = [str(c), names[c], str(int(c == free_class))]
        for values in columns.values():
            v = values[c]
            row.append("" if isinstance(v, float) and np.isnan(v) else fmt_float(float(v)))
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n")
