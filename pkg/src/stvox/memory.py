"""Scene-level spatiotemporal memory: allocation, RoI extraction and write-back.

One memory covers the whole driving sequence in scene-centered coordinates.
Its extent is the bounding box of every frame's grid footprint along the ego
trajectory, so the stored volume is ``(1 + delta) * H * W * Z`` voxels where
``delta`` is the relative volume growth caused by ego motion.

Reads (``extract_roi``) iterate ego-frame voxel centers, map them into the
scene frame and interpolate.  Writes go the other way: every memory voxel in
the frame's region of interest is mapped back into ego coordinates with the
inverse pose and sampled from the frame grid bilinearly per z layer, so each
traversed memory location is updated without misalignment holes.  Label
planes use nearest-neighbor lookups in both directions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import gridio
from .errors import InvariantViolation
from .geometry import (
    GridSpec,
    Pose,
    VoxelGrid,
    apply_trilinear,
    bilinear_gather,
    grid_to_world,
    nearest_indices,
    plan_trilinear,
    voxel_index_coords,
    world_to_grid,
)
from .util import snap_near_integers, softmax

ALL_PLANES = ("features", "class_activation", "log_variance", "flow", "pred_labels", "gt_labels", "observed")
FLOAT_PLANES = ("features", "class_activation", "log_variance", "flow")


@dataclass
class TemporalAttributes:
    """Per-voxel temporal state: class activation, mean log variance, top-down flow."""

    class_activation: np.ndarray
    log_variance_mean: float
    flow: np.ndarray

    def validate(self, tol: float = 1e-6) -> None:
        c = np.asarray(self.class_activation, dtype=np.float64)
        if np.any(c < -tol) or abs(float(c.sum()) - 1.0) > tol:
            raise ValueError("class activation must lie on the probability simplex")
        if not np.isfinite(self.log_variance_mean):
            raise ValueError("log variance must be finite")
        if not np.all(np.isfinite(self.flow)):
            raise ValueError("flow must be finite")


@dataclass
class FrameIO:
    """Per-frame synthetic head outputs in the ego-centered grid.

    All arrays share the frame grid shape ``(Z, H, W, ...)``; ``log_variance``
    carries the per-class vector which is averaged to a scalar before being
    written to memory.
    """

    timestamp: int
    pose: Pose
    spec: GridSpec
    features: np.ndarray
    class_activation: np.ndarray
    log_variance: np.ndarray
    flow: np.ndarray
    pred_labels: np.ndarray
    gt_labels: np.ndarray
    visibility: np.ndarray


class SceneMemory:
    """Unified scene-extent memory holding features, temporal attributes and labels.

    Feature and attribute planes read as zeros until written; label planes
    read as the free class.  ``observed`` marks voxels ever touched by a
    write and is monotone over a scene run.
    """

    def __init__(self, spec: GridSpec, frame_spec: GridSpec, n_classes: int,
                 free_class: int | None = None, delta: float = 0.0):
        if n_classes < 2:
            raise ValueError("need at least two classes (one semantic plus free)")
        self.spec = spec
        self.frame_spec = frame_spec
        self.n_features = frame_spec.channels
        self.n_classes = n_classes
        self.free_class = n_classes - 1 if free_class is None else int(free_class)
        if not 0 <= self.free_class < n_classes:
            raise ValueError("free_class outside [0, n_classes)")
        self.delta = float(delta)
        zhw = (spec.z, spec.h, spec.w)
        self.features = np.zeros(zhw + (self.n_features,))
        self.class_activation = np.zeros(zhw + (n_classes,))
        self.log_variance = np.zeros(zhw)
        self.flow = np.zeros(zhw + (2,))
        self.pred_labels = np.full(zhw, self.free_class, dtype=np.uint8)
        self.gt_labels = np.full(zhw, self.free_class, dtype=np.uint8)
        self.observed = np.zeros(zhw, dtype=bool)
        self._map_key: bytes | None = None
        self._map_val: "RoiMapping | None" = None

    def mapping_for(self, pose: Pose) -> "RoiMapping":
        """RoI mapping for a pose, cached one-deep.

        The mapping depends only on the pose and the two immutable grid
        specs, so consecutive write operations within a frame step reuse it.
        """
        key = pose.matrix.tobytes()
        if self._map_key != key:
            self._map_val = roi_mapping(self.spec, self.frame_spec, pose)
            self._map_key = key
        return self._map_val

    @property
    def total_channels(self) -> int:
        """Feature channels plus attribute channels (c, delta, flow)."""
        return self.n_features + self.n_classes + 3

    @property
    def stored_cells(self) -> int:
        return self.spec.num_voxels

    def attribute_stack(self) -> np.ndarray:
        """Attribute planes concatenated as ``(Z, H, W, N + 3)``."""
        return np.concatenate(
            [self.class_activation, self.log_variance[..., None], self.flow], axis=-1
        )


def _frame_corners_world(frame_spec: GridSpec, pose: Pose) -> np.ndarray:
    lo, hi = frame_spec.extent()
    corners = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
    return pose.apply(corners)


def allocate_memory(trajectory: Sequence[Pose], frame_spec: GridSpec,
                    n_classes: int, free_class: int | None = None) -> SceneMemory:
    """Allocate a zeroed scene memory covering every frame of a trajectory.

    The scene extent is the axis-aligned bounding box of all transformed
    frame-grid corners, expanded to whole multiples of the voxel size.  The
    z span must fit the per-frame layer count: the memory keeps ``Z`` layers
    and rejects trajectories that leave the frame z envelope.
    """
    if len(trajectory) == 0:
        raise ValueError("trajectory must contain at least one pose")
    corners = np.concatenate([_frame_corners_world(frame_spec, pose) for pose in trajectory])
    lo = corners.min(axis=0)
    hi = corners.max(axis=0)
    vs = frame_spec.voxel_size

    w_g = math.ceil((hi[0] - lo[0]) / vs - 1e-9)
    h_g = math.ceil((hi[1] - lo[1]) / vs - 1e-9)
    z_span = (hi[2] - lo[2]) / vs
    if z_span > frame_spec.z + 1e-6:
        raise ValueError(
            f"trajectory z extent spans {z_span:.3f} layers but the frame grid has {frame_spec.z}; "
            "scene memory keeps the per-frame layer count"
        )
    z_g = frame_spec.z

    origin = lo + 0.5 * vs
    scene_spec = GridSpec(origin, vs, (h_g, w_g, z_g), frame_spec.channels + n_classes + 3)
    frame_cells = frame_spec.num_voxels
    delta = (h_g * w_g * z_g - frame_cells) / frame_cells
    mem = SceneMemory(scene_spec, frame_spec, n_classes, free_class, delta)

    for pose in trajectory:
        pts = world_to_grid(scene_spec, _frame_corners_world(frame_spec, pose))
        if pts.min() < -0.5 - 1e-6:
            raise InvariantViolation("frame corner fell outside the allocated scene extent")
        limits = np.array([scene_spec.w, scene_spec.h, scene_spec.z], dtype=np.float64)
        if np.any(pts > limits - 0.5 + 1e-6):
            raise InvariantViolation("frame corner fell outside the allocated scene extent")
    return mem


@dataclass
class RoiMapping:
    """Memory voxels covered by a frame, with their ego-frame sample coordinates.

    ``zs, ys, xs`` index the scene arrays; ``ego_frac`` holds fractional
    ``(x, y, z)`` coordinates in the frame grid and ``z_layer``/``nn_idx``
    the rounded per-axis indices used for layer selection and labels.
    Only voxels whose rounded index lies inside the frame grid are kept.
    """

    zs: np.ndarray
    ys: np.ndarray
    xs: np.ndarray
    ego_frac: np.ndarray
    nn_idx: np.ndarray

    @property
    def count(self) -> int:
        return self.zs.size


def roi_mapping(scene_spec: GridSpec, frame_spec: GridSpec, pose: Pose) -> RoiMapping:
    """Reverse mapping for write-back: scene RoI voxels -> ego coordinates."""
    corners = world_to_grid(scene_spec, _frame_corners_world(frame_spec, pose))
    lo = np.maximum(np.floor(corners.min(axis=0)).astype(np.int64), 0)
    hi_lim = np.array([scene_spec.w - 1, scene_spec.h - 1, scene_spec.z - 1], dtype=np.int64)
    hi = np.minimum(np.ceil(corners.max(axis=0)).astype(np.int64), hi_lim)
    if np.any(hi < lo):
        empty = np.zeros(0, dtype=np.int64)
        return RoiMapping(empty, empty, empty, np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))

    zz, yy, xx = np.meshgrid(
        np.arange(lo[2], hi[2] + 1),
        np.arange(lo[1], hi[1] + 1),
        np.arange(lo[0], hi[0] + 1),
        indexing="ij",
    )
    xs, ys, zs = xx.ravel(), yy.ravel(), zz.ravel()
    scene_coords = np.stack([xs, ys, zs], axis=1).astype(np.float64)
    world = grid_to_world(scene_spec, scene_coords)
    ego = pose.inverse().apply(world)
    frac = snap_near_integers(world_to_grid(frame_spec, ego))
    idx, inside = nearest_indices(frac, frame_spec.dims)
    return RoiMapping(zs[inside], ys[inside], xs[inside], frac[inside], idx[inside])


def sample_frame_values(frame_values: np.ndarray, mapping: RoiMapping) -> np.ndarray:
    """Bilinearly sample frame values per z layer at the mapping's ego coordinates."""
    if frame_values.ndim == 3:
        frame_values = frame_values[..., None]
    out = np.zeros((mapping.count, frame_values.shape[-1]))
    layers = mapping.nn_idx[:, 2]
    for layer in np.unique(layers):
        sel = layers == layer
        out[sel] = bilinear_gather(frame_values[layer], mapping.ego_frac[sel, :2])
    return out


def _check_frame_shape(mem: SceneMemory, values: np.ndarray, channels: int | None, name: str) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    zhw = (mem.frame_spec.z, mem.frame_spec.h, mem.frame_spec.w)
    if channels is None:
        if values.shape != zhw:
            raise ValueError(f"{name}: expected shape {zhw}, got {values.shape}")
    else:
        if values.ndim == 3 and channels == 1:
            values = values[..., None]
        if values.shape != zhw + (channels,):
            raise ValueError(f"{name}: expected shape {zhw + (channels,)}, got {values.shape}")
    return values


def write_roi(mem: SceneMemory, pose: Pose, features: np.ndarray) -> None:
    """Assign frame features into the memory's RoI (plain overwrite)."""
    features = _check_frame_shape(mem, features, mem.n_features, "features")
    m = mem.mapping_for(pose)
    mem.features[m.zs, m.ys, m.xs] = sample_frame_values(features, m)
    mem.observed[m.zs, m.ys, m.xs] = True


def write_attributes(mem: SceneMemory, pose: Pose, log_variance_t: np.ndarray, flow_t: np.ndarray) -> None:
    """Assign the averaged log variance and the top-down flow into the RoI."""
    log_variance_t = _check_frame_shape(mem, log_variance_t, 1, "log_variance")
    flow_t = _check_frame_shape(mem, flow_t, 2, "flow")
    m = mem.mapping_for(pose)
    mem.log_variance[m.zs, m.ys, m.xs] = sample_frame_values(log_variance_t, m)[:, 0]
    mem.flow[m.zs, m.ys, m.xs] = sample_frame_values(flow_t, m)
    mem.observed[m.zs, m.ys, m.xs] = True


def write_labels(mem: SceneMemory, pose: Pose, pred_t: np.ndarray, gt_t: np.ndarray | None = None) -> None:
    """Nearest-neighbor write of prediction (and optionally ground-truth) labels."""
    zhw = (mem.frame_spec.z, mem.frame_spec.h, mem.frame_spec.w)
    pred_t = np.asarray(pred_t)
    if pred_t.shape != zhw:
        raise ValueError(f"pred labels: expected shape {zhw}, got {pred_t.shape}")
    m = mem.mapping_for(pose)
    xi, yi, zi = m.nn_idx[:, 0], m.nn_idx[:, 1], m.nn_idx[:, 2]
    mem.pred_labels[m.zs, m.ys, m.xs] = pred_t[zi, yi, xi]
    if gt_t is not None:
        gt_t = np.asarray(gt_t)
        if gt_t.shape != zhw:
            raise ValueError(f"gt labels: expected shape {zhw}, got {gt_t.shape}")
        mem.gt_labels[m.zs, m.ys, m.xs] = gt_t[zi, yi, xi]
    mem.observed[m.zs, m.ys, m.xs] = True


def decay_update_class_activation(mem: SceneMemory, pose: Pose, c_t: np.ndarray, alpha: float) -> None:
    """Exponential-decay update of the stored class activations.

    Per RoI voxel the new activation is ``softmax(alpha * c_t + (1 - alpha) *
    c_hist)`` where ``c_hist`` is the currently stored vector; voxels never
    updated before contribute a uniform simplex instead of zeros so the cold
    start stays on the simplex.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    c_t = _check_frame_shape(mem, c_t, mem.n_classes, "class activation")
    sums = c_t.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > 1e-6) or np.any(c_t < -1e-9):
        raise ValueError("class activation rows must lie on the probability simplex")

    m = mem.mapping_for(pose)
    sampled = sample_frame_values(c_t, m)
    hist = mem.class_activation[m.zs, m.ys, m.xs]
    cold = hist.sum(axis=-1) < 0.5
    hist = np.where(cold[:, None], 1.0 / mem.n_classes, hist)
    mem.class_activation[m.zs, m.ys, m.xs] = softmax(alpha * sampled + (1.0 - alpha) * hist, axis=-1)
    mem.observed[m.zs, m.ys, m.xs] = True


def reduce_log_variance(s: np.ndarray) -> np.ndarray:
    """Average a per-class log-variance field over the class axis."""
    return np.asarray(s, dtype=np.float64).mean(axis=-1)


@dataclass
class ExtractedRoi:
    """Frame-shaped views of selected memory planes; unselected planes are None."""

    spec: GridSpec
    features: np.ndarray | None = None
    class_activation: np.ndarray | None = None
    log_variance: np.ndarray | None = None
    flow: np.ndarray | None = None
    pred_labels: np.ndarray | None = None
    gt_labels: np.ndarray | None = None
    observed: np.ndarray | None = None

    def attributes_at(self, x: int, y: int, z: int) -> TemporalAttributes:
        if self.class_activation is None or self.log_variance is None or self.flow is None:
            raise ValueError("attribute planes were not extracted")
        return TemporalAttributes(
            self.class_activation[z, y, x],
            float(self.log_variance[z, y, x]),
            self.flow[z, y, x],
        )


def extract_roi(mem: SceneMemory, pose: Pose, frame_spec: GridSpec | None = None,
                planes: Sequence[str] = FLOAT_PLANES) -> ExtractedRoi:
    """Sample selected memory planes at every ego-frame voxel center.

    Float planes are trilinearly interpolated (zero padded), label planes and
    the observed mask use nearest-neighbor lookups with free / False fill.
    One interpolation plan is shared by every selected plane.
    """
    if not planes:
        raise ValueError("plane selector must not be empty")
    unknown = set(planes) - set(ALL_PLANES)
    if unknown:
        raise ValueError(f"unknown planes: {sorted(unknown)}")
    frame_spec = frame_spec or mem.frame_spec
    shape = (frame_spec.z, frame_spec.h, frame_spec.w)

    ego_world = grid_to_world(frame_spec, voxel_index_coords(frame_spec.dims))
    frac = snap_near_integers(world_to_grid(mem.spec, pose.apply(ego_world)))

    float_sources = {
        "features": mem.features,
        "class_activation": mem.class_activation,
        "log_variance": mem.log_variance[..., None],
        "flow": mem.flow,
    }
    plan = None
    out = ExtractedRoi(spec=frame_spec)
    for name in planes:
        if name in float_sources:
            if plan is None:
                plan = plan_trilinear(frac, mem.spec.dims)
            values = apply_trilinear(float_sources[name], plan)
            if name == "log_variance":
                setattr(out, name, values[:, 0].reshape(shape))
            else:
                setattr(out, name, values.reshape(shape + (values.shape[-1],)))
        elif name == "pred_labels":
            out.pred_labels = nearest_gather_labels(mem.pred_labels, frac, mem.free_class).reshape(shape)
        elif name == "gt_labels":
            out.gt_labels = nearest_gather_labels(mem.gt_labels, frac, mem.free_class).reshape(shape)
        elif name == "observed":
            out.observed = nearest_gather_labels(mem.observed, frac, False).reshape(shape)
    return out


def nearest_gather_labels(values: np.ndarray, coords: np.ndarray, fill) -> np.ndarray:
    z_dim, h_dim, w_dim = values.shape
    idx, valid = nearest_indices(coords, (h_dim, w_dim, z_dim))
    out = np.full(coords.shape[0], fill, dtype=values.dtype)
    if valid.any():
        out[valid] = values[idx[valid, 2], idx[valid, 1], idx[valid, 0]]
    return out


def extract_feature_grid(mem: SceneMemory, pose: Pose, frame_spec: GridSpec | None = None) -> VoxelGrid:
    """Feature plane of :func:`extract_roi` wrapped as a ``VoxelGrid``."""
    frame_spec = frame_spec or mem.frame_spec
    roi = extract_roi(mem, pose, frame_spec, planes=("features",))
    return VoxelGrid(frame_spec.with_channels(mem.n_features), roi.features)


SCENE_DUMP_FILES = {
    "features": "features.ocg1",
    "attributes": "attributes.ocg1",
    "pred_labels": "pred_labels.ocg1",
    "gt_labels": "gt_labels.ocg1",
}


def dump_scene(mem: SceneMemory, out_dir, alpha: float, frame_count: int) -> None:
    """Write one OCG1 file per plane group plus a manifest describing the scene."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    base = GridSpec(mem.spec.origin, mem.spec.voxel_size, mem.spec.dims, 1)
    gridio.write_ocg1(out_dir / SCENE_DUMP_FILES["features"],
                      base.with_channels(mem.n_features), mem.features)
    attrs = mem.attribute_stack()
    gridio.write_ocg1(out_dir / SCENE_DUMP_FILES["attributes"],
                      base.with_channels(attrs.shape[-1]), attrs)
    gridio.write_ocg1(out_dir / SCENE_DUMP_FILES["pred_labels"], base, mem.pred_labels)
    gridio.write_ocg1(out_dir / SCENE_DUMP_FILES["gt_labels"], base, mem.gt_labels)
    lo, _ = mem.spec.extent()
    gridio.write_manifest(out_dir / "manifest.txt", {
        "format": "scene-dump-v1",
        "grid": f"{mem.spec.h}x{mem.spec.w}x{mem.spec.z}",
        "frame_grid": f"{mem.frame_spec.h}x{mem.frame_spec.w}x{mem.frame_spec.z}",
        "voxel_size": mem.spec.voxel_size,
        "extent_min": [float(v) for v in lo],
        "origin": [float(v) for v in mem.spec.origin],
        "feature_channels": mem.n_features,
        "classes": mem.n_classes,
        "free_class": mem.free_class,
        "delta": mem.delta,
        "frames": frame_count,
        "alpha": alpha,
    })
