"""Synthetic scenes and the end-to-end pipeline driver.

Scenes are axis-aligned box primitives (plus dynamic boxes moving at constant
velocity) rasterized into an ego-centered grid along a scripted trajectory.
Noise is controlled by a label-flip probability and a feature noise sigma.
The pipeline runs the full per-frame loop: extract, fuse, predict, decay
update, write back, accrue metrics.  ``run_benchmark`` measures storage and
fusion time of the three temporal-fusion paradigms on shared inputs.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from . import gridio
from .errors import PipelineError
from .fusion import (
    AttentionParams,
    FusionStrategy,
    ResourceTrace,
    UncertaintyMLPParams,
    make_executor,
    mean_fuse,
    memory_attention_step,
)
from .geometry import GridSpec, Pose, voxel_index_coords, world_to_grid
from .memory import (
    FrameIO,
    SceneMemory,
    allocate_memory,
    decay_update_class_activation,
    dump_scene,
    extract_roi,
    nearest_gather_labels,
    reduce_log_variance,
    write_attributes,
    write_labels,
    write_roi,
)
from .metrics import (
    ConsistencyLedger,
    IoUReport,
    LabelGrid,
    extended_eval_scope,
    miou,
    mstcv,
    per_class_stcv,
    write_per_class_csv,
)
from .util import fmt_float, snap_near_integers


@dataclass
class BoxPrimitive:
    """Axis-aligned box in world coordinates with a semantic class."""

    lo: tuple[float, float, float]
    hi: tuple[float, float, float]
    cls: int


@dataclass
class DynamicInstance:
    """Box at t=0 moving with a constant top-down velocity (m/s)."""

    lo: tuple[float, float, float]
    hi: tuple[float, float, float]
    cls: int
    velocity: tuple[float, float]


@dataclass
class SceneScript:
    """Everything needed to synthesize a scene deterministically."""

    dims: tuple[int, int, int] = (50, 50, 4)
    voxel_size: float = 0.4
    channels: int = 16
    n_classes: int = 8
    free_class: int | None = None
    statics: list[BoxPrimitive] = field(default_factory=list)
    dynamics: list[DynamicInstance] = field(default_factory=list)
    trajectory: str = "straight"
    speed: float = 1.6
    heading: float = 0.0
    turn_rate: float = 0.15
    frame_count: int = 40
    frame_dt: float = 0.5
    label_flip: float = 0.0
    feature_sigma: float = 0.0
    view_range: float = 40.0
    view_sector: float = 2.0 * math.pi
    seed: int = 0

    def __post_init__(self) -> None:
        if self.free_class is None:
            self.free_class = self.n_classes - 1
        if not 0.0 <= self.label_flip <= 1.0:
            raise ValueError("label_flip must lie in [0, 1]")
        if self.frame_count < 1:
            raise ValueError("frame_count must be >= 1")
        if self.feature_sigma < 0:
            raise ValueError("feature_sigma must be >= 0")
        for dyn in self.dynamics:
            if not all(np.isfinite(dyn.velocity)):
                raise ValueError("instance velocities must be finite")

    @property
    def frame_spec(self) -> GridSpec:
        h, w, z = self.dims
        origin = (-(w - 1) / 2.0 * self.voxel_size, -(h - 1) / 2.0 * self.voxel_size, 0.0)
        return GridSpec(np.array(origin), self.voxel_size, self.dims, self.channels)

    def to_dict(self) -> dict:
        return {
            "grid": {"h": self.dims[0], "w": self.dims[1], "z": self.dims[2],
                     "voxel_size": self.voxel_size, "channels": self.channels},
            "classes": {"count": self.n_classes, "free": self.free_class},
            "trajectory": {"kind": self.trajectory, "speed": self.speed,
                           "heading": self.heading, "turn_rate": self.turn_rate},
            "frames": self.frame_count,
            "dt": self.frame_dt,
            "noise": {"label_flip": self.label_flip, "feature_sigma": self.feature_sigma},
            "view": {"range": self.view_range, "sector": self.view_sector},
            "seed": self.seed,
            "statics": [{"box": list(s.lo) + list(s.hi), "cls": s.cls} for s in self.statics],
            "dynamics": [{"box": list(d.lo) + list(d.hi), "cls": d.cls,
                          "velocity": list(d.velocity)} for d in self.dynamics],
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "SceneScript":
        grid = raw.get("grid", {})
        classes = raw.get("classes", {})
        traj = raw.get("trajectory", {})
        noise = raw.get("noise", {})
        view = raw.get("view", {})
        statics = [BoxPrimitive(tuple(s["box"][:3]), tuple(s["box"][3:]), int(s["cls"]))
                   for s in raw.get("statics", [])]
        dynamics = [DynamicInstance(tuple(d["box"][:3]), tuple(d["box"][3:]), int(d["cls"]),
                                    tuple(d["velocity"])) for d in raw.get("dynamics", [])]
        return cls(
            dims=(int(grid.get("h", 50)), int(grid.get("w", 50)), int(grid.get("z", 4))),
            voxel_size=float(grid.get("voxel_size", 0.4)),
            channels=int(grid.get("channels", 16)),
            n_classes=int(classes.get("count", 8)),
            free_class=classes.get("free"),
            statics=statics,
            dynamics=dynamics,
            trajectory=str(traj.get("kind", "straight")),
            speed=float(traj.get("speed", 1.6)),
            heading=float(traj.get("heading", 0.0)),
            turn_rate=float(traj.get("turn_rate", 0.15)),
            frame_count=int(raw.get("frames", 40)),
            frame_dt=float(raw.get("dt", 0.5)),
            label_flip=float(noise.get("label_flip", 0.0)),
            feature_sigma=float(noise.get("feature_sigma", 0.0)),
            view_range=float(view.get("range", 40.0)),
            view_sector=float(view.get("sector", 2.0 * math.pi)),
            seed=int(raw.get("seed", 0)),
        )

    def save(self, path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))

    @classmethod
    def load(cls, path) -> "SceneScript":
        raw = yaml.safe_load(Path(path).read_text())
        if not isinstance(raw, dict):
            raise ValueError(f"{path}: scene script must be a mapping")
        return cls.from_dict(raw)


def default_scene_script(label_flip: float = 0.0, feature_sigma: float = 0.0,
                         frame_count: int = 40, seed: int = 0,
                         full_scale: bool = False) -> SceneScript:
    """Desk-scale default scene: ground, two static obstacles, one moving box."""
    if full_scale:
        dims, channels, n_classes = (100, 100, 8), 80, 18
    else:
        dims, channels, n_classes = (50, 50, 4), 16, 8
    vs = 0.4
    extent = dims[1] * vs
    statics = [
        BoxPrimitive((-extent, -extent, 0.0), (extent * 4, extent, vs), cls=1),
        BoxPrimitive((4.1, -3.9, 0.0), (5.7, 3.9, 5 * vs), cls=2),
        BoxPrimitive((-6.3, 2.1, 0.0), (-4.7, 3.7, 3 * vs), cls=3),
    ]
    dynamics = [
        DynamicInstance((1.3, -6.3, 0.0), (2.9, -4.7, 2 * vs), cls=4, velocity=(1.2, 0.0)),
    ]
    return SceneScript(
        dims=dims, voxel_size=vs, channels=channels, n_classes=n_classes,
        statics=statics, dynamics=dynamics, speed=1.6, frame_count=frame_count,
        label_flip=label_flip, feature_sigma=feature_sigma, seed=seed,
    )


def trajectory_poses(script: SceneScript) -> list[Pose]:
    """Ego poses along the scripted trajectory, one per frame."""
    poses = []
    for t in range(script.frame_count):
        elapsed = t * script.frame_dt
        if script.trajectory == "straight":
            dist = script.speed * elapsed
            poses.append(Pose.from_translation(dist * math.cos(script.heading),
                                               dist * math.sin(script.heading),
                                               0.0, frame_id=t))
        elif script.trajectory == "arc":
            theta = script.turn_rate * elapsed
            radius = script.speed / script.turn_rate
            poses.append(Pose.from_rotation_z(theta, radius * math.sin(theta),
                                              radius * (1.0 - math.cos(theta)),
                                              0.0, frame_id=t))
        else:
            raise ValueError(f"unknown trajectory kind {script.trajectory!r}")
    return poses


@dataclass
class FrameBundle:
    """A frame's synthetic head outputs plus its ground-truth flow and dynamics."""

    frame: FrameIO
    gt_flow: np.ndarray
    dynamic_mask: np.ndarray
    n_classes: int
    free_class: int


def _column_visibility(script: SceneScript, gt: np.ndarray, ego_xy: np.ndarray,
                       n_bins: int = 720) -> np.ndarray:
    """Top-down visibility: range/sector gate plus first-hit occlusion per bearing.

    Occluders are columns with occupied voxels above the lowest z layer (the
    ground plane never blocks rays).  Each occluder covers the angular
    interval its voxel footprint subtends, so rays cannot slip between
    adjacent columns of the same obstacle.
    """
    h, w = gt.shape[1], gt.shape[2]
    ranges = np.hypot(ego_xy[:, 0], ego_xy[:, 1]).reshape(h, w)
    bearings = np.arctan2(ego_xy[:, 1], ego_xy[:, 0]).reshape(h, w)
    bin_width = 2.0 * math.pi / n_bins
    bins = np.clip(((bearings + math.pi) / bin_width).astype(np.int64), 0, n_bins - 1)

    first_hit = np.full(n_bins, np.inf)
    occluder = (gt[1:] != script.free_class).any(axis=0) if gt.shape[0] > 1 \
        else (gt[0] != script.free_class)
    occ_bins = bins[occluder]
    occ_ranges = ranges[occluder]
    half_width = np.arctan2(0.5 * script.voxel_size, np.maximum(occ_ranges, 1e-9))
    spans = np.minimum(np.ceil(half_width / bin_width).astype(np.int64), n_bins // 2)
    for b, r, s in zip(occ_bins, occ_ranges, spans):
        seg = np.arange(b - s, b + s + 1) % n_bins
        np.minimum.at(first_hit, seg, r)

    visible = ranges <= first_hit[bins] + 0.5 * script.voxel_size
    visible &= ranges <= script.view_range
    if script.view_sector < 2.0 * math.pi - 1e-9:
        wrapped = np.angle(np.exp(1j * (bearings - script.heading)))
        visible &= np.abs(wrapped) <= script.view_sector / 2.0
    return np.broadcast_to(visible, gt.shape).copy()


def generate_scene(script: SceneScript, seed: int | None = None) -> list[FrameBundle]:
    """Rasterize the script into per-frame grids with noisy prediction surrogates.

    Predictions are the ground truth with independent label flips (probability
    ``label_flip``) on visible voxels; class activations blend the one-hot
    ground truth with a uniform distribution by the same probability, and
    features are seeded per-class embeddings plus Gaussian noise.
    """
    seed = script.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    spec = script.frame_spec
    n, free = script.n_classes, script.free_class
    embeddings = 0.5 * rng.normal(size=(n, script.channels))
    poses = trajectory_poses(script)

    scene_mem = allocate_memory(poses, spec, n, free)
    lo_w, hi_w = scene_mem.spec.extent()
    horizon = script.frame_count * script.frame_dt
    for prim in script.statics + script.dynamics:
        p_lo, p_hi = np.asarray(prim.lo, dtype=float), np.asarray(prim.hi, dtype=float)
        if isinstance(prim, DynamicInstance):
            sweep = np.array([prim.velocity[0], prim.velocity[1], 0.0]) * horizon
            p_lo, p_hi = np.minimum(p_lo, p_lo + sweep), np.maximum(p_hi, p_hi + sweep)
        if np.any(p_hi <= lo_w) or np.any(p_lo >= hi_w):
            raise ValueError(f"primitive (class {prim.cls}) lies outside the scene bounds")

    ego_coords = voxel_index_coords(spec.dims)
    ego_world = ego_coords * spec.voxel_size + spec.origin
    zhw = (spec.z, spec.h, spec.w)
    flow_scale = script.frame_dt / script.voxel_size

    bundles = []
    for t, pose in enumerate(poses):
        world = pose.apply(ego_world)
        gt = np.full(world.shape[0], free, dtype=np.uint8)
        dyn_mask = np.zeros(world.shape[0], dtype=bool)
        gt_flow = np.zeros((world.shape[0], 2))

        for prim in script.statics:
            inside = np.all(world >= prim.lo, axis=1) & np.all(world < prim.hi, axis=1)
            gt[inside] = prim.cls
        offset = np.zeros(3)
        for dyn in script.dynamics:
            offset[:2] = np.asarray(dyn.velocity) * (t * script.frame_dt)
            inside = np.all(world >= np.asarray(dyn.lo) + offset, axis=1)
            inside &= np.all(world < np.asarray(dyn.hi) + offset, axis=1)
            gt[inside] = dyn.cls
            dyn_mask[inside] = True
            gt_flow[inside] = np.asarray(dyn.velocity) * flow_scale

        gt_grid = gt.reshape(zhw)
        # Column (x, y) offsets from the ego, shared by every z layer.
        column_xy = ego_world[: spec.h * spec.w, :2]
        visibility = _column_visibility(script, gt_grid, column_xy)

        pred = gt.copy()
        flip = visibility.reshape(-1) & (rng.random(world.shape[0]) < script.label_flip)
        if flip.any():
            pred[flip] = (pred[flip] + 1 + rng.integers(0, n - 1, flip.sum())) % n

        activation = np.full((world.shape[0], n), script.label_flip / n)
        activation[np.arange(world.shape[0]), gt] += 1.0 - script.label_flip

        features = embeddings[gt]
        if script.feature_sigma > 0:
            features = features + script.feature_sigma * rng.normal(size=features.shape)

        log_var = np.full((world.shape[0], n), math.log(max(script.feature_sigma, 1e-3) ** 2))

        frame = FrameIO(
            timestamp=t,
            pose=pose,
            spec=spec,
            features=features.reshape(zhw + (script.channels,)),
            class_activation=activation.reshape(zhw + (n,)),
            log_variance=log_var.reshape(zhw + (n,)),
            flow=gt_flow.reshape(zhw + (2,)).copy(),
            pred_labels=pred.reshape(zhw),
            gt_labels=gt_grid,
            visibility=visibility,
        )
        bundles.append(FrameBundle(frame, gt_flow.reshape(zhw + (2,)), dyn_mask.reshape(zhw), n, free))
    return bundles


@dataclass
class PipelineConfig:
    """Knobs for one pipeline run."""

    alpha: float = 0.5
    paradigm: str = "unified"
    k: int | None = None
    seed: int = 0
    apply_mask: bool = True
    extended_eval: bool = True
    out_dir: str | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.k is not None and self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass
class MetricsReport:
    """Aggregated evaluation results of one pipeline run."""

    n_classes: int
    free_class: int
    frames: int
    delta: float
    alpha: float
    miou_masked: IoUReport
    miou_unmasked: IoUReport
    miou_extended: IoUReport
    miou_raw_masked: IoUReport
    mstcv_fused_masked: float
    mstcv_fused_unmasked: float
    mstcv_raw_masked: float
    mstcv_raw_unmasked: float
    per_class_relative: np.ndarray
    ledger_fused: ConsistencyLedger
    ledger_raw: ConsistencyLedger


@dataclass
class PipelineResult:
    report: MetricsReport
    memory: SceneMemory
    predictions: list[LabelGrid]
    raw_predictions: list[LabelGrid]


def run_pipeline(bundles: Sequence[FrameBundle], config: PipelineConfig) -> PipelineResult:
    """Drive the full per-frame loop and evaluate both prediction streams.

    The fused stream predicts from the memory's decayed class activations
    where observed (falling back to the current activation); the raw stream
    is the per-frame noisy prediction, tracked through its own scene-level
    label store so both streams get STCV correspondence.
    """
    if not bundles:
        raise ValueError("no frames to process")
    if config.k is not None and config.k > len(bundles):
        raise ValueError(f"k={config.k} exceeds the {len(bundles)} available frames")
    frames = [b.frame for b in bundles]
    spec = frames[0].spec
    poses = [f.pose for f in frames]
    n, free = bundles[0].n_classes, bundles[0].free_class
    temporal = (config.k is None or config.k > 1) and len(frames) > 1

    mem = allocate_memory(poses, spec, n, free)
    raw_mem = allocate_memory(poses, spec.with_channels(1), n, free)
    dyn_store = np.zeros((mem.spec.z, mem.spec.h, mem.spec.w), dtype=bool)

    att = unc = executor = None
    if temporal and config.paradigm == "unified":
        att = AttentionParams.seeded(spec.channels, spec.dims, seed=config.seed)
        unc = UncertaintyMLPParams.seeded(n, seed=config.seed + 1)
    elif temporal:
        window = config.k if config.k is not None else len(frames)
        executor = make_executor(FusionStrategy(config.paradigm, window), spec, mean_fuse, poses)

    ledger_fused = ConsistencyLedger(n)
    ledger_raw = ConsistencyLedger(n)
    preds_fused: list[LabelGrid] = []
    preds_raw: list[LabelGrid] = []
    gts: list[LabelGrid] = []
    gts_extended: list[LabelGrid] = []

    ego_coords = voxel_index_coords(spec.dims)
    ego_world = ego_coords * spec.voxel_size + spec.origin

    for t, bundle in enumerate(bundles):
        f = bundle.frame
        stage = "fuse"
        try:
            roi = None
            if temporal:
                roi = extract_roi(mem, f.pose, planes=(
                    "features", "class_activation", "log_variance", "flow", "observed"))
            if not temporal:
                fused = np.asarray(f.features, dtype=np.float64)
            elif executor is not None:
                fused = executor.step(np.asarray(f.features, dtype=np.float64), f.pose)
            else:
                fused = memory_attention_step(att, unc, f.features, mem, f.pose, roi=roi)

            stage = "predict"
            pred = np.argmax(f.class_activation, axis=-1).astype(np.uint8)
            if temporal:
                mem_pred = np.argmax(roi.class_activation, axis=-1).astype(np.uint8)
                pred = np.where(roi.observed, mem_pred, pred)

            stage = "consistency"
            pred_grid = LabelGrid(spec, pred, f.visibility, n, free)
            raw_grid = LabelGrid(spec, f.pred_labels, f.visibility, n, free)
            ledger_fused.record(mem, f.pose, pred_grid)
            ledger_raw.record(raw_mem, f.pose, raw_grid)

            stage = "metrics"
            gt_grid = LabelGrid(spec, f.gt_labels, f.visibility, n, free)
            preds_fused.append(pred_grid)
            preds_raw.append(raw_grid)
            gts.append(gt_grid)
            if config.extended_eval:
                frac = snap_near_integers(world_to_grid(mem.spec, f.pose.apply(ego_world)))
                hist_dyn = nearest_gather_labels(dyn_store, frac, False).reshape(
                    spec.z, spec.h, spec.w)
                ext_mask = extended_eval_scope(f.visibility, mem, f.pose,
                                               bundle.dynamic_mask | hist_dyn)
                gts_extended.append(LabelGrid(spec, f.gt_labels, ext_mask, n, free))

            stage = "update"
            decay_update_class_activation(mem, f.pose, f.class_activation, config.alpha)
            write_roi(mem, f.pose, fused)
            write_attributes(mem, f.pose, reduce_log_variance(f.log_variance), f.flow)
            write_labels(mem, f.pose, pred, f.gt_labels)
            write_labels(raw_mem, f.pose, f.pred_labels, f.gt_labels)
            m = mem.mapping_for(f.pose)
            dyn_store[m.zs, m.ys, m.xs] |= bundle.dynamic_mask[
                m.nn_idx[:, 2], m.nn_idx[:, 1], m.nn_idx[:, 0]]
        except Exception as exc:
            raise PipelineError(f"frame {t}: stage {stage!r}: {exc}") from exc

    report = MetricsReport(
        n_classes=n,
        free_class=free,
        frames=len(bundles),
        delta=mem.delta,
        alpha=config.alpha,
        miou_masked=miou(preds_fused, gts, apply_mask=True),
        miou_unmasked=miou(preds_fused, gts, apply_mask=False),
        miou_extended=(miou(preds_fused, gts_extended, apply_mask=True)
                       if config.extended_eval else miou(preds_fused, gts, apply_mask=True)),
        miou_raw_masked=miou(preds_raw, gts, apply_mask=True),
        mstcv_fused_masked=mstcv(ledger_fused, masked=True),
        mstcv_fused_unmasked=mstcv(ledger_fused, masked=False),
        mstcv_raw_masked=mstcv(ledger_raw, masked=True),
        mstcv_raw_unmasked=mstcv(ledger_raw, masked=False),
        per_class_relative=per_class_stcv(ledger_fused, ledger_raw),
        ledger_fused=ledger_fused,
        ledger_raw=ledger_raw,
    )

    if config.out_dir is not None:
        _write_outputs(Path(config.out_dir), bundles, mem, report, preds_fused, config)
    return PipelineResult(report, mem, preds_fused, preds_raw)


def _write_outputs(out_dir: Path, bundles: Sequence[FrameBundle], mem: SceneMemory,
                   report: MetricsReport, preds_fused: Sequence[LabelGrid],
                   config: PipelineConfig) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    dump_scene(mem, out_dir / "scene", config.alpha, report.frames)

    frames_dir = out_dir / "frames"
    frames_dir.mkdir(exist_ok=True)
    spec = bundles[0].frame.spec
    label_spec = spec.with_channels(1)
    gridio.write_pose_file(frames_dir / "poses.txt", [b.frame.pose for b in bundles])
    gridio.write_manifest(frames_dir / "manifest.txt", {
        "format": "frame-dump-v1",
        "frames": len(bundles),
        "classes": report.n_classes,
        "free_class": report.free_class,
    })
    for t, bundle in enumerate(bundles):
        gridio.write_ocg1(frames_dir / f"pred_{t:04d}.ocg1", label_spec, preds_fused[t].labels)
        gridio.write_ocg1(frames_dir / f"gt_{t:04d}.ocg1", label_spec, bundle.frame.gt_labels)
        gridio.write_ocg1(frames_dir / f"vis_{t:04d}.ocg1", label_spec,
                          bundle.frame.visibility.astype(np.uint8))
        gridio.write_ocg1(frames_dir / f"dyn_{t:04d}.ocg1", label_spec,
                          bundle.dynamic_mask.astype(np.uint8))

    write_report_files(report, out_dir)


def write_report_files(report: MetricsReport, out_dir: Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_per_class_csv(
        out_dir / "per_class.csv", report.n_classes, report.free_class,
        {
            "iou_fused_masked": report.miou_masked.per_class,
            "iou_fused_extended": report.miou_extended.per_class,
            "iou_raw_masked": report.miou_raw_masked.per_class,
            "flips_fused": report.ledger_fused.flips_masked.astype(np.float64),
            "flips_raw": report.ledger_raw.flips_masked.astype(np.float64),
            "relative_stcv": report.per_class_relative,
        },
    )
    rows = [
        ("frames", report.frames),
        ("alpha", report.alpha),
        ("delta", report.delta),
        ("miou_fused_masked", report.miou_masked.mean),
        ("miou_fused_unmasked", report.miou_unmasked.mean),
        ("miou_fused_extended", report.miou_extended.mean),
        ("miou_raw_masked", report.miou_raw_masked.mean),
        ("mstcv_fused_masked", report.mstcv_fused_masked),
        ("mstcv_fused_unmasked", report.mstcv_fused_unmasked),
        ("mstcv_raw_masked", report.mstcv_raw_masked),
        ("mstcv_raw_unmasked", report.mstcv_raw_unmasked),
    ]
    csv_lines = ["metric,value"] + [f"{k},{fmt_float(v) if isinstance(v, float) else v}" for k, v in rows]
    (out_dir / "metrics.csv").write_text("\n".join(csv_lines) + "\n")
    text = [f"{k:>24}: {fmt_float(v) if isinstance(v, float) else v}" for k, v in rows]
    (out_dir / "summary.txt").write_text("\n".join(text) + "\n")


# ---------------------------------------------------------------------------
# Scaling benchmark

def bench_frames(grid_spec: GridSpec, count: int, seed: int = 0,
                 step_m: float = 0.8) -> list[FrameIO]:
    """Random feature frames along a straight trajectory for benchmarking."""
    rng = np.random.default_rng(seed)
    frames = []
    for t in range(count):
        pose = Pose.from_translation(step_m * t, 0.0, 0.0, frame_id=t)
        shape = (grid_spec.z, grid_spec.h, grid_spec.w)
        frames.append(FrameIO(
            timestamp=t, pose=pose, spec=grid_spec,
            features=rng.normal(size=shape + (grid_spec.channels,)),
            class_activation=np.zeros(shape + (1,)),
            log_variance=np.zeros(shape + (1,)),
            flow=np.zeros(shape + (2,)),
            pred_labels=np.zeros(shape, dtype=np.uint8),
            gt_labels=np.zeros(shape, dtype=np.uint8),
            visibility=np.ones(shape, dtype=bool),
        ))
    return frames


def run_benchmark(paradigms: Sequence[str], k_list: Sequence[int], grid_spec: GridSpec,
                  repeats: int = 5, seed: int = 0) -> list[dict]:
    """Measure storage and fusion time for each paradigm across window sizes.

    All cells share one frame sequence (``max(k) + repeats`` frames), so the
    unified paradigm allocates an identical scene store for every k.  The
    first ``max(k)`` frames only prefill each cell's state; the trailing
    ``repeats`` frames are timed in interleaved rounds (one step per cell
    per frame) so machine-load fluctuations hit every cell equally.
    """
    if not k_list:
        raise ValueError("k_list must not be empty")
    warmup = max(k_list)
    frames = bench_frames(grid_spec, warmup + repeats, seed=seed)
    poses = [f.pose for f in frames]

    cells = [(kind, k) for kind in paradigms for k in k_list]
    executors = {}
    traces = {}
    for cell in cells:
        strategy = FusionStrategy(*cell)
        executors[cell] = make_executor(strategy, grid_spec, mean_fuse, poses)
        traces[cell] = ResourceTrace(cell[0], cell[1], grid_spec.num_voxels)

    for t, frame in enumerate(frames):
        features = np.asarray(frame.features, dtype=np.float64)
        for cell in cells:
            executor = executors[cell]
            if t < warmup:
                executor.push(features, frame.pose)
            else:
                t0 = time.perf_counter()
                executor.step(features, frame.pose)
                traces[cell].fuse_seconds.append(time.perf_counter() - t0)
            traces[cell].note_storage(executor.stored_cells(), executor.stored_bytes())

    rows = []
    for cell in cells:
        trace = traces[cell]
        rows.append({
            "paradigm": cell[0],
            "k": cell[1],
            "frame_cells": trace.frame_cells,
            "peak_cells": trace.peak_cells,
            "peak_bytes": trace.peak_bytes,
            "mean_fuse_ms": trace.mean_fuse_seconds() * 1e3,
            "median_fuse_ms": trace.median_fuse_seconds() * 1e3,
        })
    return rows


def write_bench_csv(rows: Sequence[dict], path) -> None:
    header = ["paradigm", "k", "frame_cells", "peak_cells", "peak_bytes",
              "mean_fuse_ms", "median_fuse_ms"]
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(
            fmt_float(row[h]) if isinstance(row[h], float) else str(row[h]) for h in header))
    Path(path).write_text("\n".join(lines) + "\n")


def write_bench_svg(rows: Sequence[dict], path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    kinds = sorted({row["paradigm"] for row in rows})
    fig, (ax_time, ax_mem) = plt.subplots(1, 2, figsize=(9, 3.5))
    for kind in kinds:
        ks = [r["k"] for r in rows if r["paradigm"] == kind]
        times = [r["median_fuse_ms"] for r in rows if r["paradigm"] == kind]
        bytes_ = [r["peak_bytes"] / 2**20 for r in rows if r["paradigm"] == kind]
        ax_time.plot(ks, times, marker="o", label=kind)
        ax_mem.plot(ks, bytes_, marker="o", label=kind)
    ax_time.set_xlabel("frames fused (k)")
    ax_time.set_ylabel("fusion time (ms)")
    ax_mem.set_xlabel("frames fused (k)")
    ax_mem.set_ylabel("historical storage (MiB)")
    ax_time.legend()
    ax_mem.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
