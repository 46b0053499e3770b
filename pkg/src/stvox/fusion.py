"""Memory attention and the three temporal-fusion paradigms.

The attention kernel is deterministic deformable attention: per query, a few
sampling points are offset from a flow-shifted reference point, trilinearly
sampled from a value grid and combined with softmax scores.  An uncertainty
gate blends the current-frame attention result with the memory-sourced one.
No training happens here; parameters come from a seeded initializer or a
serialized bundle.

``run_paradigm`` provides interchangeable recurrent / stacked / unified
executors sharing one fusion operator, used by the scaling benchmark.
"""

from __future__ import annotations

import struct
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .geometry import (
    GridSpec,
    Pose,
    VoxelGrid,
    apply_trilinear,
    plan_trilinear,
    relative_transform,
    trilinear_gather,
    voxel_index_coords,
    world_to_grid,
)
from .memory import (
    FrameIO,
    SceneMemory,
    allocate_memory,
    extract_roi,
    nearest_gather_labels,
    roi_mapping,
    sample_frame_values,
)
from .util import relu, sigmoid, snap_near_integers, softmax

DEFAULT_LAYERS = 3
DEFAULT_POINTS = 4
MLP_HIDDEN = (64, 32, 16, 1)
_INIT_SCALE = 0.02
_NORM_EPS = 1e-6


@dataclass
class AttentionParams:
    """Weights for the deformable-attention stack.

    One set of attention matrices is shared by all layers; normalization and
    feed-forward sublayers have per-layer weights.  ``position_embedding`` is
    a dense table over the frame grid added to every query.
    """

    num_layers: int
    num_points: int
    channels: int
    offset_weights: np.ndarray
    score_weights: np.ndarray
    value_projection: np.ndarray
    output_projection: np.ndarray
    position_embedding: np.ndarray
    norm1_scale: np.ndarray
    norm1_shift: np.ndarray
    ffn_w1: np.ndarray
    ffn_b1: np.ndarray
    ffn_w2: np.ndarray
    ffn_b2: np.ndarray
    norm2_scale: np.ndarray
    norm2_shift: np.ndarray
    seed: int = 0

    @classmethod
    def seeded(cls, channels: int, grid_dims: tuple[int, int, int],
               num_layers: int = DEFAULT_LAYERS, num_points: int = DEFAULT_POINTS,
               seed: int = 0) -> "AttentionParams":
        """Deterministic initialization: uniform +/-0.02 weights, identity norms."""
        h, w, z = grid_dims
        rng = np.random.default_rng(seed)
        uni = lambda *shape: rng.uniform(-_INIT_SCALE, _INIT_SCALE, shape)
        hidden = 2 * channels
        return cls(
            num_layers=num_layers,
            num_points=num_points,
            channels=channels,
            offset_weights=uni(num_points * 3, channels),
            score_weights=uni(num_points, channels),
            value_projection=uni(channels, channels),
            output_projection=uni(channels, channels),
            position_embedding=uni(z, h, w, channels),
            norm1_scale=np.ones((num_layers, channels)),
            norm1_shift=np.zeros((num_layers, channels)),
            ffn_w1=uni(num_layers, hidden, channels),
            ffn_b1=np.zeros((num_layers, hidden)),
            ffn_w2=uni(num_layers, channels, hidden),
            ffn_b2=np.zeros((num_layers, channels)),
            norm2_scale=np.ones((num_layers, channels)),
            norm2_shift=np.zeros((num_layers, channels)),
            seed=seed,
        )

    def validate(self) -> None:
        p, c = self.num_points, self.channels
        if self.offset_weights.shape != (p * 3, c) or self.score_weights.shape != (p, c):
            raise ValueError("offset/score weight shapes do not match num_points/channels")
        for m in (self.value_projection, self.output_projection):
            if m.shape != (c, c):
                raise ValueError("projection matrices must be channels x channels")
        arrays = (self.offset_weights, self.score_weights, self.value_projection,
                  self.output_projection, self.position_embedding)
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise ValueError("attention parameters must be finite")


@dataclass
class UncertaintyMLPParams:
    """Four-layer MLP mapping temporal attributes ``(c, delta, eps)`` to a gate.

    Hidden sizes are 64, 32, 16 and 1; the output passes through a sigmoid so
    the gate always lies in (0, 1).
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    n_classes: int
    seed: int = 0

    @classmethod
    def seeded(cls, n_classes: int, seed: int = 0) -> "UncertaintyMLPParams":
        rng = np.random.default_rng(seed)
        dims = (n_classes + 2,) + MLP_HIDDEN
        weights = [rng.uniform(-_INIT_SCALE, _INIT_SCALE, (dims[i + 1], dims[i]))
                   for i in range(len(MLP_HIDDEN))]
        biases = [np.zeros(dims[i + 1]) for i in range(len(MLP_HIDDEN))]
        return cls(weights, biases, n_classes, seed)

    @classmethod
    def zeros(cls, n_classes: int) -> "UncertaintyMLPParams":
        dims = (n_classes + 2,) + MLP_HIDDEN
        weights = [np.zeros((dims[i + 1], dims[i])) for i in range(len(MLP_HIDDEN))]
        biases = [np.zeros(dims[i + 1]) for i in range(len(MLP_HIDDEN))]
        return cls(weights, biases, n_classes)


def cosine_similarity(current: np.ndarray, historical: np.ndarray) -> np.ndarray | float:
    """Cosine of the angle between feature vectors; 0 if either norm is ~0.

    Accepts single ``(C,)`` vectors or ``(M, C)`` batches (row-wise result).
    """
    a = np.asarray(current, dtype=np.float64)
    b = np.asarray(historical, dtype=np.float64)
    single = a.ndim == 1
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    denom = na * nb
    ok = (na >= 1e-12) & (nb >= 1e-12)
    dots = np.einsum("mc,mc->m", a, b)
    out = np.where(ok, dots / np.where(ok, denom, 1.0), 0.0)
    return float(out[0]) if single else out


def estimate_uncertainty(params: UncertaintyMLPParams, c: np.ndarray,
                         delta, eps) -> np.ndarray | float:
    """Forward pass of the uncertainty MLP; the result lies strictly in (0, 1)."""
    c = np.asarray(c, dtype=np.float64)
    single = c.ndim == 1
    c = np.atleast_2d(c)
    if c.shape[1] != params.n_classes:
        raise ValueError(f"expected {params.n_classes} activation channels, got {c.shape[1]}")
    delta = np.broadcast_to(np.asarray(delta, dtype=np.float64), (c.shape[0],))
    eps = np.broadcast_to(np.asarray(eps, dtype=np.float64), (c.shape[0],))
    x = np.concatenate([c, delta[:, None], eps[:, None]], axis=1)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        x = x @ w.T + b
        x = sigmoid(x) if i == len(params.weights) - 1 else relu(x)
    out = x[:, 0]
    return float(out[0]) if single else out


def attention_scores(params: AttentionParams, queries: np.ndarray) -> np.ndarray:
    """Softmax-normalized per-point sampling scores, ``(M, num_points)``."""
    q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    return softmax(q @ params.score_weights.T, axis=-1)


def _project_values(params: AttentionParams, values: np.ndarray) -> np.ndarray:
    """Apply the value projection to a whole grid up front.

    Projection and interpolation are both linear, so projecting once and
    sampling the projected grid equals projecting every sample; hoisting it
    out of the per-point loop avoids one matmul per sampling point.
    """
    flat = values.reshape(-1, values.shape[-1])
    return (flat @ params.value_projection.T).reshape(values.shape)


def _sampling_pattern(params: AttentionParams, queries: np.ndarray, refs: np.ndarray,
                      dims: tuple[int, int, int]):
    """Per-query scores plus the interpolation plan over all sampling points.

    The pattern depends only on the queries and reference points, so one
    pattern serves every value grid attended with the same queries.
    """
    m = queries.shape[0]
    offsets = (queries @ params.offset_weights.T).reshape(m, params.num_points, 3)
    scores = softmax(queries @ params.score_weights.T, axis=-1)
    points = (refs[:, None, :] + offsets).reshape(m * params.num_points, 3)
    return scores, plan_trilinear(points, dims)


def _attend_pattern(params: AttentionParams, scores: np.ndarray, plan,
                    projected: np.ndarray) -> np.ndarray:
    m = scores.shape[0]
    sampled = apply_trilinear(projected, plan).reshape(m, params.num_points, params.channels)
    acc = np.einsum("mp,mpc->mc", scores, sampled)
    return acc @ params.output_projection.T


def _attend(params: AttentionParams, queries: np.ndarray, refs: np.ndarray,
            projected: np.ndarray) -> np.ndarray:
    z_dim, h_dim, w_dim, _ = projected.shape
    scores, plan = _sampling_pattern(params, queries, refs, (h_dim, w_dim, z_dim))
    return _attend_pattern(params, scores, plan, projected)


def deformable_attend(params: AttentionParams, query: np.ndarray, ref_point: np.ndarray,
                      value_grid: VoxelGrid | np.ndarray) -> np.ndarray:
    """Deformable attention for one query (``(C,)``) or a batch (``(M, C)``).

    Offsets and scores are linear in the query; samples outside the grid are
    zero padded.
    """
    params.validate()
    values = value_grid.values if isinstance(value_grid, VoxelGrid) else np.asarray(value_grid)
    q = np.asarray(query, dtype=np.float64)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    refs = np.asarray(ref_point, dtype=np.float64).reshape(-1, 3)
    if refs.shape[0] == 1 and q.shape[0] > 1:
        refs = np.broadcast_to(refs, (q.shape[0], 3))
    out = _attend(params, q, refs, _project_values(params, values))
    return out[0] if single else out


def _standardize(x: np.ndarray) -> np.ndarray:
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mean) / np.sqrt(var + _NORM_EPS)


def tsa_layer_tail(params: AttentionParams, layer: int, x: np.ndarray,
                   attn: np.ndarray) -> np.ndarray:
    """Post-attention sublayers of one TSA layer: norm, feed-forward, norm."""
    h = _standardize(x + attn) * params.norm1_scale[layer] + params.norm1_shift[layer]
    f = relu(h @ params.ffn_w1[layer].T + params.ffn_b1[layer]) @ params.ffn_w2[layer].T
    f = f + params.ffn_b2[layer]
    return _standardize(h + f) * params.norm2_scale[layer] + params.norm2_shift[layer]


def flow_shifted_references(dims: tuple[int, int, int], flow: np.ndarray) -> np.ndarray:
    """Per-voxel reference points ``p + (f_x, f_y, 0)`` in fractional coordinates.

    The flow is two-dimensional (top-down), so the z component is never
    shifted.
    """
    refs = voxel_index_coords(dims)
    f = np.asarray(flow, dtype=np.float64).reshape(-1, 2)
    refs[:, 0] += f[:, 0]
    refs[:, 1] += f[:, 1]
    return refs


def memory_attention_step(att: AttentionParams, unc: UncertaintyMLPParams,
                          features: np.ndarray, mem: SceneMemory, pose: Pose,
                          frame_spec: GridSpec | None = None,
                          uncertainty_override=None, roi=None) -> np.ndarray:
    """Fuse a frame's features with the memory RoI under uncertainty gating.

    Per voxel the blend is ``(1 - u) * DA(q, ref, V) + u * DA(q, ref, H)``
    where ``H`` is the extracted memory RoI, ``u`` the MLP gate (or the
    override) and ``ref`` the flow-shifted voxel position.  The memory is
    extracted once (callers that already hold the extraction can pass it as
    ``roi``); the gate, flow and both value grids are shared across all
    layers while queries evolve through the layer stack.
    """
    if not isinstance(mem, SceneMemory):
        raise ValueError("memory attention requires an allocated SceneMemory")
    frame_spec = frame_spec or mem.frame_spec
    att.validate()
    shape = (frame_spec.z, frame_spec.h, frame_spec.w, att.channels)
    features = np.asarray(features, dtype=np.float64)
    if features.shape != shape:
        raise ValueError(f"features shape {features.shape} does not match {shape}")
    if att.position_embedding.shape != shape:
        raise ValueError("position embedding does not match the frame grid")
    if unc.n_classes != mem.n_classes:
        raise ValueError("uncertainty MLP class count does not match the memory")

    if roi is None:
        roi = extract_roi(mem, pose, frame_spec)
    m = frame_spec.num_voxels
    v_flat = features.reshape(m, att.channels)
    h_flat = roi.features.reshape(m, att.channels)

    if uncertainty_override is None:
        eps = cosine_similarity(v_flat, h_flat)
        u = estimate_uncertainty(unc, roi.class_activation.reshape(m, -1),
                                 roi.log_variance.reshape(m), eps)
    else:
        u = np.broadcast_to(np.asarray(uncertainty_override, dtype=np.float64), (m,))

    refs = flow_shifted_references(frame_spec.dims, roi.flow.reshape(m, 2))
    pos = att.position_embedding.reshape(m, att.channels)
    gate = np.asarray(u)[:, None]
    proj_cur = _project_values(att, features)
    proj_his = _project_values(att, roi.features)

    x = v_flat
    for layer in range(att.num_layers):
        q = x + pos
        scores, plan = _sampling_pattern(att, q, refs, frame_spec.dims)
        a_cur = _attend_pattern(att, scores, plan, proj_cur)
        a_his = _attend_pattern(att, scores, plan, proj_his)
        x = tsa_layer_tail(att, layer, x, (1.0 - gate) * a_cur + gate * a_his)
    return x.reshape(shape)


# ---------------------------------------------------------------------------
# Temporal-fusion paradigms

PARADIGMS = ("recurrent", "stacked", "unified")


@dataclass
class FusionStrategy:
    """Which executor to run and how many frames of history it may use."""

    kind: str
    k: int

    def __post_init__(self) -> None:
        if self.kind not in PARADIGMS:
            raise ValueError(f"unknown paradigm {self.kind!r}; expected one of {PARADIGMS}")
        if self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass
class ResourceTrace:
    """Storage and timing record for one paradigm run."""

    kind: str
    k: int
    frame_cells: int
    peak_cells: int = 0
    peak_bytes: int = 0
    fuse_seconds: list[float] = field(default_factory=list)

    def note_storage(self, cells: int, bytes_: int) -> None:
        self.peak_cells = max(self.peak_cells, cells)
        self.peak_bytes = max(self.peak_bytes, bytes_)

    def mean_fuse_seconds(self, tail: int | None = None) -> float:
        xs = self.fuse_seconds[-tail:] if tail else self.fuse_seconds
        return float(np.mean(xs)) if xs else 0.0

    def median_fuse_seconds(self, tail: int | None = None) -> float:
        xs = self.fuse_seconds[-tail:] if tail else self.fuse_seconds
        return float(np.median(xs)) if xs else 0.0


def mean_fuse(grids: Sequence[np.ndarray]) -> np.ndarray:
    """Equal-weight average, the fusion operator shared by all paradigms.

    Computed as a left-to-right running sum divided by the count, so the
    result is deterministic and identical no matter which paradigm calls it.
    """
    acc = np.array(grids[0], dtype=np.float64, copy=True)
    for g in grids[1:]:
        acc += g
    if len(grids) > 1:
        acc /= len(grids)
    return acc


def _warp_coords(src_pose: Pose, dst_pose: Pose, frame_spec: GridSpec) -> np.ndarray:
    """Fractional source-grid coordinates of every destination voxel center."""
    rel = relative_transform(dst_pose, src_pose)
    dst_coords = voxel_index_coords(frame_spec.dims)
    world_dst = dst_coords * frame_spec.voxel_size + frame_spec.origin
    return snap_near_integers(world_to_grid(frame_spec, rel.apply(world_dst)))


def warp_features(src: np.ndarray, src_pose: Pose, dst_pose: Pose,
                  frame_spec: GridSpec) -> np.ndarray:
    """Resample features from the source ego frame onto the destination grid."""
    return trilinear_gather(src, _warp_coords(src_pose, dst_pose, frame_spec)).reshape(src.shape)




class _RecurrentExecutor:
    """Chained pairwise fusion: align the running state, fuse, repeat.

    Each output frame replays the whole chain over the current window, the
    way training-time recurrence must, so the work per frame grows with k
    and no step can start before the previous one finishes.
    """

    def __init__(self, k: int, frame_spec: GridSpec, fuse_op):
        self.k = k
        self.frame_spec = frame_spec
        self.fuse_op = fuse_op
        self.queue: list[tuple[np.ndarray, Pose]] = []

    def push(self, features: np.ndarray, pose: Pose) -> None:
        """Admit a frame to the queue without replaying the fusion chain."""
        self.queue.append((features, pose))
        if len(self.queue) > self.k:
            self.queue.pop(0)

    def step(self, features: np.ndarray, pose: Pose) -> np.ndarray:
        self.push(features, pose)
        if len(self.queue) == 1:
            return features.copy()
        state, state_pose = self.queue[0]
        for feats, cur_pose in self.queue[1:]:
            aligned = warp_features(state, state_pose, cur_pose, self.frame_spec)
            state = self.fuse_op([feats, aligned])
            state_pose = cur_pose
        return state

    def stored_cells(self) -> int:
        return len(self.queue) * self.frame_spec.num_voxels

    def stored_bytes(self) -> int:
        return sum(f.nbytes for f, _ in self.queue)


class _StackedExecutor:
    """Queue of historical grids kept aligned to the current frame.

    Every incoming frame shifts the whole queue by the same single-step
    relative pose, so one interpolation plan covers all stored grids and
    the fuse operator runs once over the window.  Sharing the coordinate
    plan is the structural advantage the stacked paradigm has over the
    recurrent chain, whose per-step warps each need their own coordinates.
    """

    def __init__(self, k: int, frame_spec: GridSpec, fuse_op):
        self.k = k
        self.frame_spec = frame_spec
        self.fuse_op = fuse_op
        self.ring: np.ndarray | None = None  # (cap, Z, H, W, C) rotating buffer
        self.count = 0
        self.start = 0  # slot holding the oldest frame once the ring is full
        self.last_pose: Pose | None = None

    def _realign(self, pose: Pose, shape: tuple) -> None:
        coords = _warp_coords(self.last_pose, pose, self.frame_spec)
        plan = plan_trilinear(coords, self.frame_spec.dims)
        for slot in range(self.count):
            self.ring[slot] = apply_trilinear(self.ring[slot], plan).reshape(shape)

    def _admit(self, features: np.ndarray, pose: Pose) -> None:
        cap = self.k - 1
        if self.count < cap:
            self.ring[self.count] = features
            self.count += 1
        else:
            self.ring[self.start] = features
            self.start = (self.start + 1) % cap
        self.last_pose = pose

    def push(self, features: np.ndarray, pose: Pose) -> None:
        """Keep the aligned queue current without running the fuse operator."""
        if self.k == 1:
            return
        if self.ring is None:
            self.ring = np.zeros((self.k - 1,) + features.shape)
        if self.count:
            self._realign(pose, features.shape)
        self._admit(features, pose)

    def step(self, features: np.ndarray, pose: Pose) -> np.ndarray:
        if self.k == 1:
            return features.copy()
        cap = self.k - 1
        if self.ring is None:
            self.ring = np.zeros((cap,) + features.shape)
        if self.count:
            self._realign(pose, features.shape)
            chrono = [self.ring[(self.start + i) % cap] for i in range(self.count)]
            fused = self.fuse_op(chrono + [features])
        else:
            fused = features.copy()
        self._admit(features, pose)
        return fused

    def stored_cells(self) -> int:
        slots = self.k - 1 if self.ring is not None else self.count
        return (slots + 1) * self.frame_spec.num_voxels

    def stored_bytes(self) -> int:
        return self.stored_cells() * self.frame_spec.channels * 8


class _UnifiedExecutor:
    """One scene-extent feature store: extract, fuse once, write back."""

    def __init__(self, k: int, frame_spec: GridSpec, fuse_op, trajectory: Sequence[Pose]):
        self.k = k
        self.frame_spec = frame_spec
        self.fuse_op = fuse_op
        mem = allocate_memory(trajectory, frame_spec, n_classes=2)
        self.scene_spec = mem.spec
        self.store = np.zeros((mem.spec.z, mem.spec.h, mem.spec.w, frame_spec.channels))
        self.observed = np.zeros((mem.spec.z, mem.spec.h, mem.spec.w), dtype=bool)
        self.delta = mem.delta

    def step(self, features: np.ndarray, pose: Pose) -> np.ndarray:
        if self.k == 1:
            return features.copy()
        coords = voxel_index_coords(self.frame_spec.dims)
        world = coords * self.frame_spec.voxel_size + self.frame_spec.origin
        frac = snap_near_integers(world_to_grid(self.scene_spec, pose.apply(world)))
        hist = trilinear_gather(self.store, frac).reshape(features.shape)
        seen = nearest_gather_labels(self.observed, frac, False).reshape(features.shape[:3])
        fused = self.fuse_op([features, hist])
        fused = np.where(seen[..., None], fused, features)
        m = roi_mapping(self.scene_spec, self.frame_spec, pose)
        self.store[m.zs, m.ys, m.xs] = sample_frame_values(fused, m)
        self.observed[m.zs, m.ys, m.xs] = True
        return fused

    def push(self, features: np.ndarray, pose: Pose) -> None:
        """The scene store must ingest every frame; same work as a step."""
        self.step(features, pose)

    def stored_cells(self) -> int:
        return self.scene_spec.num_voxels

    def stored_bytes(self) -> int:
        return self.store.nbytes


def make_executor(strategy: FusionStrategy, frame_spec: GridSpec, fuse_op,
                  trajectory: Sequence[Pose]):
    """Instantiate the executor for one paradigm (shared by bench and pipeline)."""
    if strategy.kind == "recurrent":
        return _RecurrentExecutor(strategy.k, frame_spec, fuse_op)
    if strategy.kind == "stacked":
        return _StackedExecutor(strategy.k, frame_spec, fuse_op)
    return _UnifiedExecutor(strategy.k, frame_spec, fuse_op, trajectory)


def run_paradigm(strategy: FusionStrategy, frames: Sequence[FrameIO],
                 fuse_op: Callable[[Sequence[np.ndarray]], np.ndarray] | None = None,
                 ) -> tuple[list[np.ndarray], ResourceTrace]:
    """Run one temporal-fusion paradigm over a frame sequence.

    Returns the per-frame fused feature grids and a :class:`ResourceTrace`
    with peak historical-storage accounting and per-frame fusion wall time.
    With ``k == 1`` every paradigm bypasses history and returns the frame
    features unchanged.
    """
    if not frames:
        raise ValueError("no frames to process")
    fuse_op = fuse_op or mean_fuse
    strategy = FusionStrategy(strategy.kind, strategy.k)
    if strategy.k > len(frames):
        warnings.warn(
            f"k={strategy.k} exceeds the {len(frames)} available frames; window truncated",
            stacklevel=2,
        )
        strategy = FusionStrategy(strategy.kind, len(frames))

    frame_spec = frames[0].spec
    trajectory = [f.pose for f in frames]
    executor = make_executor(strategy, frame_spec, fuse_op, trajectory)
    trace = ResourceTrace(strategy.kind, strategy.k, frame_spec.num_voxels)
    trace.note_storage(executor.stored_cells(), executor.stored_bytes())

    outputs: list[np.ndarray] = []
    for frame in frames:
        t0 = time.perf_counter()
        fused = executor.step(np.asarray(frame.features, dtype=np.float64), frame.pose)
        trace.fuse_seconds.append(time.perf_counter() - t0)
        trace.note_storage(executor.stored_cells(), executor.stored_bytes())
        outputs.append(fused)
    return outputs, trace


# ---------------------------------------------------------------------------
# Parameter-bundle serialization

_ATT_HEADER = struct.Struct("<7Iq")
_MLP_HEADER = struct.Struct("<2Iq")


def _pack_arrays(arrays: Sequence[np.ndarray]) -> bytes:
    return b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in arrays)


def _attention_array_order(p: AttentionParams) -> list[np.ndarray]:
    return [
        p.offset_weights, p.score_weights, p.value_projection, p.output_projection,
        p.position_embedding, p.norm1_scale, p.norm1_shift, p.ffn_w1, p.ffn_b1,
        p.ffn_w2, p.ffn_b2, p.norm2_scale, p.norm2_shift,
    ]


def attention_params_to_bytes(p: AttentionParams) -> bytes:
    """Serialize to one blob: header (layer count, dims, seed) then f32 matrices."""
    z, h, w, _ = p.position_embedding.shape
    hidden = p.ffn_w1.shape[1]
    header = _ATT_HEADER.pack(p.num_layers, p.num_points, p.channels, z, h, w, hidden, p.seed)
    return header + _pack_arrays(_attention_array_order(p))


def attention_params_from_bytes(blob: bytes) -> AttentionParams:
    num_layers, num_points, channels, z, h, w, hidden, seed = _ATT_HEADER.unpack_from(blob, 0)
    shapes = [
        (num_points * 3, channels), (num_points, channels), (channels, channels),
        (channels, channels), (z, h, w, channels), (num_layers, channels),
        (num_layers, channels), (num_layers, hidden, channels), (num_layers, hidden),
        (num_layers, channels, hidden), (num_layers, channels), (num_layers, channels),
        (num_layers, channels),
    ]
    offset = _ATT_HEADER.size
    arrays = []
    for shape in shapes:
        count = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
        arrays.append(arr.astype(np.float64).reshape(shape))
        offset += count * 4
    if offset != len(blob):
        raise ValueError("attention parameter blob has trailing or missing bytes")
    return AttentionParams(num_layers, num_points, channels, *arrays, seed=seed)


def mlp_params_to_bytes(p: UncertaintyMLPParams) -> bytes:
    header = _MLP_HEADER.pack(p.n_classes, len(p.weights), p.seed)
    arrays: list[np.ndarray] = []
    for w, b in zip(p.weights, p.biases):
        arrays.extend([w, b])
    return header + _pack_arrays(arrays)


def mlp_params_from_bytes(blob: bytes) -> UncertaintyMLPParams:
    n_classes, n_layers, seed = _MLP_HEADER.unpack_from(blob, 0)
    dims = (n_classes + 2,) + MLP_HIDDEN
    if n_layers != len(MLP_HIDDEN):
        raise ValueError("unexpected layer count in MLP parameter blob")
    offset = _MLP_HEADER.size
    weights, biases = [], []
    for i in range(n_layers):
        for shape, target in (((dims[i + 1], dims[i]), weights), ((dims[i + 1],), biases)):
            count = int(np.prod(shape))
            arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
            target.append(arr.astype(np.float64).reshape(shape))
            offset += count * 4
    if offset != len(blob):
        raise ValueError("MLP parameter blob has trailing or missing bytes")
    return UncertaintyMLPParams(weights, biases, n_classes, seed)
