"""Scene generation and pipeline behavior tests."""

import numpy as np
import pytest

from stvox.errors import PipelineError
from stvox.geometry import Pose
from stvox.memory import allocate_memory, write_labels
from stvox.simulator import (
    BoxPrimitive,
    DynamicInstance,
    PipelineConfig,
    SceneScript,
    bench_frames,
    default_scene_script,
    generate_scene,
    run_benchmark,
    run_pipeline,
    trajectory_poses,
)


def tiny_script(**overrides):
    base = dict(
        dims=(20, 20, 2),
        voxel_size=0.4,
        channels=6,
        n_classes=5,
        statics=[BoxPrimitive((-4.0, -4.0, 0.0), (4.0, 4.0, 0.4), 1)],
        dynamics=[],
        speed=0.8,
        frame_count=6,
        label_flip=0.0,
        feature_sigma=0.0,
        seed=1,
    )
    base.update(overrides)
    return SceneScript(**base)


class TestGenerateScene:
    def test_noiseless_predictions_equal_ground_truth(self):
        bundles = generate_scene(tiny_script())
        for b in bundles:
            assert np.array_equal(b.frame.pred_labels, b.frame.gt_labels)

    def test_static_scene_consistent_in_scene_coordinates(self):
        script = tiny_script(frame_count=4)
        bundles = generate_scene(script)
        poses = [b.frame.pose for b in bundles]
        mem = allocate_memory(poses, script.frame_spec.with_channels(1), script.n_classes,
                              script.free_class)
        write_labels(mem, poses[0], bundles[0].frame.gt_labels)
        snapshot = mem.gt_labels.copy()
        written = mem.observed.copy()
        for pose, bundle in zip(poses[1:], bundles[1:]):
            write_labels(mem, pose, bundle.frame.gt_labels)
            overlap = written & mem.observed
            assert np.array_equal(mem.gt_labels[overlap], snapshot[overlap])
            snapshot = mem.gt_labels.copy()
            written = mem.observed.copy()

    def test_flow_unit_conversion(self):
        script = tiny_script(
            dynamics=[DynamicInstance((-1.2, -1.2, 0.0), (1.2, 1.2, 0.4), 2, (2.0, 0.0))],
            frame_count=2,
        )
        bundles = generate_scene(script)
        flows = bundles[0].gt_flow[bundles[0].dynamic_mask]
        assert flows.size > 0
        assert np.allclose(flows, [2.5, 0.0])  # 2 m/s * 0.5 s / 0.4 m

    def test_dynamic_instance_volume_conserved(self):
        script = tiny_script(
            speed=0.0,
            dynamics=[DynamicInstance((-2.0, -1.2, 0.0), (-0.4, 0.4, 0.4), 2, (0.53, 0.21))],
            frame_count=6,
        )
        bundles = generate_scene(script)
        counts = [int(b.dynamic_mask.sum()) for b in bundles]
        box_vox = np.array([4, 4, 1])  # (nx, ny, nz) at 0.4 m voxels
        face_budget = 2 * (box_vox[1] * box_vox[2] + box_vox[0] * box_vox[2])
        assert max(counts) - min(counts) <= face_budget
        assert min(counts) > 0

    @pytest.mark.parametrize("velocity", [(1.2, 0.0), (1.6, 0.8)])
    def test_flow_warp_overlaps_next_frame(self, velocity):
        script = tiny_script(
            speed=0.0,
            dynamics=[DynamicInstance((-3.0, -2.0, 0.0), (1.0, 2.0, 0.4), 2, velocity)],
            frame_count=3,
        )
        bundles = generate_scene(script)
        for t in range(len(bundles) - 1):
            cur = bundles[t]
            nxt = bundles[t + 1]
            zs, ys, xs = np.nonzero(cur.dynamic_mask)
            flow = cur.gt_flow[zs, ys, xs]
            warped = {(int(np.floor(x + fx + 0.5)), int(np.floor(y + fy + 0.5)), int(z))
                      for x, y, fx, fy, z in zip(xs, ys, flow[:, 0], flow[:, 1], zs)}
            target = {(int(x), int(y), int(z)) for z, y, x in zip(*np.nonzero(nxt.dynamic_mask))}
            iou = len(warped & target) / len(warped | target)
            assert iou >= 0.7

    def test_occlusion_hides_columns_behind_walls(self):
        script = tiny_script(
            statics=[BoxPrimitive((1.3, -1.1, 0.0), (2.1, 1.1, 0.8), 1)],
            frame_count=1,
        )
        bundles = generate_scene(script)
        vis = bundles[0].frame.visibility
        spec = script.frame_spec
        x_of = lambda wx: int(round((wx - spec.origin[0]) / spec.voxel_size))
        y_mid = int(round((0.0 - spec.origin[1]) / spec.voxel_size))
        assert vis[0, y_mid, x_of(0.6)]       # in front of the wall
        assert vis[0, y_mid, x_of(1.4)]       # the wall itself (first hit)
        assert not vis[0, y_mid, x_of(3.0)]   # behind the wall

    def test_primitive_outside_bounds_rejected(self):
        script = tiny_script(statics=[BoxPrimitive((500.0, 500.0, 0.0), (501.0, 501.0, 0.4), 1)])
        with pytest.raises(ValueError, match="outside"):
            generate_scene(script)

    def test_deterministic_given_seed(self):
        a = generate_scene(tiny_script(label_flip=0.3, feature_sigma=0.2))
        b = generate_scene(tiny_script(label_flip=0.3, feature_sigma=0.2))
        for fa, fb in zip(a, b):
            assert np.array_equal(fa.frame.features, fb.frame.features)
            assert np.array_equal(fa.frame.pred_labels, fb.frame.pred_labels)
            assert np.array_equal(fa.frame.visibility, fb.frame.visibility)

    def test_activation_rows_on_simplex(self):
        bundles = generate_scene(tiny_script(label_flip=0.25))
        c = bundles[0].frame.class_activation.reshape(-1, 5)
        assert np.allclose(c.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(c >= 0.0)

    def test_arc_trajectory_poses_are_valid(self):
        script = tiny_script(trajectory="arc", speed=1.0, frame_count=5)
        poses = trajectory_poses(script)
        assert len(poses) == 5
        bundles = generate_scene(script)
        assert len(bundles) == 5

    def test_unknown_trajectory_rejected(self):
        with pytest.raises(ValueError, match="trajectory"):
            trajectory_poses(tiny_script(trajectory="zigzag"))


class TestSceneScript:
    def test_yaml_round_trip(self, tmp_path):
        script = tiny_script(
            label_flip=0.15,
            dynamics=[DynamicInstance((0.0, 0.0, 0.0), (1.0, 1.0, 0.4), 2, (1.0, -0.5))],
        )
        path = tmp_path / "scene.yaml"
        script.save(path)
        loaded = SceneScript.load(path)
        assert loaded.dims == script.dims
        assert loaded.label_flip == pytest.approx(0.15)
        assert loaded.dynamics[0].velocity == (1.0, -0.5)
        assert loaded.statics[0].cls == 1

    def test_invalid_noise_rejected(self):
        with pytest.raises(ValueError, match="label_flip"):
            tiny_script(label_flip=1.5)

    def test_default_script_generates(self):
        bundles = generate_scene(default_scene_script(frame_count=2))
        assert len(bundles) == 2


class TestPipeline:
    def test_noiseless_static_run_is_perfect(self):
        bundles = generate_scene(tiny_script(frame_count=5))
        result = run_pipeline(bundles, PipelineConfig(alpha=0.5))
        rep = result.report
        assert rep.mstcv_fused_masked == 0.0
        assert rep.mstcv_fused_unmasked == 0.0
        assert rep.miou_masked.mean == pytest.approx(1.0)

    def test_temporal_disabled_equals_per_frame_surrogate(self):
        bundles = generate_scene(tiny_script(frame_count=4, label_flip=0.3))
        result = run_pipeline(bundles, PipelineConfig(k=1))
        for pred, bundle in zip(result.predictions, bundles):
            per_frame = np.argmax(bundle.frame.class_activation, axis=-1)
            assert np.array_equal(pred.labels, per_frame)

    def test_fused_stream_beats_raw_on_noisy_static_scene(self):
        bundles = generate_scene(tiny_script(frame_count=10, label_flip=0.2, seed=3))
        rep = run_pipeline(bundles, PipelineConfig()).report
        assert rep.mstcv_raw_masked > 0.0
        assert rep.mstcv_fused_masked < rep.mstcv_raw_masked

    def test_queue_paradigms_run(self):
        bundles = generate_scene(tiny_script(frame_count=4))
        for paradigm in ("recurrent", "stacked"):
            rep = run_pipeline(bundles, PipelineConfig(paradigm=paradigm, k=3)).report
            assert rep.miou_masked.mean == pytest.approx(1.0)

    def test_stage_errors_carry_frame_index(self):
        bundles = generate_scene(tiny_script(frame_count=3))
        bundles[1].frame.class_activation = bundles[1].frame.class_activation * 2.0
        with pytest.raises(PipelineError, match="frame 1"):
            run_pipeline(bundles, PipelineConfig())

    def test_oversized_window_rejected(self):
        bundles = generate_scene(tiny_script(frame_count=3))
        with pytest.raises(ValueError, match="exceeds"):
            run_pipeline(bundles, PipelineConfig(k=10))

    def test_outputs_written(self, tmp_path):
        bundles = generate_scene(tiny_script(frame_count=3))
        run_pipeline(bundles, PipelineConfig(out_dir=str(tmp_path / "run")))
        root = tmp_path / "run"
        assert (root / "metrics.csv").exists()
        assert (root / "per_class.csv").exists()
        assert (root / "scene" / "features.ocg1").exists()
        assert (root / "scene" / "manifest.txt").exists()
        assert (root / "frames" / "pred_0000.ocg1").exists()
        assert (root / "frames" / "poses.txt").exists()


class TestBenchmark:
    def test_rows_and_storage_shapes(self):
        spec = tiny_script().frame_spec
        rows = run_benchmark(("stacked", "unified"), (2, 4), spec, repeats=2, seed=0)
        stacked = {r["k"]: r for r in rows if r["paradigm"] == "stacked"}
        unified = {r["k"]: r for r in rows if r["paradigm"] == "unified"}
        assert stacked[4]["peak_bytes"] == 2 * stacked[2]["peak_bytes"]
        assert unified[2]["peak_bytes"] == unified[4]["peak_bytes"]
        assert all(r["mean_fuse_ms"] >= 0.0 for r in rows)

    def test_bench_frames_deterministic(self):
        spec = tiny_script().frame_spec
        a = bench_frames(spec, 3, seed=5)
        b = bench_frames(spec, 3, seed=5)
        for fa, fb in zip(a, b):
            assert np.array_equal(fa.features, fb.features)

    def test_empty_k_list_rejected(self):
        with pytest.raises(ValueError):
            run_benchmark(("unified",), (), tiny_script().frame_spec)
