"""Command-line surface: exit codes, outputs and determinism."""

import numpy as np
import pytest

from stvox import cli, gridio
from stvox.errors import InvariantViolation
from stvox.simulator import BoxPrimitive, SceneScript


def tiny_scene_file(tmp_path, **overrides):
    base = dict(
        dims=(16, 16, 2),
        voxel_size=0.4,
        channels=4,
        n_classes=4,
        statics=[BoxPrimitive((-2.0, -2.0, 0.0), (2.0, 2.0, 0.4), 1)],
        speed=0.8,
        frame_count=3,
        seed=5,
    )
    base.update(overrides)
    path = tmp_path / "scene.yaml"
    SceneScript(**base).save(path)
    return path


def run_cli(*argv):
    return cli.main([str(a) for a in argv])


class TestSimulate:
    def test_minimal_static_scene_reports_zero_mstcv(self, tmp_path, capsys):
        scene = tiny_scene_file(tmp_path)
        out = tmp_path / "run"
        assert run_cli("simulate", "--scene", scene, "--out", out) == 0
        stdout = capsys.readouterr().out
        assert "mSTCV (fused, masked)   : 0" in stdout
        assert (out / "metrics.csv").exists()
        summary = (out / "metrics.csv").read_text()
        assert "mstcv_fused_masked,0\n" in summary

    def test_missing_scene_file_exits_2(self, tmp_path, capsys):
        assert run_cli("simulate", "--scene", tmp_path / "nope.yaml") == 2
        assert "error" in capsys.readouterr().err

    def test_bad_script_exits_2(self, tmp_path, capsys):
        path = tmp_path / "broken.yaml"
        path.write_text("just a string\n")
        assert run_cli("simulate", "--scene", path) == 2

    def test_seeded_runs_are_byte_identical(self, tmp_path):
        scene = tiny_scene_file(tmp_path, label_flip=0.2, feature_sigma=0.1)
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert run_cli("simulate", "--scene", scene, "--seed", 9, "--out", out_a) == 0
        assert run_cli("simulate", "--scene", scene, "--seed", 9, "--out", out_b) == 0
        for rel in ("metrics.csv", "per_class.csv", "scene/features.ocg1",
                    "scene/attributes.ocg1", "scene/pred_labels.ocg1",
                    "frames/pred_0000.ocg1", "frames/poses.txt"):
            assert (out_a / rel).read_bytes() == (out_b / rel).read_bytes(), rel

    def test_frames_flag_truncates(self, tmp_path, capsys):
        scene = tiny_scene_file(tmp_path, frame_count=5)
        out = tmp_path / "run"
        assert run_cli("simulate", "--scene", scene, "--frames", 2, "--out", out) == 0
        assert "frames=2" in capsys.readouterr().out


class TestBench:
    def test_bench_writes_reports(self, tmp_path, capsys):
        out = tmp_path / "bench"
        assert run_cli("bench", "--grid", "12x12x2", "--channels", 4,
                       "--frames", "2,4", "--repeats", 2, "--out", out) == 0
        csv = (out / "bench.csv").read_text().splitlines()
        assert csv[0].startswith("paradigm,k,")
        assert len(csv) == 1 + 3 * 2
        assert (out / "bench.svg").read_text().startswith("<?xml")
        unified = [line for line in csv[1:] if line.startswith("unified")]
        bytes_col = {int(line.split(",")[4]) for line in unified}
        assert len(bytes_col) == 1  # unified storage identical across k


class TestEval:
    def _make_dump(self, tmp_path, label_flip=0.0):
        scene = tiny_scene_file(tmp_path, label_flip=label_flip)
        out = tmp_path / "run"
        assert run_cli("simulate", "--scene", scene, "--out", out) == 0
        return out / "frames"

    def test_self_eval_perfect(self, tmp_path, capsys):
        frames = self._make_dump(tmp_path)
        assert run_cli("eval", "--dir", frames, "--extended-eval") == 0
        stdout = capsys.readouterr().out
        assert "mIoU            : 1" in stdout
        assert "mSTCV (masked)  : 0" in stdout

    def test_eval_writes_csv(self, tmp_path):
        frames = self._make_dump(tmp_path)
        out = tmp_path / "eval"
        assert run_cli("eval", "--dir", frames, "--out", out) == 0
        assert (out / "per_class.csv").exists()
        assert (out / "metrics.csv").exists()

    def test_dimension_mismatch_exits_2(self, tmp_path, capsys):
        frames = self._make_dump(tmp_path)
        spec, values, _ = gridio.read_ocg1(frames / "gt_0001.ocg1")
        from stvox.geometry import GridSpec
        small = GridSpec(spec.origin, spec.voxel_size, (4, 4, 1), 1)
        gridio.write_ocg1(frames / "gt_0001.ocg1", small, np.zeros((1, 4, 4, 1), dtype=np.uint8))
        assert run_cli("eval", "--dir", frames) == 2

    def test_mask_toggle_changes_scope(self, tmp_path, capsys):
        frames = self._make_dump(tmp_path, label_flip=0.3)
        assert run_cli("eval", "--dir", frames, "--mask") == 0
        masked_out = capsys.readouterr().out
        assert run_cli("eval", "--dir", frames, "--no-mask") == 0
        unmasked_out = capsys.readouterr().out
        assert masked_out  # both variants computed and printed without error
        assert unmasked_out

    def test_missing_dir_exits_2(self, tmp_path):
        assert run_cli("eval", "--dir", tmp_path / "absent") == 2


class TestInspect:
    def test_header_echo(self, tmp_path, capsys):
        from stvox.geometry import GridSpec
        spec = GridSpec((0.0, 0.0, 0.0), 0.4, (3, 4, 2), 2)
        path = tmp_path / "grid.ocg1"
        gridio.write_ocg1(path, spec, np.random.default_rng(0).normal(size=spec.shape))
        assert run_cli("inspect", path) == 0
        stdout = capsys.readouterr().out
        assert "dims HxWxZ : 3x4x2" in stdout

    def test_truncated_file_exits_2(self, tmp_path, capsys):
        path = tmp_path / "broken.ocg1"
        path.write_bytes(b"OCG1" + b"\x00" * 10)
        assert run_cli("inspect", path) == 2

    def test_pipeline_activation_dump_has_no_simplex_violations(self, tmp_path, capsys):
        scene = tiny_scene_file(tmp_path, label_flip=0.2)
        out = tmp_path / "run"
        assert run_cli("simulate", "--scene", scene, "--out", out) == 0
        capsys.readouterr()
        assert run_cli("inspect", out / "scene" / "attributes.ocg1") == 0
        stdout = capsys.readouterr().out
        assert "0 violations" in stdout


class TestExitCodes:
    def test_loss_check_passes(self, capsys):
        assert run_cli("loss-check") == 0
        assert "max relative error" in capsys.readouterr().out

    def test_invariant_violation_maps_to_3(self, monkeypatch, capsys):
        def explode(_args):
            raise InvariantViolation("synthetic failure")

        monkeypatch.setitem(cli._HANDLERS, "loss-check", explode)
        assert run_cli("loss-check") == 3
        assert "synthetic failure" in capsys.readouterr().err
