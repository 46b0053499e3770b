"""Command-line interface: simulate, bench, eval, inspect, loss-check.

Exit codes: 0 success, 2 user/input error, 3 internal invariant violation.
The STOCC_THREADS environment variable caps internal parallelism.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import gridio, losses
from .errors import InvariantViolation, PipelineError
from .geometry import grid_to_world, voxel_index_coords, world_to_grid
from .memory import allocate_memory, nearest_gather_labels, roi_mapping, write_labels
from .metrics import (
    ConsistencyLedger,
    LabelGrid,
    extended_eval_scope,
    miou,
    mstcv,
    write_per_class_csv,
)
from .simulator import (
    PipelineConfig,
    SceneScript,
    default_scene_script,
    generate_scene,
    run_benchmark,
    run_pipeline,
    write_bench_csv,
    write_bench_svg,
)
from .util import fmt_float, snap_near_integers, worker_count

DEFAULT_K_LIST = (4, 8, 16, 40)


def _parse_grid(text: str) -> tuple[int, int, int]:
    parts = text.lower().split("x")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("grid must look like HxWxZ, e.g. 50x50x4")
    return tuple(int(p) for p in parts)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stvox", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a scene and run the full pipeline")
    sim.add_argument("--scene", type=Path, default=None, help="scene script (YAML); built-in default if omitted")
    sim.add_argument("--alpha", type=float, default=0.5, help="class-activation decay factor")
    sim.add_argument("--frames", type=int, default=None, help="frames to process (1 disables temporal fusion)")
    sim.add_argument("--paradigm", choices=("recurrent", "stacked", "unified"), default="unified")
    sim.add_argument("--grid", type=_parse_grid, default=None, metavar="HxWxZ")
    sim.add_argument("--seed", type=int, default=None)
    sim.add_argument("--out", type=Path, default=Path("stvox_out"))
    sim.add_argument("--mask", action=argparse.BooleanOptionalAction, default=True,
                     help="report the masked metric variants as the headline")
    sim.add_argument("--extended-eval", action=argparse.BooleanOptionalAction, default=True,
                     help="also evaluate the historically-observed scope")
    sim.add_argument("--noise", type=float, default=None, help="override the script's label-flip probability")

    ben = sub.add_parser("bench", help="measure paradigm storage and fusion time")
    ben.add_argument("--grid", type=_parse_grid, default=(50, 50, 4), metavar="HxWxZ")
    ben.add_argument("--channels", type=int, default=32)
    ben.add_argument("--frames", type=str, default=",".join(str(k) for k in DEFAULT_K_LIST),
                     help="comma-separated window sizes")
    ben.add_argument("--paradigm", choices=("recurrent", "stacked", "unified", "all"), default="all")
    ben.add_argument("--repeats", type=int, default=5)
    ben.add_argument("--seed", type=int, default=0)
    ben.add_argument("--out", type=Path, default=Path("stvox_bench"))

    ev = sub.add_parser("eval", help="evaluate OCG1 prediction/GT dumps")
    ev.add_argument("--dir", type=Path, required=True,
                    help="directory with poses.txt, pred_*.ocg1, gt_*.ocg1 and optional vis_/dyn_ files")
    ev.add_argument("--mask", action=argparse.BooleanOptionalAction, default=None,
                    help="apply visibility masks (default: if vis files exist)")
    ev.add_argument("--extended-eval", action="store_true")
    ev.add_argument("--out", type=Path, default=None, help="where to write CSV reports")

    ins = sub.add_parser("inspect", help="print an OCG1 header and channel statistics")
    ins.add_argument("path", type=Path)
    ins.add_argument("--classes", type=int, default=None,
                     help="check the first N channels as a probability simplex")

    sub.add_parser("loss-check", help="finite-difference check of the NLL gradient")
    return parser


def cmd_simulate(args) -> int:
    if args.scene is not None:
        if not args.scene.exists():
            raise FileNotFoundError(f"scene script not found: {args.scene}")
        script = SceneScript.load(args.scene)
    else:
        script = default_scene_script()
    if args.grid is not None:
        script.dims = args.grid
    if args.frames is not None:
        script.frame_count = args.frames
    if args.seed is not None:
        script.seed = args.seed
    if args.noise is not None:
        script.label_flip = args.noise

    bundles = generate_scene(script)
    config = PipelineConfig(alpha=args.alpha, paradigm=args.paradigm,
                            k=None, seed=script.seed, apply_mask=args.mask,
                            extended_eval=args.extended_eval, out_dir=str(args.out))
    result = run_pipeline(bundles, config)
    rep = result.report
    scope = "masked" if args.mask else "unmasked"
    miou_main = rep.miou_masked.mean if args.mask else rep.miou_unmasked.mean
    mstcv_raw = rep.mstcv_raw_masked if args.mask else rep.mstcv_raw_unmasked
    print(f"frames={rep.frames} delta={fmt_float(rep.delta)}")
    print(f"mIoU (fused, {scope})    : {fmt_float(miou_main)}")
    if args.extended_eval:
        print(f"mIoU (fused, extended)  : {fmt_float(rep.miou_extended.mean)}")
    print(f"mSTCV (fused, masked)   : {fmt_float(rep.mstcv_fused_masked)}")
    print(f"mSTCV (fused, unmasked) : {fmt_float(rep.mstcv_fused_unmasked)}")
    print(f"mSTCV (raw, {scope})     : {fmt_float(mstcv_raw)}")
    print(f"outputs in {args.out}")
    return 0


def cmd_bench(args) -> int:
    from .geometry import GridSpec

    k_list = [int(k) for k in args.frames.split(",") if k]
    if not k_list:
        raise ValueError("no window sizes given")
    paradigms = ("recurrent", "stacked", "unified") if args.paradigm == "all" else (args.paradigm,)
    h, w, z = args.grid
    spec = GridSpec(np.array([-(w - 1) / 2 * 0.4, -(h - 1) / 2 * 0.4, 0.0]), 0.4,
                    (h, w, z), args.channels)
    rows = run_benchmark(paradigms, k_list, spec, repeats=args.repeats, seed=args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    write_bench_csv(rows, args.out / "bench.csv")
    write_bench_svg(rows, args.out / "bench.svg")
    for row in rows:
        print(f"{row['paradigm']:>9} k={row['k']:<3} cells={row['peak_cells']:<9} "
              f"bytes={row['peak_bytes']:<12} median_ms={fmt_float(row['median_fuse_ms'])}")
    print(f"reports in {args.out}")
    return 0


def _load_eval_frames(directory: Path):
    poses = gridio.read_pose_file(directory / "poses.txt")
    frames = []
    for t in range(len(poses)):
        pred_path = directory / f"pred_{t:04d}.ocg1"
        gt_path = directory / f"gt_{t:04d}.ocg1"
        if not pred_path.exists() or not gt_path.exists():
            raise ValueError(f"missing pred/gt dump for frame {t}")
        pred_spec, pred, _ = gridio.read_ocg1(pred_path)
        gt_spec, gt, _ = gridio.read_ocg1(gt_path)
        if pred.shape != gt.shape or pred_spec.dims != gt_spec.dims:
            raise ValueError(f"frame {t}: pred/gt dimension mismatch")
        vis = dyn = None
        vis_path = directory / f"vis_{t:04d}.ocg1"
        if vis_path.exists():
            _, vis, _ = gridio.read_ocg1(vis_path)
            vis = vis[..., 0].astype(bool)
        dyn_path = directory / f"dyn_{t:04d}.ocg1"
        if dyn_path.exists():
            _, dyn, _ = gridio.read_ocg1(dyn_path)
            dyn = dyn[..., 0].astype(bool)
        frames.append((poses[t], pred_spec, pred[..., 0], gt[..., 0], vis, dyn))
    return frames


def cmd_eval(args) -> int:
    frames = _load_eval_frames(args.dir)
    shapes = {f[1].dims for f in frames}
    if len(shapes) != 1:
        raise ValueError(f"inconsistent grid dims across frames: {sorted(shapes)}")
    have_vis = all(f[4] is not None for f in frames)
    apply_mask = have_vis if args.mask is None else args.mask
    if apply_mask and not have_vis:
        raise ValueError("--mask requested but vis_*.ocg1 files are missing")

    poses = [f[0] for f in frames]
    spec = frames[0][1]
    manifest_path = args.dir / "manifest.txt"
    if manifest_path.exists():
        manifest = gridio.read_manifest(manifest_path)
        n_classes = int(manifest["classes"])
        free = int(manifest["free_class"])
    else:
        n_classes = max(int(max(int(f[2].max()), int(f[3].max())) + 1), 2)
        free = n_classes - 1
    mem = allocate_memory(poses, spec.with_channels(1), n_classes, free)
    dyn_store = np.zeros((mem.spec.z, mem.spec.h, mem.spec.w), dtype=bool)

    ledger = ConsistencyLedger(n_classes)
    preds, gts, gts_ext = [], [], []

    def build_grids(item):
        pose, fspec, pred, gt, vis, dyn = item
        vis_arr = vis if vis is not None else np.ones(pred.shape, dtype=bool)
        return (LabelGrid(fspec, pred, vis_arr, n_classes, free),
                LabelGrid(fspec, gt, vis_arr, n_classes, free))

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        grids = list(pool.map(build_grids, frames))

    for (pose, fspec, pred, gt, vis, dyn), (pred_grid, gt_grid) in zip(frames, grids):
        ledger.record(mem, pose, pred_grid)
        if args.extended_eval:
            frac = snap_near_integers(world_to_grid(
                mem.spec, pose.apply(grid_to_world(fspec, voxel_index_coords(fspec.dims)))))
            hist_dyn = nearest_gather_labels(dyn_store, frac, False).reshape(gt.shape)
            exclude = hist_dyn if dyn is None else (hist_dyn | dyn)
            ext = extended_eval_scope(gt_grid.visibility, mem, pose, exclude, fspec)
            gts_ext.append(LabelGrid(fspec, gt, ext, n_classes, free))
        preds.append(pred_grid)
        gts.append(gt_grid)
        write_labels(mem, pose, pred, gt)
        if dyn is not None:
            m = roi_mapping(mem.spec, fspec, pose)
            dyn_store[m.zs, m.ys, m.xs] |= dyn[m.nn_idx[:, 2], m.nn_idx[:, 1], m.nn_idx[:, 0]]

    iou = miou(preds, gts, apply_mask=apply_mask)
    print(f"mIoU            : {fmt_float(iou.mean)}")
    lines = {"miou": iou.mean}
    if args.extended_eval:
        iou_ext = miou(preds, gts_ext, apply_mask=True)
        print(f"mIoU (extended) : {fmt_float(iou_ext.mean)}")
        lines["miou_extended"] = iou_ext.mean
    m_masked = mstcv(ledger, masked=True)
    m_unmasked = mstcv(ledger, masked=False)
    print(f"mSTCV (masked)  : {fmt_float(m_masked)}")
    print(f"mSTCV (unmasked): {fmt_float(m_unmasked)}")
    lines["mstcv_masked"] = m_masked
    lines["mstcv_unmasked"] = m_unmasked

    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        write_per_class_csv(args.out / "per_class.csv", n_classes, free, {
            "iou": iou.per_class,
            "flips_masked": ledger.flips_masked.astype(np.float64),
            "flips_unmasked": ledger.flips_unmasked.astype(np.float64),
        })
        summary = [f"{k},{fmt_float(v)}" for k, v in lines.items()]
        (args.out / "metrics.csv").write_text("metric,value\n" + "\n".join(summary) + "\n")
    return 0


def cmd_inspect(args) -> int:
    spec, values, dtype_code = gridio.read_ocg1(args.path)
    kind = "float32" if dtype_code == gridio.DTYPE_F32 else "uint8 labels"
    print(f"OCG1 {args.path}")
    print(f"  dims HxWxZ : {spec.h}x{spec.w}x{spec.z}")
    print(f"  channels   : {spec.channels} ({kind})")
    print(f"  origin     : {spec.origin[0]} {spec.origin[1]} {spec.origin[2]}")
    print(f"  voxel_size : {spec.voxel_size}")
    flat = values.reshape(-1, spec.channels).astype(np.float64)
    for c in range(min(spec.channels, 8)):
        col = flat[:, c]
        print(f"  ch{c:<3} min={fmt_float(col.min())} max={fmt_float(col.max())} mean={fmt_float(col.mean())}")
    if spec.channels > 8:
        print(f"  ... {spec.channels - 8} more channels")

    n_classes = args.classes
    if n_classes is None:
        manifest_path = args.path.parent / "manifest.txt"
        if manifest_path.exists() and args.path.name == "attributes.ocg1":
            manifest = gridio.read_manifest(manifest_path)
            n_classes = int(manifest.get("classes", 0)) or None
    if n_classes:
        rows = flat[:, :n_classes]
        sums = rows.sum(axis=1)
        written = sums >= 0.5
        bad = written & ((np.abs(sums - 1.0) > 1e-6) | (rows.min(axis=1) < -1e-9))
        print(f"  simplex check over {n_classes} channels: "
              f"{int(bad.sum())} violations in {int(written.sum())} written voxels")
    return 0


def cmd_loss_check(_args) -> int:
    worst = losses.gradient_check(seed=0, n_points=1000)
    print(f"gaussian_nll analytic vs central differences: max relative error {worst:.3e}")
    if worst > 1e-5:
        raise InvariantViolation(f"gradient check failed: {worst:.3e} > 1e-5")
    return 0


_HANDLERS = {
    "simulate": cmd_simulate,
    "bench": cmd_bench,
    "eval": cmd_eval,
    "inspect": cmd_inspect,
    "loss-check": cmd_loss_check,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except (InvariantViolation, PipelineError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
