"""Command-line pipeline: synth / init / train / render / eval / pseudo-cams / refine.

Outputs are written via temp-file + rename so failed runs never leave partial
artifacts behind. All randomness is derived from a single --seed flag.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import assets, diffusion, figures, ply, synthetic
from .cameras import load_cameras, make_pseudo_views, save_cameras
from .metrics import EvalReport, ViewMetrics, psnr
from .rasterizer import RenderSettings, rasterize
from .rfinit import rf_initialize
from .ssim import ssim
from .trainer import PseudoView, TrainConfig, TrainingDivergedError, train


def _atomic_write_bytes(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def _atomic_write_text(path: Path, text: str) -> None:
    _atomic_write_bytes(path, text.encode("utf-8"))


def _write_json(path: Path, doc: dict) -> None:
    _atomic_write_text(path, json.dumps(doc, indent=2) + "\n")


def _load_train_assets(assets_dir: Path) -> list[assets.PointMapAsset]:
    cams = load_cameras(assets_dir / "cameras.json")
    return [assets.load_point_map(assets_dir / f"{cam.cam_id}.f32raster") for cam in cams]


def _load_pseudo_views(pseudo_dir: Path) -> list[PseudoView]:
    cams = load_cameras(pseudo_dir / "cameras.json")
    out = []
    for cam in cams:
        depth = assets.load_depth(pseudo_dir / f"{cam.cam_id}_depth.f32raster")
        refined = assets.load_refined(pseudo_dir / "refined", cam.cam_id)
        out.append(PseudoView(camera=cam, depth=depth, refined=refined))
    return out


def _quantize(image: np.ndarray) -> np.ndarray:
    """Mirror the 8-bit PNG write path so self-comparisons are exact."""
    return np.round(np.clip(image, 0.0, 1.0) * 255.0) / 255.0


def cmd_synth(args) -> int:
    manifest = synthetic.build_scene(
        args.out, seed=args.seed, size=args.size, n_gaussians=args.n_gaussians,
        n_train=args.n_train, n_test=args.n_test,
    )
    print(f"synthetic scene written to {args.out} "
          f"({len(manifest['train'])} train, {len(manifest['pseudo'])} pseudo, "
          f"{len(manifest['test'])} test views)")
    return 0


def cmd_init(args) -> int:
    maps = _load_train_assets(Path(args.assets))
    rng = np.random.default_rng(args.seed)
    cloud = rf_initialize(
        maps, confidence_threshold=args.conf_threshold,
        primary=args.primary_view, rng=rng, max_sh_degree=args.sh_degree,
    )
    out = Path(args.out)
    tmp = out.with_name(out.name + ".tmp")
    ply.save_ply(cloud, tmp)
    os.replace(tmp, out)
    print(f"initialized {len(cloud)} gaussians -> {out}")
    return 0


def cmd_train(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    cloud = ply.load_ply(args.cloud)
    maps = _load_train_assets(Path(args.assets))
    pseudo = _load_pseudo_views(Path(args.pseudo)) if args.pseudo else []
    config = TrainConfig.from_dict(json.loads(Path(args.config).read_text())) if args.config \
        else TrainConfig()
    if args.iterations is not None:
        config.iterations = args.iterations
    rng = np.random.default_rng(args.seed)

    ckpt_dir = out_dir / "checkpoints"

    def checkpoint(iteration: int, snapshot) -> None:
        ckpt_dir.mkdir(exist_ok=True)
        ply.save_ply(snapshot, ckpt_dir / f"iter{iteration + 1:06d}.ply")
        _write_json(ckpt_dir / f"iter{iteration + 1:06d}.json",
                    {"iteration": iteration + 1, "n_gaussians": len(snapshot)})

    try:
        result = train(cloud, maps, pseudo, config, rng,
                       checkpoint_cb=checkpoint if args.checkpoint_every else None,
                       checkpoint_every=args.checkpoint_every)
    except TrainingDivergedError as err:
        ply.save_ply(cloud, out_dir / "diverged_snapshot.ply")
        print(f"error: {err} (snapshot written to {out_dir / 'diverged_snapshot.ply'})",
              file=sys.stderr)
        return 1

    log_text = "".join(json.dumps(rec) + "\n" for rec in result.log)
    _atomic_write_text(out_dir / "log.ndjson", log_text)
    tmp = out_dir / "final.ply.tmp"
    ply.save_ply(result.cloud, tmp)
    os.replace(tmp, out_dir / "final.ply")
    _write_json(out_dir / "config.json", config.as_dict())
    if not args.no_figures:
        figures.save_loss_curves(result.log, out_dir / "loss_curves.png")
    print(f"trained {config.iterations} iterations in {result.runtime_seconds:.1f}s, "
          f"{len(result.cloud)} gaussians -> {out_dir / 'final.ply'}")
    return 0


def cmd_render(args) -> int:
    cloud = ply.load_ply(args.cloud)
    cams = load_cameras(args.cameras)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for cam in cams:
        out = rasterize(cloud, cam, RenderSettings())
        assets.save_png(out_dir / f"{cam.cam_id}_color.png", out.color)
        assets.save_f32raster(out_dir / f"{cam.cam_id}_depth.f32raster", out.depth)
        assets.save_f32raster(out_dir / f"{cam.cam_id}_track.f32raster", out.track)
    print(f"rendered {len(cams)} views -> {out_dir}")
    return 0


def cmd_eval(args) -> int:
    t0 = time.perf_counter()
    cloud_path = Path(args.cloud)
    cloud = ply.load_ply(cloud_path)
    test_dir = Path(args.test_views)
    cams = load_cameras(test_dir / "cameras.json")

    fingerprint = hashlib.sha256(cloud_path.read_bytes()).hexdigest()[:16]
    report = EvalReport(config_fingerprint=fingerprint)
    for cam in cams:
        gt = assets.load_png(test_dir / f"{cam.cam_id}_rgb.png")
        rendered = _quantize(rasterize(cloud, cam, RenderSettings()).color)
        db, exact = psnr(rendered, gt)
        report.views.append(ViewMetrics(cam.cam_id, db, ssim(rendered, gt), exact))
    report.runtime_seconds = time.perf_counter() - t0

    report_path = Path(args.report)
    _write_json(report_path, report.as_dict())
    csv_lines = ["view,psnr_db,ssim,exact_match"]
    csv_lines += [f"{v.cam_id},{v.psnr_db:.6f},{v.ssim:.6f},{int(v.exact_match)}"
                  for v in report.views]
    _atomic_write_text(report_path.with_suffix(".csv"), "\n".join(csv_lines) + "\n")
    if not args.no_figures:
        figures.save_eval_chart(report, report_path.with_suffix(".png"))
    print(f"eval: mean PSNR {report.mean_psnr_db:.2f} dB, mean SSIM {report.mean_ssim:.4f} "
          f"over {len(report.views)} views -> {report_path}")
    return 0


def cmd_pseudo_cams(args) -> int:
    cams = load_cameras(args.cameras)
    pseudo = make_pseudo_views(cams, angle_deg=args.angle, axes=tuple(args.axes.split(",")))
    tmp = Path(args.out).with_name(Path(args.out).name + ".tmp")
    save_cameras(pseudo, tmp)
    os.replace(tmp, args.out)
    print(f"{len(pseudo)} pseudo cameras -> {args.out}")
    return 0


def cmd_refine(args) -> int:
    cams = load_cameras(args.cameras)
    cloud = ply.load_ply(args.cloud)
    rendered = [rasterize(cloud, cam, RenderSettings()).color for cam in cams]
    if args.mode == "external":
        refined = diffusion.refine_pseudo_views(rendered, cams, mode="external",
                                                asset_dir=args.assets)
    else:
        schedule = diffusion.NoiseSchedule.geometric(args.steps)
        refined = diffusion.refine_pseudo_views(
            rendered, cams, mode="oracle", schedule=schedule,
            rng=np.random.default_rng(args.seed),
        )
    assets.save_refined(args.out, refined)
    print(f"{len(refined)} refined views -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="splatkit",
                                description="sparse-view gaussian splatting pipeline")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic oracle scene")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--size", type=int, default=32)
    s.add_argument("--n-gaussians", type=int, default=100)
    s.add_argument("--n-train", type=int, default=3)
    s.add_argument("--n-test", type=int, default=5)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("init", help="redundancy-free initialization from point maps")
    s.add_argument("--assets", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--conf-threshold", type=float, default=0.5)
    s.add_argument("--primary-view", choices=["first", "random"], default="first")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--sh-degree", type=int, default=4)
    s.set_defaults(func=cmd_init)

    s = sub.add_parser("train", help="optimize a cloud against training and pseudo views")
    s.add_argument("--cloud", required=True)
    s.add_argument("--assets", required=True)
    s.add_argument("--pseudo", default=None)
    s.add_argument("--config", default=None, help="cfg.json mirroring TrainConfig")
    s.add_argument("--out", required=True)
    s.add_argument("--iterations", type=int, default=None, help="override config iterations")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--checkpoint-every", type=int, default=0)
    s.add_argument("--no-figures", action="store_true")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("render", help="render color/depth/track rasters for cameras")
    s.add_argument("--cloud", required=True)
    s.add_argument("--cameras", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("eval", help="PSNR/SSIM report against held-out views")
    s.add_argument("--cloud", required=True)
    s.add_argument("--test-views", required=True)
    s.add_argument("--report", required=True)
    s.add_argument("--no-figures", action="store_true")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("pseudo-cams", help="perturbed pseudo cameras from training poses")
    s.add_argument("--cameras", required=True)
    s.add_argument("--angle", type=float, default=5.0)
    s.add_argument("--axes", default="up", help="comma-separated: up,right")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_pseudo_cams)

    s = sub.add_parser("refine", help="produce refined pseudo-view images")
    s.add_argument("--mode", choices=["external", "oracle"], required=True)
    s.add_argument("--cloud", required=True)
    s.add_argument("--cameras", required=True)
    s.add_argument("--assets", default=None, help="external mode: directory with refined images")
    s.add_argument("--out", required=True)
    s.add_argument("--steps", type=int, default=30, help="oracle mode: sampler steps")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_refine)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (assets.AssetError, ply.PlyFormatError, FileNotFoundError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
