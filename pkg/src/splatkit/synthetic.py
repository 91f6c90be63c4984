"""Synthetic oracle scenes: a random ground-truth cloud rendered into
point-map, depth, and refined-image assets so the whole pipeline can run
end-to-end without any foundation model in the loop.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import ply
from .assets import (DepthAsset, PointMapAsset, RefinedViewAsset,
                     save_depth, save_point_map, save_png, save_refined)
from .cameras import Camera, look_at_camera, make_pseudo_views, save_cameras
from .rasterizer import RenderSettings, rasterize
from .scene import GaussianCloud, logit

CONF_FLOOR = 0.05
COVERAGE_MIN = 0.5


def random_cloud(rng: np.random.Generator, n: int = 100,
                 spread: float = 0.55) -> GaussianCloud:
    """Random view-independent Gaussians in a ball around the origin."""
    colors = rng.uniform(0.15, 0.85, (n, 3))
    return GaussianCloud(
        positions=rng.normal(0.0, spread, (n, 3)),
        rotations=rng.normal(0.0, 1.0, (n, 4)),
        log_scales=np.log(rng.uniform(0.06, 0.18, (n, 3))),
        opacity_logits=logit(rng.uniform(0.55, 0.95, n)),
        sh_coeffs=((colors - 0.5) / 0.28209479177387814)[:, None, :],
    )


def orbit_cameras(yaw_degs, pitch_degs, radius: float = 5.0, size: int = 32,
                  fov_deg: float = 45.0, prefix: str = "view") -> list[Camera]:
    fx = (size / 2.0) / np.tan(np.deg2rad(fov_deg) / 2.0)
    cams = []
    for i, (yaw, pitch) in enumerate(zip(yaw_degs, pitch_degs)):
        ya, pa = np.deg2rad(yaw), np.deg2rad(pitch)
        eye = radius * np.array([np.sin(ya) * np.cos(pa), np.sin(pa), -np.cos(ya) * np.cos(pa)])
        cams.append(look_at_camera(eye, (0, 0, 0), fx=fx, width=size, height=size,
                                   cam_id=f"{prefix}{i:03d}"))
    return cams


def point_map_from_render(cloud: GaussianCloud, camera: Camera,
                          settings: RenderSettings | None = None) -> PointMapAsset:
    """Oracle point map: back-project the track-normalized render distance
    along each pixel ray; confidence is the rendered track, zeroed where the
    view barely covers the scene."""
    settings = settings or RenderSettings()
    out = rasterize(cloud, camera, settings)
    covered = out.track >= CONF_FLOOR
    dist = np.where(covered, out.depth / np.where(covered, out.track, 1.0), 0.0)
    fill = float(np.median(dist[covered])) if covered.any() else 1.0
    dist = np.where(covered, dist, fill)
    points = camera.center[None, None, :] + camera.pixel_rays() * dist[:, :, None]
    conf = np.where(covered, out.track, 0.0)
    return PointMapAsset(points=points, confidence=conf, camera=camera,
                         rgb=np.clip(out.color, 0.0, 1.0))


def pseudo_supervision_from_render(
    cloud: GaussianCloud, camera: Camera, settings: RenderSettings | None = None,
) -> tuple[DepthAsset, RefinedViewAsset]:
    """Oracle pseudo-view priors from the ground-truth renderer: a relative
    depth map standing in for the monocular model and a clean refined image."""
    settings = settings or RenderSettings()
    out = rasterize(cloud, camera, settings)
    valid = out.track >= COVERAGE_MIN
    dist = np.where(valid, out.depth / np.where(valid, out.track, 1.0), 0.0)
    depth = DepthAsset(depth=dist, validity=valid, source="monocular", cam_id=camera.cam_id)
    refined = RefinedViewAsset(image=np.clip(out.color, 0.0, 1.0), cam_id=camera.cam_id)
    return depth, refined


def plane_point_map(camera: Camera, plane_z: float, rng: np.random.Generator) -> PointMapAsset:
    """Fully confident point map of a textured fronto-parallel plane."""
    rays = camera.pixel_rays()
    o = camera.center
    tt = (plane_z - o[2]) / rays[:, :, 2]
    points = o[None, None, :] + rays * tt[:, :, None]
    rgb = rng.uniform(0.2, 0.8, points.shape)
    conf = np.ones(points.shape[:2])
    return PointMapAsset(points=points, confidence=conf, camera=camera, rgb=rgb)


def build_scene(
    out_dir: str | Path,
    seed: int = 0,
    size: int = 32,
    n_gaussians: int = 100,
    n_train: int = 3,
    n_test: int = 5,
    pseudo_angle_deg: float = 5.0,
) -> dict:
    """Write a complete synthetic scene (ground truth, training assets,
    pseudo-view priors, held-out test views) under ``out_dir``."""
    out_dir = Path(out_dir)
    rng = np.random.default_rng(seed)
    gt = random_cloud(rng, n_gaussians)
    settings = RenderSettings()

    yaw_train = np.linspace(-20.0, 20.0, n_train)
    pitch_train = np.array([(-1) ** i * 6.0 for i in range(n_train)])
    train_cams = orbit_cameras(yaw_train, pitch_train, size=size, prefix="train")

    yaw_test = np.linspace(-14.0, 14.0, n_test)
    pitch_test = np.array([(-1) ** (i + 1) * 4.0 for i in range(n_test)])
    test_cams = orbit_cameras(yaw_test, pitch_test, size=size, prefix="test")

    pseudo_cams = make_pseudo_views([train_cams[0]], angle_deg=pseudo_angle_deg)

    out_dir.mkdir(parents=True, exist_ok=True)
    ply.save_ply(gt, out_dir / "gt_cloud.ply")

    train_dir = out_dir / "train"
    train_dir.mkdir(exist_ok=True)
    save_cameras(train_cams, train_dir / "cameras.json")
    for cam in train_cams:
        save_point_map(train_dir / f"{cam.cam_id}.f32raster", point_map_from_render(gt, cam, settings))

    pseudo_dir = out_dir / "pseudo"
    pseudo_dir.mkdir(exist_ok=True)
    save_cameras(pseudo_cams, pseudo_dir / "cameras.json")
    refined_assets = []
    for cam in pseudo_cams:
        depth, refined = pseudo_supervision_from_render(gt, cam, settings)
        save_depth(pseudo_dir / f"{cam.cam_id}_depth.f32raster", depth)
        refined_assets.append(refined)
    save_refined(pseudo_dir / "refined", refined_assets)

    test_dir = out_dir / "test"
    test_dir.mkdir(exist_ok=True)
    save_cameras(test_cams, test_dir / "cameras.json")
    for cam in test_cams:
        save_png(test_dir / f"{cam.cam_id}_rgb.png", rasterize(gt, cam, settings).color)

    manifest = {
        "seed": seed, "size": size, "n_gaussians": n_gaussians,
        "train": [c.cam_id for c in train_cams],
        "pseudo": [c.cam_id for c in pseudo_cams],
        "test": [c.cam_id for c in test_cams],
    }
    (out_dir / "scene.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest
