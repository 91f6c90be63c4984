"""Redundancy-free incremental initialization from point-map priors.

The first view seeds one Gaussian per confident pixel. Each later view is
rendered against the current cloud and contributes new Gaussians only where
the coverage mask fires:

    M_p = (track < 0.5) OR (gt_depth < rendered_depth AND
                            |rendered_depth - gt_depth| > 50 * MDE)

with MDE the per-view median absolute depth error over valid pixels. Both
gates apply: a pixel must pass M_p and the confidence threshold.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import sh
from .assets import PointMapAsset
from .cameras import Camera
from .rasterizer import RasterOutput, RenderSettings, rasterize
from .scene import GaussianCloud, logit

TRACK_THRESHOLD = 0.5
MDE_FACTOR = 50.0
SEED_OPACITY = 0.1


class InitializationError(RuntimeError):
    pass


class EmptyMaskError(ValueError):
    """compute_rf_mask received no valid pixels."""


def compute_rf_mask(
    track: np.ndarray,
    rendered_depth: np.ndarray,
    gt_depth: np.ndarray,
    validity: np.ndarray,
) -> np.ndarray:
    """Boolean per-pixel mask of where new Gaussians are still needed."""
    track = np.asarray(track, dtype=np.float64)
    rendered_depth = np.asarray(rendered_depth, dtype=np.float64)
    gt_depth = np.asarray(gt_depth, dtype=np.float64)
    validity = np.asarray(validity, dtype=bool)
    if not (track.shape == rendered_depth.shape == gt_depth.shape == validity.shape):
        raise ValueError("rasters are not aligned")
    if not validity.any():
        raise EmptyMaskError("no valid pixels")

    err = np.abs(rendered_depth - gt_depth)
    mde = np.median(err[validity])
    mask = (track < TRACK_THRESHOLD) | ((gt_depth < rendered_depth) & (err > MDE_FACTOR * mde))
    return mask & validity


def seed_gaussians_from_pixels(
    points: np.ndarray,
    rgbs: np.ndarray,
    depths: np.ndarray,
    camera: Camera,
    max_sh_degree: int = 4,
) -> GaussianCloud:
    """Per-pixel seeds: identity rotation, one-pixel isotropic footprint,
    opacity 0.1, degree-0 SH matching the pixel color."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    rgbs = np.atleast_2d(np.asarray(rgbs, dtype=np.float64))
    depths = np.atleast_1d(np.asarray(depths, dtype=np.float64))
    if np.any(depths <= 0):
        raise ValueError("seed depths must be positive")
    n = points.shape[0]
    scale = depths / ((camera.fx + camera.fy) / 2.0)
    rotations = np.zeros((n, 4))
    rotations[:, 0] = 1.0
    coeffs = np.zeros((n, sh.num_coeffs(max_sh_degree), 3))
    coeffs[:, 0, :] = sh.rgb_to_sh_dc(rgbs)
    return GaussianCloud(
        positions=points,
        rotations=rotations,
        log_scales=np.log(scale)[:, None].repeat(3, axis=1),
        opacity_logits=np.full(n, logit(SEED_OPACITY)),
        sh_coeffs=coeffs,
    )


def seed_gaussian_from_pixel(
    world_point: np.ndarray, rgb: np.ndarray, depth: float, camera: Camera,
    max_sh_degree: int = 4,
) -> GaussianCloud:
    return seed_gaussians_from_pixels(
        world_point[None, :], np.asarray(rgb)[None, :], np.array([depth]), camera, max_sh_degree
    )


@dataclass
class ViewInitStats:
    cam_id: str
    eligible: int   # pixels passing the confidence test
    seeded: int     # Gaussians actually added


def rf_initialize(
    assets: Sequence[PointMapAsset],
    confidence_threshold: float = 0.5,
    render: Callable[[GaussianCloud, Camera], RasterOutput] | None = None,
    initial_cloud: GaussianCloud | None = None,
    primary: str = "first",
    rng: np.random.Generator | None = None,
    max_sh_degree: int = 4,
    stats_out: list[ViewInitStats] | None = None,
) -> GaussianCloud:
    """Incremental per-view seeding of a Gaussian cloud.

    With no ``initial_cloud`` the primary view seeds every confident pixel;
    later views pass through the RF mask. ``primary`` chooses the first view
    ("first" keeps user order, "random" draws one with ``rng``).
    """
    if len(assets) == 0:
        raise InitializationError("need at least one point-map asset")
    if render is None:
        render = lambda cloud, cam: rasterize(cloud, cam, RenderSettings())

    order = list(range(len(assets)))
    if primary == "random":
        gen = rng if rng is not None else np.random.default_rng()
        first = int(gen.integers(len(assets)))
        order = [first] + [i for i in order if i != first]
    elif primary != "first":
        raise ValueError(f"primary must be 'first' or 'random', got {primary!r}")

    cloud = initial_cloud.copy() if initial_cloud is not None else GaussianCloud.empty(max_sh_degree)
    for rank, view_idx in enumerate(order):
        asset = assets[view_idx]
        confident = asset.confidence >= confidence_threshold
        if rank == 0 and len(cloud) == 0:
            select = confident
            if not select.any():
                raise InitializationError("primary view has no pixels above the confidence threshold")
        else:
            if not confident.any():
                if stats_out is not None:
                    stats_out.append(ViewInitStats(asset.camera.cam_id, 0, 0))
                continue
            rendered = render(cloud, asset.camera)
            mask = compute_rf_mask(rendered.track, rendered.depth, asset.gt_depth, confident)
            select = mask
        if select.any():
            depths = asset.gt_depth[select]
            new = seed_gaussians_from_pixels(
                asset.points[select], asset.rgb[select], depths, asset.camera, max_sh_degree
            )
            cloud = GaussianCloud.concatenate(cloud, new)
        if stats_out is not None:
            stats_out.append(ViewInitStats(asset.camera.cam_id, int(confident.sum()), int(select.sum())))
    return cloud
