"""Full optimization loop: per-iteration view sampling, loss assembly,
adaptive-moment updates with per-attribute learning rates, densification
(clone / split / prune), opacity resets, and SH-degree annealing.

Schedule defaults follow the 10000-iteration recipe: SH degree grows by one
every 500 iterations up to 4, opacity resets to 0.05 at iterations 2000,
5000, 7000, densification runs every 100 iterations from the 500th, and the
pseudo-view depth term activates at iteration 2000.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, asdict
from typing import Callable, Sequence

import numpy as np

from .assets import DepthAsset, PointMapAsset, RefinedViewAsset
from .cameras import Camera
from .losses import LossReport, LossWeights, TermValue, pearson_depth_loss, photometric_loss, total_loss
from .rasterizer import ParamGradients, RenderSettings, rasterize, rasterize_backward
from .scene import GaussianCloud, logit, quat_to_rotmat

PARAM_NAMES = ("positions", "rotations", "log_scales", "opacity_logits", "sh_coeffs")


class TrainingDivergedError(RuntimeError):
    def __init__(self, iteration: int, report: LossReport):
        super().__init__(f"non-finite loss at iteration {iteration}: {report.as_dict()}")
        self.iteration = iteration
        self.report = report


@dataclass
class TrainConfig:
    iterations: int = 10000
    lr_position: float = 0.00016
    lr_sh: float = 0.0025
    lr_opacity: float = 0.05
    lr_scale: float = 0.005
    lr_rotation: float = 0.001
    densify_enabled: bool = True
    densify_from: int = 500
    densify_interval: int = 100
    grad_threshold: float = 0.0002
    scale_threshold_frac: float = 0.01     # of scene extent
    split_scale_divisor: float = 1.6
    prune_opacity: float = 0.005
    opacity_reset_iters: tuple[int, ...] = (2000, 5000, 7000)
    reset_value: float = 0.05
    sh_increase_interval: int = 500
    sh_max: int = 4
    pseudo_depth_start: int = 2000
    adam_beta1: float = 0.9
    adam_beta2: float = 0.99
    adam_eps: float = 1e-15
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self) -> None:
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        for name in ("lr_position", "lr_sh", "lr_opacity", "lr_scale", "lr_rotation"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.grad_threshold <= 0 or self.scale_threshold_frac <= 0:
            raise ValueError("densification thresholds must be > 0")

    @property
    def learning_rates(self) -> dict[str, float]:
        return {
            "positions": self.lr_position,
            "rotations": self.lr_rotation,
            "log_scales": self.lr_scale,
            "opacity_logits": self.lr_opacity,
            "sh_coeffs": self.lr_sh,
        }

    def as_dict(self) -> dict:
        d = asdict(self)
        d["opacity_reset_iters"] = list(self.opacity_reset_iters)
        return d

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        d = dict(d)
        if "weights" in d and isinstance(d["weights"], dict):
            d["weights"] = LossWeights(**d["weights"])
        if "opacity_reset_iters" in d:
            d["opacity_reset_iters"] = tuple(d["opacity_reset_iters"])
        return TrainConfig(**d)


@dataclass
class PseudoView:
    camera: Camera
    depth: DepthAsset
    refined: RefinedViewAsset


class OptimState:
    """Per-attribute first/second moments, step counters, and densification
    statistics. Moment rows track the cloud through densify and prune."""

    def __init__(self, cloud: GaussianCloud):
        self.m = {name: np.zeros_like(getattr(cloud, name)) for name in PARAM_NAMES}
        self.v = {name: np.zeros_like(getattr(cloud, name)) for name in PARAM_NAMES}
        self.steps = {name: 0 for name in PARAM_NAMES}
        self.grad_accum = np.zeros(len(cloud))
        self.grad_count = np.zeros(len(cloud), dtype=np.int64)

    def step(self, cloud: GaussianCloud, grads: ParamGradients, config: TrainConfig) -> None:
        b1, b2, eps = config.adam_beta1, config.adam_beta2, config.adam_eps
        for name, lr in config.learning_rates.items():
            g = getattr(grads, name)
            self.m[name] = b1 * self.m[name] + (1.0 - b1) * g
            self.v[name] = b2 * self.v[name] + (1.0 - b2) * g * g
            self.steps[name] += 1
            t = self.steps[name]
            m_hat = self.m[name] / (1.0 - b1**t)
            v_hat = self.v[name] / (1.0 - b2**t)
            getattr(cloud, name)[...] -= lr * m_hat / (np.sqrt(v_hat) + eps)

    def rebuild(self, keep: np.ndarray, n_new: int) -> None:
        """Keep moment rows of surviving Gaussians, zero rows for new ones."""
        for store in (self.m, self.v):
            for name, arr in store.items():
                pad = np.zeros((n_new,) + arr.shape[1:])
                store[name] = np.concatenate([arr[keep], pad])
        self.grad_accum = np.zeros(keep.sum() + n_new)
        self.grad_count = np.zeros(keep.sum() + n_new, dtype=np.int64)

    def zero_attribute(self, name: str) -> None:
        self.m[name][...] = 0.0
        self.v[name][...] = 0.0


def sh_schedule(iteration: int, config: TrainConfig) -> int:
    """Active SH degree: one more band every sh_increase_interval iterations."""
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    return min(iteration // config.sh_increase_interval, config.sh_max)


def reset_opacity(cloud: GaussianCloud, value: float = 0.05,
                  optim: OptimState | None = None) -> GaussianCloud:
    cloud.opacity_logits[...] = logit(value)
    if optim is not None:
        optim.zero_attribute("opacity_logits")
    return cloud


def scene_extent(positions: np.ndarray) -> float:
    """Radius of the bounding sphere (centered at the centroid)."""
    positions = np.atleast_2d(positions)
    if positions.shape[0] == 0:
        return 0.0
    centered = positions - positions.mean(axis=0)
    return float(np.linalg.norm(centered, axis=1).max())


def densify_and_prune(
    cloud: GaussianCloud,
    stats: np.ndarray,
    config: TrainConfig,
    extent: float,
    rng: np.random.Generator,
    optim: OptimState | None = None,
    position_grads: np.ndarray | None = None,
) -> tuple[GaussianCloud, dict]:
    """Clone small high-gradient Gaussians, split large ones (children drawn
    from the parent, scales / split_scale_divisor), prune transparent ones."""
    n = len(cloud)
    stats = np.asarray(stats, dtype=np.float64)
    if stats.shape != (n,):
        raise ValueError(f"stats must have shape ({n},), got {stats.shape}")
    scale_threshold = config.scale_threshold_frac * extent
    max_scale = cloud.scales.max(axis=1)
    high_grad = stats > config.grad_threshold
    clone_mask = high_grad & (max_scale <= scale_threshold)
    split_mask = high_grad & (max_scale > scale_threshold)

    clones = cloud.select(clone_mask)
    if len(clones) and position_grads is not None:
        clones.positions -= config.lr_position * position_grads[clone_mask]

    parents = cloud.select(split_mask)
    children = GaussianCloud.empty(cloud.max_sh_degree)
    if len(parents):
        reps = GaussianCloud.concatenate(parents, parents)
        eps = rng.standard_normal((len(reps), 3))
        R = quat_to_rotmat(reps.rotations)
        reps.positions = reps.positions + np.einsum("nij,nj->ni", R, reps.scales * eps)
        reps.log_scales = reps.log_scales - np.log(config.split_scale_divisor)
        children = reps

    survivors_mask = ~split_mask
    merged = GaussianCloud.concatenate(
        GaussianCloud.concatenate(cloud.select(survivors_mask), clones), children
    )

    alive = merged.opacities >= config.prune_opacity
    if not alive.any():
        alive[int(np.argmax(merged.opacities))] = True  # never empty the cloud
    pruned = int((~alive).sum())
    final = merged.select(alive)

    if optim is not None:
        # survivors keep their moment rows, clones and children start at zero,
        # then the prune filter applies to the merged rows
        optim.rebuild(survivors_mask, len(clones) + len(children))
        for store in (optim.m, optim.v):
            for name in store:
                store[name] = store[name][alive]
        optim.grad_accum = optim.grad_accum[alive]
        optim.grad_count = optim.grad_count[alive]

    info = {
        "cloned": int(clone_mask.sum()),
        "split": int(split_mask.sum()),
        "pruned": pruned,
        "n_after": len(final),
    }
    return final, info


@dataclass
class TrainResult:
    cloud: GaussianCloud
    log: list[dict]
    runtime_seconds: float = 0.0


def train(
    cloud: GaussianCloud,
    train_views: Sequence[PointMapAsset],
    pseudo_views: Sequence[PseudoView],
    config: TrainConfig,
    rng: np.random.Generator,
    settings: RenderSettings | None = None,
    log_cb: Callable[[dict], None] | None = None,
    checkpoint_cb: Callable[[int, GaussianCloud], None] | None = None,
    checkpoint_every: int = 0,
) -> TrainResult:
    """Run the optimization and return the trained cloud plus the loss log.

    One training view and one pseudo view are visited per iteration, round
    robin. Raises TrainingDivergedError on a non-finite loss.
    """
    if len(cloud) == 0:
        raise ValueError("cannot train an empty cloud")
    if not train_views:
        raise ValueError("need at least one training view")
    settings = settings or RenderSettings()
    # depth enters the Pearson terms track-normalized: the raw composited
    # raster entangles coverage with distance and stalls the color term
    settings = RenderSettings(**{**settings.__dict__, "normalize_depth": True})
    cloud = cloud.copy()
    optim = OptimState(cloud)
    extent = scene_extent(cloud.positions)
    log: list[dict] = []
    t0 = time.perf_counter()

    for iteration in range(config.iterations):
        cloud.active_sh_degree = min(sh_schedule(iteration, config), cloud.max_sh_degree)

        asset = train_views[iteration % len(train_views)]
        out = rasterize(cloud, asset.camera, settings)
        color_term = photometric_loss(out.color, asset.rgb, config.weights.dssim)
        covered = out.transmittance < 0.5
        depth_term = pearson_depth_loss(
            out.depth, asset.gt_depth, (asset.confidence > 0) & covered
        )

        pv = pseudo_views[iteration % len(pseudo_views)] if pseudo_views else None
        out_p = rasterize(cloud, pv.camera, settings) if pv is not None else None
        pseudo_color_term = pseudo_depth_term = None
        if pv is not None:
            pseudo_color_term = photometric_loss(out_p.color, pv.refined.image, config.weights.dssim)
            pseudo_depth_term = pearson_depth_loss(
                out_p.depth, pv.depth.depth, pv.depth.validity & (out_p.transmittance < 0.5)
            )

        report = total_loss(
            config.weights, iteration,
            color=color_term, depth=depth_term,
            pseudo_depth=pseudo_depth_term, pseudo_color=pseudo_color_term,
            pseudo_depth_start=config.pseudo_depth_start,
        )
        if not np.isfinite(report.total):
            raise TrainingDivergedError(iteration, report)

        grads = rasterize_backward(
            cloud, asset.camera, settings,
            grad_color=report.grad_color, grad_depth=report.grad_depth, forward=out,
        )
        if pv is not None and (report.grad_pseudo_color is not None
                               or report.grad_pseudo_depth is not None):
            g2 = rasterize_backward(
                cloud, pv.camera, settings,
                grad_color=report.grad_pseudo_color, grad_depth=report.grad_pseudo_depth,
                forward=out_p,
            )
            for name in PARAM_NAMES:
                getattr(grads, name)[...] += getattr(g2, name)
            grads.screen_grad_norm += g2.screen_grad_norm
            grads.visible |= g2.visible

        position_grads = grads.positions.copy()
        optim.step(cloud, grads, config)
        optim.grad_accum += grads.screen_grad_norm
        optim.grad_count += grads.visible.astype(np.int64)

        events: list[dict] = []
        if (config.densify_enabled and iteration >= config.densify_from
                and iteration % config.densify_interval == 0):
            avg = optim.grad_accum / np.maximum(optim.grad_count, 1)
            cloud, info = densify_and_prune(
                cloud, avg, config, extent, rng, optim=optim, position_grads=position_grads
            )
            events.append({"event": "densify", **info})
        if iteration in config.opacity_reset_iters:
            reset_opacity(cloud, config.reset_value, optim)
            events.append({"event": "opacity_reset", "mean_alpha": float(cloud.opacities.mean())})

        record = {
            "iteration": iteration,
            **report.as_dict(),
            "n_gaussians": len(cloud),
            "sh_degree": cloud.active_sh_degree,
        }
        if report.degenerate_terms:
            record["degenerate_terms"] = list(report.degenerate_terms)
        if events:
            record["events"] = events
        log.append(record)
        if log_cb is not None:
            log_cb(record)
        if checkpoint_cb is not None and checkpoint_every > 0 and (iteration + 1) % checkpoint_every == 0:
            checkpoint_cb(iteration, cloud)

    return TrainResult(cloud=cloud, log=log, runtime_seconds=time.perf_counter() - t0)
