"""Noise-level sampling, forward noising, and the iterative reverse sampler.

The denoiser is a pluggable callable; real refinement arrives as files from
an external model, while the oracle denoisers below make the sampler fully
testable. Noise follows the standard-deviation convention throughout:
I_t = I_0 + sigma_t * eps, initial draw N(0, sigma_T^2 I).
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from .assets import RefinedViewAsset, load_refined
from .cameras import Camera

P_MEAN_DEFAULT = 1.5
P_STD_DEFAULT = 2.0
SIGMA_MAX_DEFAULT = 80.0
SIGMA_MIN_DEFAULT = 0.002


class ScheduleError(ValueError):
    pass


@dataclass
class NoiseSchedule:
    """sigmas[t] for t = 0..T, strictly increasing with sigmas[0] = 0."""
    sigmas: np.ndarray

    def __post_init__(self) -> None:
        self.sigmas = np.asarray(self.sigmas, dtype=np.float64)
        if self.sigmas.ndim != 1 or self.sigmas.size < 2:
            raise ScheduleError("schedule needs sigma_0 plus at least one positive level")
        if self.sigmas[0] != 0.0:
            raise ScheduleError("sigma_0 must be exactly 0")
        if np.any(np.diff(self.sigmas) <= 0):
            raise ScheduleError("sigmas must strictly decrease toward index 0")

    @property
    def steps(self) -> int:
        return self.sigmas.size - 1

    @staticmethod
    def geometric(steps: int, sigma_max: float = SIGMA_MAX_DEFAULT,
                  sigma_min: float = SIGMA_MIN_DEFAULT) -> "NoiseSchedule":
        """Geometric spacing from sigma_max down to sigma_min, then 0."""
        if steps < 1:
            raise ScheduleError("steps must be >= 1")
        descending = np.geomspace(sigma_max, sigma_min, steps)
        return NoiseSchedule(np.concatenate([[0.0], descending[::-1]]))


class Denoiser(Protocol):
    def __call__(self, noisy: np.ndarray, sigma: float, conditioning: object) -> np.ndarray: ...


class CleanTargetDenoiser:
    """Oracle denoiser returning a fixed clean image; makes the reverse
    sampler telescope exactly onto the target."""

    def __init__(self, target: np.ndarray):
        self.target = np.asarray(target, dtype=np.float64)

    def __call__(self, noisy: np.ndarray, sigma: float, conditioning: object) -> np.ndarray:
        return self.target


class IdentityDenoiser:
    """Returns the input unchanged; each sampler step becomes a no-op."""

    def __call__(self, noisy: np.ndarray, sigma: float, conditioning: object) -> np.ndarray:
        return noisy


def sample_training_sigma(rng: np.random.Generator,
                          p_mean: float = P_MEAN_DEFAULT,
                          p_std: float = P_STD_DEFAULT) -> float:
    """Draw sigma with log sigma ~ N(p_mean, p_std^2)."""
    if p_std < 0:
        raise ValueError("p_std must be >= 0")
    return float(np.exp(rng.normal(p_mean, p_std)))


def add_noise(image: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Forward process: I_t = I_0 + sigma * eps, eps ~ N(0, I)."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    image = np.asarray(image, dtype=np.float64)
    return image + sigma * rng.standard_normal(image.shape)


def sample(
    denoiser: Denoiser,
    schedule: NoiseSchedule,
    conditioning: object,
    shape: tuple[int, ...],
    rng: np.random.Generator,
) -> np.ndarray:
    """Reverse sampler: I_{t-1} = (I_t - U(I_t)) / sigma_t * (sigma_{t-1} - sigma_t) + I_t."""
    sig = schedule.sigmas
    if np.any(sig[1:] == 0.0):
        raise ScheduleError("sigma_t must be nonzero for every t >= 1")
    img = sig[-1] * rng.standard_normal(shape)
    for t in range(schedule.steps, 0, -1):
        denoised = denoiser(img, float(sig[t]), conditioning)
        img = (img - denoised) / sig[t] * (sig[t - 1] - sig[t]) + img
    return img


def refine_pseudo_views(
    rendered: Sequence[np.ndarray],
    cameras: Sequence[Camera],
    mode: str = "external",
    asset_dir: str | Path | None = None,
    denoiser_factory: Callable[[np.ndarray], Denoiser] | None = None,
    schedule: NoiseSchedule | None = None,
    rng: np.random.Generator | None = None,
) -> list[RefinedViewAsset]:
    """Produce one refined image per pseudo camera.

    external: load refined images from ``asset_dir`` (produced out-of-band by
    a real diffusion model) and validate camera correspondence.
    oracle: run the reverse sampler against a test denoiser built per view
    from its rendered image (defaults to CleanTargetDenoiser).
    """
    if len(rendered) != len(cameras):
        raise ValueError("need exactly one rendered image per pseudo camera")
    if mode == "external":
        if asset_dir is None:
            raise ValueError("external mode requires asset_dir")
        return [load_refined(asset_dir, cam.cam_id) for cam in cameras]
    if mode == "oracle":
        schedule = schedule or NoiseSchedule.geometric(10)
        rng = rng if rng is not None else np.random.default_rng()
        factory = denoiser_factory or (lambda img: CleanTargetDenoiser(img))
        out = []
        for img, cam in zip(rendered, cameras):
            refined = sample(factory(np.asarray(img)), schedule, None, np.asarray(img).shape, rng)
            out.append(RefinedViewAsset(image=np.clip(refined, 0.0, 1.0), cam_id=cam.cam_id))
        return out
    raise ValueError(f"mode must be 'external' or 'oracle', got {mode!r}")
