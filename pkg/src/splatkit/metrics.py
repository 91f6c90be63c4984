"""Image-quality metrics and the evaluation report.

PSNR is capped at 99 dB for exact matches so reports stay JSON-representable.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ssim import ssim  # re-exported: the report uses the same windowed SSIM as the loss

PSNR_CAP_DB = 99.0


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> tuple[float, bool]:
    """10 log10(peak^2 / MSE) in dB plus an exact-match flag."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB, True
    return min(float(10.0 * np.log10(peak**2 / mse)), PSNR_CAP_DB), False


@dataclass
class ViewMetrics:
    cam_id: str
    psnr_db: float
    ssim: float
    exact_match: bool = False


@dataclass
class EvalReport:
    views: list[ViewMetrics] = field(default_factory=list)
    config_fingerprint: str = ""
    runtime_seconds: float = 0.0

    @property
    def mean_psnr_db(self) -> float:
        return float(np.mean([v.psnr_db for v in self.views])) if self.views else 0.0

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([v.ssim for v in self.views])) if self.views else 0.0

    def as_dict(self) -> dict:
        return {
            "views": [
                {"id": v.cam_id, "psnr_db": v.psnr_db, "ssim": v.ssim, "exact_match": v.exact_match}
                for v in self.views
            ],
            "mean_psnr_db": self.mean_psnr_db,
            "mean_ssim": self.mean_ssim,
            "config_fingerprint": self.config_fingerprint,
            "runtime_seconds": self.runtime_seconds,
            "units": {"psnr_db": "decibel", "ssim": "dimensionless"},
        }
