"""Windowed SSIM with an analytic input gradient.

11x11 Gaussian window, sigma 1.5, C1 = 0.01^2, C2 = 0.03^2; local maps are
computed with zero-padded same-size separable convolutions and averaged over
all pixels, so identical images score exactly 1.
"""
from __future__ import annotations

import numpy as np
from scipy.ndimage import convolve1d

WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5
C1 = 0.01**2
C2 = 0.03**2


def _window() -> np.ndarray:
    x = np.arange(WINDOW_SIZE, dtype=np.float64) - (WINDOW_SIZE - 1) / 2.0
    g = np.exp(-(x**2) / (2.0 * WINDOW_SIGMA**2))
    return g / g.sum()


_G = _window()


def _blur(img: np.ndarray) -> np.ndarray:
    out = convolve1d(img, _G, axis=0, mode="constant", cval=0.0)
    return convolve1d(out, _G, axis=1, mode="constant", cval=0.0)


def ssim_map(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-pixel (and per-channel) SSIM map of two equal-shape images."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mu_a = _blur(a)
    mu_b = _blur(b)
    var_a = _blur(a * a) - mu_a**2
    var_b = _blur(b * b) - mu_b**2
    cov = _blur(a * b) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + C1) * (2.0 * cov + C2)
    den = (mu_a**2 + mu_b**2 + C1) * (var_a + var_b + C2)
    return num / den


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    if min(a.shape[0], a.shape[1]) < WINDOW_SIZE:
        raise ValueError(f"images smaller than the {WINDOW_SIZE}x{WINDOW_SIZE} window")
    return float(np.mean(ssim_map(a, b)))


def ssim_and_grad(a: np.ndarray, b: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean SSIM and its gradient with respect to the first image."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if min(a.shape[0], a.shape[1]) < WINDOW_SIZE:
        raise ValueError(f"images smaller than the {WINDOW_SIZE}x{WINDOW_SIZE} window")

    mu_a = _blur(a)
    mu_b = _blur(b)
    raw_aa = _blur(a * a)
    raw_ab = _blur(a * b)
    var_a = raw_aa - mu_a**2
    var_b = _blur(b * b) - mu_b**2
    cov = raw_ab - mu_a * mu_b

    a1 = 2.0 * mu_a * mu_b + C1
    a2 = 2.0 * cov + C2
    b1 = mu_a**2 + mu_b**2 + C1
    b2 = var_a + var_b + C2
    s = (a1 * a2) / (b1 * b2)
    npix = s.size

    # partials of the local map w.r.t. its statistics (raw moments held fixed)
    ds_dmu = s * (2.0 * mu_b / a1 - 2.0 * mu_a / b1 - 2.0 * mu_b / a2 + 2.0 * mu_a / b2)
    ds_draw_aa = -s / b2
    ds_draw_ab = 2.0 * s / a2

    # adjoint of the zero-padded symmetric blur is the same blur
    grad = _blur(ds_dmu) + 2.0 * a * _blur(ds_draw_aa) + b * _blur(ds_draw_ab)
    return float(s.mean()), grad / npix
