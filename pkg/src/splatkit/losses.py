"""Training losses with analytic gradients w.r.t. the rendered rasters.

Four terms enter the weighted total: photometric L1 + D-SSIM against training
images, Pearson depth correlation against the stereo prior, and the same two
forms against refined images / monocular depth on pseudo views. The pseudo
depth term is gated off before iteration 2000.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ssim import ssim_and_grad

PEARSON_EPS = 1e-8
PEARSON_MIN_VAR = 1e-12
PSEUDO_DEPTH_START = 2000


@dataclass
class LossWeights:
    color: float = 0.5          # lambda_1
    depth: float = 1.0          # lambda_2
    pseudo_depth: float = 0.05  # lambda_3
    pseudo_color: float = 0.001  # lambda_4
    dssim: float = 0.2          # lambda'

    def __post_init__(self) -> None:
        for name in ("color", "depth", "pseudo_depth", "pseudo_color", "dssim"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be >= 0")


@dataclass
class TermValue:
    """One loss term: scalar value plus gradient w.r.t. its rendered raster."""
    value: float
    grad: np.ndarray
    degenerate: bool = False


def photometric_loss(rendered: np.ndarray, target: np.ndarray,
                     dssim_weight: float = 0.2) -> TermValue:
    """mean|rendered - target| + lambda' * (1 - SSIM)/2."""
    rendered = np.asarray(rendered, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if rendered.shape != target.shape:
        raise ValueError(f"shape mismatch: {rendered.shape} vs {target.shape}")
    diff = rendered - target
    l1 = float(np.mean(np.abs(diff)))
    grad = np.sign(diff) / diff.size
    if dssim_weight > 0:
        s, sgrad = ssim_and_grad(rendered, target)
        value = l1 + dssim_weight * (1.0 - s) / 2.0
        grad = grad - (dssim_weight / 2.0) * sgrad
    else:
        value = l1
    return TermValue(value, grad)


def pearson_depth_loss(d_rendered: np.ndarray, d_estimated: np.ndarray,
                       validity: np.ndarray | None = None) -> TermValue:
    """1 - Corr(D_ras, D_est) over valid pixels.

    Scale/shift invariant by construction. A (near-)constant rendered raster
    cannot define a correlation; the term is flagged degenerate and skipped.
    """
    dr = np.asarray(d_rendered, dtype=np.float64)
    de = np.asarray(d_estimated, dtype=np.float64)
    if dr.shape != de.shape:
        raise ValueError(f"shape mismatch: {dr.shape} vs {de.shape}")
    valid = np.ones(dr.shape, dtype=bool) if validity is None else np.asarray(validity, dtype=bool)
    n = int(valid.sum())
    if n < 2:
        return TermValue(0.0, np.zeros_like(dr), degenerate=True)

    r = dr[valid]
    e = de[valid]
    rc = r - r.mean()
    ec = e - e.mean()
    var_r = float(np.mean(rc**2))
    var_e = float(np.mean(ec**2))
    if var_r < PEARSON_MIN_VAR or var_e < PEARSON_MIN_VAR:
        return TermValue(0.0, np.zeros_like(dr), degenerate=True)
    cov = float(np.mean(rc * ec))
    denom = np.sqrt(var_r * var_e + PEARSON_EPS)
    corr = cov / denom

    # d corr / d r_k = (e_k - e_mean)/(n denom) - cov var_e (r_k - r_mean)/(n denom^3)
    gvalid = ec / (n * denom) - cov * var_e * rc / (n * denom**3)
    grad = np.zeros_like(dr)
    grad[valid] = -gvalid
    return TermValue(1.0 - corr, grad)


def _zero_term(shape) -> TermValue:
    return TermValue(0.0, np.zeros(shape))


@dataclass
class LossReport:
    L_c: float
    L_d: float
    L_dp: float
    L_cp: float
    total: float
    grad_color: np.ndarray | None = None
    grad_depth: np.ndarray | None = None
    grad_pseudo_color: np.ndarray | None = None
    grad_pseudo_depth: np.ndarray | None = None
    degenerate_terms: tuple[str, ...] = ()

    def as_dict(self) -> dict:
        return {"L_c": self.L_c, "L_d": self.L_d, "L_dp": self.L_dp,
                "L_cp": self.L_cp, "total": self.total}


def total_loss(
    weights: LossWeights,
    iteration: int,
    color: TermValue | None = None,
    depth: TermValue | None = None,
    pseudo_depth: TermValue | None = None,
    pseudo_color: TermValue | None = None,
    pseudo_depth_start: int = PSEUDO_DEPTH_START,
) -> LossReport:
    """L = l1*L_c + l2*L_d + l3*L_dp + l4*L_cp with the pseudo depth term
    (value and gradient) dropped before iteration ``pseudo_depth_start``."""
    if pseudo_depth is not None and iteration < pseudo_depth_start:
        pseudo_depth = None

    def val(term: TermValue | None) -> float:
        return 0.0 if term is None or term.degenerate else term.value

    l_c, l_d = val(color), val(depth)
    l_dp, l_cp = val(pseudo_depth), val(pseudo_color)
    total = (weights.color * l_c + weights.depth * l_d
             + weights.pseudo_depth * l_dp + weights.pseudo_color * l_cp)

    def wgrad(term: TermValue | None, w: float) -> np.ndarray | None:
        if term is None or term.degenerate:
            return None
        return w * term.grad

    degenerate = tuple(
        name for name, term in
        (("L_c", color), ("L_d", depth), ("L_dp", pseudo_depth), ("L_cp", pseudo_color))
        if term is not None and term.degenerate
    )
    return LossReport(
        L_c=l_c, L_d=l_d, L_dp=l_dp, L_cp=l_cp, total=total,
        grad_color=wgrad(color, weights.color),
        grad_depth=wgrad(depth, weights.depth),
        grad_pseudo_depth=wgrad(pseudo_depth, weights.pseudo_depth),
        grad_pseudo_color=wgrad(pseudo_color, weights.pseudo_color),
        degenerate_terms=degenerate,
    )
