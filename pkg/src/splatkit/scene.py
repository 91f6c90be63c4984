"""Core Gaussian radiance-field state and the pure math on it.

A cloud is a column-oriented set of anisotropic 3D Gaussians. Scales are
stored as logs and opacities as logits so optimizer steps can never leave the
valid domain; covariance is assembled as R * diag(exp(s))^2 * R^T from a unit
quaternion and per-axis log standard deviations.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import sh


class DegenerateRotationError(ValueError):
    """Quaternion with (near-)zero norm cannot define a rotation."""


def sigmoid(x: np.ndarray | float) -> np.ndarray | float:
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


def logit(p: np.ndarray | float) -> np.ndarray | float:
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def normalize_quaternions(quats: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Return unit quaternions; raises DegenerateRotationError on zero norm."""
    quats = np.asarray(quats, dtype=np.float64)
    norms = np.linalg.norm(quats, axis=-1, keepdims=True)
    if np.any(norms <= tol):
        raise DegenerateRotationError("zero-norm quaternion")
    return quats / norms


def quat_to_rotmat(quats: np.ndarray) -> np.ndarray:
    """Unit quaternions (..., 4) in (w, x, y, z) order to rotation matrices (..., 3, 3)."""
    q = normalize_quaternions(quats)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    R[..., 0, 0] = 1.0 - 2.0 * (y * y + z * z)
    R[..., 0, 1] = 2.0 * (x * y - w * z)
    R[..., 0, 2] = 2.0 * (x * z + w * y)
    R[..., 1, 0] = 2.0 * (x * y + w * z)
    R[..., 1, 1] = 1.0 - 2.0 * (x * x + z * z)
    R[..., 1, 2] = 2.0 * (y * z - w * x)
    R[..., 2, 0] = 2.0 * (x * z - w * y)
    R[..., 2, 1] = 2.0 * (y * z + w * x)
    R[..., 2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return R


def build_covariance(log_scale: np.ndarray, rotation: np.ndarray) -> np.ndarray:
    """Sigma = R S S^T R^T for one or many Gaussians.

    log_scale: (..., 3) log standard deviations; rotation: (..., 4) quaternion.
    Returns (..., 3, 3) symmetric positive-definite matrices.
    """
    R = quat_to_rotmat(rotation)
    s = np.exp(np.asarray(log_scale, dtype=np.float64))
    M = R * s[..., None, :]
    return M @ np.swapaxes(M, -1, -2)


def eval_sh_color(coeffs: np.ndarray, direction: np.ndarray, degree: int) -> np.ndarray:
    """View-dependent rgb from SH coefficients.

    coeffs: (..., M, 3) with M >= (degree+1)^2; direction: (..., 3) unit.
    rgb = 0.5 + sum_k basis_k * coeff_k, clamped below at 0.
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    n = sh.num_coeffs(degree)
    if coeffs.shape[-2] < n:
        raise ValueError(f"need {n} coefficients for degree {degree}, have {coeffs.shape[-2]}")
    basis = sh.eval_basis(direction, degree)
    rgb = 0.5 + np.einsum("...k,...kc->...c", basis, coeffs[..., :n, :])
    return np.maximum(rgb, 0.0)


@dataclass
class GaussianCloud:
    """Column-oriented optimizable Gaussian set.

    All arrays share leading length N. Immutable during rendering; mutated
    only in the single-writer phase between renders (optimizer, densify).
    """

    positions: np.ndarray                 # (N, 3) world space
    rotations: np.ndarray                 # (N, 4) quaternion (w, x, y, z)
    log_scales: np.ndarray                # (N, 3)
    opacity_logits: np.ndarray            # (N,)
    sh_coeffs: np.ndarray                 # (N, M, 3), M = (max_degree+1)^2
    active_sh_degree: int = 0

    def __post_init__(self) -> None:
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=np.float64))
        self.rotations = np.atleast_2d(np.asarray(self.rotations, dtype=np.float64))
        self.log_scales = np.atleast_2d(np.asarray(self.log_scales, dtype=np.float64))
        self.opacity_logits = np.atleast_1d(np.asarray(self.opacity_logits, dtype=np.float64))
        self.sh_coeffs = np.asarray(self.sh_coeffs, dtype=np.float64)
        if self.sh_coeffs.ndim == 2:
            self.sh_coeffs = self.sh_coeffs[:, None, :]
        self.validate()

    def validate(self) -> None:
        n = len(self)
        shapes = {
            "positions": (n, 3),
            "rotations": (n, 4),
            "log_scales": (n, 3),
            "opacity_logits": (n,),
        }
        for name, want in shapes.items():
            got = getattr(self, name).shape
            if got != want:
                raise ValueError(f"{name} has shape {got}, expected {want}")
        if self.sh_coeffs.ndim != 3 or self.sh_coeffs.shape[0] != n or self.sh_coeffs.shape[2] != 3:
            raise ValueError(f"sh_coeffs has shape {self.sh_coeffs.shape}, expected ({n}, M, 3)")
        if self.active_sh_degree > self.max_sh_degree:
            raise ValueError(
                f"active_sh_degree {self.active_sh_degree} exceeds stored degree {self.max_sh_degree}"
            )

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def max_sh_degree(self) -> int:
        return sh.degree_from_coeffs(self.sh_coeffs.shape[1])

    @property
    def opacities(self) -> np.ndarray:
        """Activated opacities alpha in (0, 1)."""
        return sigmoid(self.opacity_logits)

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    def unit_rotations(self) -> np.ndarray:
        return normalize_quaternions(self.rotations)

    def covariances(self) -> np.ndarray:
        """(N, 3, 3) world-space covariances."""
        return build_covariance(self.log_scales, self.rotations)

    def colors_toward(self, viewpoint: np.ndarray) -> np.ndarray:
        """(N, 3) rgb evaluated along directions from ``viewpoint`` to each Gaussian."""
        if len(self) == 0:
            return np.zeros((0, 3))
        v = self.positions - np.asarray(viewpoint, dtype=np.float64)
        d = np.linalg.norm(v, axis=1, keepdims=True)
        dirs = np.divide(v, d, out=np.zeros_like(v), where=d > 0)
        return eval_sh_color(self.sh_coeffs, dirs, self.active_sh_degree)

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(
            positions=self.positions.copy(),
            rotations=self.rotations.copy(),
            log_scales=self.log_scales.copy(),
            opacity_logits=self.opacity_logits.copy(),
            sh_coeffs=self.sh_coeffs.copy(),
            active_sh_degree=self.active_sh_degree,
        )

    @staticmethod
    def empty(max_sh_degree: int = 4) -> "GaussianCloud":
        m = sh.num_coeffs(max_sh_degree)
        return GaussianCloud(
            positions=np.zeros((0, 3)),
            rotations=np.zeros((0, 4)),
            log_scales=np.zeros((0, 3)),
            opacity_logits=np.zeros((0,)),
            sh_coeffs=np.zeros((0, m, 3)),
        )

    @staticmethod
    def concatenate(a: "GaussianCloud", b: "GaussianCloud") -> "GaussianCloud":
        if a.sh_coeffs.shape[1] != b.sh_coeffs.shape[1]:
            raise ValueError("clouds store different SH degrees")
        return GaussianCloud(
            positions=np.concatenate([a.positions, b.positions]),
            rotations=np.concatenate([a.rotations, b.rotations]),
            log_scales=np.concatenate([a.log_scales, b.log_scales]),
            opacity_logits=np.concatenate([a.opacity_logits, b.opacity_logits]),
            sh_coeffs=np.concatenate([a.sh_coeffs, b.sh_coeffs]),
            active_sh_degree=max(a.active_sh_degree, b.active_sh_degree),
        )

    def select(self, mask_or_indices: np.ndarray) -> "GaussianCloud":
        return GaussianCloud(
            positions=self.positions[mask_or_indices],
            rotations=self.rotations[mask_or_indices],
            log_scales=self.log_scales[mask_or_indices],
            opacity_logits=self.opacity_logits[mask_or_indices],
            sh_coeffs=self.sh_coeffs[mask_or_indices],
            active_sh_degree=self.active_sh_degree,
        )
