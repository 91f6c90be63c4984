"""Pinhole cameras, perspective covariance projection, and pseudo views.

World-to-camera convention: x_cam = W @ x_world + t, camera looks down +z.
Pixel (row i, col j) samples the continuous image plane at (x=j, y=i).
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_NEAR_PLANE = 0.01
COV2D_FLOOR = 0.3  # px^2 low-pass diagonal added after projection


@dataclass(frozen=True)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation_w2c: np.ndarray   # (3, 3)
    translation_w2c: np.ndarray  # (3,)
    cam_id: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "rotation_w2c", np.asarray(self.rotation_w2c, dtype=np.float64))
        object.__setattr__(self, "translation_w2c", np.asarray(self.translation_w2c, dtype=np.float64))
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")
        R = self.rotation_w2c
        if R.shape != (3, 3) or np.linalg.norm(R.T @ R - np.eye(3)) > 1e-6:
            raise ValueError("rotation_w2c is not orthonormal")
        if np.linalg.det(R) < 0:
            raise ValueError("rotation_w2c has negative determinant")

    @property
    def center(self) -> np.ndarray:
        """World-space camera origin o = -W^T t."""
        return -self.rotation_w2c.T @ self.translation_w2c

    def world_to_cam(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation_w2c.T + self.translation_w2c

    def project_points(self, cam_points: np.ndarray) -> np.ndarray:
        """Camera-space points (..., 3) to pixel coordinates (..., 2)."""
        p = np.asarray(cam_points, dtype=np.float64)
        z = p[..., 2]
        return np.stack([self.fx * p[..., 0] / z + self.cx,
                         self.fy * p[..., 1] / z + self.cy], axis=-1)

    def pixel_rays(self) -> np.ndarray:
        """(H, W, 3) unit world-space ray directions through every pixel."""
        j, i = np.meshgrid(np.arange(self.width), np.arange(self.height))
        d = np.stack([(j - self.cx) / self.fx, (i - self.cy) / self.fy, np.ones_like(j, dtype=np.float64)], axis=-1)
        d = d @ self.rotation_w2c  # rows of W are camera axes, so this is W^T applied per vector
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def replace(self, **kwargs) -> "Camera":
        vals = dict(
            fx=self.fx, fy=self.fy, cx=self.cx, cy=self.cy, width=self.width,
            height=self.height, rotation_w2c=self.rotation_w2c,
            translation_w2c=self.translation_w2c, cam_id=self.cam_id,
        )
        vals.update(kwargs)
        return Camera(**vals)


@dataclass
class ProjectedGaussian:
    mean2d: np.ndarray        # (2,) pixels
    cov2d: np.ndarray         # (2, 2) after low-pass floor
    cam_z: float              # camera-space depth
    euclid_depth: float       # ||mu - o||
    radius: float             # pixel extent for tiling


def perspective_jacobians(cam_points: np.ndarray, fx: float, fy: float) -> np.ndarray:
    """Affine-approximation Jacobians of pinhole projection, (N, 2, 3)."""
    t = np.atleast_2d(np.asarray(cam_points, dtype=np.float64))
    tx, ty, tz = t[:, 0], t[:, 1], t[:, 2]
    J = np.zeros((t.shape[0], 2, 3))
    J[:, 0, 0] = fx / tz
    J[:, 0, 2] = -fx * tx / tz**2
    J[:, 1, 1] = fy / tz
    J[:, 1, 2] = -fy * ty / tz**2
    return J


def tile_radius_factor(alpha_min: float) -> float:
    """Footprint cut distance in sigmas: beyond it every splat contribution
    falls below alpha_min (or below double-precision noise when alpha_min=0)."""
    floor = max(alpha_min, 1e-16)
    return max(3.0, float(np.sqrt(2.0 * np.log(0.99 / floor))))


def project_gaussians(
    positions: np.ndarray,
    covariances: np.ndarray,
    camera: Camera,
    near_plane: float = DEFAULT_NEAR_PLANE,
    cov2d_floor: float = COV2D_FLOOR,
    radius_sigmas: float = 3.0,
):
    """Vectorized EWA projection of many Gaussians.

    Returns (keep_indices, mean2d, cov2d, cam_z, euclid_depth, radius) where
    arrays cover only splats in front of the near plane.
    """
    positions = np.atleast_2d(np.asarray(positions, dtype=np.float64))
    covariances = np.asarray(covariances, dtype=np.float64).reshape(-1, 3, 3)
    t = camera.world_to_cam(positions)
    keep = np.flatnonzero(t[:, 2] > near_plane)
    t = t[keep]
    cov = covariances[keep]

    J = perspective_jacobians(t, camera.fx, camera.fy)
    V = J @ camera.rotation_w2c  # (K, 2, 3)
    cov2d = V @ cov @ V.transpose(0, 2, 1)
    cov2d[:, 0, 0] += cov2d_floor
    cov2d[:, 1, 1] += cov2d_floor

    mean2d = camera.project_points(t)
    diff = positions[keep] - camera.center
    euclid = np.linalg.norm(diff, axis=1)

    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    lam_max = 0.5 * (a + c) + np.sqrt(np.maximum(0.25 * (a - c) ** 2 + b * b, 0.0))
    radius = np.ceil(radius_sigmas * np.sqrt(lam_max))
    return keep, mean2d, cov2d, t[:, 2], euclid, radius


def project_gaussian(
    position: np.ndarray,
    covariance3d: np.ndarray,
    camera: Camera,
    near_plane: float = DEFAULT_NEAR_PLANE,
    cov2d_floor: float = COV2D_FLOOR,
) -> ProjectedGaussian | None:
    """Project one Gaussian; returns None when culled by the near plane."""
    keep, mean2d, cov2d, cam_z, euclid, radius = project_gaussians(
        position, covariance3d, camera, near_plane, cov2d_floor
    )
    if keep.size == 0:
        return None
    return ProjectedGaussian(mean2d[0], cov2d[0], float(cam_z[0]), float(euclid[0]), float(radius[0]))


_AXIS_INDEX = {"up": 1, "right": 0}


def _axis_rotation(axis: str, angle_deg: float) -> np.ndarray:
    theta = np.deg2rad(angle_deg)
    c, s = np.cos(theta), np.sin(theta)
    if axis == "up":      # camera-local y
        return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    if axis == "right":   # camera-local x
        return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
    raise ValueError(f"unknown perturbation axis {axis!r} (use 'up' or 'right')")


def make_pseudo_views(
    train_cameras: list[Camera],
    angle_deg: float = 5.0,
    axes: tuple[str, ...] = ("up",),
) -> list[Camera]:
    """Perturbed copies of the training cameras, +/-angle about each axis.

    The rotation is post-multiplied onto the pose; the camera center is held
    fixed, so count = len(train) * 2 * len(axes).
    """
    if not 0.0 < angle_deg < 30.0:
        raise ValueError("perturbation angle must lie in (0, 30) degrees")
    out: list[Camera] = []
    for cam in train_cameras:
        center = cam.center
        for axis in axes:
            for sign, tag in ((+1.0, "p"), (-1.0, "m")):
                R = cam.rotation_w2c @ _axis_rotation(axis, sign * angle_deg)
                out.append(cam.replace(
                    rotation_w2c=R,
                    translation_w2c=-R @ center,
                    cam_id=f"{cam.cam_id}_pseudo_{axis}{tag}{angle_deg:g}",
                ))
    return out


def camera_to_dict(cam: Camera) -> dict:
    return {
        "id": cam.cam_id,
        "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
        "width": cam.width, "height": cam.height,
        "rotation_w2c": cam.rotation_w2c.tolist(),
        "translation_w2c": cam.translation_w2c.tolist(),
    }


def camera_from_dict(d: dict) -> Camera:
    return Camera(
        fx=float(d["fx"]), fy=float(d["fy"]), cx=float(d["cx"]), cy=float(d["cy"]),
        width=int(d["width"]), height=int(d["height"]),
        rotation_w2c=np.array(d["rotation_w2c"], dtype=np.float64),
        translation_w2c=np.array(d["translation_w2c"], dtype=np.float64),
        cam_id=str(d.get("id", "")),
    )


def save_cameras(cameras: list[Camera], path: str | Path) -> None:
    doc = {"cameras": [camera_to_dict(c) for c in cameras]}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_cameras(path: str | Path) -> list[Camera]:
    doc = json.loads(Path(path).read_text())
    return [camera_from_dict(d) for d in doc["cameras"]]


def look_at_camera(
    eye: np.ndarray,
    target: np.ndarray,
    up: np.ndarray = (0.0, 1.0, 0.0),
    fx: float = 50.0,
    fy: float | None = None,
    width: int = 32,
    height: int = 32,
    cam_id: str = "",
) -> Camera:
    """Convenience constructor: camera at ``eye`` looking toward ``target``."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd = fwd / np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(up, dtype=np.float64))
    right = right / np.linalg.norm(right)
    down = np.cross(fwd, right)
    W = np.stack([right, down, fwd])  # rows: camera x (right), y (down), z (forward)
    return Camera(
        fx=fx, fy=fy if fy is not None else fx,
        cx=(width - 1) / 2.0, cy=(height - 1) / 2.0,
        width=width, height=height,
        rotation_w2c=W, translation_w2c=-W @ eye, cam_id=cam_id,
    )
