"""Differentiable rasterization of color, depth, and track rasters.

Splats are alpha-composited front to back, sorted by camera-space z. Per
pixel p with effective opacity a'_i = alpha_i * exp(-0.5 d^T Sigma'^-1 d):

    color_p = sum_i c_i a'_i T_i + background * T_final
    depth_p = sum_i d_i a'_i T_i          (d_i = ||mu_i - o||, not normalized)
    track_p = sum_i a'_i T_i

with T_i the transmittance in front of splat i. `rasterize` is tile-based;
`rasterize_reference` recomputes the same contract per pixel with a plain
sequential loop and no spatial culling, serving as the testing oracle.
`rasterize_backward` is the analytic adjoint of the forward expressions.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import sh
from .cameras import Camera, ProjectedGaussian, project_gaussians, tile_radius_factor
from .scene import GaussianCloud, quat_to_rotmat


@dataclass
class RenderSettings:
    tile_size: int = 16
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))
    alpha_min: float = 1.0 / 255.0
    transmittance_stop: float = 1e-4
    near_plane: float = 0.01
    cov2d_floor: float = 0.3
    alpha_clamp: float = 0.99
    normalize_depth: bool = False

    def __post_init__(self) -> None:
        self.background = np.asarray(self.background, dtype=np.float64)
        if self.tile_size < 1:
            raise ValueError("tile_size must be >= 1")
        for name in ("alpha_min", "transmittance_stop"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ValueError(f"{name} must lie in [0, 1)")


@dataclass
class RasterOutput:
    color: np.ndarray          # (H, W, 3)
    depth: np.ndarray          # (H, W)
    track: np.ndarray          # (H, W) accumulated opacity
    transmittance: np.ndarray  # (H, W) residual after all splats
    order_hash: str = ""


@dataclass
class ParamGradients:
    positions: np.ndarray       # (N, 3)
    rotations: np.ndarray       # (N, 4)
    log_scales: np.ndarray      # (N, 3)
    opacity_logits: np.ndarray  # (N,)
    sh_coeffs: np.ndarray       # (N, M, 3)
    screen_grad_norm: np.ndarray  # (N,) viewport-scaled 2D mean-gradient norms
    visible: np.ndarray         # (N,) bool, splat survived culling

    @staticmethod
    def zeros(cloud: GaussianCloud) -> "ParamGradients":
        n = len(cloud)
        return ParamGradients(
            positions=np.zeros((n, 3)),
            rotations=np.zeros((n, 4)),
            log_scales=np.zeros((n, 3)),
            opacity_logits=np.zeros(n),
            sh_coeffs=np.zeros_like(cloud.sh_coeffs),
            screen_grad_norm=np.zeros(n),
            visible=np.zeros(n, dtype=bool),
        )


@dataclass
class _Prepared:
    """Culled, cam_z-sorted per-splat arrays shared by forward and backward."""
    orig_idx: np.ndarray    # (K,) indices into the cloud
    mean2d: np.ndarray      # (K, 2)
    conic: np.ndarray       # (K, 3) inverse cov2d as (a, b, c)
    cov2d: np.ndarray       # (K, 2, 2)
    cam_t: np.ndarray       # (K, 3) camera-space means
    euclid: np.ndarray      # (K,)
    radius: np.ndarray      # (K,)
    opacity: np.ndarray     # (K,) activated
    color: np.ndarray       # (K, 3) clamped SH colors
    order_hash: str


def _prepare(cloud: GaussianCloud, camera: Camera, settings: RenderSettings) -> _Prepared:
    cov3d = cloud.covariances()
    keep, mean2d, cov2d, cam_z, euclid, radius = project_gaussians(
        cloud.positions, cov3d, camera,
        near_plane=settings.near_plane,
        cov2d_floor=settings.cov2d_floor,
        radius_sigmas=tile_radius_factor(settings.alpha_min),
    )
    order = np.argsort(cam_z, kind="stable")
    keep = keep[order]

    a = cov2d[order, 0, 0]
    b = cov2d[order, 0, 1]
    c = cov2d[order, 1, 1]
    det = a * c - b * b
    good = det > 0
    conic = np.stack([c, -b, a], axis=1)
    conic[good] /= det[good, None]
    radius = np.where(good, radius[order], 0.0)

    cam_t = camera.world_to_cam(cloud.positions[keep])
    colors = cloud.colors_toward(camera.center)[keep] if len(cloud) else np.zeros((0, 3))

    h = hashlib.sha256()
    h.update(keep.astype(np.int64).tobytes())
    h.update(np.asarray([camera.width, camera.height, settings.tile_size], dtype=np.int64).tobytes())
    return _Prepared(
        orig_idx=keep,
        mean2d=mean2d[order],
        conic=conic,
        cov2d=cov2d[order],
        cam_t=cam_t,
        euclid=euclid[order],
        radius=radius,
        opacity=cloud.opacities[keep] if len(cloud) else np.zeros(0),
        color=colors,
        order_hash=h.hexdigest(),
    )


def _tile_ranges(size: int, tile: int) -> list[tuple[int, int]]:
    return [(lo, min(lo + tile, size)) for lo in range(0, size, tile)]


def _splat_weights(prep: _Prepared, sel: np.ndarray, xs: np.ndarray, ys: np.ndarray,
                   settings: RenderSettings):
    """Per-(splat, pixel) compositing state for one tile.

    Returns (alpha_raw, w, t_excl, t_final, composited) with shapes
    (K, P) except t_final (P,). `composited` marks entries that actually
    contributed (skip and early-stop applied).
    """
    px, py = np.meshgrid(xs, ys)
    px = px.ravel().astype(np.float64)
    py = py.ravel().astype(np.float64)
    dx = px[None, :] - prep.mean2d[sel, 0, None]
    dy = py[None, :] - prep.mean2d[sel, 1, None]
    ca = prep.conic[sel, 0, None]
    cb = prep.conic[sel, 1, None]
    cc = prep.conic[sel, 2, None]
    power = -0.5 * (ca * dx * dx + cc * dy * dy) - cb * dx * dy
    g = np.exp(np.minimum(power, 0.0))
    alpha_raw = np.minimum(prep.opacity[sel, None] * g, settings.alpha_clamp)

    skipped = alpha_raw < settings.alpha_min
    am = np.where(skipped, 0.0, alpha_raw)
    c_incl = np.cumprod(1.0 - am, axis=0)
    if settings.transmittance_stop > 0.0:
        alive = c_incl >= settings.transmittance_stop
    else:
        alive = np.ones_like(skipped)
    a_eff = am * alive
    full = np.cumprod(1.0 - a_eff, axis=0)
    t_excl = np.vstack([np.ones((1, a_eff.shape[1])), full[:-1]])
    w = a_eff * t_excl
    composited = alive & ~skipped
    return g, alpha_raw, w, t_excl, full[-1], composited, (dx, dy)


def rasterize(cloud: GaussianCloud, camera: Camera, settings: RenderSettings | None = None) -> RasterOutput:
    """Tile-based forward render."""
    settings = settings or RenderSettings()
    H, W = camera.height, camera.width
    color = np.empty((H, W, 3))
    color[:] = settings.background
    depth = np.zeros((H, W))
    track = np.zeros((H, W))
    transmittance = np.ones((H, W))

    prep = _prepare(cloud, camera, settings)
    if prep.orig_idx.size:
        for y0, y1 in _tile_ranges(H, settings.tile_size):
            for x0, x1 in _tile_ranges(W, settings.tile_size):
                sel = np.flatnonzero(
                    (prep.mean2d[:, 0] + prep.radius >= x0)
                    & (prep.mean2d[:, 0] - prep.radius <= x1 - 1)
                    & (prep.mean2d[:, 1] + prep.radius >= y0)
                    & (prep.mean2d[:, 1] - prep.radius <= y1 - 1)
                    & (prep.radius > 0)
                )
                if sel.size == 0:
                    continue
                xs = np.arange(x0, x1)
                ys = np.arange(y0, y1)
                _, _, w, _, t_final, _, _ = _splat_weights(prep, sel, xs, ys, settings)
                shape = (y1 - y0, x1 - x0)
                color[y0:y1, x0:x1] = (
                    (w.T @ prep.color[sel]) + settings.background[None, :] * t_final[:, None]
                ).reshape(shape + (3,))
                depth[y0:y1, x0:x1] = (prep.euclid[sel] @ w).reshape(shape)
                track[y0:y1, x0:x1] = w.sum(axis=0).reshape(shape)
                transmittance[y0:y1, x0:x1] = t_final.reshape(shape)

    if settings.normalize_depth:
        np.divide(depth, track, out=depth, where=track > 0)
    return RasterOutput(color, depth, track, transmittance, prep.order_hash)


def rasterize_reference(cloud: GaussianCloud, camera: Camera,
                        settings: RenderSettings | None = None) -> RasterOutput:
    """Brute-force per-pixel oracle: full global sort, no tiling, no radius
    culling; the skip/stop thresholds keep their contract semantics."""
    settings = settings or RenderSettings()
    H, W = camera.height, camera.width
    npx = H * W
    prep = _prepare(cloud, camera, settings)

    px, py = np.meshgrid(np.arange(W, dtype=np.float64), np.arange(H, dtype=np.float64))
    px = px.ravel()
    py = py.ravel()
    color = np.zeros((npx, 3))
    depth = np.zeros(npx)
    track = np.zeros(npx)
    t_real = np.ones(npx)
    t_virtual = np.ones(npx)

    for k in range(prep.orig_idx.size):
        dx = px - prep.mean2d[k, 0]
        dy = py - prep.mean2d[k, 1]
        ca, cb, cc = prep.conic[k]
        power = -0.5 * (ca * dx * dx + cc * dy * dy) - cb * dx * dy
        a = np.minimum(prep.opacity[k] * np.exp(np.minimum(power, 0.0)), settings.alpha_clamp)
        a[a < settings.alpha_min] = 0.0
        t_next = t_virtual * (1.0 - a)
        compositing = t_next >= settings.transmittance_stop if settings.transmittance_stop > 0 \
            else np.ones(npx, dtype=bool)
        wk = np.where(compositing, a * t_real, 0.0)
        color += wk[:, None] * prep.color[k]
        depth += wk * prep.euclid[k]
        track += wk
        t_real = np.where(compositing, t_real * (1.0 - a), t_real)
        t_virtual = t_next

    color += settings.background[None, :] * t_real[:, None]
    if settings.normalize_depth:
        np.divide(depth, track, out=depth, where=track > 0)
    return RasterOutput(
        color.reshape(H, W, 3), depth.reshape(H, W), track.reshape(H, W),
        t_real.reshape(H, W), prep.order_hash,
    )


class OrderMismatchError(RuntimeError):
    """Backward replay saw a different splat order than the forward pass."""


def rasterize_backward(
    cloud: GaussianCloud,
    camera: Camera,
    settings: RenderSettings | None = None,
    grad_color: np.ndarray | None = None,
    grad_depth: np.ndarray | None = None,
    grad_track: np.ndarray | None = None,
    forward: RasterOutput | None = None,
) -> ParamGradients:
    """Analytic gradients of the forward compositing expressions.

    grad_* are dL/d{color,depth,track} planes; missing planes are zero. When
    ``forward`` is given, its order hash is checked against the replay.
    """
    settings = settings or RenderSettings()
    H, W = camera.height, camera.width
    gC = np.zeros((H, W, 3)) if grad_color is None else np.asarray(grad_color, dtype=np.float64)
    gD = np.zeros((H, W)) if grad_depth is None else np.asarray(grad_depth, dtype=np.float64)
    gS = np.zeros((H, W)) if grad_track is None else np.asarray(grad_track, dtype=np.float64)
    if gC.shape != (H, W, 3) or gD.shape != (H, W) or gS.shape != (H, W):
        raise ValueError("output_grads shapes do not match the camera raster")

    out = ParamGradients.zeros(cloud)
    prep = _prepare(cloud, camera, settings)
    if forward is not None and forward.order_hash and forward.order_hash != prep.order_hash:
        raise OrderMismatchError("forward/backward splat orders differ")
    K = prep.orig_idx.size
    if K == 0:
        return out

    if settings.normalize_depth:
        # depth_out = D / S where covered: reroute grads onto raw D and S
        if forward is None:
            forward = rasterize(cloud, camera, settings)
        covered = forward.track > 0
        safe_track = np.where(covered, forward.track, 1.0)
        gD = np.where(covered, gD / safe_track, 0.0)
        gS = gS + np.where(covered, -gD * forward.depth, 0.0)

    # per-splat accumulators in sorted-kept space
    acc_mean2d = np.zeros((K, 2))
    acc_conic = np.zeros((K, 3))
    acc_color = np.zeros((K, 3))
    acc_euclid = np.zeros(K)
    acc_opacity = np.zeros(K)

    bg = settings.background
    for y0, y1 in _tile_ranges(H, settings.tile_size):
        for x0, x1 in _tile_ranges(W, settings.tile_size):
            sel = np.flatnonzero(
                (prep.mean2d[:, 0] + prep.radius >= x0)
                & (prep.mean2d[:, 0] - prep.radius <= x1 - 1)
                & (prep.mean2d[:, 1] + prep.radius >= y0)
                & (prep.mean2d[:, 1] - prep.radius <= y1 - 1)
                & (prep.radius > 0)
            )
            if sel.size == 0:
                continue
            xs = np.arange(x0, x1)
            ys = np.arange(y0, y1)
            g, alpha_raw, w, t_excl, t_final, composited, (dx, dy) = _splat_weights(
                prep, sel, xs, ys, settings
            )
            gc_t = gC[y0:y1, x0:x1].reshape(-1, 3)        # (P, 3)
            gd_t = gD[y0:y1, x0:x1].ravel()               # (P,)
            gs_t = gS[y0:y1, x0:x1].ravel()               # (P,)

            # dL/dalpha'_i = T_i q_i - (sum_{j>i} w_j q_j + (gC.bg) T_final) / (1 - alpha'_i)
            q = prep.color[sel] @ gc_t.T + prep.euclid[sel, None] * gd_t[None, :] + gs_t[None, :]
            wq = w * q
            suffix = wq.sum(axis=0)[None, :] - np.cumsum(wq, axis=0)
            bg_term = (gc_t @ bg) * t_final
            a_eff = np.where(composited, alpha_raw, 0.0)
            grad_alpha = np.where(
                composited,
                t_excl * q - (suffix + bg_term[None, :]) / (1.0 - a_eff),
                0.0,
            )

            # direct color / euclid-depth paths
            acc_color[sel] += w @ gc_t
            acc_euclid[sel] += w @ gd_t

            # through alpha' = min(opacity * g, clamp)
            unclamped = prep.opacity[sel, None] * g < settings.alpha_clamp
            grad_ag = np.where(unclamped, grad_alpha, 0.0)
            acc_opacity[sel] += (grad_ag * g).sum(axis=1)
            grad_g = grad_ag * prep.opacity[sel, None]
            grad_power = grad_g * g

            ca = prep.conic[sel, 0, None]
            cb = prep.conic[sel, 1, None]
            cc = prep.conic[sel, 2, None]
            gpx = grad_power * -(ca * dx + cb * dy)   # dL/d dx
            gpy = grad_power * -(cb * dx + cc * dy)
            acc_mean2d[sel, 0] += -gpx.sum(axis=1)
            acc_mean2d[sel, 1] += -gpy.sum(axis=1)
            acc_conic[sel, 0] += (grad_power * (-0.5 * dx * dx)).sum(axis=1)
            acc_conic[sel, 1] += (grad_power * (-dx * dy)).sum(axis=1)
            acc_conic[sel, 2] += (grad_power * (-0.5 * dy * dy)).sum(axis=1)

    grads = _chain_to_parameters(cloud, camera, settings, prep,
                                 acc_mean2d, acc_conic, acc_color, acc_euclid, acc_opacity)
    # densification statistic: norm of the pixel-space 2D mean gradient
    # summed over this view's pixels
    grads.screen_grad_norm[prep.orig_idx] = np.linalg.norm(acc_mean2d, axis=1)
    grads.visible[prep.orig_idx] = True
    return grads


def _chain_to_parameters(cloud, camera, settings, prep,
                         acc_mean2d, acc_conic, acc_color, acc_euclid, acc_opacity) -> ParamGradients:
    """Chain per-splat screen-space gradients back to cloud parameters."""
    out = ParamGradients.zeros(cloud)
    idx = prep.orig_idx
    K = idx.size

    # conic -> cov2d: P = Sigma'^-1, dL/dSigma' = -P dP P (full-matrix convention)
    dP = np.empty((K, 2, 2))
    dP[:, 0, 0] = acc_conic[:, 0]
    dP[:, 0, 1] = dP[:, 1, 0] = 0.5 * acc_conic[:, 1]
    dP[:, 1, 1] = acc_conic[:, 2]
    Pm = np.empty((K, 2, 2))
    Pm[:, 0, 0] = prep.conic[:, 0]
    Pm[:, 0, 1] = Pm[:, 1, 0] = prep.conic[:, 1]
    Pm[:, 1, 1] = prep.conic[:, 2]
    dSigma2d = -Pm @ dP @ Pm

    # cov2d = V Sigma V^T + floor, V = J W
    cov3d = cloud.covariances()[idx]
    tx, ty, tz = prep.cam_t[:, 0], prep.cam_t[:, 1], prep.cam_t[:, 2]
    fx, fy = camera.fx, camera.fy
    J = np.zeros((K, 2, 3))
    J[:, 0, 0] = fx / tz
    J[:, 0, 2] = -fx * tx / tz**2
    J[:, 1, 1] = fy / tz
    J[:, 1, 2] = -fy * ty / tz**2
    Wm = camera.rotation_w2c
    V = J @ Wm
    dSigma3d = V.transpose(0, 2, 1) @ dSigma2d @ V
    dV = 2.0 * dSigma2d @ V @ cov3d
    dJ = dV @ Wm.T

    # J entries depend on the camera-space mean
    dt = np.zeros((K, 3))
    dt[:, 0] += dJ[:, 0, 2] * (-fx / tz**2)
    dt[:, 1] += dJ[:, 1, 2] * (-fy / tz**2)
    dt[:, 2] += (
        dJ[:, 0, 0] * (-fx / tz**2)
        + dJ[:, 1, 1] * (-fy / tz**2)
        + dJ[:, 0, 2] * (2.0 * fx * tx / tz**3)
        + dJ[:, 1, 2] * (2.0 * fy * ty / tz**3)
    )
    # mean2d = (fx tx/tz + cx, fy ty/tz + cy)
    dt[:, 0] += acc_mean2d[:, 0] * fx / tz
    dt[:, 1] += acc_mean2d[:, 1] * fy / tz
    dt[:, 2] += -(acc_mean2d[:, 0] * fx * tx + acc_mean2d[:, 1] * fy * ty) / tz**2

    dpos = dt @ Wm  # W^T dt per row

    # euclidean-depth path: d = ||mu - o||
    center = camera.center
    diff = cloud.positions[idx] - center
    dpos += acc_euclid[:, None] * diff / prep.euclid[:, None]

    # SH color path (channel clamp gates the gradient)
    degree = cloud.active_sh_degree
    n_active = sh.num_coeffs(degree)
    dirs = diff / prep.euclid[:, None]
    basis = sh.eval_basis(dirs, degree)                      # (K, n)
    coeffs = cloud.sh_coeffs[idx, :n_active, :]              # (K, n, 3)
    pre = 0.5 + np.einsum("kn,knc->kc", basis, coeffs)
    gate = (pre > 0.0).astype(np.float64)
    gcol = acc_color * gate
    out.sh_coeffs[np.ix_(idx, np.arange(n_active))] += np.einsum("kn,kc->knc", basis, gcol)
    dbasis = np.einsum("knc,kc->kn", coeffs, gcol)
    bgrad = sh.eval_basis_grad(dirs, degree)                 # (K, n, 3)
    ddir = np.einsum("kn,knd->kd", dbasis, bgrad)
    radial = np.einsum("kd,kd->k", ddir, dirs)
    dpos += (ddir - radial[:, None] * dirs) / prep.euclid[:, None]

    # Sigma = M M^T with M = R diag(exp(s))
    Rm = quat_to_rotmat(cloud.rotations[idx])
    s = np.exp(cloud.log_scales[idx])
    M = Rm * s[:, None, :]
    dM = 2.0 * dSigma3d @ M
    out.log_scales[idx] = np.einsum("kjl,kjl->kl", dM, M)
    dR = dM * s[:, None, :]

    # rotation matrix -> unit quaternion (w, x, y, z)
    qn = cloud.rotations[idx]
    norm = np.linalg.norm(qn, axis=1, keepdims=True)
    qh = qn / norm
    qw, qx, qy, qz = qh[:, 0], qh[:, 1], qh[:, 2], qh[:, 3]
    dqh = np.empty((K, 4))
    dqh[:, 0] = 2.0 * (
        -qz * dR[:, 0, 1] + qy * dR[:, 0, 2] + qz * dR[:, 1, 0]
        - qx * dR[:, 1, 2] - qy * dR[:, 2, 0] + qx * dR[:, 2, 1]
    )
    dqh[:, 1] = 2.0 * (
        qy * dR[:, 0, 1] + qz * dR[:, 0, 2] + qy * dR[:, 1, 0]
        - 2.0 * qx * dR[:, 1, 1] - qw * dR[:, 1, 2] + qz * dR[:, 2, 0]
        + qw * dR[:, 2, 1] - 2.0 * qx * dR[:, 2, 2]
    )
    dqh[:, 2] = 2.0 * (
        -2.0 * qy * dR[:, 0, 0] + qx * dR[:, 0, 1] + qw * dR[:, 0, 2]
        + qx * dR[:, 1, 0] + qz * dR[:, 1, 2]
        - qw * dR[:, 2, 0] + qz * dR[:, 2, 1] - 2.0 * qy * dR[:, 2, 2]
    )
    dqh[:, 3] = 2.0 * (
        -2.0 * qz * dR[:, 0, 0] - qw * dR[:, 0, 1] + qx * dR[:, 0, 2]
        + qw * dR[:, 1, 0] - 2.0 * qz * dR[:, 1, 1] + qy * dR[:, 1, 2]
        + qx * dR[:, 2, 0] + qy * dR[:, 2, 1]
    )
    # through normalization q_hat = q / ||q||
    out.rotations[idx] = (dqh - np.einsum("ka,ka->k", dqh, qh)[:, None] * qh) / norm

    out.positions[idx] = dpos
    alpha = prep.opacity
    out.opacity_logits[idx] = acc_opacity * alpha * (1.0 - alpha)
    return out
