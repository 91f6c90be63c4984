import json

import numpy as np
import pytest

from splatkit.cameras import (Camera, load_cameras, look_at_camera, make_pseudo_views,
                              project_gaussian, project_gaussians, save_cameras)


def frontal_camera(fx=100.0, size=100):
    return Camera(fx=fx, fy=fx, cx=50.0, cy=50.0, width=size, height=size,
                  rotation_w2c=np.eye(3), translation_w2c=np.zeros(3), cam_id="front")


def test_on_axis_projection():
    cam = frontal_camera()
    p = project_gaussian(np.array([0.0, 0.0, 2.0]), 0.01 * np.eye(3), cam)
    np.testing.assert_allclose(p.mean2d, [50.0, 50.0], atol=1e-12)
    assert p.cam_z == pytest.approx(2.0)


def test_euclid_depth():
    cam = frontal_camera()
    p = project_gaussian(np.array([3.0, 4.0, 0.1]), 0.01 * np.eye(3), cam)
    # camera origin is o = (0,0,0)
    assert p.euclid_depth == pytest.approx(np.sqrt(9 + 16 + 0.01))


def test_behind_camera_culled():
    cam = frontal_camera()
    assert project_gaussian(np.array([0.0, 0.0, -1.0]), np.eye(3), cam) is None
    assert project_gaussian(np.array([0.0, 0.0, 0.005]), np.eye(3), cam) is None


def test_on_axis_isotropic_cov2d():
    cam = frontal_camera()
    sigma, z = 0.05, 2.0
    p = project_gaussian(np.array([0.0, 0.0, z]), sigma**2 * np.eye(3), cam)
    want = (cam.fx * sigma / z) ** 2 + 0.3
    np.testing.assert_allclose(p.cov2d, np.diag([want, want]), atol=1e-12)


def test_cov2d_matches_fd_jacobian_oracle():
    # numerically differentiate the exact pinhole projection around the mean
    rng = np.random.default_rng(11)
    cam = look_at_camera((0.5, -0.8, -4.0), (0, 0, 0), fx=80.0, width=64, height=64)
    for _ in range(10):
        mu = rng.normal(0, 0.5, 3)
        A = rng.normal(0, 0.3, (3, 3))
        cov = A @ A.T + 0.01 * np.eye(3)
        p = project_gaussian(mu, cov, cam, cov2d_floor=0.0)
        h = 1e-6
        J = np.zeros((2, 3))
        for axis in range(3):
            dp, dm = mu.copy(), mu.copy()
            dp[axis] += h
            dm[axis] -= h
            J[:, axis] = (cam.project_points(cam.world_to_cam(dp))
                          - cam.project_points(cam.world_to_cam(dm))) / (2 * h)
        np.testing.assert_allclose(p.cov2d, J @ cov @ J.T, rtol=1e-5, atol=1e-7)


def test_projection_scale_consistency():
    # doubling depth and doubling the standard deviations keeps cov2d fixed
    cam = frontal_camera()
    sigma = 0.04
    p1 = project_gaussian(np.array([0.1, -0.2, 2.0]), sigma**2 * np.eye(3), cam, cov2d_floor=0.0)
    p2 = project_gaussian(np.array([0.2, -0.4, 4.0]), (2 * sigma) ** 2 * np.eye(3), cam, cov2d_floor=0.0)
    np.testing.assert_allclose(p1.cov2d, p2.cov2d, rtol=1e-12)


def test_orthonormality_validation():
    with pytest.raises(ValueError):
        Camera(fx=1, fy=1, cx=0, cy=0, width=2, height=2,
               rotation_w2c=np.eye(3) * 1.01, translation_w2c=np.zeros(3))


class TestPseudoViews:
    def test_rotation_entries(self):
        cam = frontal_camera()
        plus = make_pseudo_views([cam], angle_deg=5.0)[0]
        c, s = np.cos(np.deg2rad(5)), np.sin(np.deg2rad(5))
        assert c == pytest.approx(0.996195, abs=1e-6)
        assert s == pytest.approx(0.087156, abs=1e-6)
        np.testing.assert_allclose(
            plus.rotation_w2c, [[c, 0, s], [0, 1, 0], [-s, 0, c]], atol=1e-12
        )

    def test_small_angle_limit(self):
        cam = look_at_camera((1.0, 2.0, -3.0), (0, 0, 0), fx=50.0)
        tiny = make_pseudo_views([cam], angle_deg=1e-9)[0]
        np.testing.assert_allclose(tiny.rotation_w2c, cam.rotation_w2c, atol=1e-9)
        np.testing.assert_allclose(tiny.translation_w2c, cam.translation_w2c, atol=1e-8)

    def test_plus_minus_compose_to_identity(self):
        cam = look_at_camera((0.3, -1.0, -4.0), (0, 0, 0), fx=50.0)
        plus, minus = make_pseudo_views([cam], angle_deg=5.0)
        perturb_p = cam.rotation_w2c.T @ plus.rotation_w2c
        perturb_m = cam.rotation_w2c.T @ minus.rotation_w2c
        np.testing.assert_allclose(perturb_p @ perturb_m, np.eye(3), atol=1e-12)

    def test_center_preserved(self):
        cams = [look_at_camera((2.0, 1.0, -5.0), (0, 0, 0), fx=40.0, cam_id="a"),
                look_at_camera((-1.0, 0.5, -6.0), (0, 0, 0), fx=40.0, cam_id="b")]
        pseudo = make_pseudo_views(cams, angle_deg=5.0, axes=("up", "right"))
        assert len(pseudo) == len(cams) * 4
        for i, pv in enumerate(pseudo):
            np.testing.assert_allclose(pv.center, cams[i // 4].center, atol=1e-12)

    def test_angle_bounds(self):
        cam = frontal_camera()
        with pytest.raises(ValueError):
            make_pseudo_views([cam], angle_deg=0.0)
        with pytest.raises(ValueError):
            make_pseudo_views([cam], angle_deg=30.0)


def test_euclid_dominates_cam_z():
    rng = np.random.default_rng(12)
    cam = look_at_camera((1.0, -2.0, -5.0), (0, 0, 0), fx=60.0)
    pts = rng.normal(0, 1.0, (100, 3))
    keep, _, _, cam_z, euclid, _ = project_gaussians(pts, np.tile(0.01 * np.eye(3), (100, 1, 1)), cam)
    assert np.all(euclid >= cam_z - 1e-12)


def test_camera_json_roundtrip(tmp_path):
    cams = [look_at_camera((0.5, 0.1, -4.0), (0, 0, 0), fx=45.0, width=48, height=36, cam_id="v0"),
            frontal_camera()]
    path = tmp_path / "cams.json"
    save_cameras(cams, path)
    loaded = load_cameras(path)
    doc = json.loads(path.read_text())
    assert set(doc["cameras"][0]) == {"id", "fx", "fy", "cx", "cy", "width", "height",
                                      "rotation_w2c", "translation_w2c"}
    for a, b in zip(cams, loaded):
        assert a.cam_id == b.cam_id
        np.testing.assert_array_equal(a.rotation_w2c, b.rotation_w2c)
        np.testing.assert_array_equal(a.translation_w2c, b.translation_w2c)
        assert (a.fx, a.fy, a.cx, a.cy, a.width, a.height) == (b.fx, b.fy, b.cx, b.cy, b.width, b.height)
