import numpy as np
import pytest

from splatkit.assets import (DepthAsset, DimensionError, HeaderError, MissingAssetError,
                             PayloadError, PointMapAsset, RefinedViewAsset,
                             load_depth, load_f32raster, load_point_map, load_png,
                             load_refined, save_depth, save_f32raster, save_point_map,
                             save_png, save_refined)
from splatkit.cameras import look_at_camera


def small_camera(size=4):
    return look_at_camera((0, 0, 0), (0, 0, 1.0), fx=10.0, width=size, height=size, cam_id="v")


class TestF32Raster:
    def test_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(40)
        data = rng.normal(size=(5, 7, 3)).astype(np.float32)
        path = tmp_path / "x.f32raster"
        save_f32raster(path, data)
        back = load_f32raster(path)
        assert back.shape == (5, 7, 3)
        np.testing.assert_array_equal(back.astype(np.float32), data)

    def test_single_channel_shape(self, tmp_path):
        path = tmp_path / "d.f32raster"
        save_f32raster(path, np.ones((3, 4)))
        assert load_f32raster(path).shape == (3, 4, 1)

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "x.f32raster"
        save_f32raster(path, np.ones((4, 4, 2)))
        raw = path.read_bytes()
        path.write_bytes(raw[:-8])
        with pytest.raises(HeaderError):
            load_f32raster(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.f32raster"
        path.write_bytes(b"NOPE" + b"\0" * 28)
        with pytest.raises(HeaderError):
            load_f32raster(path)

    def test_header_layout(self, tmp_path):
        # documented byte-exactly: magic F32R, u32 w, u32 h, u32 c, payload
        path = tmp_path / "x.f32raster"
        save_f32raster(path, np.zeros((2, 3, 1)))
        raw = path.read_bytes()
        assert raw[:4] == b"F32R"
        assert int.from_bytes(raw[4:8], "little") == 3   # width
        assert int.from_bytes(raw[8:12], "little") == 2  # height
        assert int.from_bytes(raw[12:16], "little") == 1
        assert len(raw) == 16 + 4 * 6


class TestPointMap:
    def make_asset(self, distance=5.0):
        cam = small_camera()
        rays = cam.pixel_rays()
        points = cam.center[None, None, :] + rays * distance
        return PointMapAsset(
            points=points,
            confidence=np.ones((4, 4)),
            camera=cam,
            rgb=np.full((4, 4, 3), 0.25),
        )

    def test_gt_depth_constant_distance(self):
        asset = self.make_asset(distance=5.0)
        np.testing.assert_allclose(asset.gt_depth, 5.0, atol=1e-9)

    def test_roundtrip(self, tmp_path):
        asset = self.make_asset()
        path = tmp_path / "view.f32raster"
        save_point_map(path, asset)
        back = load_point_map(path)
        np.testing.assert_array_equal(back.points, asset.points.astype(np.float32))
        np.testing.assert_array_equal(back.confidence, asset.confidence)
        assert back.camera.cam_id == "v"

    def test_dimension_mismatch(self):
        cam = small_camera()
        with pytest.raises(DimensionError):
            PointMapAsset(points=np.zeros((3, 4, 3)), confidence=np.ones((4, 4)),
                          camera=cam, rgb=np.zeros((4, 4, 3)))

    def test_nonfinite_points_where_confident(self):
        cam = small_camera()
        pts = np.zeros((4, 4, 3))
        pts[0, 0, 0] = np.nan
        with pytest.raises(PayloadError):
            PointMapAsset(points=pts, confidence=np.ones((4, 4)),
                          camera=cam, rgb=np.zeros((4, 4, 3)))
        # fine when the bad pixel carries zero confidence
        conf = np.ones((4, 4))
        conf[0, 0] = 0.0
        PointMapAsset(points=pts, confidence=conf, camera=cam, rgb=np.zeros((4, 4, 3)))

    def test_missing_sidecar(self, tmp_path):
        path = tmp_path / "view.f32raster"
        save_f32raster(path, np.zeros((4, 4, 3)))
        with pytest.raises(MissingAssetError):
            load_point_map(path)


class TestDepthAsset:
    def test_roundtrip(self, tmp_path):
        d = DepthAsset(depth=np.full((3, 3), 2.5), validity=np.eye(3, dtype=bool),
                       source="monocular", cam_id="p0")
        path = tmp_path / "d.f32raster"
        save_depth(path, d)
        back = load_depth(path)
        np.testing.assert_array_equal(back.depth, d.depth)
        np.testing.assert_array_equal(back.validity, d.validity)
        assert back.source == "monocular" and back.cam_id == "p0"

    def test_invalid_payload(self):
        with pytest.raises(PayloadError):
            DepthAsset(depth=np.zeros((2, 2)), validity=np.ones((2, 2), dtype=bool), source="stereo")


class TestRefined:
    def test_roundtrip_and_missing(self, tmp_path):
        rng = np.random.default_rng(41)
        assets = [RefinedViewAsset(image=rng.uniform(0, 1, (8, 8, 3)), cam_id=f"p{i}")
                  for i in range(2)]
        save_refined(tmp_path, assets)
        back = load_refined(tmp_path, "p1")
        np.testing.assert_allclose(back.image, assets[1].image, atol=1 / 255)
        with pytest.raises(MissingAssetError, match="p9"):
            load_refined(tmp_path, "p9")


def test_png_roundtrip(tmp_path):
    rng = np.random.default_rng(42)
    img = rng.uniform(0, 1, (6, 5, 3))
    path = tmp_path / "x.png"
    save_png(path, img)
    back = load_png(path)
    np.testing.assert_allclose(back, img, atol=0.5 / 255 + 1e-9)
    # quantized values survive a second roundtrip exactly
    save_png(path, back)
    np.testing.assert_array_equal(load_png(path), back)
