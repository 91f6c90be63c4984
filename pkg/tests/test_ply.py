import numpy as np
import pytest

from splatkit.ply import PlyFormatError, load_ply, save_ply
from splatkit.scene import GaussianCloud


def random_cloud(rng, n=7, degree=2):
    m = (degree + 1) ** 2
    return GaussianCloud(
        positions=rng.normal(size=(n, 3)),
        rotations=rng.normal(size=(n, 4)),
        log_scales=rng.normal(size=(n, 3)),
        opacity_logits=rng.normal(size=n),
        sh_coeffs=rng.normal(size=(n, m, 3)),
    )


def test_roundtrip(tmp_path):
    rng = np.random.default_rng(80)
    cloud = random_cloud(rng)
    path = tmp_path / "c.ply"
    save_ply(cloud, path)
    back = load_ply(path)
    assert len(back) == len(cloud)
    assert back.max_sh_degree == 2
    for name in ("positions", "rotations", "log_scales", "opacity_logits", "sh_coeffs"):
        np.testing.assert_array_equal(getattr(back, name),
                                      getattr(cloud, name).astype(np.float32))


def test_save_is_deterministic(tmp_path):
    rng = np.random.default_rng(81)
    cloud = random_cloud(rng)
    save_ply(cloud, tmp_path / "a.ply")
    save_ply(cloud, tmp_path / "b.ply")
    assert (tmp_path / "a.ply").read_bytes() == (tmp_path / "b.ply").read_bytes()


def test_header_field_layout(tmp_path):
    cloud = random_cloud(np.random.default_rng(82), n=2, degree=1)
    path = tmp_path / "c.ply"
    save_ply(cloud, path)
    header = path.read_bytes().split(b"end_header")[0].decode()
    assert "format binary_little_endian 1.0" in header
    for name in ("x", "y", "z", "f_dc_0", "f_rest_0", "f_rest_8", "opacity",
                 "scale_0", "rot_3"):
        assert f"property float {name}" in header


def test_tolerates_extra_normal_fields(tmp_path):
    # files from other splat tools carry nx, ny, nz; the reader skips them
    cloud = random_cloud(np.random.default_rng(83), n=3, degree=0)
    path = tmp_path / "c.ply"
    save_ply(cloud, path)
    raw = path.read_bytes()
    head, body = raw.split(b"end_header\n")
    head = head.decode().replace(
        "property float x",
        "property float nx\nproperty float x",
    ).encode()
    data = np.frombuffer(body, dtype="<f4").reshape(3, -1)
    widened = np.concatenate([np.zeros((3, 1), dtype="<f4"), data], axis=1)
    path.write_bytes(head + b"end_header\n" + widened.tobytes())
    back = load_ply(path)
    np.testing.assert_array_equal(back.positions, cloud.positions.astype(np.float32))


def test_truncated_payload(tmp_path):
    cloud = random_cloud(np.random.default_rng(84), n=4)
    path = tmp_path / "c.ply"
    save_ply(cloud, path)
    path.write_bytes(path.read_bytes()[:-10])
    with pytest.raises(PlyFormatError, match="truncated"):
        load_ply(path)


def test_not_a_ply(tmp_path):
    path = tmp_path / "c.ply"
    path.write_bytes(b"hello world")
    with pytest.raises(PlyFormatError):
        load_ply(path)


def test_empty_cloud_roundtrip(tmp_path):
    path = tmp_path / "e.ply"
    save_ply(GaussianCloud.empty(max_sh_degree=1), path)
    assert len(load_ply(path)) == 0
