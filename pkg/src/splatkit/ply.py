"""PLY export/import of Gaussian clouds in the common splat layout.

Fields per vertex: x, y, z, f_dc_0..2, f_rest_* (channel-major), opacity
(logit), scale_0..2 (log), rot_0..3 (quaternion w,x,y,z). Binary little
endian, float32. Extra fields such as normals are tolerated on import.
"""
from __future__ import annotations

import io
from pathlib import Path

import numpy as np

from . import sh
from .scene import GaussianCloud


class PlyFormatError(ValueError):
    pass


def _field_names(n_rest: int) -> list[str]:
    names = ["x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2"]
    names += [f"f_rest_{i}" for i in range(n_rest)]
    names += ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
    return names


def save_ply(cloud: GaussianCloud, path: str | Path) -> None:
    n = len(cloud)
    m = cloud.sh_coeffs.shape[1]
    n_rest = 3 * (m - 1)
    names = _field_names(n_rest)

    cols = np.empty((n, len(names)), dtype=np.float32)
    cols[:, 0:3] = cloud.positions
    cols[:, 3:6] = cloud.sh_coeffs[:, 0, :]
    if n_rest:
        # channel-major: all R rest coefficients, then G, then B
        cols[:, 6:6 + n_rest] = cloud.sh_coeffs[:, 1:, :].transpose(0, 2, 1).reshape(n, n_rest)
    o = 6 + n_rest
    cols[:, o] = cloud.opacity_logits
    cols[:, o + 1:o + 4] = cloud.log_scales
    cols[:, o + 4:o + 8] = cloud.rotations

    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property float {name}" for name in names]
    header += ["end_header", ""]

    buf = io.BytesIO()
    buf.write("\n".join(header).encode("ascii"))
    buf.write(cols.astype("<f4").tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_ply(path: str | Path) -> GaussianCloud:
    raw = Path(path).read_bytes()
    end = raw.find(b"end_header\n")
    if not raw.startswith(b"ply") or end < 0:
        raise PlyFormatError(f"{path}: not a ply file")
    header = raw[:end].decode("ascii").splitlines()
    body = raw[end + len(b"end_header\n"):]

    if "format binary_little_endian 1.0" not in header:
        raise PlyFormatError(f"{path}: only binary_little_endian 1.0 is supported")
    n = None
    props: list[str] = []
    for line in header:
        if line.startswith("element vertex"):
            n = int(line.split()[-1])
        elif line.startswith("element ") and n is not None:
            raise PlyFormatError(f"{path}: unexpected second element after vertices")
        elif line.startswith("property") and n is not None:
            kind, name = line.split()[1], line.split()[2]
            if kind != "float":
                raise PlyFormatError(f"{path}: property {name} has non-float type {kind}")
            props.append(name)
    if n is None:
        raise PlyFormatError(f"{path}: missing vertex element")

    expected = n * len(props) * 4
    if len(body) < expected:
        raise PlyFormatError(f"{path}: truncated payload ({len(body)} < {expected} bytes)")
    data = np.frombuffer(body[:expected], dtype="<f4").reshape(n, len(props))
    col = {name: i for i, name in enumerate(props)}

    required = ["x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity",
                "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
    missing = [name for name in required if name not in col]
    if missing:
        raise PlyFormatError(f"{path}: missing fields {missing}")

    rest_names = sorted(
        (name for name in props if name.startswith("f_rest_")),
        key=lambda s: int(s.rsplit("_", 1)[1]),
    )
    if len(rest_names) % 3:
        raise PlyFormatError(f"{path}: f_rest count {len(rest_names)} is not divisible by 3")
    m = 1 + len(rest_names) // 3
    if m not in {sh.num_coeffs(d) for d in range(sh.MAX_SH_DEGREE + 1)}:
        raise PlyFormatError(f"{path}: f_rest count {len(rest_names)} does not match an SH degree")

    coeffs = np.zeros((n, m, 3))
    coeffs[:, 0, 0] = data[:, col["f_dc_0"]]
    coeffs[:, 0, 1] = data[:, col["f_dc_1"]]
    coeffs[:, 0, 2] = data[:, col["f_dc_2"]]
    if rest_names:
        rest = data[:, [col[name] for name in rest_names]]
        coeffs[:, 1:, :] = rest.reshape(n, 3, m - 1).transpose(0, 2, 1)

    return GaussianCloud(
        positions=data[:, [col["x"], col["y"], col["z"]]],
        rotations=data[:, [col["rot_0"], col["rot_1"], col["rot_2"], col["rot_3"]]],
        log_scales=data[:, [col["scale_0"], col["scale_1"], col["scale_2"]]],
        opacity_logits=data[:, col["opacity"]],
        sh_coeffs=coeffs,
    )
