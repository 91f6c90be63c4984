"""File-based ingestion of foundation-model outputs.

Raster payloads travel as `.f32raster`: magic ``F32R``, three little-endian
u32 (width, height, channels), then float32 row-major payload. Every raster
carries a `.json` sidecar naming its semantics and camera. Images are 8-bit
PNG. Refined pseudo-view images are indexed by a manifest JSON mapping
pseudo-camera ids to files.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .cameras import Camera, camera_from_dict, camera_to_dict

F32RASTER_MAGIC = b"F32R"
F32RASTER_HEADER = struct.Struct("<4sIII")


class AssetError(Exception):
    """Base class for asset ingestion failures."""


class HeaderError(AssetError):
    pass


class DimensionError(AssetError):
    pass


class PayloadError(AssetError):
    pass


class MissingAssetError(AssetError):
    pass


def save_f32raster(path: str | Path, data: np.ndarray) -> None:
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 2:
        data = data[:, :, None]
    if data.ndim != 3:
        raise ValueError(f"raster must be HxW or HxWxC, got shape {data.shape}")
    h, w, c = data.shape
    with open(path, "wb") as f:
        f.write(F32RASTER_HEADER.pack(F32RASTER_MAGIC, w, h, c))
        f.write(data.astype("<f4").tobytes())


def load_f32raster(path: str | Path) -> np.ndarray:
    """Returns (H, W, C) float64; raises HeaderError on malformed files."""
    raw = Path(path).read_bytes()
    if len(raw) < F32RASTER_HEADER.size:
        raise HeaderError(f"{path}: too short for a raster header")
    magic, w, h, c = F32RASTER_HEADER.unpack_from(raw)
    if magic != F32RASTER_MAGIC:
        raise HeaderError(f"{path}: bad magic {magic!r}")
    expected = F32RASTER_HEADER.size + 4 * w * h * c
    if len(raw) != expected:
        raise HeaderError(f"{path}: payload is {len(raw)} bytes, header implies {expected}")
    data = np.frombuffer(raw, dtype="<f4", offset=F32RASTER_HEADER.size)
    return data.reshape(h, w, c).astype(np.float64)


def save_png(path: str | Path, image: np.ndarray) -> None:
    """Write an rgb image in [0, 1] as 8-bit PNG."""
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    Image.fromarray(np.round(arr * 255.0).astype(np.uint8), mode="RGB").save(path)


def load_png(path: str | Path) -> np.ndarray:
    """Read an 8-bit PNG as (H, W, 3) floats in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


@dataclass
class PointMapAsset:
    """Globally aligned per-pixel 3D points with confidence and color."""
    points: np.ndarray      # (H, W, 3) world space
    confidence: np.ndarray  # (H, W) >= 0
    camera: Camera
    rgb: np.ndarray         # (H, W, 3) in [0, 1]

    def __post_init__(self) -> None:
        h, w = self.camera.height, self.camera.width
        if self.points.shape != (h, w, 3):
            raise DimensionError(f"points shape {self.points.shape} != camera raster ({h}, {w}, 3)")
        if self.confidence.shape != (h, w):
            raise DimensionError(f"confidence shape {self.confidence.shape} != ({h}, {w})")
        if self.rgb.shape != (h, w, 3):
            raise DimensionError(f"rgb shape {self.rgb.shape} != ({h}, {w}, 3)")
        if not np.all(np.isfinite(self.confidence)):
            raise PayloadError("confidence contains non-finite values")
        covered = self.confidence > 0
        if not np.all(np.isfinite(self.points[covered])):
            raise PayloadError("points are non-finite where confidence > 0")

    @property
    def gt_depth(self) -> np.ndarray:
        """Per-pixel distance ||X_p - o|| to the camera center."""
        return np.linalg.norm(self.points - self.camera.center, axis=-1)


@dataclass
class DepthAsset:
    """Relative-scale depth prior plus validity."""
    depth: np.ndarray      # (H, W)
    validity: np.ndarray   # (H, W) bool
    source: str            # "stereo" (training view) or "monocular" (pseudo view)
    cam_id: str = ""

    def __post_init__(self) -> None:
        bad = self.validity & ~(np.isfinite(self.depth) & (self.depth > 0))
        if np.any(bad):
            raise PayloadError("depth is non-finite or non-positive on valid pixels")


@dataclass
class RefinedViewAsset:
    """Externally refined pseudo-view image."""
    image: np.ndarray  # (H, W, 3) in [0, 1]
    cam_id: str


def _sidecar_path(path: Path) -> Path:
    return path.with_suffix(".json")


def save_point_map(path: str | Path, asset: PointMapAsset) -> None:
    path = Path(path)
    save_f32raster(path, asset.points)
    conf_path = path.with_name(path.stem + "_conf.f32raster")
    save_f32raster(conf_path, asset.confidence)
    rgb_path = path.with_name(path.stem + "_rgb.png")
    save_png(rgb_path, asset.rgb)
    sidecar = {
        "kind": "point_map",
        "camera": camera_to_dict(asset.camera),
        "confidence": conf_path.name,
        "rgb": rgb_path.name,
    }
    _sidecar_path(path).write_text(json.dumps(sidecar, indent=2) + "\n")


def load_point_map(path: str | Path) -> PointMapAsset:
    path = Path(path)
    side_path = _sidecar_path(path)
    if not path.exists():
        raise MissingAssetError(f"{path} does not exist")
    if not side_path.exists():
        raise MissingAssetError(f"{side_path} (sidecar) does not exist")
    side = json.loads(side_path.read_text())
    if side.get("kind") != "point_map":
        raise HeaderError(f"{side_path}: sidecar kind is {side.get('kind')!r}, expected 'point_map'")
    camera = camera_from_dict(side["camera"])
    points = load_f32raster(path)
    conf = load_f32raster(path.with_name(side["confidence"]))[:, :, 0]
    rgb = load_png(path.with_name(side["rgb"]))
    return PointMapAsset(points=points, confidence=conf, camera=camera, rgb=rgb)


def save_depth(path: str | Path, asset: DepthAsset) -> None:
    path = Path(path)
    payload = np.stack([asset.depth, asset.validity.astype(np.float64)], axis=-1)
    save_f32raster(path, payload)
    sidecar = {"kind": "depth", "source": asset.source, "camera_id": asset.cam_id}
    _sidecar_path(path).write_text(json.dumps(sidecar, indent=2) + "\n")


def load_depth(path: str | Path) -> DepthAsset:
    path = Path(path)
    if not path.exists():
        raise MissingAssetError(f"{path} does not exist")
    side_path = _sidecar_path(path)
    if not side_path.exists():
        raise MissingAssetError(f"{side_path} (sidecar) does not exist")
    side = json.loads(side_path.read_text())
    if side.get("kind") != "depth":
        raise HeaderError(f"{side_path}: sidecar kind is {side.get('kind')!r}, expected 'depth'")
    data = load_f32raster(path)
    if data.shape[2] != 2:
        raise DimensionError(f"{path}: depth raster needs 2 channels (depth, validity), has {data.shape[2]}")
    return DepthAsset(
        depth=data[:, :, 0],
        validity=data[:, :, 1] > 0.5,
        source=str(side.get("source", "stereo")),
        cam_id=str(side.get("camera_id", "")),
    )


REFINED_MANIFEST = "refined_manifest.json"


def save_refined(directory: str | Path, assets: list[RefinedViewAsset]) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest: dict[str, str] = {}
    for asset in assets:
        name = f"{asset.cam_id}_refined.png"
        save_png(directory / name, asset.image)
        manifest[asset.cam_id] = name
    (directory / REFINED_MANIFEST).write_text(json.dumps({"refined": manifest}, indent=2) + "\n")


def load_refined(directory: str | Path, cam_id: str) -> RefinedViewAsset:
    directory = Path(directory)
    manifest_path = directory / REFINED_MANIFEST
    if not manifest_path.exists():
        raise MissingAssetError(f"{manifest_path} does not exist")
    manifest = json.loads(manifest_path.read_text()).get("refined", {})
    if cam_id not in manifest:
        raise MissingAssetError(f"no refined image for pseudo camera {cam_id!r}")
    file = directory / manifest[cam_id]
    if not file.exists():
        raise MissingAssetError(f"refined image {file} for camera {cam_id!r} is missing")
    return RefinedViewAsset(image=load_png(file), cam_id=cam_id)
