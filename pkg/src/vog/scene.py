"""Scene bundle data model and its on-disk format.

A bundle directory holds a ``scene.json`` manifest, the referenced RGB
images (PNG or JPEG), optional 16-bit millimeter depth PNGs, and one binary
point sidecar per object (little-endian float32, xyz interleaved).

Manifest schema (field names are part of the contract)::

    {
      "scene_id": "...",
      "views": [{"id", "frame", "fx", "fy", "cx", "cy", "width", "height",
                 "pose" (16 numbers, row-major camera-to-world),
                 "image", "depth"?}],
      "objects": [{"id", "label", "bbox" (6 numbers), "points_file"}]
    }

Loaded bundles are immutable and safe to share across concurrent readers.
"""

from __future__ import annotations

import json
import re
import shutil
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from PIL import Image

from .errors import (
    InvariantViolation,
    IoFailure,
    MalformedManifest,
    MissingAsset,
    MissingManifest,
)

MANIFEST_NAME = "scene.json"
DEFAULT_POINT_CAP = 2048
BBOX_INFLATION = 0.05  # detection-noise tolerance for the point containment check

_WHITESPACE = re.compile(r"\s+")


def normalize_label(label: str) -> str:
    """Canonical class label: lowercase, whitespace runs become underscores."""
    return _WHITESPACE.sub("_", label.strip().lower())


def parse_object_id(object_id: str) -> Tuple[str, int]:
    """Split ``<class_label>_<index>`` on the last underscore."""
    head, _, tail = object_id.rpartition("_")
    if not head or not tail.isdigit():
        raise InvariantViolation(object_id, "object_id format <class_label>_<index>")
    return head, int(tail)


@dataclass(eq=False)
class CameraView:
    """One posed RGB frame: pinhole intrinsics plus a camera-to-world pose."""

    view_id: str
    frame_index: int
    intrinsics: Tuple[float, float, float, float]  # fx, fy, cx, cy in pixels
    extrinsics: np.ndarray  # 4x4 camera-to-world, row-major
    image_ref: str
    image_size: Tuple[int, int]  # width, height
    depth_ref: Optional[str] = None

    @property
    def position(self) -> np.ndarray:
        return np.asarray(self.extrinsics, dtype=np.float64)[:3, 3]

    @property
    def width(self) -> int:
        return self.image_size[0]

    @property
    def height(self) -> int:
        return self.image_size[1]

    def validate(self) -> None:
        fx, fy, cx, cy = self.intrinsics
        w, h = self.image_size
        if not (fx > 0 and fy > 0):
            raise InvariantViolation(self.view_id, "fx, fy > 0")
        if not (0 <= cx < w):
            raise InvariantViolation(self.view_id, "0 <= cx < width")
        if not (0 <= cy < h):
            raise InvariantViolation(self.view_id, "0 <= cy < height")
        pose = np.asarray(self.extrinsics, dtype=np.float64)
        if pose.shape != (4, 4):
            raise InvariantViolation(self.view_id, "pose is a 4x4 matrix")
        rot = pose[:3, :3]
        if float(np.max(np.abs(rot @ rot.T - np.eye(3)))) > 1e-5:
            raise InvariantViolation(self.view_id, "rotation orthonormal within 1e-5")
        if abs(float(np.linalg.det(rot)) - 1.0) > 1e-4:
            raise InvariantViolation(self.view_id, "rotation determinant +1")
        if not np.allclose(pose[3], [0.0, 0.0, 0.0, 1.0], atol=1e-9):
            raise InvariantViolation(self.view_id, "pose last row is (0, 0, 0, 1)")


@dataclass(eq=False)
class SceneObject:
    """One detected 3D instance: id, label, axis-aligned box, sample points."""

    object_id: str
    class_label: str
    bbox: np.ndarray  # (cx, cy, cz, sx, sy, sz) in meters, world frame
    points: np.ndarray  # (N, 3) float32 world-frame samples
    points_ref: str = ""

    def __post_init__(self):
        self.bbox = np.asarray(self.bbox, dtype=np.float64).reshape(6)
        self.points = np.asarray(self.points, dtype=np.float32).reshape(-1, 3)
        if not self.points_ref:
            self.points_ref = f"points/{self.object_id}.bin"

    @property
    def class_index(self) -> int:
        return parse_object_id(self.object_id)[1]

    def validate(self) -> None:
        sizes = self.bbox[3:6]
        for name, value in zip(("size_x", "size_y", "size_z"), sizes):
            if not value > 0:
                raise InvariantViolation(self.object_id, f"{name} > 0")
        label, index = parse_object_id(self.object_id)
        if index < 0:
            raise InvariantViolation(self.object_id, "index is a non-negative integer")
        if label != self.class_label:
            raise InvariantViolation(
                self.object_id, "object_id class part matches normalized label"
            )
        if len(self.points) < 1:
            raise InvariantViolation(self.object_id, "at least one sample point")
        lo = self.bbox[:3] - sizes / 2.0 - BBOX_INFLATION
        hi = self.bbox[:3] + sizes / 2.0 + BBOX_INFLATION
        pts = self.points.astype(np.float64)
        if bool(np.any(pts < lo)) or bool(np.any(pts > hi)):
            raise InvariantViolation(
                self.object_id, f"points within bbox inflated by {BBOX_INFLATION} m"
            )


@dataclass(eq=False)
class SceneBundle:
    """A full raw scene: posed views plus detected objects.

    ``root`` points at the backing directory for bundles loaded from disk;
    generated bundles instead carry their rendered frames in ``images``
    (and optionally ``depth_images``) until they are saved.
    """

    scene_id: str
    views: List[CameraView]
    objects: List[SceneObject]
    root: Optional[Path] = None
    images: Optional[Dict[str, Image.Image]] = None
    depth_images: Optional[Dict[str, np.ndarray]] = None  # uint16 millimeters

    def view_by_id(self, view_id: str) -> CameraView:
        return self._view_index[view_id]

    def object_by_id(self, object_id: str) -> SceneObject:
        return self._object_index[object_id]

    @property
    def _view_index(self) -> Dict[str, CameraView]:
        return {v.view_id: v for v in self.views}

    @property
    def _object_index(self) -> Dict[str, SceneObject]:
        return {o.object_id: o for o in self.objects}

    def class_labels(self) -> List[str]:
        return sorted({o.class_label for o in self.objects})

    def validate(self, check_assets: bool = True) -> None:
        if not self.views:
            raise InvariantViolation(self.scene_id, "non-empty views")
        if not self.objects:
            raise InvariantViolation(self.scene_id, "non-empty objects")
        seen_views: set = set()
        for view in self.views:
            view.validate()
            if view.view_id in seen_views:
                raise InvariantViolation(view.view_id, "view_id unique")
            seen_views.add(view.view_id)
        seen_objects: set = set()
        for obj in self.objects:
            obj.validate()
            if obj.object_id in seen_objects:
                raise InvariantViolation(obj.object_id, "object_id unique")
            seen_objects.add(obj.object_id)
        if check_assets and self.root is not None:
            for view in self.views:
                _check_image_asset(self.root, view.image_ref, view.view_id)
                if view.depth_ref:
                    _check_image_asset(self.root, view.depth_ref, view.view_id)


def _check_image_asset(root: Path, ref: str, entity_id: str) -> None:
    path = Path(root) / ref
    if not path.is_file():
        raise MissingAsset(path)
    try:
        with Image.open(path) as im:
            im.verify()
    except Exception as exc:
        raise InvariantViolation(entity_id, f"image decodes ({ref})") from exc


def read_depth_image(path: Path) -> np.ndarray:
    """16-bit millimeter PNG -> float64 meters, +inf where the value is 0."""
    with Image.open(path) as im:
        arr = np.asarray(im)
    depth = arr.astype(np.float64) / 1000.0
    depth[arr == 0] = np.inf
    return depth


def write_depth_image(path: Path, millimeters: np.ndarray) -> None:
    arr = np.asarray(millimeters, dtype=np.uint16)
    Image.fromarray(arr).save(path)  # uint16 grayscale maps to 16-bit PNG


# --- manifest parsing helpers ------------------------------------------------


def _field(entry: dict, key: str, ctx: str):
    if key not in entry:
        raise MalformedManifest(f"{ctx}.{key}: missing")
    return entry[key]


def _number(entry: dict, key: str, ctx: str) -> float:
    value = _field(entry, key, ctx)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise MalformedManifest(f"{ctx}.{key}: expected a number, got {value!r}")
    return float(value)


def _integer(entry: dict, key: str, ctx: str) -> int:
    value = _field(entry, key, ctx)
    if isinstance(value, bool) or not isinstance(value, int):
        raise MalformedManifest(f"{ctx}.{key}: expected an integer, got {value!r}")
    return value


def _string(entry: dict, key: str, ctx: str) -> str:
    value = _field(entry, key, ctx)
    if not isinstance(value, str) or not value:
        raise MalformedManifest(f"{ctx}.{key}: expected a non-empty string")
    return value


def _number_list(entry: dict, key: str, ctx: str, length: int) -> List[float]:
    value = _field(entry, key, ctx)
    if not isinstance(value, list) or len(value) != length:
        raise MalformedManifest(f"{ctx}.{key}: expected a list of {length} numbers")
    out = []
    for i, item in enumerate(value):
        if isinstance(item, bool) or not isinstance(item, (int, float)):
            raise MalformedManifest(f"{ctx}.{key}[{i}]: expected a number")
        out.append(float(item))
    return out


def view_from_manifest(entry: dict, ctx: str) -> CameraView:
    pose = np.asarray(_number_list(entry, "pose", ctx, 16), dtype=np.float64).reshape(4, 4)
    depth = entry.get("depth")
    if depth is not None and (not isinstance(depth, str) or not depth):
        raise MalformedManifest(f"{ctx}.depth: expected a non-empty string")
    return CameraView(
        view_id=_string(entry, "id", ctx),
        frame_index=_integer(entry, "frame", ctx),
        intrinsics=(
            _number(entry, "fx", ctx),
            _number(entry, "fy", ctx),
            _number(entry, "cx", ctx),
            _number(entry, "cy", ctx),
        ),
        extrinsics=pose,
        image_ref=_string(entry, "image", ctx),
        image_size=(_integer(entry, "width", ctx), _integer(entry, "height", ctx)),
        depth_ref=depth,
    )


def view_to_manifest(view: CameraView) -> dict:
    fx, fy, cx, cy = view.intrinsics
    entry = {
        "id": view.view_id,
        "frame": int(view.frame_index),
        "fx": float(fx),
        "fy": float(fy),
        "cx": float(cx),
        "cy": float(cy),
        "width": int(view.width),
        "height": int(view.height),
        "pose": [float(x) for x in np.asarray(view.extrinsics).reshape(16)],
        "image": view.image_ref,
    }
    if view.depth_ref:
        entry["depth"] = view.depth_ref
    return entry


def _load_points(path: Path, point_cap: int) -> np.ndarray:
    if not path.is_file():
        raise MissingAsset(path)
    raw = np.fromfile(path, dtype="<f4")
    if raw.size == 0 or raw.size % 3 != 0:
        raise MalformedManifest(f"points file {path.name}: length not a multiple of 3 floats")
    pts = raw.reshape(-1, 3)
    if point_cap and len(pts) > point_cap:
        stride = -(-len(pts) // point_cap)  # ceil division: uniform stride subsample
        pts = pts[::stride]
    return np.ascontiguousarray(pts, dtype=np.float32)


def load_bundle(root_path, point_cap: int = DEFAULT_POINT_CAP) -> SceneBundle:
    """Load and fully validate a scene bundle from ``root_path``.

    Object points are subsampled with a uniform stride down to ``point_cap``
    samples. View and object order follows the manifest.
    """
    root = Path(root_path)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.is_file():
        raise MissingManifest(str(manifest_path))
    try:
        manifest = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise MalformedManifest(f"{MANIFEST_NAME}: {exc}") from exc
    if not isinstance(manifest, dict):
        raise MalformedManifest(f"{MANIFEST_NAME}: expected a JSON object at top level")

    scene_id = _string(manifest, "scene_id", MANIFEST_NAME)
    views_raw = _field(manifest, "views", MANIFEST_NAME)
    objects_raw = _field(manifest, "objects", MANIFEST_NAME)
    if not isinstance(views_raw, list):
        raise MalformedManifest("views: expected a list")
    if not isinstance(objects_raw, list):
        raise MalformedManifest("objects: expected a list")

    views = [view_from_manifest(entry, f"views[{i}]") for i, entry in enumerate(views_raw)]

    objects: List[SceneObject] = []
    for i, entry in enumerate(objects_raw):
        ctx = f"objects[{i}]"
        label = normalize_label(_string(entry, "label", ctx))
        points_ref = _string(entry, "points_file", ctx)
        obj = SceneObject(
            object_id=_string(entry, "id", ctx),
            class_label=label,
            bbox=np.asarray(_number_list(entry, "bbox", ctx, 6), dtype=np.float64),
            points=_load_points(root / points_ref, point_cap),
            points_ref=points_ref,
        )
        objects.append(obj)

    bundle = SceneBundle(scene_id=scene_id, views=views, objects=objects, root=root)
    bundle.validate(check_assets=True)
    return bundle


def bundle_to_manifest(bundle: SceneBundle) -> dict:
    return {
        "scene_id": bundle.scene_id,
        "views": [view_to_manifest(v) for v in bundle.views],
        "objects": [
            {
                "id": o.object_id,
                "label": o.class_label,
                "bbox": [float(x) for x in o.bbox],
                "points_file": o.points_ref,
            }
            for o in bundle.objects
        ],
    }


def save_bundle(bundle: SceneBundle, root_path) -> None:
    """Write manifest, point sidecars, and image assets under ``root_path``.

    Numeric fields round-trip exactly: the manifest stores full-precision
    decimal reprs and points are float32 both in memory and on disk, so
    save -> load -> save is byte-identical.
    """
    root = Path(root_path)
    try:
        root.mkdir(parents=True, exist_ok=True)
        for obj in bundle.objects:
            target = root / obj.points_ref
            target.parent.mkdir(parents=True, exist_ok=True)
            np.asarray(obj.points, dtype="<f4").tofile(target)
        for view in bundle.views:
            _save_view_asset(bundle, view, root)
        manifest_path = root / MANIFEST_NAME
        manifest_path.write_text(json.dumps(bundle_to_manifest(bundle), indent=2) + "\n")
    except OSError as exc:
        raise IoFailure(f"saving bundle to {root}: {exc}") from exc


def _save_view_asset(bundle: SceneBundle, view: CameraView, root: Path) -> None:
    target = root / view.image_ref
    target.parent.mkdir(parents=True, exist_ok=True)
    in_memory = (bundle.images or {}).get(view.view_id)
    if in_memory is not None:
        in_memory.save(target)
    elif bundle.root is not None and (bundle.root / view.image_ref).is_file():
        source = bundle.root / view.image_ref
        if source.resolve() != target.resolve():
            shutil.copyfile(source, target)
    else:
        raise MissingAsset(view.image_ref)
    if view.depth_ref:
        depth_target = root / view.depth_ref
        depth_target.parent.mkdir(parents=True, exist_ok=True)
        in_memory_depth = (bundle.depth_images or {}).get(view.view_id)
        if in_memory_depth is not None:
            write_depth_image(depth_target, in_memory_depth)
        elif bundle.root is not None and (bundle.root / view.depth_ref).is_file():
            source = bundle.root / view.depth_ref
            if source.resolve() != depth_target.resolve():
                shutil.copyfile(source, depth_target)
        else:
            raise MissingAsset(view.depth_ref)
