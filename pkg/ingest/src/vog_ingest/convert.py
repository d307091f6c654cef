"""ScanNet-style export -> scene bundle conversion.

Expected input layout (the standard sensor-stream export)::

    <scene_dir>/
      color/<frame>.jpg        RGB frames
      depth/<frame>.png        16-bit depth, millimeters, 0 = invalid
      pose/<frame>.txt         4x4 camera-to-world, row per line
      intrinsic/intrinsic_color.txt

Detections come from a separate JSON file produced by any 3D instance
detector::

    {"detections": [{"label": "chair" | 5, "score": 0.92,
                     "bbox": [cx, cy, cz, sx, sy, sz],
                     "points": [[x, y, z], ...]   (optional)}, ...]}

The emitted bundle directory holds ``scene.json`` plus image, depth, and
point-sidecar assets in exactly the layout the grounding engine loads.
"""

from __future__ import annotations

import json
import logging
import re
import shutil
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from .labels import load_label_map

logger = logging.getLogger(__name__)

POINT_CAP = 2048
ORTHONORMAL_TOLERANCE = 1e-7
SYNTHETIC_POINTS_PER_AXIS = 4  # 4^3 = 64 grid points when a detection has none

_WHITESPACE = re.compile(r"\s+")


class IngestError(Exception):
    """Base class for conversion failures."""


class MissingInput(IngestError):
    def __init__(self, path):
        self.path = str(path)
        super().__init__(f"missing input: {self.path}")


class MalformedInput(IngestError):
    """Input present but unreadable; message names the offending piece."""


@dataclass(frozen=True)
class IngestConfig:
    scene_dir: Path
    detection_file: Path
    out_dir: Path
    frame_stride: int = 20
    score_threshold: float = 0.5
    label_map_path: Optional[Path] = None
    point_cap: int = POINT_CAP

    def __post_init__(self):
        if self.frame_stride < 1:
            raise ValueError("frame_stride must be >= 1")
        if not 0 <= self.score_threshold <= 1:
            raise ValueError("score_threshold must be in [0, 1]")


def normalize_label(label: str) -> str:
    return _WHITESPACE.sub("_", label.strip().lower())


def list_frames(color_dir: Path) -> List[int]:
    """Numeric frame ids found in the color directory, sorted ascending."""
    if not color_dir.is_dir():
        raise MissingInput(color_dir)
    frames = []
    for path in color_dir.iterdir():
        if path.suffix.lower() in (".jpg", ".jpeg", ".png") and path.stem.isdigit():
            frames.append(int(path.stem))
    if not frames:
        raise MalformedInput(f"{color_dir}: no numbered color frames")
    return sorted(frames)


def select_frames(frames: Sequence[int], stride: int) -> List[int]:
    """Every ``stride``-th frame; yields ceil(len(frames) / stride) entries."""
    return list(frames)[::stride]


def read_matrix(path: Path, shape: Tuple[int, int] = (4, 4)) -> np.ndarray:
    if not path.is_file():
        raise MissingInput(path)
    try:
        values = np.loadtxt(path, dtype=np.float64)
    except ValueError as exc:
        raise MalformedInput(f"{path}: {exc}") from exc
    if values.shape != shape:
        raise MalformedInput(f"{path}: expected a {shape[0]}x{shape[1]} matrix")
    if not np.all(np.isfinite(values)):
        raise MalformedInput(f"{path}: non-finite entries")
    return values


def nearest_rotation(rot: np.ndarray) -> np.ndarray:
    """Orthogonal Procrustes projection onto SO(3)."""
    u, _, vt = np.linalg.svd(rot)
    fixed = u @ vt
    if np.linalg.det(fixed) < 0:
        u[:, -1] = -u[:, -1]
        fixed = u @ vt
    return fixed


def conditioned_pose(pose: np.ndarray, frame: int) -> np.ndarray:
    """Re-orthonormalize numerically degraded rotations; exact poses pass through."""
    rot = pose[:3, :3]
    deviation = float(np.max(np.abs(rot @ rot.T - np.eye(3))))
    if deviation > ORTHONORMAL_TOLERANCE:
        logger.info(
            "frame %d: pose rotation off-orthonormal by %.2e, projecting to nearest rotation",
            frame,
            deviation,
        )
        pose = pose.copy()
        pose[:3, :3] = nearest_rotation(rot)
    pose[3, :] = (0.0, 0.0, 0.0, 1.0)
    return pose


def read_intrinsics(scene_dir: Path) -> Tuple[float, float, float, float]:
    matrix = read_matrix(scene_dir / "intrinsic" / "intrinsic_color.txt")
    return (
        float(matrix[0, 0]),
        float(matrix[1, 1]),
        float(matrix[0, 2]),
        float(matrix[1, 2]),
    )


def _image_size(path: Path) -> Tuple[int, int]:
    try:
        with Image.open(path) as im:
            return im.size
    except Exception as exc:
        raise MalformedInput(f"{path}: cannot decode ({exc})") from exc


def _copy_depth(source: Path, target: Path, color_size: Tuple[int, int]) -> None:
    """Depth frames are already 16-bit millimeter PNGs; verify and copy.

    Exports often store depth at a lower resolution than color; the engine's
    depth test needs matching dimensions, so mismatched frames are resampled
    with nearest-neighbor (keeps exact millimeter values and 0-invalids).
    """
    try:
        with Image.open(source) as im:
            if im.mode not in ("I", "I;16", "I;16B"):
                raise MalformedInput(f"{source}: depth must be 16-bit grayscale, got {im.mode}")
            if im.size != color_size:
                logger.info(
                    "%s: resampling depth %s -> color resolution %s",
                    source.name, im.size, color_size,
                )
                im.resize(color_size, Image.NEAREST).save(target)
                return
    except IngestError:
        raise
    except Exception as exc:
        raise MalformedInput(f"{source}: cannot decode ({exc})") from exc
    shutil.copyfile(source, target)


def _grid_points(bbox: np.ndarray) -> np.ndarray:
    """Deterministic interior grid for detections shipped without points."""
    center, size = bbox[:3], bbox[3:]
    ticks = np.linspace(-0.4, 0.4, SYNTHETIC_POINTS_PER_AXIS)
    gx, gy, gz = np.meshgrid(ticks * size[0], ticks * size[1], ticks * size[2])
    offsets = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])
    return (offsets + center).astype(np.float32)


def _subsample(points: np.ndarray, cap: int) -> np.ndarray:
    if cap and len(points) > cap:
        stride = -(-len(points) // cap)
        points = points[::stride]
    return np.ascontiguousarray(points, dtype=np.float32)


def _load_detections(config: IngestConfig) -> List[dict]:
    path = Path(config.detection_file)
    if not path.is_file():
        raise MissingInput(path)
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise MalformedInput(f"{path}: {exc}") from exc
    detections = payload.get("detections")
    if not isinstance(detections, list):
        raise MalformedInput(f"{path}: expected a top-level 'detections' list")
    return detections


def ingest(config: IngestConfig) -> Path:
    """Convert one scene; returns the emitted bundle directory."""
    scene_dir = Path(config.scene_dir)
    if not scene_dir.is_dir():
        raise MissingInput(scene_dir)
    out_dir = Path(config.out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "points").mkdir(parents=True, exist_ok=True)

    frames = select_frames(list_frames(scene_dir / "color"), config.frame_stride)
    fx, fy, cx, cy = read_intrinsics(scene_dir)
    label_map = load_label_map(config.label_map_path)

    views = []
    has_depth = (scene_dir / "depth").is_dir()
    if has_depth:
        (out_dir / "depth").mkdir(parents=True, exist_ok=True)
    for frame in frames:
        color_src = _find_frame_file(scene_dir / "color", frame)
        width, height = _image_size(color_src)
        pose = conditioned_pose(read_matrix(scene_dir / "pose" / f"{frame}.txt"), frame)
        image_ref = f"images/{frame}{color_src.suffix.lower()}"
        shutil.copyfile(color_src, out_dir / image_ref)
        entry = {
            "id": f"frame_{frame}",
            "frame": frame,
            "fx": fx,
            "fy": fy,
            "cx": cx,
            "cy": cy,
            "width": width,
            "height": height,
            "pose": [float(x) for x in pose.reshape(16)],
            "image": image_ref,
        }
        depth_src = scene_dir / "depth" / f"{frame}.png"
        if has_depth and depth_src.is_file():
            depth_ref = f"depth/{frame}.png"
            _copy_depth(depth_src, out_dir / depth_ref, (width, height))
            entry["depth"] = depth_ref
        views.append(entry)

    objects = []
    class_counters: Dict[str, int] = {}
    for i, det in enumerate(_load_detections(config)):
        score = float(det.get("score", 0.0))
        if score < config.score_threshold:
            continue
        raw_label = det.get("label")
        if isinstance(raw_label, int):
            raw_label = label_map.get(str(raw_label), f"class_{raw_label}")
        if not isinstance(raw_label, str) or not raw_label.strip():
            raise MalformedInput(f"detections[{i}]: missing label")
        label = normalize_label(raw_label)
        bbox = np.asarray(det.get("bbox", ()), dtype=np.float64)
        if bbox.shape != (6,):
            raise MalformedInput(f"detections[{i}]: bbox must hold 6 numbers")
        if det.get("points"):
            points = np.asarray(det["points"], dtype=np.float32).reshape(-1, 3)
        else:
            points = _grid_points(bbox)
        points = _subsample(points, config.point_cap)
        index = class_counters.get(label, 0)
        class_counters[label] = index + 1
        object_id = f"{label}_{index}"
        points_ref = f"points/{object_id}.bin"
        np.asarray(points, dtype="<f4").tofile(out_dir / points_ref)
        objects.append(
            {
                "id": object_id,
                "label": label,
                "bbox": [float(x) for x in bbox],
                "points_file": points_ref,
            }
        )

    manifest = {"scene_id": scene_dir.name, "views": views, "objects": objects}
    (out_dir / "scene.json").write_text(json.dumps(manifest, indent=2) + "\n")
    logger.info(
        "%s: %d views (stride %d), %d objects -> %s",
        scene_dir.name,
        len(views),
        config.frame_stride,
        len(objects),
        out_dir,
    )
    return out_dir


def _find_frame_file(color_dir: Path, frame: int) -> Path:
    for suffix in (".jpg", ".jpeg", ".png"):
        candidate = color_dir / f"{frame}{suffix}"
        if candidate.is_file():
            return candidate
    raise MissingInput(color_dir / f"{frame}.jpg")
