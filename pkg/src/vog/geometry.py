"""Projection, visibility, box IoU, and spatial-relation kernels.

Every function here is pure and total over immutable inputs, so callers are
free to parallelize across (view, object) pairs.

Conventions:
  * world frame: x = right, y = front, z = up
  * camera frame: x = right, y = down, z = forward (depth)
  * pinhole projection: u = fx * x / z + cx,  v = fy * y / z + cy
  * boxes are axis-aligned 6-tuples (cx, cy, cz, sx, sy, sz) in meters
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, Iterable, Optional, Sequence, Tuple

import numpy as np

from .errors import DegenerateInput, DimensionMismatch

if TYPE_CHECKING:  # pragma: no cover - import cycle guard, typing only
    from .scene import CameraView, SceneObject


class SpatialRelation(Enum):
    """Directional relation, read as "object is <relation> of subject"."""

    LEFT = "left"
    RIGHT = "right"
    FRONT = "front"
    BEHIND = "behind"
    ABOVE = "above"
    BELOW = "below"

    @property
    def inverse(self) -> "SpatialRelation":
        return _INVERSES[self]

    def __str__(self) -> str:  # pragma: no cover - cosmetic
        return self.value


_INVERSES = {
    SpatialRelation.LEFT: SpatialRelation.RIGHT,
    SpatialRelation.RIGHT: SpatialRelation.LEFT,
    SpatialRelation.FRONT: SpatialRelation.BEHIND,
    SpatialRelation.BEHIND: SpatialRelation.FRONT,
    SpatialRelation.ABOVE: SpatialRelation.BELOW,
    SpatialRelation.BELOW: SpatialRelation.ABOVE,
}

# axis index -> (relation when the delta is positive, when negative)
_AXIS_RELATIONS = {
    0: (SpatialRelation.RIGHT, SpatialRelation.LEFT),
    1: (SpatialRelation.FRONT, SpatialRelation.BEHIND),
    2: (SpatialRelation.ABOVE, SpatialRelation.BELOW),
}

RELATIONS_BY_NAME = {r.value: r for r in SpatialRelation}


@dataclass(frozen=True)
class VisibilityReport:
    """How much of an object's point sample survives projection and occlusion.

    ``projected_fraction`` counts points landing inside the image;
    ``unoccluded_fraction`` counts the subset that also passes the depth test,
    so it can never exceed ``projected_fraction``. ``pixel_count`` is the
    number of distinct full-resolution pixels covered by unoccluded points.
    """

    view_id: str
    object_id: str
    projected_fraction: float
    unoccluded_fraction: float
    pixel_count: int

    def __post_init__(self):
        if self.unoccluded_fraction > self.projected_fraction + 1e-12:
            raise ValueError("unoccluded_fraction exceeds projected_fraction")

    def to_dict(self) -> dict:
        return {
            "view": self.view_id,
            "object": self.object_id,
            "projected_fraction": float(self.projected_fraction),
            "unoccluded_fraction": float(self.unoccluded_fraction),
            "pixel_count": int(self.pixel_count),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VisibilityReport":
        return cls(
            view_id=d["view"],
            object_id=d["object"],
            projected_fraction=float(d["projected_fraction"]),
            unoccluded_fraction=float(d["unoccluded_fraction"]),
            pixel_count=int(d["pixel_count"]),
        )


@dataclass
class DepthBuffer:
    """Nearest depth per pixel in meters; +inf where nothing landed.

    ``data`` has shape (rows, cols) where cols = ceil(width / divisor) and
    rows = ceil(height / divisor). Full-resolution pixel (px, py) maps to
    cell (px // divisor, py // divisor).
    """

    data: np.ndarray
    width: int
    height: int
    divisor: int = 1

    def matches(self, view: "CameraView") -> bool:
        w, h = view.image_size
        return (
            self.width == w
            and self.height == h
            and self.data.shape == (_ceil_div(h, self.divisor), _ceil_div(w, self.divisor))
        )


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def camera_from_world(view: "CameraView") -> np.ndarray:
    """4x4 world-to-camera transform (inverse of the stored pose)."""
    return np.linalg.inv(np.asarray(view.extrinsics, dtype=np.float64))


def project_points(
    points: np.ndarray, view: "CameraView"
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batch pinhole projection.

    Returns (uv, depth, valid): pixel coordinates (N, 2), camera-frame depth
    (N,), and a mask of points in front of the camera and inside the image.
    """
    w2c = camera_from_world(view)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    cam = pts @ w2c[:3, :3].T + w2c[:3, 3]
    z = cam[:, 2]
    fx, fy, cx, cy = view.intrinsics
    with np.errstate(divide="ignore", invalid="ignore"):
        u = fx * cam[:, 0] / z + cx
        v = fy * cam[:, 1] / z + cy
    width, height = view.image_size
    valid = (z > 0) & (u >= 0) & (u < width) & (v >= 0) & (v < height)
    return np.stack([u, v], axis=1), z, valid


def project_point(
    point: Sequence[float], view: "CameraView"
) -> Optional[Tuple[float, float, float]]:
    """Project one world point; None when behind the camera or off-image."""
    uv, z, valid = project_points(np.asarray(point, dtype=np.float64)[None, :], view)
    if not bool(valid[0]):
        return None
    return float(uv[0, 0]), float(uv[0, 1]), float(z[0])


def unproject_pixel(u: float, v: float, depth: float, view: "CameraView") -> np.ndarray:
    """Inverse ray of :func:`project_point` at the given camera depth."""
    fx, fy, cx, cy = view.intrinsics
    cam = np.array([(u - cx) / fx * depth, (v - cy) / fy * depth, depth, 1.0])
    world = np.asarray(view.extrinsics, dtype=np.float64) @ cam
    return world[:3]


def synthesize_depth_buffer(
    view: "CameraView",
    objects: Iterable["SceneObject"],
    resolution_divisor: int = 4,
) -> DepthBuffer:
    """Z-buffer splat of all object points at reduced resolution.

    Each cell holds the minimum depth of the points mapping into it; cells
    nothing maps to hold +inf. Coarser buffers close the holes left by
    sparse point samples.
    """
    div = max(1, int(resolution_divisor))
    width, height = view.image_size
    rows, cols = _ceil_div(height, div), _ceil_div(width, div)
    data = np.full((rows, cols), np.inf, dtype=np.float64)
    for obj in objects:
        uv, z, valid = project_points(obj.points, view)
        if not valid.any():
            continue
        px = np.floor(uv[valid, 0]).astype(np.int64) // div
        py = np.floor(uv[valid, 1]).astype(np.int64) // div
        np.minimum.at(data, (py, px), z[valid])
    return DepthBuffer(data=data, width=width, height=height, divisor=div)


def compute_visibility(
    view: "CameraView",
    obj: "SceneObject",
    depth_source: DepthBuffer,
    occlusion_tolerance: float = 0.10,
) -> VisibilityReport:
    """Project an object's sample points and run them through the depth test.

    A projected point is unoccluded iff its depth is at most the buffer depth
    at its pixel plus ``occlusion_tolerance``. Fractions are over the total
    sample count.
    """
    if not depth_source.matches(view):
        raise DimensionMismatch(
            f"depth buffer {depth_source.data.shape} (divisor {depth_source.divisor}) "
            f"does not match view {view.view_id} image size {view.image_size}"
        )
    pts = np.asarray(obj.points, dtype=np.float64)
    total = len(pts)
    uv, z, valid = project_points(pts, view)
    n_proj = int(valid.sum())
    if n_proj == 0:
        return VisibilityReport(view.view_id, obj.object_id, 0.0, 0.0, 0)
    px = np.floor(uv[valid, 0]).astype(np.int64)
    py = np.floor(uv[valid, 1]).astype(np.int64)
    div = depth_source.divisor
    buffer_depth = depth_source.data[py // div, px // div]
    passed = z[valid] <= buffer_depth + occlusion_tolerance
    n_vis = int(passed.sum())
    pixel_count = int(np.unique(py[passed] * depth_source.width + px[passed]).size)
    return VisibilityReport(
        view_id=view.view_id,
        object_id=obj.object_id,
        projected_fraction=n_proj / total,
        unoccluded_fraction=n_vis / total,
        pixel_count=pixel_count,
    )


def box_bounds(box: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    """(min corner, max corner) of a center/size box."""
    b = np.asarray(box, dtype=np.float64)
    half = b[3:6] / 2.0
    return b[:3] - half, b[:3] + half


def iou_3d(a: Sequence[float], b: Sequence[float]) -> float:
    """Intersection over union of two axis-aligned boxes, in [0, 1]."""
    a_lo, a_hi = box_bounds(a)
    b_lo, b_hi = box_bounds(b)
    overlap = np.clip(np.minimum(a_hi, b_hi) - np.maximum(a_lo, b_lo), 0.0, None)
    inter = float(np.prod(overlap))
    vol_a = float(np.prod(a_hi - a_lo))
    vol_b = float(np.prod(b_hi - b_lo))
    return inter / (vol_a + vol_b - inter)


def classify_relation(
    subject_box: Sequence[float], object_box: Sequence[float]
) -> SpatialRelation:
    """Dominant-axis relation of object relative to subject, in world frame.

    The axis with the largest absolute center delta decides; exact ties break
    by priority z > y > x. Raises :class:`DegenerateInput` when the centers
    coincide within 1e-9 on all axes.
    """
    d = np.asarray(object_box, dtype=np.float64)[:3] - np.asarray(
        subject_box, dtype=np.float64
    )[:3]
    if float(np.max(np.abs(d))) < 1e-9:
        raise DegenerateInput("box centers coincide; relation undefined")
    axis = 2
    for candidate in (1, 0):
        if abs(d[candidate]) > abs(d[axis]):
            axis = candidate
    positive, negative = _AXIS_RELATIONS[axis]
    return positive if d[axis] > 0 else negative
