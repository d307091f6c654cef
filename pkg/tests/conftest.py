"""Shared fixtures: canned views, objects, bundles, and random small scenes."""

from __future__ import annotations

from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import pytest
from PIL import Image

from vog.bench import camera_pose
from vog.scene import CameraView, SceneBundle, SceneObject, save_bundle


def make_view(
    view_id: str = "cam_0",
    frame: int = 0,
    fx: float = 500.0,
    fy: float = 500.0,
    cx: float = 320.0,
    cy: float = 240.0,
    size: Tuple[int, int] = (640, 480),
    pose: Optional[np.ndarray] = None,
    image_ref: Optional[str] = None,
    depth_ref: Optional[str] = None,
) -> CameraView:
    return CameraView(
        view_id=view_id,
        frame_index=frame,
        intrinsics=(fx, fy, cx, cy),
        extrinsics=np.eye(4) if pose is None else np.asarray(pose, dtype=np.float64),
        image_ref=image_ref or f"images/{view_id}.png",
        image_size=size,
        depth_ref=depth_ref,
    )


def box(cx, cy, cz, sx, sy, sz) -> np.ndarray:
    return np.array([cx, cy, cz, sx, sy, sz], dtype=np.float64)


def make_object(
    object_id: str,
    bbox: np.ndarray,
    points: Optional[np.ndarray] = None,
    n_points: int = 64,
    seed: int = 0,
) -> SceneObject:
    label = object_id.rsplit("_", 1)[0]
    if points is None:
        rng = np.random.default_rng(seed)
        center, size = bbox[:3], bbox[3:]
        points = (rng.uniform(-0.5, 0.5, size=(n_points, 3)) * size + center).astype(
            np.float32
        )
    return SceneObject(
        object_id=object_id,
        class_label=label,
        bbox=bbox,
        points=np.asarray(points, dtype=np.float32),
    )


def solid_image(color=(120, 80, 40), size=(64, 48)) -> Image.Image:
    return Image.new("RGB", size, color)


def in_memory_bundle(
    scene_id: str = "scene_test",
    views: Optional[List[CameraView]] = None,
    objects: Optional[List[SceneObject]] = None,
) -> SceneBundle:
    if views is None:
        views = [make_view()]
    if objects is None:
        objects = [make_object("chair_0", box(0, 0, 1.0, 0.5, 0.5, 0.9))]
    bundle = SceneBundle(
        scene_id=scene_id,
        views=views,
        objects=objects,
        images={v.view_id: solid_image(size=v.image_size) for v in views},
    )
    bundle.validate(check_assets=False)
    return bundle


def write_bundle(tmp_path: Path, bundle: SceneBundle) -> Path:
    root = tmp_path / bundle.scene_id
    save_bundle(bundle, root)
    return root


def random_small_scene(
    seed: int,
    max_objects: int = 6,
    max_views: int = 5,
    max_points: int = 64,
) -> SceneBundle:
    """Random scene for oracle-equivalence checks: a handful of boxes spread
    around the origin and inward-looking cameras on a loose shell."""
    rng = np.random.default_rng(seed)
    n_objects = int(rng.integers(2, max_objects + 1))
    labels = ["crate", "drum", "panel"]
    objects = []
    counters = {}
    for _ in range(n_objects):
        label = labels[int(rng.integers(len(labels)))]
        index = counters.get(label, 0)
        counters[label] = index + 1
        center = np.array(
            [rng.uniform(-1.6, 1.6), rng.uniform(-1.6, 1.6), rng.uniform(0.2, 1.4)]
        )
        size = rng.uniform(0.25, 1.0, size=3)
        bbox = np.concatenate([center, size])
        n_points = int(rng.integers(8, max_points + 1))
        points = (rng.uniform(-0.5, 0.5, size=(n_points, 3)) * size + center).astype(
            np.float32
        )
        objects.append(
            SceneObject(
                object_id=f"{label}_{index}",
                class_label=label,
                bbox=bbox,
                points=points,
            )
        )
    n_views = int(rng.integers(2, max_views + 1))
    views = []
    for i in range(n_views):
        angle = rng.uniform(0, 2 * np.pi)
        radius = rng.uniform(3.0, 5.0)
        eye = np.array(
            [radius * np.cos(angle), radius * np.sin(angle), rng.uniform(0.8, 2.2)]
        )
        target = np.array([rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), 0.7])
        views.append(
            CameraView(
                view_id=f"v{i}",
                frame_index=i,
                intrinsics=(60.0, 60.0, 32.0, 24.0),
                extrinsics=camera_pose(eye, target),
                image_ref=f"images/v{i}.png",
                image_size=(64, 48),
            )
        )
    bundle = SceneBundle(scene_id=f"rand_{seed:04d}", views=views, objects=objects)
    bundle.validate(check_assets=False)
    return bundle


@pytest.fixture
def simple_bundle() -> SceneBundle:
    return in_memory_bundle()
