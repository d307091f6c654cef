"""Regenerates the checked-in miniature ScanNet-style fixture.

Run from the repository root::

    python3 ingest/tests/make_fixture.py

The output is deterministic; commit the refreshed files if the layout ever
changes.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

ROOT = Path(__file__).parent / "fixtures" / "scannet_mini"
N_FRAMES = 10
WIDTH, HEIGHT = 64, 48


def look_at(eye: np.ndarray, target: np.ndarray) -> np.ndarray:
    forward = target - eye
    forward = forward / np.linalg.norm(forward)
    up = np.array([0.0, 0.0, 1.0])
    right = np.cross(forward, up)
    right = right / np.linalg.norm(right)
    down = np.cross(forward, right)
    pose = np.eye(4)
    pose[:3, 0] = right
    pose[:3, 1] = down
    pose[:3, 2] = forward
    pose[:3, 3] = eye
    return pose


def main() -> None:
    rng = np.random.default_rng(20240817)
    for sub in ("color", "depth", "pose", "intrinsic"):
        (ROOT / sub).mkdir(parents=True, exist_ok=True)

    intrinsics = np.eye(4)
    intrinsics[0, 0] = 57.5
    intrinsics[1, 1] = 57.5
    intrinsics[0, 2] = 32.0
    intrinsics[1, 2] = 24.0
    np.savetxt(ROOT / "intrinsic" / "intrinsic_color.txt", intrinsics, fmt="%.8f")

    center = np.array([2.0, 2.0, 0.6])
    for frame in range(N_FRAMES):
        angle = 2 * np.pi * frame / N_FRAMES
        eye = center + np.array([2.2 * np.cos(angle), 2.2 * np.sin(angle), 0.8])
        pose = look_at(eye, center)
        if frame == 4:
            # numerically degraded rotation: conversion must project it back
            pose[:3, :3] += rng.normal(scale=3e-4, size=(3, 3))
        np.savetxt(ROOT / "pose" / f"{frame}.txt", pose, fmt="%.8f")

        shade = 40 + frame * 20
        pixels = np.zeros((HEIGHT, WIDTH, 3), dtype=np.uint8)
        pixels[:, :, 0] = shade
        pixels[:, :, 1] = np.linspace(0, 255, WIDTH, dtype=np.uint8)[None, :]
        pixels[:, :, 2] = 255 - shade
        Image.fromarray(pixels).save(ROOT / "color" / f"{frame}.jpg", quality=90)

        depth_mm = np.full((HEIGHT, WIDTH), 2200 + 37 * frame, dtype=np.uint16)
        depth_mm[:4, :4] = 0  # invalid band
        Image.fromarray(depth_mm).save(ROOT / "depth" / f"{frame}.png")

    chair_box = [2.0, 1.4, 0.45, 0.5, 0.5, 0.9]
    chair_points = (
        np.array(chair_box[:3])
        + rng.uniform(-0.5, 0.5, size=(60, 3)) * np.array(chair_box[3:])
    )
    detections = {
        "detections": [
            {
                "label": "chair",
                "score": 0.92,
                "bbox": chair_box,
                "points": [[round(float(x), 4) for x in p] for p in chair_points],
            },
            {"label": "chair", "score": 0.84, "bbox": [2.4, 2.6, 0.45, 0.55, 0.5, 0.9]},
            {"label": 7, "score": 0.71, "bbox": [1.6, 2.2, 0.37, 1.2, 0.8, 0.74]},
            {"label": "table", "score": 0.30, "bbox": [3.2, 2.0, 0.37, 1.1, 0.7, 0.74]},
        ]
    }
    (ROOT / "detections.json").write_text(json.dumps(detections, indent=2) + "\n")
    print(f"fixture refreshed under {ROOT}")


if __name__ == "__main__":
    main()
