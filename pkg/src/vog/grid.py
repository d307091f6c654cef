"""S x S stitched grid images fed to the decision agent each round.

History cells (previously visited frames, ending with the current one) fill
slots in row-major order from the top left; candidate frames follow; any
remaining slots stay pure white. Each filled cell carries a banner naming
its frame index so the agent can reference "frame k".
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Protocol, Sequence, Tuple

from PIL import Image, ImageDraw

from .errors import CapacityExceeded, DecodeFailure

BANNER_HEIGHT = 24
WHITE = (255, 255, 255)
DEFAULT_CELL_SIZE = (336, 252)


class CellKind:
    HISTORY = "history"
    CANDIDATE = "candidate"
    BLANK = "blank"


@dataclass(frozen=True)
class CellAssignment:
    row: int
    col: int
    kind: str
    view_id: Optional[str] = None

    def to_dict(self) -> dict:
        d = {"row": self.row, "col": self.col, "kind": self.kind}
        if self.view_id is not None:
            d["view_id"] = self.view_id
        return d


@dataclass
class GridManifest:
    """Layout record embedded in traces: which view landed in which slot."""

    grid_size_s: int
    cells: List[CellAssignment]
    cell_pixel_size: Tuple[int, int]
    image_ref: Optional[str] = None
    evicted: Tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "grid_size_s": self.grid_size_s,
            "cells": [c.to_dict() for c in self.cells],
            "cell_pixel_size": list(self.cell_pixel_size),
            "image_ref": self.image_ref,
            "evicted": list(self.evicted),
        }


class ImageSource(Protocol):
    """Provides decodable frames and frame indices for view ids."""

    def load(self, view_id: str) -> Image.Image: ...

    def frame_index(self, view_id: str) -> int: ...


class ViewImageSource:
    """Image source backed by a graph's (or bundle's) view list and asset root."""

    def __init__(self, views, root: Optional[Path] = None, images: Optional[Dict] = None):
        self._views = {v.view_id: v for v in views}
        self._root = Path(root) if root is not None else None
        self._images = images or {}

    def frame_index(self, view_id: str) -> int:
        return self._views[view_id].frame_index

    def load(self, view_id: str) -> Image.Image:
        if view_id in self._images:
            return self._images[view_id].convert("RGB")
        view = self._views[view_id]
        if self._root is None:
            raise DecodeFailure(f"no asset root to resolve image for {view_id}")
        path = self._root / view.image_ref
        try:
            with Image.open(path) as im:
                return im.convert("RGB")
        except Exception as exc:
            raise DecodeFailure(f"{path}: {exc}") from exc


def history_eviction(history: Sequence[str], candidates_needed: int, s: int) -> List[str]:
    """Trim history so it fits the grid next to the candidates.

    Keeps the start view (it anchors the query's initial context) plus the
    most recent entries filling the remaining slots.
    """
    slots = s * s
    if candidates_needed > slots - 1:
        raise CapacityExceeded(
            f"{candidates_needed} candidates cannot fit a {s}x{s} grid"
        )
    keep = slots - candidates_needed
    history = list(history)
    if len(history) <= keep:
        return history
    return [history[0]] + history[len(history) - (keep - 1):]


def layout_grid(
    history_views: Sequence[str], candidate_views: Sequence[str], s: int
) -> List[CellAssignment]:
    """Pure slot assignment: history row-major from top-left, candidates next."""
    total = len(history_views) + len(candidate_views)
    if total > s * s:
        raise CapacityExceeded(f"{total} cells requested for a {s}x{s} grid")
    cells: List[CellAssignment] = []
    entries = [(CellKind.HISTORY, v) for v in history_views] + [
        (CellKind.CANDIDATE, v) for v in candidate_views
    ]
    for slot in range(s * s):
        row, col = divmod(slot, s)
        if slot < len(entries):
            kind, view_id = entries[slot]
            cells.append(CellAssignment(row, col, kind, view_id))
        else:
            cells.append(CellAssignment(row, col, CellKind.BLANK))
    return cells


def _letterbox(image: Image.Image, box_w: int, box_h: int) -> Tuple[Image.Image, int, int]:
    iw, ih = image.size
    scale = min(box_w / iw, box_h / ih)
    nw = max(1, int(iw * scale))
    nh = max(1, int(ih * scale))
    resized = image.resize((nw, nh), Image.BILINEAR)
    return resized, (box_w - nw) // 2, (box_h - nh) // 2


def compose_grid(
    history_views: Sequence[str],
    candidate_views: Sequence[str],
    images: ImageSource,
    s: int = 3,
    cell_size: Tuple[int, int] = DEFAULT_CELL_SIZE,
    evicted: Sequence[str] = (),
) -> Tuple[Image.Image, GridManifest]:
    """Render the grid image; output is exactly (s*w, s*h) pixels.

    Every filled cell gets a banner strip with its frame index and the view
    image letterboxed (aspect preserved) below it; blank cells are pure white.
    """
    cell_w, cell_h = cell_size
    if cell_h <= BANNER_HEIGHT + 4 or cell_w < 16:
        raise ValueError(f"cell size {cell_size} too small for a banner plus image")
    cells = layout_grid(history_views, candidate_views, s)
    canvas = Image.new("RGB", (s * cell_w, s * cell_h), WHITE)
    draw = ImageDraw.Draw(canvas)
    for cell in cells:
        if cell.kind == CellKind.BLANK:
            continue
        x0 = cell.col * cell_w
        y0 = cell.row * cell_h
        frame = images.frame_index(cell.view_id)
        draw.text((x0 + 4, y0 + 6), f"frame {frame}", fill=(0, 0, 0))
        image = images.load(cell.view_id)
        fitted, dx, dy = _letterbox(image, cell_w, cell_h - BANNER_HEIGHT)
        canvas.paste(fitted, (x0 + dx, y0 + BANNER_HEIGHT + dy))
    manifest = GridManifest(
        grid_size_s=s,
        cells=cells,
        cell_pixel_size=(cell_w, cell_h),
        evicted=tuple(evicted),
    )
    return canvas, manifest
