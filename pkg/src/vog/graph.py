"""Layered scene-graph construction from a scene bundle.

The graph has a view layer (representative posed frames chosen by K-Means
over camera positions), an object layer (all detections), and three typed
edge sets: object-object spatial relations from a radius point test,
view-object visibility from projection plus a depth test, and view-view
exploration edges classified by the IoU of visible-object sets.

A built graph is immutable; concurrent traversals share it read-only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    DegenerateInput,
    InvariantViolation,
    IoFailure,
    SchemaVersionMismatch,
)
from .geometry import (
    DepthBuffer,
    SpatialRelation,
    RELATIONS_BY_NAME,
    VisibilityReport,
    classify_relation,
    compute_visibility,
    synthesize_depth_buffer,
)
from .scene import (
    CameraView,
    SceneBundle,
    SceneObject,
    read_depth_image,
    view_from_manifest,
    view_to_manifest,
)

GRAPH_SCHEMA_VERSION = "1"


class EdgeKind:
    """View-view edge kinds: moderate vs. minimal visible-object overlap."""

    ADJACENT = "adjacent"
    COMPLEMENTARY = "complementary"


@dataclass(frozen=True)
class BuildParams:
    """All knobs of graph construction; defaults match the reference setup."""

    radius_r: float = 0.5  # meters; object pairs connect below this point distance
    tau_low: float = 0.2  # set-IoU below this => complementary view pair
    tau_high: float = 0.8  # set-IoU at or above this => no view-view edge
    view_count_m: int = 16  # representative views kept after clustering
    min_unoccluded_fraction: float = 0.30
    min_pixel_count: int = 20
    occlusion_tolerance: float = 0.10  # meters of slack in the depth test
    depth_divisor: int = 4  # synthesized depth buffer downscale factor
    kmeans_seed: int = 0

    def __post_init__(self):
        if not 0 <= self.tau_low < self.tau_high <= 1:
            raise ValueError("require 0 <= tau_low < tau_high <= 1")
        if not self.radius_r > 0:
            raise ValueError("require radius_r > 0")
        if self.view_count_m < 1:
            raise ValueError("require view_count_m >= 1")

    def to_dict(self) -> dict:
        return {
            "radius_r": float(self.radius_r),
            "tau_low": float(self.tau_low),
            "tau_high": float(self.tau_high),
            "view_count_m": int(self.view_count_m),
            "min_unoccluded_fraction": float(self.min_unoccluded_fraction),
            "min_pixel_count": int(self.min_pixel_count),
            "occlusion_tolerance": float(self.occlusion_tolerance),
            "depth_divisor": int(self.depth_divisor),
            "kmeans_seed": int(self.kmeans_seed),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BuildParams":
        return cls(**d)


OOEdge = Tuple[str, SpatialRelation, str]
VOEdge = Tuple[str, str, VisibilityReport]
VVEdge = Tuple[str, str, str]


@dataclass(eq=False)
class MMMG:
    """The layered scene graph: view nodes, object nodes, three edge sets."""

    scene_id: str
    views: List[CameraView]
    objects: List[SceneObject]
    edges_oo: List[OOEdge]
    edges_vo: List[VOEdge]
    edges_vv: List[VVEdge]
    params: BuildParams
    asset_root: Optional[Path] = None

    def __post_init__(self):
        self._view_by_id = {v.view_id: v for v in self.views}
        self._object_by_id = {o.object_id: o for o in self.objects}
        self._object_order = {o.object_id: i for i, o in enumerate(self.objects)}
        # setdefault keeps construction total even on dangling edge ids, so
        # validate() can name the broken invariant instead of a KeyError
        self._vv_adjacency: Dict[str, List[Tuple[str, str]]] = {
            v.view_id: [] for v in self.views
        }
        for a, b, kind in self.edges_vv:
            self._vv_adjacency.setdefault(a, []).append((b, kind))
            self._vv_adjacency.setdefault(b, []).append((a, kind))
        self._visible: Dict[str, List[str]] = {v.view_id: [] for v in self.views}
        self._seen_from: Dict[str, List[str]] = {o.object_id: [] for o in self.objects}
        self._vo_report: Dict[Tuple[str, str], VisibilityReport] = {}
        for view_id, object_id, report in self.edges_vo:
            self._visible.setdefault(view_id, []).append(object_id)
            self._seen_from.setdefault(object_id, []).append(view_id)
            self._vo_report[(view_id, object_id)] = report

    # --- lookups ------------------------------------------------------------

    def view(self, view_id: str) -> CameraView:
        return self._view_by_id[view_id]

    def object(self, object_id: str) -> SceneObject:
        return self._object_by_id[object_id]

    def has_object(self, object_id: str) -> bool:
        return object_id in self._object_by_id

    def object_order(self, object_id: str) -> int:
        return self._object_order[object_id]

    def class_of(self, object_id: str) -> str:
        return self._object_by_id[object_id].class_label

    def bbox_of(self, object_id: str) -> Tuple[float, ...]:
        return tuple(float(x) for x in self._object_by_id[object_id].bbox)

    def vv_neighbors(self, view_id: str) -> List[Tuple[str, str]]:
        return self._vv_adjacency[view_id]

    def visible_ids(self, view_id: str) -> List[str]:
        return self._visible[view_id]

    def views_seeing(self, object_id: str) -> List[str]:
        return self._seen_from[object_id]

    def visibility_report(self, view_id: str, object_id: str) -> Optional[VisibilityReport]:
        return self._vo_report.get((view_id, object_id))

    def class_labels(self) -> List[str]:
        return sorted({o.class_label for o in self.objects})

    def class_count(self, class_label: str) -> int:
        return sum(1 for o in self.objects if o.class_label == class_label)

    # --- invariants -----------------------------------------------------------

    def validate(self) -> None:
        view_ids = set(self._view_by_id)
        object_ids = set(self._object_by_id)
        if len(view_ids) != len(self.views):
            raise InvariantViolation("graph", "view ids unique")
        if len(object_ids) != len(self.objects):
            raise InvariantViolation("graph", "object ids unique")
        oo = set()
        for s, rel, o in self.edges_oo:
            if s == o:
                raise InvariantViolation("graph", "no self-edges in edges_oo")
            if s not in object_ids or o not in object_ids:
                raise InvariantViolation("graph", "edges_oo reference existing objects")
            oo.add((s, rel, o))
        for s, rel, o in oo:
            if (o, rel.inverse, s) not in oo:
                raise InvariantViolation("graph", "edges_oo closed under inversion")
        for v, o, _ in self.edges_vo:
            if v not in view_ids or o not in object_ids:
                raise InvariantViolation("graph", "edges_vo reference existing nodes")
        pairs = set()
        for a, b, kind in self.edges_vv:
            if a == b:
                raise InvariantViolation("graph", "no self-edges in edges_vv")
            if a not in view_ids or b not in view_ids:
                raise InvariantViolation("graph", "edges_vv reference existing views")
            key = frozenset((a, b))
            if key in pairs:
                raise InvariantViolation("graph", "each unordered view pair appears once")
            pairs.add(key)
            if kind not in (EdgeKind.ADJACENT, EdgeKind.COMPLEMENTARY):
                raise InvariantViolation("graph", "edges_vv kind is adjacent|complementary")


# --- view clustering ---------------------------------------------------------


def _kmeans_plus_plus(positions: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(positions)
    centers = np.empty((k, positions.shape[1]), dtype=np.float64)
    centers[0] = positions[int(rng.integers(n))]
    d2 = ((positions - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = float(d2.sum())
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers[j] = positions[idx]
        d2 = np.minimum(d2, ((positions - centers[j]) ** 2).sum(axis=1))
    return centers


def _lloyd(
    positions: np.ndarray,
    k: int,
    seed: int,
    max_iter: int = 100,
    tol: float = 1e-6,
) -> Tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    centers = _kmeans_plus_plus(positions, k, rng)
    for _ in range(max_iter):
        d2 = ((positions[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = d2.argmin(axis=1)
        new_centers = centers.copy()
        for j in range(k):
            members = positions[labels == j]
            if len(members):
                new_centers[j] = members.mean(axis=0)
        shift = float(np.abs(new_centers - centers).max())
        centers = new_centers
        if shift <= tol:
            break
    d2 = ((positions[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    return d2.argmin(axis=1), centers


def cluster_views(bundle: SceneBundle, m: int = 16, seed: int = 0) -> List[CameraView]:
    """Pick up to ``m`` representative views by K-Means over camera positions.

    Lloyd's algorithm with k-means++ seeding, at most 100 iterations and a
    1e-6 convergence tolerance. Each non-empty cluster contributes the view
    whose position is nearest the centroid (ties break on the lowest frame
    index). When the bundle has at most ``m`` views they are all returned.
    Output preserves bundle order.
    """
    views = list(bundle.views)
    if len(views) <= m:
        return views
    positions = np.asarray([v.position for v in views], dtype=np.float64)
    labels, centers = _lloyd(positions, m, seed)
    representatives: List[int] = []
    for j in range(m):
        members = np.flatnonzero(labels == j)
        if members.size == 0:
            continue
        best = min(
            members,
            key=lambda i: (float(((positions[i] - centers[j]) ** 2).sum()), views[i].frame_index),
        )
        representatives.append(int(best))
    representatives.sort()
    return [views[i] for i in representatives]


# --- edge builders -----------------------------------------------------------


def build_edges_oo(objects: Sequence[SceneObject], radius_r: float = 0.5) -> List[OOEdge]:
    """Connect object pairs with at least one point pair strictly closer than
    ``radius_r``; label both directions with the dominant-axis relation.

    A k-d tree accelerates the nearest-pair check; results equal the
    exhaustive pairwise test on the same point samples. Pairs at exactly
    ``radius_r`` are not connected.
    """
    edges: List[OOEdge] = []
    pts = [np.asarray(o.points, dtype=np.float64) for o in objects]
    lows = [p.min(axis=0) for p in pts]
    highs = [p.max(axis=0) for p in pts]
    trees: Dict[int, cKDTree] = {}
    for i in range(len(objects)):
        for j in range(i + 1, len(objects)):
            gap = np.maximum(0.0, np.maximum(lows[j] - highs[i], lows[i] - highs[j]))
            if float(np.sqrt((gap**2).sum())) >= radius_r:
                continue
            tree = trees.get(j)
            if tree is None:
                tree = trees[j] = cKDTree(pts[j])
            dmin = float(tree.query(pts[i], k=1)[0].min())
            if dmin < radius_r:
                try:
                    rel = classify_relation(objects[i].bbox, objects[j].bbox)
                except DegenerateInput:
                    continue  # coincident centers carry no direction
                edges.append((objects[i].object_id, rel, objects[j].object_id))
                edges.append((objects[j].object_id, rel.inverse, objects[i].object_id))
    return edges


def depth_buffer_for_view(
    view: CameraView,
    bundle: SceneBundle,
    objects: Sequence[SceneObject],
    params: BuildParams,
) -> DepthBuffer:
    """Stored depth image when the view has one, else a synthesized z-buffer."""
    if view.depth_ref:
        data = None
        if bundle.depth_images and view.view_id in bundle.depth_images:
            raw = bundle.depth_images[view.view_id]
            data = raw.astype(np.float64) / 1000.0
            data[raw == 0] = np.inf
        elif bundle.root is not None and (bundle.root / view.depth_ref).is_file():
            data = read_depth_image(bundle.root / view.depth_ref)
        if data is not None:
            return DepthBuffer(data=data, width=view.width, height=view.height, divisor=1)
    return synthesize_depth_buffer(view, objects, params.depth_divisor)


def build_edges_vo(
    views: Sequence[CameraView],
    objects: Sequence[SceneObject],
    bundle: SceneBundle,
    params: BuildParams,
) -> List[VOEdge]:
    """Visibility edges: keep (view, object) pairs passing both thresholds."""
    edges: List[VOEdge] = []
    for view in views:
        buffer = depth_buffer_for_view(view, bundle, objects, params)
        for obj in objects:
            report = compute_visibility(view, obj, buffer, params.occlusion_tolerance)
            if (
                report.unoccluded_fraction >= params.min_unoccluded_fraction
                and report.pixel_count >= params.min_pixel_count
            ):
                edges.append((view.view_id, obj.object_id, report))
    return edges


def set_iou(a: set, b: set) -> float:
    """IoU of two id sets; two empty sets count as fully overlapping."""
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def build_edges_vv(
    edges_vo: Sequence[VOEdge],
    tau_low: float,
    tau_high: float,
    view_ids: Optional[Sequence[str]] = None,
) -> List[VVEdge]:
    """Classify unordered view pairs by the IoU of their visible-object sets.

    IoU < tau_low => complementary; tau_low <= IoU < tau_high => adjacent;
    IoU >= tau_high => no edge (the views observe nearly the same region).
    ``view_ids`` should list every view (including ones that see nothing);
    it defaults to the views appearing in ``edges_vo``.
    """
    visible: Dict[str, set] = {}
    for view_id, object_id, _ in edges_vo:
        visible.setdefault(view_id, set()).add(object_id)
    if view_ids is None:
        view_ids = sorted(visible)
    edges: List[VVEdge] = []
    ids = list(view_ids)
    for i in range(len(ids)):
        for j in range(i + 1, len(ids)):
            iou = set_iou(visible.get(ids[i], set()), visible.get(ids[j], set()))
            if iou >= tau_high:
                continue
            kind = EdgeKind.ADJACENT if iou >= tau_low else EdgeKind.COMPLEMENTARY
            edges.append((ids[i], ids[j], kind))
    return edges


def build_graph(bundle: SceneBundle, params: Optional[BuildParams] = None) -> MMMG:
    """Compose the four builders; deterministic given (bundle, params)."""
    params = params or BuildParams()
    views = cluster_views(bundle, params.view_count_m, params.kmeans_seed)
    edges_oo = build_edges_oo(bundle.objects, params.radius_r)
    edges_vo = build_edges_vo(views, bundle.objects, bundle, params)
    edges_vv = build_edges_vv(
        edges_vo, params.tau_low, params.tau_high, view_ids=[v.view_id for v in views]
    )
    graph = MMMG(
        scene_id=bundle.scene_id,
        views=views,
        objects=list(bundle.objects),
        edges_oo=edges_oo,
        edges_vo=edges_vo,
        edges_vv=edges_vv,
        params=params,
        asset_root=bundle.root,
    )
    graph.validate()
    return graph


# --- serialization -----------------------------------------------------------


def graph_to_dict(graph: MMMG) -> dict:
    return {
        "schema_version": GRAPH_SCHEMA_VERSION,
        "scene_id": graph.scene_id,
        "params": graph.params.to_dict(),
        "views": [view_to_manifest(v) for v in graph.views],
        "objects": [
            {
                "id": o.object_id,
                "label": o.class_label,
                "bbox": [float(x) for x in o.bbox],
                "points_file": o.points_ref,
            }
            for o in graph.objects
        ],
        "edges_oo": [[s, rel.value, o] for s, rel, o in graph.edges_oo],
        "edges_vo": [report.to_dict() for _, _, report in graph.edges_vo],
        "edges_vv": [[a, b, kind] for a, b, kind in graph.edges_vv],
    }


def save_graph(graph: MMMG, path) -> None:
    """Lossless round-trip: nodes (including points), edges, and params."""
    path = Path(path)
    points_dir_name = f"{path.stem}_points"
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        points_dir = path.parent / points_dir_name
        points_dir.mkdir(parents=True, exist_ok=True)
        payload = graph_to_dict(graph)
        for entry, obj in zip(payload["objects"], graph.objects):
            entry["points_file"] = f"{points_dir_name}/{obj.object_id}.bin"
            np.asarray(obj.points, dtype="<f4").tofile(points_dir / f"{obj.object_id}.bin")
        path.write_text(json.dumps(payload, indent=2) + "\n")
    except OSError as exc:
        raise IoFailure(f"saving graph to {path}: {exc}") from exc


def load_graph(path) -> MMMG:
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except OSError as exc:
        raise IoFailure(f"loading graph from {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaVersionMismatch(f"{path}: not a graph file ({exc})") from exc
    version = payload.get("schema_version")
    if version != GRAPH_SCHEMA_VERSION:
        raise SchemaVersionMismatch(
            f"{path}: schema_version {version!r}, expected {GRAPH_SCHEMA_VERSION!r}"
        )
    views = [view_from_manifest(entry, f"views[{i}]") for i, entry in enumerate(payload["views"])]
    objects = []
    for entry in payload["objects"]:
        points_path = path.parent / entry["points_file"]
        points = np.fromfile(points_path, dtype="<f4").reshape(-1, 3)
        objects.append(
            SceneObject(
                object_id=entry["id"],
                class_label=entry["label"],
                bbox=np.asarray(entry["bbox"], dtype=np.float64),
                points=points,
                points_ref=entry["points_file"],
            )
        )
    edges_oo = [(s, RELATIONS_BY_NAME[r], o) for s, r, o in payload["edges_oo"]]
    edges_vo = []
    for entry in payload["edges_vo"]:
        report = VisibilityReport.from_dict(entry)
        edges_vo.append((report.view_id, report.object_id, report))
    edges_vv = [(a, b, kind) for a, b, kind in payload["edges_vv"]]
    graph = MMMG(
        scene_id=payload["scene_id"],
        views=views,
        objects=objects,
        edges_oo=edges_oo,
        edges_vo=edges_vo,
        edges_vv=edges_vv,
        params=BuildParams.from_dict(payload["params"]),
        asset_root=path.parent,
    )
    graph.validate()
    return graph
