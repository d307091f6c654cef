"""Synthetic room scenes with provable ground truth, plus the accuracy
metrics and the batch simulation used by the CLI.

Generated queries follow relation templates ("the <target> <relation> the
<anchor>") and carry a generation-time uniqueness proof: the emitted target
is the only object of its class satisfying the relation against any object
of the anchor class. That keeps correctness decidable without any vision
model in the loop.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from .agents import OracleAgent, ScriptedAgent
from .errors import MissingGroundTruth, PlacementFailure
from .geometry import SpatialRelation, classify_relation, iou_3d, project_points
from .graph import MMMG, BuildParams, build_graph
from .scene import CameraView, SceneBundle, SceneObject
from .traversal import GroundingTrace, RunConfig, run_grounding

# Nominal furniture footprints in meters (w, d, h); jittered per instance.
CLASS_SIZES = {
    "chair": (0.55, 0.55, 0.95),
    "table": (1.30, 0.80, 0.75),
    "sofa": (1.90, 0.85, 0.80),
    "lamp": (0.35, 0.35, 1.50),
    "desk": (1.20, 0.60, 0.75),
    "shelf": (0.90, 0.35, 1.80),
    "bed": (2.00, 1.60, 0.60),
}
DEFAULT_SIZE = (0.6, 0.6, 0.6)

RELATION_PHRASES = {
    SpatialRelation.LEFT: "left of",
    SpatialRelation.RIGHT: "right of",
    SpatialRelation.FRONT: "in front of",
    SpatialRelation.BEHIND: "behind",
    SpatialRelation.ABOVE: "above",
    SpatialRelation.BELOW: "below",
}


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for one deterministic synthetic scene family."""

    seed: int = 0
    room: Tuple[float, float, float] = (6.0, 6.0, 2.8)
    objects: Tuple[Tuple[str, int], ...] = (("chair", 3), ("table", 1), ("sofa", 1), ("lamp", 1))
    camera_count: int = 8
    camera_radius: float = 2.5
    camera_height: float = 1.45
    image_size: Tuple[int, int] = (160, 120)
    focal: float = 120.0
    points_per_object: int = 256
    spread_radius: float = 1.7  # object centers stay this close to room center
    max_queries: int = 8
    max_placement_attempts: int = 400

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "room": list(self.room),
            "objects": [[c, n] for c, n in self.objects],
            "camera_count": self.camera_count,
            "camera_radius": self.camera_radius,
            "camera_height": self.camera_height,
            "image_size": list(self.image_size),
            "focal": self.focal,
            "points_per_object": self.points_per_object,
            "spread_radius": self.spread_radius,
            "max_queries": self.max_queries,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        kwargs = dict(d)
        if "room" in kwargs:
            kwargs["room"] = tuple(kwargs["room"])
        if "objects" in kwargs:
            kwargs["objects"] = tuple((c, int(n)) for c, n in kwargs["objects"])
        if "image_size" in kwargs:
            kwargs["image_size"] = tuple(kwargs["image_size"])
        return cls(**kwargs)


# --- geometry helpers ----------------------------------------------------------


def camera_pose(eye: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Camera-to-world pose looking from eye toward target, world z up."""
    forward = np.asarray(target, float) - np.asarray(eye, float)
    forward = forward / np.linalg.norm(forward)
    up_world = np.array([0.0, 0.0, 1.0])
    right = np.cross(forward, up_world)
    norm = np.linalg.norm(right)
    if norm < 1e-9:  # looking straight up/down; pick an arbitrary right
        right = np.array([1.0, 0.0, 0.0])
    else:
        right = right / norm
    down = np.cross(forward, right)
    pose = np.eye(4)
    pose[:3, 0] = right
    pose[:3, 1] = down
    pose[:3, 2] = forward
    pose[:3, 3] = eye
    return pose


def sample_surface_points(rng: np.random.Generator, bbox: np.ndarray, n: int) -> np.ndarray:
    """Uniform-ish samples on the box surface, area-weighted per face pair."""
    center, size = bbox[:3], bbox[3:6]
    areas = np.array(
        [size[1] * size[2], size[0] * size[2], size[0] * size[1]], dtype=float
    )
    probs = np.repeat(areas, 2)
    probs = probs / probs.sum()
    faces = rng.choice(6, size=n, p=probs)
    u = rng.uniform(-0.5, 0.5, size=(n, 3))
    points = u * size
    for axis in range(3):
        minus, plus = faces == 2 * axis, faces == 2 * axis + 1
        points[minus, axis] = -size[axis] / 2
        points[plus, axis] = size[axis] / 2
    return (points + center).astype(np.float32)


def _class_color(label: str) -> Tuple[int, int, int]:
    digest = hashlib.md5(label.encode()).digest()
    return (80 + digest[0] % 160, 80 + digest[1] % 160, 80 + digest[2] % 160)


def render_view(view: CameraView, objects: Sequence[SceneObject]) -> Image.Image:
    """Cheap painter's rendering: z-buffered 2x2 point splats per object."""
    width, height = view.image_size
    canvas = np.full((height, width, 3), 235, dtype=np.uint8)
    zbuf = np.full((height, width), np.inf)
    for obj in objects:
        color = _class_color(obj.class_label)
        uv, z, valid = project_points(obj.points, view)
        px = np.floor(uv[valid, 0]).astype(int)
        py = np.floor(uv[valid, 1]).astype(int)
        for dx in (0, 1):
            for dy in (0, 1):
                qx = np.clip(px + dx, 0, width - 1)
                qy = np.clip(py + dy, 0, height - 1)
                closer = z[valid] < zbuf[qy, qx]
                zbuf[qy[closer], qx[closer]] = z[valid][closer]
                canvas[qy[closer], qx[closer]] = color
    return Image.fromarray(canvas)


# --- scene generation ------------------------------------------------------------


def _place_objects(spec: SyntheticSpec, rng: np.random.Generator) -> List[SceneObject]:
    room_w, room_d, _ = spec.room
    center = np.array([room_w / 2, room_d / 2])
    placed: List[SceneObject] = []
    boxes: List[np.ndarray] = []
    class_counters: Dict[str, int] = {}
    for class_label, count in spec.objects:
        base = np.array(CLASS_SIZES.get(class_label, DEFAULT_SIZE))
        for _ in range(count):
            ok = False
            for _attempt in range(spec.max_placement_attempts):
                size = base * rng.uniform(0.85, 1.15, size=3)
                xy = center + rng.uniform(-spec.spread_radius, spec.spread_radius, size=2)
                bbox = np.array([xy[0], xy[1], size[2] / 2, size[0], size[1], size[2]])
                lo = bbox[:3] - bbox[3:] / 2 - 0.05
                hi = bbox[:3] + bbox[3:] / 2 + 0.05
                if any(
                    bool(np.all(lo < b[:3] + b[3:] / 2) and np.all(hi > b[:3] - b[3:] / 2))
                    for b in boxes
                ):
                    continue
                index = class_counters.get(class_label, 0)
                class_counters[class_label] = index + 1
                placed.append(
                    SceneObject(
                        object_id=f"{class_label}_{index}",
                        class_label=class_label,
                        bbox=bbox,
                        points=sample_surface_points(rng, bbox, spec.points_per_object),
                    )
                )
                boxes.append(bbox)
                ok = True
                break
            if not ok:
                raise PlacementFailure(
                    f"could not place {class_label} after {spec.max_placement_attempts} attempts"
                )
    return placed


def _ring_views(spec: SyntheticSpec, rng: np.random.Generator) -> List[CameraView]:
    room_w, room_d, _ = spec.room
    center = np.array([room_w / 2, room_d / 2, 0.75])
    width, height = spec.image_size
    views = []
    for i in range(spec.camera_count):
        angle = 2 * np.pi * i / spec.camera_count + rng.uniform(-0.12, 0.12)
        radius = spec.camera_radius * rng.uniform(0.92, 1.08)
        eye = np.array(
            [
                room_w / 2 + radius * np.cos(angle),
                room_d / 2 + radius * np.sin(angle),
                spec.camera_height,
            ]
        )
        views.append(
            CameraView(
                view_id=f"view_{i}",
                frame_index=i,
                intrinsics=(spec.focal, spec.focal, width / 2, height / 2),
                extrinsics=camera_pose(eye, center),
                image_ref=f"images/view_{i}.png",
                image_size=(width, height),
            )
        )
    return views


def _enumerate_queries(
    objects: Sequence[SceneObject], max_queries: int
) -> List[Tuple[str, str]]:
    """All relation queries with exactly one satisfying object, by exhaustive
    check over every (target-class instance, relation, anchor-class) combo."""
    queries: List[Tuple[str, str]] = []
    classes = sorted({o.class_label for o in objects})
    for target in objects:
        for relation in SpatialRelation:
            for anchor_class in classes:
                if anchor_class == target.class_label:
                    continue
                satisfiers = [
                    candidate.object_id
                    for candidate in objects
                    if candidate.class_label == target.class_label
                    and any(
                        classify_relation(anchor.bbox, candidate.bbox) == relation
                        for anchor in objects
                        if anchor.class_label == anchor_class
                    )
                ]
                if satisfiers == [target.object_id]:
                    text = (
                        f"the {target.class_label.replace('_', ' ')} "
                        f"{RELATION_PHRASES[relation]} "
                        f"the {anchor_class.replace('_', ' ')}"
                    )
                    queries.append((text, target.object_id))
    return queries[:max_queries]


def generate_scene(spec: SyntheticSpec) -> Tuple[SceneBundle, List[Tuple[str, str]]]:
    """Deterministic synthetic scene plus (query_text, ground_truth_id) pairs."""
    rng = np.random.default_rng(spec.seed)
    objects = _place_objects(spec, rng)
    views = _ring_views(spec, rng)
    bundle = SceneBundle(
        scene_id=f"room_{spec.seed:05d}",
        views=views,
        objects=objects,
        images={v.view_id: render_view(v, objects) for v in views},
    )
    bundle.validate(check_assets=False)
    return bundle, _enumerate_queries(objects, spec.max_queries)


# --- evaluation --------------------------------------------------------------------


@dataclass
class EvalRecord:
    query_id: str
    predicted_object_id: Optional[str]
    iou: float
    hit_at_25: bool
    hit_at_50: bool
    subset: str  # "unique" | "multiple"
    agent_call_count: int
    selected_correct: bool
    termination_reason: str

    def __post_init__(self):
        if self.hit_at_50 and not self.hit_at_25:
            raise ValueError("hit@0.5 implies hit@0.25")

    def to_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "predicted_object_id": self.predicted_object_id,
            "iou": self.iou,
            "hit_at_25": self.hit_at_25,
            "hit_at_50": self.hit_at_50,
            "subset": self.subset,
            "agent_call_count": self.agent_call_count,
            "selected_correct": self.selected_correct,
            "termination_reason": self.termination_reason,
        }


@dataclass
class EvalSummary:
    records: List[EvalRecord]

    def _rows(self) -> List[Tuple[str, List[EvalRecord]]]:
        unique = [r for r in self.records if r.subset == "unique"]
        multiple = [r for r in self.records if r.subset == "multiple"]
        return [("unique", unique), ("multiple", multiple), ("overall", self.records)]

    def to_dict(self) -> dict:
        out = {}
        for name, rows in self._rows():
            if not rows:
                out[name] = {"n": 0}
                continue
            out[name] = {
                "n": len(rows),
                "acc_at_25": 100.0 * sum(r.hit_at_25 for r in rows) / len(rows),
                "acc_at_50": 100.0 * sum(r.hit_at_50 for r in rows) / len(rows),
                "selection_acc": 100.0 * sum(r.selected_correct for r in rows) / len(rows),
                "mean_agent_calls": sum(r.agent_call_count for r in rows) / len(rows),
            }
        return out

    def table(self) -> str:
        header = f"{'subset':<10} {'n':>5}  {'acc@0.25':>8}  {'acc@0.5':>8}  {'sel-acc':>8}  {'calls':>6}"
        lines = [header, "-" * len(header)]
        for name, stats in self.to_dict().items():
            if stats["n"] == 0:
                lines.append(f"{name:<10} {0:>5}  {'-':>8}  {'-':>8}  {'-':>8}  {'-':>6}")
                continue
            lines.append(
                f"{name:<10} {stats['n']:>5}  {stats['acc_at_25']:>8.1f}  "
                f"{stats['acc_at_50']:>8.1f}  {stats['selection_acc']:>8.1f}  "
                f"{stats['mean_agent_calls']:>6.2f}"
            )
        return "\n".join(lines)


def evaluate(
    traces: Sequence[GroundingTrace],
    ground_truth: Dict[str, dict],
    scenes: Optional[Dict[str, MMMG]] = None,
) -> EvalSummary:
    """Score traces against ground truth boxes.

    A query counts as "unique" when its scene holds exactly one object of the
    target class (taken from the trace metadata, or recomputed from the
    optional graph context). Failed runs score zero IoU at both thresholds.
    """
    records = []
    for trace in traces:
        entry = ground_truth.get(trace.query_id)
        if entry is None:
            raise MissingGroundTruth(trace.query_id)
        gt_box = np.asarray(entry["bbox"], dtype=np.float64)
        count = trace.target_class_count
        if scenes and trace.scene_id in scenes:
            count = scenes[trace.scene_id].class_count(trace.parsed["target"])
        if trace.final_object_id is not None and trace.final_bbox is not None:
            iou = iou_3d(trace.final_bbox, gt_box)
        else:
            iou = 0.0
        records.append(
            EvalRecord(
                query_id=trace.query_id,
                predicted_object_id=trace.final_object_id,
                iou=iou,
                hit_at_25=iou > 0.25,
                hit_at_50=iou > 0.5,
                subset="unique" if count == 1 else "multiple",
                agent_call_count=trace.agent_call_count,
                selected_correct=trace.final_object_id == entry["object_id"],
                termination_reason=trace.termination_reason,
            )
        )
    return EvalSummary(records)


def trace_from_dict(payload: dict) -> GroundingTrace:
    """Rehydrate the fields evaluation and replay need from a trace file."""
    from .traversal import PathTriple, RoundRecord

    rounds = [
        RoundRecord(
            round_index=r["round_index"],
            forced_global=r["forced_global"],
            menu=r["menu"],
            grid=r.get("grid"),
            system_prompt=r["system_prompt"],
            user_prompt=r["user_prompt"],
            replies=list(r["replies"]),
            action=r["action"],
            pool_after=list(r["pool_after"]),
        )
        for r in payload["rounds"]
    ]
    return GroundingTrace(
        scene_id=payload["scene_id"],
        query_id=payload["query_id"],
        query_text=payload["query"],
        parsed=payload["parsed"],
        seed=payload["seed"],
        d_max=payload["d_max"],
        grid_size=payload["grid_size"],
        start_view=payload["start_view"],
        target_class_count=payload["target_class_count"],
        rounds=rounds,
        path=[PathTriple(*t) for t in payload["path"]],
        final_object_id=payload["final_object_id"],
        final_bbox=tuple(payload["final_bbox"]) if payload["final_bbox"] else None,
        agent_call_count=payload["agent_call_count"],
        termination_reason=payload["termination_reason"],
    )


# --- batch simulation ----------------------------------------------------------------


@dataclass
class SimulationResult:
    traces: List[GroundingTrace]
    ground_truth: Dict[str, dict]
    graphs: Dict[str, MMMG]


def simulate(
    spec: SyntheticSpec,
    scene_count: int = 10,
    d_max: int = 4,
    base_seed: int = 0,
    workers: int = 4,
    build_params: Optional[BuildParams] = None,
) -> SimulationResult:
    """Generate scenes, build graphs, and ground every query with the oracle
    agent. Queries fan out across a worker pool; each worker owns its run
    state and shares the immutable graph."""
    traces: List[GroundingTrace] = []
    ground_truth: Dict[str, dict] = {}
    graphs: Dict[str, MMMG] = {}
    jobs = []
    for i in range(scene_count):
        scene_spec = replace(spec, seed=spec.seed + i)
        bundle, queries = generate_scene(scene_spec)
        graph = build_graph(bundle, build_params or BuildParams())
        graphs[bundle.scene_id] = graph
        for q_index, (text, gt_id) in enumerate(queries):
            query_id = f"{bundle.scene_id}_q{q_index}"
            ground_truth[query_id] = {
                "object_id": gt_id,
                "bbox": [float(x) for x in graph.object(gt_id).bbox],
                "scene_id": bundle.scene_id,
            }
            jobs.append((graph, text, gt_id, query_id, base_seed + q_index))

    def run_one(job):
        graph, text, gt_id, query_id, seed = job
        agent = OracleAgent(gt_id, graph)
        config = RunConfig(
            d_max=d_max, seed=seed, scene_id=graph.scene_id, query_id=query_id
        )
        return run_grounding(graph, text, agent, config)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            traces = list(pool.map(run_one, jobs))
    else:
        traces = [run_one(job) for job in jobs]
    return SimulationResult(traces=traces, ground_truth=ground_truth, graphs=graphs)


def replay_trace(graph: MMMG, trace: GroundingTrace) -> GroundingTrace:
    """Re-run a trace's action script through a scripted agent."""
    agent = ScriptedAgent(trace.action_script())
    config = RunConfig(
        d_max=trace.d_max,
        seed=trace.seed,
        grid_size=trace.grid_size,
        scene_id=trace.scene_id,
        query_id=trace.query_id,
    )
    return run_grounding(graph, trace.query_text, agent, config)
