"""View-on-graph grounding engine.

Builds a layered scene graph (view nodes, object nodes, three typed edge
sets) from posed RGB views plus 3D instance detections, then grounds
natural-language queries by traversing the graph with a pluggable decision
agent under a bounded call budget.
"""

from .errors import VogError
from .geometry import (
    DepthBuffer,
    SpatialRelation,
    VisibilityReport,
    classify_relation,
    compute_visibility,
    iou_3d,
    project_point,
    synthesize_depth_buffer,
    unproject_pixel,
)
from .graph import (
    MMMG,
    BuildParams,
    EdgeKind,
    build_edges_oo,
    build_edges_vo,
    build_edges_vv,
    build_graph,
    cluster_views,
    load_graph,
    save_graph,
)
from .menu import ActionKind, CandidateMenu, MenuAction, ParsedQuery
from .scene import (
    CameraView,
    SceneBundle,
    SceneObject,
    load_bundle,
    normalize_label,
    parse_object_id,
    save_bundle,
)
from .traversal import (
    GroundingTrace,
    RunConfig,
    TerminationReason,
    TraversalState,
    apply_action,
    expand_candidates,
    parse_query,
    run_grounding,
    select_start_view,
)

__all__ = [
    "VogError",
    "DepthBuffer",
    "SpatialRelation",
    "VisibilityReport",
    "classify_relation",
    "compute_visibility",
    "iou_3d",
    "project_point",
    "synthesize_depth_buffer",
    "unproject_pixel",
    "MMMG",
    "BuildParams",
    "EdgeKind",
    "build_edges_oo",
    "build_edges_vo",
    "build_edges_vv",
    "build_graph",
    "cluster_views",
    "load_graph",
    "save_graph",
    "ActionKind",
    "CandidateMenu",
    "MenuAction",
    "ParsedQuery",
    "CameraView",
    "SceneBundle",
    "SceneObject",
    "load_bundle",
    "normalize_label",
    "parse_object_id",
    "save_bundle",
    "GroundingTrace",
    "RunConfig",
    "TerminationReason",
    "TraversalState",
    "apply_action",
    "expand_candidates",
    "parse_query",
    "run_grounding",
    "select_start_view",
]

__version__ = "0.1.0"
