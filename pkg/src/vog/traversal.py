"""The bounded view-on-graph traversal loop.

One grounding run: parse the query (first agent call), pick a seeded start
view among those seeing the target class, then alternate candidate
expansion and agent decisions until an object is selected, the depth limit
is hit, or the frontier runs dry. The two latter cases end with a single
forced global round over the accumulated object pool. Total agent calls
never exceed d_max + 2.

Runs are strictly sequential (each round depends on the agent's reply);
multiple runs over the same immutable graph may execute concurrently.
"""

from __future__ import annotations

import io
import json
import random
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .agents import (
    AgentRequest,
    DecisionAgent,
    PromptTemplates,
    parse_action,
    render_prompt,
)
from .errors import (
    AgentTimeout,
    ExhaustedFrontier,
    HttpStatusError,
    IoFailure,
    MalformedReply,
    NoTargetFound,
    OutOfRange,
    ScriptExhausted,
    SchemaVersionMismatch,
    TransportError,
    UnknownAction,
)
from .graph import MMMG, EdgeKind
from .grid import DEFAULT_CELL_SIZE, ViewImageSource, compose_grid, history_eviction
from .menu import ActionKind, CandidateMenu, MenuAction, ParsedQuery
from .scene import normalize_label

TRACE_SCHEMA_VERSION = "trace/1"


class TerminationReason:
    SELECTED = "selected"
    FORCED_GLOBAL = "forced_global"
    AGENT_FAILURE = "agent_failure"


@dataclass(frozen=True)
class PathTriple:
    """(subject, relation, object) step of the reasoning chain."""

    subject_id: str
    relation: str
    object_id: str


@dataclass
class TraversalState:
    """Mutable per-run state; never shared between runs."""

    query: ParsedQuery
    current_node: str
    visited: set
    object_pool: Dict[str, Tuple[float, ...]]  # insertion-ordered id -> bbox
    path: List[PathTriple] = field(default_factory=list)
    depth: int = 0
    rng_seed: int = 0
    last_menu: Optional[CandidateMenu] = None
    selected_object_id: Optional[str] = None


@dataclass
class RoundRecord:
    round_index: int
    forced_global: bool
    menu: dict
    grid: Optional[dict]
    system_prompt: str
    user_prompt: str
    replies: List[str]
    action: Optional[int]
    pool_after: List[str]
    elapsed_ms: float = 0.0

    def to_dict(self, include_timing: bool = False) -> dict:
        d = {
            "round_index": self.round_index,
            "forced_global": self.forced_global,
            "menu": self.menu,
            "grid": self.grid,
            "system_prompt": self.system_prompt,
            "user_prompt": self.user_prompt,
            "replies": list(self.replies),
            "action": self.action,
            "pool_after": list(self.pool_after),
        }
        if include_timing:
            d["elapsed_ms"] = self.elapsed_ms
        return d


@dataclass
class GroundingTrace:
    """Full auditable record of one run.

    The canonical serialization omits wall-clock timings so identical
    (graph, query, seed, scripted agent) runs produce byte-identical files.
    """

    scene_id: str
    query_id: str
    query_text: str
    parsed: dict
    seed: int
    d_max: int
    grid_size: int
    start_view: str
    target_class_count: int
    rounds: List[RoundRecord]
    path: List[PathTriple]
    final_object_id: Optional[str]
    final_bbox: Optional[Tuple[float, ...]]
    agent_call_count: int
    termination_reason: str

    def to_dict(self, include_timing: bool = False) -> dict:
        return {
            "schema_version": TRACE_SCHEMA_VERSION,
            "scene_id": self.scene_id,
            "query_id": self.query_id,
            "query": self.query_text,
            "parsed": self.parsed,
            "seed": self.seed,
            "d_max": self.d_max,
            "grid_size": self.grid_size,
            "start_view": self.start_view,
            "target_class_count": self.target_class_count,
            "rounds": [r.to_dict(include_timing) for r in self.rounds],
            "path": [[t.subject_id, t.relation, t.object_id] for t in self.path],
            "final_object_id": self.final_object_id,
            "final_bbox": list(self.final_bbox) if self.final_bbox is not None else None,
            "agent_call_count": self.agent_call_count,
            "termination_reason": self.termination_reason,
        }

    def action_script(self) -> List[int]:
        """Actions in order, usable to replay the run with a scripted agent."""
        return [r.action for r in self.rounds if r.action is not None]

    def save(self, path, include_timing: bool = False) -> None:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(json.dumps(self.to_dict(include_timing), indent=2) + "\n")
        except OSError as exc:
            raise IoFailure(f"saving trace to {path}: {exc}") from exc


def load_trace_dict(path) -> dict:
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except OSError as exc:
        raise IoFailure(f"loading trace from {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaVersionMismatch(f"{path}: not a trace file ({exc})") from exc
    if payload.get("schema_version") != TRACE_SCHEMA_VERSION:
        raise SchemaVersionMismatch(
            f"{path}: schema_version {payload.get('schema_version')!r}"
        )
    return payload


@dataclass
class RunConfig:
    d_max: int = 4
    seed: int = 0
    grid_size: int = 3
    cell_size: Tuple[int, int] = DEFAULT_CELL_SIZE
    retry_budget: int = 2  # re-prompts on malformed output, not transport retries
    render_grids: Optional[bool] = None  # None => follow agent.wants_images
    grid_dir: Optional[Path] = None
    pool_menu_cap: Optional[int] = None  # most-recent cap on pool entries in menus
    agent_timeout: float = 60.0
    scene_id: Optional[str] = None
    query_id: str = "query"
    prompt_templates: Optional["PromptTemplates"] = None


# --- query parsing -------------------------------------------------------------


def _lexicon_parse(raw: str, vocabulary: Sequence[str]) -> Optional[ParsedQuery]:
    text = raw.lower()
    hits = []
    for label in sorted({normalize_label(v) for v in vocabulary}):
        position = text.find(label.replace("_", " "))
        if position >= 0:
            hits.append((position, label))
    if not hits:
        return None
    hits.sort()
    target = hits[0][1]
    anchors = tuple(label for _, label in hits[1:] if label != target)
    return ParsedQuery(raw_text=raw, target_class=target, anchor_classes=anchors)


def parse_query(
    raw: str, class_vocabulary: Sequence[str], agent: Optional[DecisionAgent] = None
) -> ParsedQuery:
    """Extract target and anchor classes from the query.

    With an agent, it is prompted once for the extraction; when it abstains
    (or no agent is given) a lexicon fallback applies: the first vocabulary
    label appearing in the lowercased query is the target, all later
    distinct labels are anchors.
    """
    if not raw or not raw.strip():
        raise NoTargetFound("empty query")
    vocabulary = sorted({normalize_label(v) for v in class_vocabulary})
    if agent is not None:
        extracted = agent.extract_query(raw, vocabulary)
        if extracted is not None:
            target, anchors = extracted
            target = normalize_label(target)
            if target in set(vocabulary):
                cleaned = tuple(
                    a for a in (normalize_label(x) for x in anchors) if a != target
                )
                return ParsedQuery(raw_text=raw, target_class=target, anchor_classes=cleaned)
    parsed = _lexicon_parse(raw, vocabulary)
    if parsed is None:
        raise NoTargetFound(f"no vocabulary label found in query: {raw!r}")
    return parsed


def select_start_view(graph: MMMG, query: ParsedQuery, seed: int) -> str:
    """Seeded uniform choice among views seeing the target class; when none
    does, uniform over all views."""
    candidates = [
        v.view_id
        for v in graph.views
        if any(graph.class_of(o) == query.target_class for o in graph.visible_ids(v.view_id))
    ]
    if not candidates:
        candidates = [v.view_id for v in graph.views]
    rng = random.Random(seed)
    return candidates[rng.randrange(len(candidates))]


# --- candidate expansion ---------------------------------------------------------


def expand_candidates(
    graph: MMMG,
    state: TraversalState,
    query: ParsedQuery,
    max_switches: int = 8,
    pool_menu_cap: Optional[int] = None,
) -> CandidateMenu:
    """Build the numbered action menu for the current view.

    Switch actions: unvisited view-layer neighbors seeing at least one object
    of the target or an anchor class, complementary edges ranked before
    adjacent ones (faster coverage), ties by view id, capped at
    ``max_switches``. Select actions: visible objects of the target class,
    then the accumulated pool, deduplicated. Relation facts cover object
    pairs visible together in the current view.

    Raises ExhaustedFrontier when no action remains.
    """
    current = state.current_node
    wanted = {query.target_class, *query.anchor_classes}

    switches = []
    for neighbor, kind in graph.vv_neighbors(current):
        if neighbor in state.visited:
            continue
        seen = {graph.class_of(o) for o in graph.visible_ids(neighbor)}
        if seen & wanted:
            switches.append((neighbor, kind))
    switches.sort(key=lambda t: (0 if t[1] == EdgeKind.COMPLEMENTARY else 1, t[0]))
    switches = switches[:max_switches]

    selects: List[Tuple[str, Tuple[float, ...]]] = []
    listed = set()
    for object_id in sorted(graph.visible_ids(current)):
        if graph.class_of(object_id) == query.target_class and object_id not in listed:
            selects.append((object_id, graph.bbox_of(object_id)))
            listed.add(object_id)
    pool_items = list(state.object_pool.items())
    if pool_menu_cap is not None and len(pool_items) > pool_menu_cap:
        pool_items = pool_items[-pool_menu_cap:]  # keep most recent
    for object_id, bbox in pool_items:
        if object_id not in listed:
            selects.append((object_id, bbox))
            listed.add(object_id)

    if not switches and not selects:
        raise ExhaustedFrontier(f"no candidates left at {current}")

    actions: List[MenuAction] = []
    for neighbor, kind in switches:
        actions.append(
            MenuAction(
                index=len(actions) + 1,
                kind=ActionKind.SWITCH_VIEW,
                view_id=neighbor,
                frame_index=graph.view(neighbor).frame_index,
                edge_kind=kind,
            )
        )
    for object_id, bbox in selects:
        actions.append(
            MenuAction(
                index=len(actions) + 1,
                kind=ActionKind.SELECT_OBJECT,
                object_id=object_id,
                bbox=tuple(bbox),
            )
        )

    visible_here = set(graph.visible_ids(current))
    facts = []
    for subject, relation, obj in graph.edges_oo:
        if subject in visible_here and obj in visible_here:
            if graph.object_order(subject) < graph.object_order(obj):
                facts.append(f"{subject}-{relation.value}-{obj}")
    return CandidateMenu(actions=actions, relation_facts=facts)


def apply_action(state: TraversalState, action: int, graph: MMMG) -> TraversalState:
    """Apply a parsed action index against the last menu.

    Switching appends a chained path triple, marks the new view visited,
    merges the round's offered object candidates into the pool, and
    increments the depth. Selecting records the final object and terminates.
    """
    menu = state.last_menu
    resolved = menu.lookup(action) if menu is not None else None
    if resolved is None:
        raise UnknownAction(f"action {action} was not in the last menu")
    if resolved.kind == ActionKind.SELECT_OBJECT:
        state.selected_object_id = resolved.object_id
        return state
    for offered in menu.select_actions():
        state.object_pool.setdefault(offered.object_id, offered.bbox)
    state.path.append(
        PathTriple(
            subject_id=state.current_node,
            relation=resolved.edge_kind or EdgeKind.ADJACENT,
            object_id=resolved.view_id,
        )
    )
    state.visited.add(resolved.view_id)
    state.current_node = resolved.view_id
    state.depth += 1
    return state


# --- the run loop -----------------------------------------------------------------


_TRANSPORT_FAILURES = (TransportError, HttpStatusError, AgentTimeout, ScriptExhausted)


def run_grounding(
    graph: MMMG,
    query_text: str,
    agent: DecisionAgent,
    config: Optional[RunConfig] = None,
) -> GroundingTrace:
    """Run one query against the graph with the given decision agent."""
    cfg = config or RunConfig()
    render = cfg.render_grids if cfg.render_grids is not None else agent.wants_images
    scene_id = cfg.scene_id or graph.scene_id
    image_source = ViewImageSource(graph.views, graph.asset_root) if render else None

    call_count = 0
    parsed = parse_query(query_text, graph.class_labels(), agent)
    call_count += 1  # the extraction prompt is the first budgeted call

    start_view = select_start_view(graph, parsed, cfg.seed)
    state = TraversalState(
        query=parsed,
        current_node=start_view,
        visited={start_view},
        object_pool={},
        rng_seed=cfg.seed,
    )
    history = [start_view]
    rounds: List[RoundRecord] = []
    final_object: Optional[str] = None
    final_bbox: Optional[Tuple[float, ...]] = None
    termination: Optional[str] = None

    def ask(menu: CandidateMenu, round_index: int, forced: bool) -> Optional[int]:
        """One budgeted agent call plus up to retry_budget re-prompts."""
        nonlocal call_count
        started = time.perf_counter()
        candidates = [a.view_id for a in menu.switch_actions()]
        kept = history_eviction(history, len(candidates), cfg.grid_size)
        evicted = [h for h in history if h not in kept]
        grid_manifest = None
        grid_bytes = None
        if render and image_source is not None:
            image, manifest = compose_grid(
                kept, candidates, image_source, cfg.grid_size, cfg.cell_size, evicted
            )
            if cfg.grid_dir is not None:
                ref = f"{cfg.query_id}_round{round_index}.png"
                Path(cfg.grid_dir).mkdir(parents=True, exist_ok=True)
                image.save(Path(cfg.grid_dir) / ref)
                manifest.image_ref = ref
            buffer = io.BytesIO()
            image.save(buffer, format="PNG")
            grid_bytes = buffer.getvalue()
            grid_manifest = manifest.to_dict()
        else:
            from .grid import GridManifest, layout_grid  # manifest-only path

            cells = layout_grid(kept, candidates, cfg.grid_size)
            grid_manifest = GridManifest(
                grid_size_s=cfg.grid_size,
                cells=cells,
                cell_pixel_size=cfg.cell_size,
                evicted=tuple(evicted),
            ).to_dict()

        system_prompt, user_prompt = render_prompt(
            menu, query_text, round_index, cfg.d_max, cfg.prompt_templates
        )
        request = AgentRequest(
            system_prompt=system_prompt,
            user_prompt=user_prompt,
            grid_image=grid_bytes,
            round_index=round_index,
            timeout=cfg.agent_timeout,
            menu=menu,
        )
        replies: List[str] = []
        action: Optional[int] = None
        for attempt in range(cfg.retry_budget + 1):
            try:
                reply = agent.decide(request)
            except _TRANSPORT_FAILURES:
                break
            if attempt == 0:
                call_count += 1
            replies.append(reply.raw_text)
            try:
                action = parse_action(reply.raw_text, menu)
                break
            except (MalformedReply, OutOfRange):
                continue
        rounds.append(
            RoundRecord(
                round_index=round_index,
                forced_global=forced,
                menu=menu.to_dict(),
                grid=grid_manifest,
                system_prompt=system_prompt,
                user_prompt=user_prompt,
                replies=replies,
                action=action,
                pool_after=list(state.object_pool),
                elapsed_ms=(time.perf_counter() - started) * 1000.0,
            )
        )
        return action

    while state.depth < cfg.d_max and termination is None:
        round_index = len(rounds) + 1
        try:
            menu = expand_candidates(
                graph,
                state,
                parsed,
                max_switches=cfg.grid_size**2 - 1,
                pool_menu_cap=cfg.pool_menu_cap,
            )
        except ExhaustedFrontier:
            break
        state.last_menu = menu
        action = ask(menu, round_index, forced=False)
        if action is None:
            termination = TerminationReason.AGENT_FAILURE
            break
        apply_action(state, action, graph)
        rounds[-1].pool_after = list(state.object_pool)
        if state.selected_object_id is not None:
            final_object = state.selected_object_id
            final_bbox = menu.lookup(action).bbox
            termination = TerminationReason.SELECTED
            break
        history.append(state.current_node)

    if termination is None:
        # Depth limit reached or frontier exhausted: one forced global round
        # over the accumulated object pool, with no view switches on offer.
        pool_items = list(state.object_pool.items())
        if cfg.pool_menu_cap is not None and len(pool_items) > cfg.pool_menu_cap:
            pool_items = pool_items[-cfg.pool_menu_cap:]
        if not pool_items:
            termination = TerminationReason.FORCED_GLOBAL
        else:
            menu = CandidateMenu(
                actions=[
                    MenuAction(
                        index=i + 1,
                        kind=ActionKind.SELECT_OBJECT,
                        object_id=object_id,
                        bbox=tuple(bbox),
                    )
                    for i, (object_id, bbox) in enumerate(pool_items)
                ]
            )
            state.last_menu = menu
            action = ask(menu, len(rounds) + 1, forced=True)
            if action is None:
                termination = TerminationReason.AGENT_FAILURE
            else:
                apply_action(state, action, graph)
                final_object = state.selected_object_id
                final_bbox = menu.lookup(action).bbox
                termination = TerminationReason.FORCED_GLOBAL

    return GroundingTrace(
        scene_id=scene_id,
        query_id=cfg.query_id,
        query_text=query_text,
        parsed=parsed.to_dict(),
        seed=cfg.seed,
        d_max=cfg.d_max,
        grid_size=cfg.grid_size,
        start_view=start_view,
        target_class_count=graph.class_count(parsed.target_class),
        rounds=rounds,
        path=list(state.path),
        final_object_id=final_object,
        final_bbox=final_bbox,
        agent_call_count=call_count,
        termination_reason=termination,
    )
