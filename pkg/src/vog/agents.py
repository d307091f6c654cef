"""Decision-agent gateway: prompt rendering, strict action parsing, and the
three built-in agents (scripted replay, graph oracle, remote model endpoint).

Prompts are deterministic template instantiations; the required reply is a
single JSON object ``{"NextAction": <number>}`` echoing the triple-square-
bracket index of the chosen action. Parsing is strict about the object
itself but tolerant of surrounding prose and code fences (small models tend
to narrate around it).
"""

from __future__ import annotations

import base64
import collections
import json
import os
import re
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import httpx

from .errors import (
    AgentTimeout,
    HttpStatusError,
    MalformedReply,
    OutOfRange,
    ScriptExhausted,
    TransportError,
)
from .graph import MMMG
from .menu import ActionKind, CandidateMenu, MenuAction
from .scene import normalize_label

ENDPOINT_ENV = "VOG_ENDPOINT"
MODEL_ENV = "VOG_MODEL"
API_KEY_ENV = "VOG_API_KEY"

ACTION_PATTERN = re.compile(r'\{\s*"NextAction"\s*:\s*(-?\d+)\s*\}')
EXTRACTION_PATTERN = re.compile(r'\{[^{}]*"target"[^{}]*\}')


@dataclass
class AgentRequest:
    """One reasoning-round request. ``menu`` is structured context for policy
    agents that act on actions rather than rendered text."""

    system_prompt: str
    user_prompt: str
    grid_image: Optional[bytes]
    round_index: int
    timeout: float = 60.0
    menu: Optional[CandidateMenu] = None

    def __post_init__(self):
        if not self.system_prompt or not self.user_prompt:
            raise ValueError("prompts must be non-empty")
        if self.round_index < 1:
            raise ValueError("round_index starts at 1")


@dataclass
class AgentReply:
    """Raw agent text plus the pre-parsed action when it is unambiguous."""

    raw_text: str
    parsed_action: Optional[int] = None


def reply_from_text(raw_text: str) -> AgentReply:
    matches = ACTION_PATTERN.findall(raw_text or "")
    parsed = int(matches[0]) if len(matches) == 1 else None
    return AgentReply(raw_text=raw_text, parsed_action=parsed)


# --- prompt rendering ---------------------------------------------------------

SYSTEM_TEMPLATE = """\
You are a visual reasoning assistant operating in a reconstructed 3D indoor scene.
Your goal is to identify the single object that best matches the query description.
The scene is observed from multiple viewpoints; each viewpoint is indexed as a frame (e.g. frame 4).
Every visible object has a unique Global Object ID in the format <class_label>_<index> (e.g. chair_9, table_16).
Object boxes come from a 3D detection model and may contain noise; combine evidence across frames to reduce uncertainty.
You may use at most {d_max} reasoning rounds. Selecting an object ends the process immediately; switching frames continues exploration within the round limit.
Strategy: switch frames when uncertain; select an object when confident.
Respond with exactly one JSON object of the form {{"NextAction": <number>}}, where <number> is the integer index from the triple-square-bracket prefix of the chosen action."""

USER_TEMPLATE = """\
Query: {query}

Round {round_index} of {d_max}. The grid image shows previously visited frames followed by the current frame, reading left to right then top to bottom; remaining cells hold candidate frames or white padding.

Candidate actions:
{action_lines}
{relations_block}
Reply with exactly one {{"NextAction": <number>}} object."""

RELATIONS_TEMPLATE = """
Spatial relations between objects in the current view:
{facts}
"""


@dataclass(frozen=True)
class PromptTemplates:
    """Override point for prompt-engineering experiments.

    Templates keep the stock placeholders: ``{d_max}`` in the system
    template; ``{query}``, ``{round_index}``, ``{d_max}``, ``{action_lines}``,
    ``{relations_block}`` in the user template; ``{facts}`` in the relations
    block.
    """

    system: str = SYSTEM_TEMPLATE
    user: str = USER_TEMPLATE
    relations: str = RELATIONS_TEMPLATE

    @classmethod
    def from_dir(cls, path) -> "PromptTemplates":
        """Read system.txt / user.txt / relations.txt; absent files keep the
        stock template."""
        from pathlib import Path

        base = Path(path)
        kwargs = {}
        for name in ("system", "user", "relations"):
            candidate = base / f"{name}.txt"
            if candidate.is_file():
                kwargs[name] = candidate.read_text()
        return cls(**kwargs)


def format_bbox(bbox: Sequence[float]) -> str:
    return "(" + ", ".join(f"{x:.2f}" for x in bbox) + ")"


def render_action_line(action: MenuAction) -> str:
    if action.kind == ActionKind.SWITCH_VIEW:
        return f"[[[{action.index}]]] Switch to frame {action.frame_index} ({action.edge_kind} view)"
    return f"[[[{action.index}]]] Select object {action.object_id}, box {format_bbox(action.bbox)}"


def render_prompt(
    menu: CandidateMenu,
    query_text: str,
    round_index: int,
    d_max: int,
    templates: Optional[PromptTemplates] = None,
) -> Tuple[str, str]:
    """Deterministic prompt pair for one round; identical menus yield
    identical strings."""
    t = templates or PromptTemplates()
    action_lines = "\n".join(render_action_line(a) for a in menu.actions)
    if menu.relation_facts:
        relations_block = t.relations.format(facts="\n".join(menu.relation_facts))
    else:
        relations_block = ""
    system = t.system.format(d_max=d_max)
    user = t.user.format(
        query=query_text,
        round_index=round_index,
        d_max=d_max,
        action_lines=action_lines,
        relations_block=relations_block,
    )
    return system, user


def parse_action(raw_text: str, menu: CandidateMenu) -> int:
    """Extract the last well-formed ``{"NextAction": n}`` object and validate
    it against the menu. Raises MalformedReply or OutOfRange."""
    matches = ACTION_PATTERN.findall(raw_text or "")
    if not matches:
        raise MalformedReply(f"no action object in reply: {raw_text!r}")
    value = int(matches[-1])
    if menu.lookup(value) is None:
        raise OutOfRange(f"action {value} is not on the menu (1..{len(menu.actions)})")
    return value


# --- agents --------------------------------------------------------------------


class DecisionAgent(ABC):
    """Picks the next action each round; optionally extracts the query topic."""

    wants_images: bool = False

    def extract_query(
        self, raw_text: str, vocabulary: Sequence[str]
    ) -> Optional[Tuple[str, List[str]]]:
        """Return (target, anchors) or None to abstain (lexicon fallback)."""
        return None

    @abstractmethod
    def decide(self, request: AgentRequest) -> AgentReply: ...


class ScriptedAgent(DecisionAgent):
    """Replays a fixed action sequence; used for tests and trace replay."""

    def __init__(self, script: Sequence[int]):
        self._script = collections.deque(int(x) for x in script)

    def decide(self, request: AgentRequest) -> AgentReply:
        if not self._script:
            raise ScriptExhausted("scripted agent has no actions left")
        return reply_from_text(json.dumps({"NextAction": self._script.popleft()}))


class OracleAgent(DecisionAgent):
    """Ground-truth-seeking policy over the graph, for property testing.

    Selects the ground truth whenever the menu offers it; otherwise switches
    to the menu view with the shortest view-layer hop distance to any view
    that sees the ground truth (multi-source BFS, ties to the lowest menu
    index); otherwise takes the first action.
    """

    def __init__(self, ground_truth_object_id: str, graph: MMMG):
        if not graph.has_object(ground_truth_object_id):
            raise KeyError(f"{ground_truth_object_id} is not in the graph")
        self.ground_truth = ground_truth_object_id
        self._distance = self._bfs_distances(graph, ground_truth_object_id)

    @staticmethod
    def _bfs_distances(graph: MMMG, object_id: str) -> Dict[str, int]:
        sources = list(graph.views_seeing(object_id))
        dist = {v: 0 for v in sources}
        queue = collections.deque(sources)
        while queue:
            current = queue.popleft()
            for neighbor, _ in graph.vv_neighbors(current):
                if neighbor not in dist:
                    dist[neighbor] = dist[current] + 1
                    queue.append(neighbor)
        return dist

    def decide(self, request: AgentRequest) -> AgentReply:
        menu = request.menu
        if menu is None:
            raise ValueError("oracle agent requires the structured menu")
        for action in menu.select_actions():
            if action.object_id == self.ground_truth:
                return reply_from_text(json.dumps({"NextAction": action.index}))
        reachable = [
            a for a in menu.switch_actions() if a.view_id in self._distance
        ]
        if reachable:
            best = min(reachable, key=lambda a: (self._distance[a.view_id], a.index))
            return reply_from_text(json.dumps({"NextAction": best.index}))
        return reply_from_text(json.dumps({"NextAction": menu.actions[0].index}))


EXTRACTION_TEMPLATE = """\
A user describes one target object in a 3D indoor scene.
Known object classes: {vocabulary}.
Identify the target class the description refers to and any anchor classes it mentions.
Description: {query}
Reply with exactly one JSON object of the form {{"target": "<label>", "anchors": ["<label>", ...]}} using only known classes."""


class RemoteAgent(DecisionAgent):
    """Chat-completions client for any endpoint speaking the OpenAI wire
    protocol with image attachments.

    Requests carry temperature 0 for reproducibility. Transport failures are
    retried with exponential backoff (base 1 s, factor 2) up to
    ``retry_budget`` times; the request payload is never mutated between
    retries. 4xx statuses fail immediately, 5xx and 429 retry.
    """

    wants_images = True

    def __init__(
        self,
        endpoint_url: str,
        model_name: str,
        api_key: Optional[str] = None,
        retry_budget: int = 2,
        timeout: float = 60.0,
        sleep: Callable[[float], None] = time.sleep,
        backoff_base: float = 1.0,
        max_connections: int = 8,
    ):
        self.endpoint_url = endpoint_url.rstrip("/")
        self.model_name = model_name
        self.api_key = api_key
        self.retry_budget = int(retry_budget)
        self.timeout = timeout
        self._sleep = sleep
        self._backoff_base = backoff_base
        self._client = httpx.Client(
            timeout=timeout,
            limits=httpx.Limits(
                max_connections=max_connections,
                max_keepalive_connections=max_connections,
            ),
        )

    @classmethod
    def from_env(cls, **overrides) -> "RemoteAgent":
        endpoint = overrides.pop("endpoint_url", None) or os.environ.get(ENDPOINT_ENV)
        model = overrides.pop("model_name", None) or os.environ.get(MODEL_ENV)
        if not endpoint or not model:
            raise ValueError(f"set {ENDPOINT_ENV} and {MODEL_ENV} (or pass them explicitly)")
        api_key = overrides.pop("api_key", None) or os.environ.get(API_KEY_ENV)
        return cls(endpoint_url=endpoint, model_name=model, api_key=api_key, **overrides)

    def close(self) -> None:
        self._client.close()

    # -- wire ---------------------------------------------------------------

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def _post_chat(self, payload: dict, timeout: Optional[float] = None) -> str:
        url = f"{self.endpoint_url}/chat/completions"
        last_error: Optional[Exception] = None
        for attempt in range(self.retry_budget + 1):
            if attempt > 0:
                self._sleep(self._backoff_base * 2 ** (attempt - 1))
            try:
                response = self._client.post(
                    url,
                    json=payload,
                    headers=self._headers(),
                    timeout=timeout if timeout is not None else self.timeout,
                )
            except httpx.TimeoutException as exc:
                last_error = AgentTimeout(f"{url}: {exc}")
                continue
            except httpx.HTTPError as exc:
                last_error = TransportError(f"{url}: {exc}")
                continue
            if response.status_code == 200:
                body = response.json()
                content = body["choices"][0]["message"]["content"]
                if isinstance(content, list):  # some servers chunk content parts
                    content = "".join(
                        part.get("text", "") for part in content if isinstance(part, dict)
                    )
                return str(content)
            if response.status_code >= 500 or response.status_code == 429:
                last_error = HttpStatusError(response.status_code, response.text[:200])
                continue
            raise HttpStatusError(response.status_code, response.text[:200])
        assert last_error is not None
        raise last_error

    def _chat_payload(self, request: AgentRequest) -> dict:
        content: List[dict] = [{"type": "text", "text": request.user_prompt}]
        if request.grid_image:
            encoded = base64.b64encode(request.grid_image).decode("ascii")
            content.append(
                {
                    "type": "image_url",
                    "image_url": {"url": f"data:image/png;base64,{encoded}"},
                }
            )
        return {
            "model": self.model_name,
            "temperature": 0,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": content},
            ],
        }

    # -- agent interface ------------------------------------------------------

    def decide(self, request: AgentRequest) -> AgentReply:
        return reply_from_text(
            self._post_chat(self._chat_payload(request), timeout=request.timeout)
        )

    def extract_query(
        self, raw_text: str, vocabulary: Sequence[str]
    ) -> Optional[Tuple[str, List[str]]]:
        prompt = EXTRACTION_TEMPLATE.format(
            vocabulary=", ".join(vocabulary), query=raw_text
        )
        payload = {
            "model": self.model_name,
            "temperature": 0,
            "messages": [{"role": "user", "content": prompt}],
        }
        try:
            text = self._post_chat(payload)
        except (TransportError, HttpStatusError, AgentTimeout):
            return None
        match = EXTRACTION_PATTERN.search(text or "")
        if not match:
            return None
        try:
            parsed = json.loads(match.group(0))
        except json.JSONDecodeError:
            return None
        known = set(vocabulary)
        target = normalize_label(str(parsed.get("target", "")))
        if target not in known:
            return None
        anchors = []
        for anchor in parsed.get("anchors", []) or []:
            label = normalize_label(str(anchor))
            if label in known and label != target and label not in anchors:
                anchors.append(label)
        return target, anchors
