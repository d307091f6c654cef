"""Query and action-menu types shared by the traversal loop and the agents."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple


class ActionKind:
    SWITCH_VIEW = "switch_view"
    SELECT_OBJECT = "select_object"


@dataclass(frozen=True)
class ParsedQuery:
    """Target class plus anchor classes extracted from the raw query text."""

    raw_text: str
    target_class: str
    anchor_classes: Tuple[str, ...] = ()

    def __post_init__(self):
        if not self.target_class:
            raise ValueError("target_class must be non-empty")

    def to_dict(self) -> dict:
        return {"target": self.target_class, "anchors": list(self.anchor_classes)}


@dataclass(frozen=True)
class MenuAction:
    """One numbered action the agent may pick."""

    index: int
    kind: str
    view_id: Optional[str] = None
    frame_index: Optional[int] = None
    edge_kind: Optional[str] = None
    object_id: Optional[str] = None
    bbox: Optional[Tuple[float, ...]] = None

    def to_dict(self) -> dict:
        d: dict = {"index": self.index, "kind": self.kind}
        if self.kind == ActionKind.SWITCH_VIEW:
            d["view_id"] = self.view_id
            d["frame_index"] = self.frame_index
            d["edge_kind"] = self.edge_kind
        else:
            d["object_id"] = self.object_id
            d["bbox"] = [float(x) for x in self.bbox]
        return d


@dataclass
class CandidateMenu:
    """The numbered action list for one round, plus relation facts as text.

    Indices are contiguous from 1. Relation facts describe spatial relations
    between objects visible in the current view and are injected into the
    prompt rather than offered as actions.
    """

    actions: List[MenuAction]
    relation_facts: List[str] = field(default_factory=list)

    def __post_init__(self):
        for i, action in enumerate(self.actions, start=1):
            if action.index != i:
                raise ValueError("menu indices must be contiguous from 1")
        self._by_index = {a.index: a for a in self.actions}

    def lookup(self, index: int) -> Optional[MenuAction]:
        return self._by_index.get(index)

    def switch_actions(self) -> List[MenuAction]:
        return [a for a in self.actions if a.kind == ActionKind.SWITCH_VIEW]

    def select_actions(self) -> List[MenuAction]:
        return [a for a in self.actions if a.kind == ActionKind.SELECT_OBJECT]

    def to_dict(self) -> dict:
        return {
            "actions": [a.to_dict() for a in self.actions],
            "relation_facts": list(self.relation_facts),
        }
