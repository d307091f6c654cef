"""Exception hierarchy shared by every module in the package."""

from __future__ import annotations


class VogError(Exception):
    """Base class for all errors raised by this package."""


# --- scene bundle loading / saving -----------------------------------------


class MissingManifest(VogError):
    """No ``scene.json`` at the given bundle root."""


class MalformedManifest(VogError):
    """Manifest present but structurally invalid; message names the field."""


class InvariantViolation(VogError):
    """A well-formed entity breaks one of its stated invariants."""

    def __init__(self, entity_id: str, invariant: str):
        self.entity_id = entity_id
        self.invariant = invariant
        super().__init__(f"{entity_id}: violated invariant '{invariant}'")


class MissingAsset(VogError):
    """A file referenced from a manifest does not exist."""

    def __init__(self, path):
        self.path = str(path)
        super().__init__(f"missing asset: {self.path}")


class IoFailure(VogError):
    """Underlying filesystem write or read failed."""


class SchemaVersionMismatch(VogError):
    """Serialized graph or trace carries an unsupported schema version."""


# --- geometry ---------------------------------------------------------------


class DimensionMismatch(VogError):
    """Depth buffer dimensions do not match the camera view."""


class DegenerateInput(VogError):
    """Geometric input has no defined answer (e.g. coincident box centers)."""


# --- traversal --------------------------------------------------------------


class NoTargetFound(VogError):
    """Query parsing produced no target class."""


class ExhaustedFrontier(VogError):
    """Candidate expansion produced an empty menu; forces global reasoning."""


class UnknownAction(VogError):
    """Action index was not present in the last menu."""


class AgentFailure(VogError):
    """Decision agent could not produce a usable action within its budget."""


# --- agent gateway ----------------------------------------------------------


class MalformedReply(VogError):
    """Agent reply contains no well-formed action object."""


class OutOfRange(VogError):
    """Parsed action integer is not a valid menu index."""


class ScriptExhausted(VogError):
    """Scripted agent was asked for more actions than its script holds."""


class CapacityExceeded(VogError):
    """More cells requested than the grid has slots."""


class DecodeFailure(VogError):
    """An image could not be decoded."""


class TransportError(VogError):
    """Remote endpoint unreachable after exhausting the retry budget."""


class HttpStatusError(VogError):
    """Remote endpoint answered with a non-success HTTP status."""

    def __init__(self, status_code: int, detail: str = ""):
        self.status_code = status_code
        super().__init__(f"HTTP {status_code}{': ' + detail if detail else ''}")


class AgentTimeout(VogError):
    """Remote call exceeded its deadline after exhausting retries."""


# --- bench harness ----------------------------------------------------------


class MissingGroundTruth(VogError):
    """A trace has no matching ground-truth entry."""


class PlacementFailure(VogError):
    """Rejection sampling could not place all requested objects."""
