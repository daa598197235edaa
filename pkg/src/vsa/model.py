"""Domain types shared across the pipeline, plus structural graph validation.

Everything here is an immutable value object: instances are safe to share
between the per-region search chains and the trace writer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

SUPPORTED_MEDIA_TYPES = ("png", "jpeg", "webp")


class QueryMode(str, Enum):
    """Pipeline operating modes. The non-default ones are ablations:
    naive_search skips the iterative chain, no_correlation skips the
    cross-region formulation step, whole_image skips object detection."""

    FULL = "full"
    NAIVE_SEARCH = "naive_search"
    NO_CORRELATION = "no_correlation"
    WHOLE_IMAGE = "whole_image"


@dataclass(frozen=True)
class ImagePayload:
    data: bytes
    media_type: str  # png | jpeg | webp

    def __post_init__(self) -> None:
        if not self.data:
            raise ValueError("image payload is empty")
        if self.media_type not in SUPPORTED_MEDIA_TYPES:
            raise ValueError(f"unsupported media type: {self.media_type!r}")


@dataclass(frozen=True)
class UserQuery:
    query_id: str
    image: ImagePayload
    prompt_text: str
    mode: QueryMode = QueryMode.FULL

    def __post_init__(self) -> None:
        if not self.prompt_text.strip():
            raise ValueError("prompt_text is empty")


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned pixel box. Coordinates are inclusive-exclusive
    (x_max/y_max are one past the last pixel, like PIL's crop box)."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int
    confidence: float

    def __post_init__(self) -> None:
        if min(self.x_min, self.y_min, self.x_max, self.y_max) < 0:
            raise ValueError("box coordinates must be non-negative")
        if self.x_min >= self.x_max or self.y_min >= self.y_max:
            raise ValueError("box must have positive width and height")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must be within [0, 1]")

    @property
    def width(self) -> int:
        return self.x_max - self.x_min

    @property
    def height(self) -> int:
        return self.y_max - self.y_min

    def area(self) -> int:
        return self.width * self.height

    def iou(self, other: "BoundingBox") -> float:
        ix = max(0, min(self.x_max, other.x_max) - max(self.x_min, other.x_min))
        iy = max(0, min(self.y_max, other.y_max) - max(self.y_min, other.y_min))
        inter = ix * iy
        if inter == 0:
            return 0.0
        return inter / (self.area() + other.area() - inter)


@dataclass(frozen=True)
class RegionOfInterest:
    """A detected region: its box, the cropped pixels, and the detector label.

    The crop always has exactly the box's dimensions; any context padding is
    applied to the box itself before the region is constructed.
    """

    region_index: int
    box: BoundingBox
    crop: ImagePayload
    label: str


@dataclass(frozen=True)
class RegionalCaption:
    region_index: int
    text: str

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("caption text is empty")


@dataclass(frozen=True)
class CorrelatedFormulation:
    """A region's description produced with all other regions' captions as
    context, so it encodes inter-object relations."""

    region_index: int
    text: str
    context_caption_indices: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.region_index in self.context_caption_indices:
            raise ValueError("a region cannot be its own correlation context")


@dataclass(frozen=True)
class SubQuestion:
    node_id: str
    level: int  # k >= 1
    ordinal: int  # j within the level
    text: str

    def __post_init__(self) -> None:
        if self.level < 1:
            raise ValueError("sub-question level must be >= 1")
        if not self.text.strip():
            raise ValueError("sub-question text is empty")


@dataclass(frozen=True)
class SearchedPayload:
    sub_question: SubQuestion
    selected_page_ids: tuple[str, ...]
    response_text: str


@dataclass(frozen=True)
class GraphNode:
    """One node of a region's search graph. The level-0 node carries the
    region's correlated formulation; every deeper node carries the searched
    payload (sub-question, selected pages, summarized response)."""

    node_id: str
    level: int
    root: CorrelatedFormulation | None = None
    searched: SearchedPayload | None = None

    def __post_init__(self) -> None:
        if (self.root is None) == (self.searched is None):
            raise ValueError("node carries exactly one of root/searched payloads")

    @property
    def is_root(self) -> bool:
        return self.root is not None


@dataclass(frozen=True)
class WebKnowledge:
    """Cumulative web knowledge after level ``level`` of one region's chain."""

    region_index: int
    level: int
    text: str
    source_node_ids: tuple[str, ...] = ()


@dataclass
class SearchGraph:
    """Directed graph grown by the chain-of-search loop for one region.

    Structurally a tree: each searched node hangs off exactly one parent and
    child levels increase by one. ``knowledge_by_level`` holds one summary per
    completed level, in order.
    """

    region_index: int
    nodes: list[GraphNode] = field(default_factory=list)
    edges: list[tuple[str, str]] = field(default_factory=list)
    knowledge_by_level: list[WebKnowledge] = field(default_factory=list)

    def node_by_id(self, node_id: str) -> GraphNode | None:
        for node in self.nodes:
            if node.node_id == node_id:
                return node
        return None

    def root(self) -> GraphNode:
        for node in self.nodes:
            if node.level == 0:
                return node
        raise LookupError("graph has no level-0 node")

    def nodes_at_level(self, level: int) -> list[GraphNode]:
        return [n for n in self.nodes if n.level == level]

    def searched_node_ids(self, max_level: int | None = None) -> tuple[str, ...]:
        ids = []
        for node in self.nodes:
            if node.is_root:
                continue
            if max_level is not None and node.level > max_level:
                continue
            ids.append(node.node_id)
        return tuple(ids)

    def deepest_completed_level(self) -> int:
        return len(self.knowledge_by_level)


@dataclass(frozen=True)
class FinalAnswer:
    text: str
    citations: tuple[tuple[str, str], ...]  # (url, node_id)
    used_regions: tuple[int, ...]
    partial: bool = False


@dataclass(frozen=True)
class Violation:
    code: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def codes(self) -> tuple[str, ...]:
        return tuple(v.code for v in self.violations)


def check_graph(graph: SearchGraph) -> ValidationReport:
    """Validate a search graph's structural invariants.

    Checks rootedness (exactly one level-0 node carrying the root payload),
    single-parent tree shape, per-edge level monotonicity (child level is
    parent level + 1), and knowledge coverage (one summary per completed
    level, each covering every searched node at or below its level). All
    problems come back as report entries; nothing raises.
    """
    violations: list[Violation] = []

    roots = [n for n in graph.nodes if n.level == 0]
    if len(roots) != 1:
        violations.append(
            Violation("rootedness", f"expected exactly one level-0 node, found {len(roots)}")
        )
    for node in roots:
        if not node.is_root:
            violations.append(
                Violation("rootedness", f"level-0 node {node.node_id} lacks the root payload")
            )
    for node in graph.nodes:
        if node.level > 0 and node.searched is None:
            violations.append(
                Violation("payload", f"level-{node.level} node {node.node_id} lacks a searched payload")
            )
        if node.level < 0:
            violations.append(Violation("level", f"node {node.node_id} has negative level"))

    ids = [n.node_id for n in graph.nodes]
    if len(set(ids)) != len(ids):
        violations.append(Violation("node-ids", "duplicate node ids"))
    by_id = {n.node_id: n for n in graph.nodes}

    parents: dict[str, list[str]] = {}
    for parent_id, child_id in graph.edges:
        if parent_id not in by_id or child_id not in by_id:
            violations.append(
                Violation("edge-endpoints", f"edge ({parent_id}, {child_id}) references unknown node")
            )
            continue
        parents.setdefault(child_id, []).append(parent_id)
        parent, child = by_id[parent_id], by_id[child_id]
        if child.level != parent.level + 1:
            violations.append(
                Violation(
                    "level monotonicity",
                    f"edge ({parent_id}, {child_id}) spans levels {parent.level}->{child.level}",
                )
            )

    for node in graph.nodes:
        if node.level == 0:
            if node.node_id in parents:
                violations.append(Violation("single-parent", f"root {node.node_id} has a parent"))
        else:
            n_parents = len(parents.get(node.node_id, []))
            if n_parents != 1:
                violations.append(
                    Violation("single-parent", f"node {node.node_id} has {n_parents} parents")
                )

    completed = len(graph.knowledge_by_level)
    deepest = max((n.level for n in graph.nodes), default=0)
    if completed > deepest:
        violations.append(
            Violation(
                "knowledge coverage",
                f"{completed} knowledge levels but deepest node level is {deepest}",
            )
        )
    for idx, knowledge in enumerate(graph.knowledge_by_level, start=1):
        if knowledge.level != idx:
            violations.append(
                Violation("knowledge coverage", f"knowledge at position {idx} has level {knowledge.level}")
            )
        expected = set(graph.searched_node_ids(max_level=idx))
        missing = expected - set(knowledge.source_node_ids)
        if missing:
            violations.append(
                Violation(
                    "knowledge coverage",
                    f"level-{idx} knowledge misses sources: {', '.join(sorted(missing))}",
                )
            )

    return ValidationReport(tuple(violations))
