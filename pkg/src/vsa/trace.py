"""Append-only pipeline trace: event model, line-delimited JSON codec, replay.

One trace records one query's full run. The codec is deliberately rigid --
UTF-8, one JSON object per line, fixed top-level key order, schema tag on the
first record -- so traces diff cleanly and golden runs can be compared
byte-for-byte once timestamps are normalized away.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Callable

TRACE_SCHEMA = "trace_v1"


class EventKind(str, Enum):
    QUERY_RECEIVED = "query_received"
    REGIONS_DETECTED = "regions_detected"
    CAPTION_READY = "caption_ready"
    FORMULATION_READY = "formulation_ready"
    SUBQUESTIONS_PLANNED = "subquestions_planned"
    SEARCH_ISSUED = "search_issued"
    PAGES_FETCHED = "pages_fetched"
    PAGES_SELECTED = "pages_selected"
    RESPONSE_SUMMARIZED = "response_summarized"
    KNOWLEDGE_SUMMARIZED = "knowledge_summarized"
    SUFFICIENCY_JUDGED = "sufficiency_judged"
    ANSWER_READY = "answer_ready"
    ERROR = "error"


TERMINAL_KINDS = (EventKind.ANSWER_READY, EventKind.ERROR)

# Per-node lifecycle; earlier kinds must precede later ones for the same node_id.
NODE_KIND_ORDER = (
    EventKind.SEARCH_ISSUED,
    EventKind.PAGES_FETCHED,
    EventKind.PAGES_SELECTED,
    EventKind.RESPONSE_SUMMARIZED,
)


@dataclass(frozen=True)
class TraceEvent:
    sequence_no: int
    timestamp: str  # ISO-8601 UTC instant, or the sequence number after normalization
    kind: EventKind
    payload: dict[str, Any] = field(default_factory=dict)


class TraceCodecError(ValueError):
    """Raised for malformed streams or events that violate codec invariants."""


def utc_now_iso() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="microseconds").replace("+00:00", "Z")


def _encode_line(event: TraceEvent, first: bool) -> str:
    record: dict[str, Any] = {}
    if first:
        record["schema"] = TRACE_SCHEMA
    record["sequence_no"] = event.sequence_no
    record["timestamp"] = event.timestamp
    record["kind"] = event.kind.value
    record["payload"] = event.payload
    return json.dumps(record, ensure_ascii=False, separators=(",", ":"))


def encode_trace(events: list[TraceEvent]) -> bytes:
    """Encode events as one JSON record per line, in fixed key order.

    The first record additionally carries ``"schema": "trace_v1"``. Sequence
    numbers must be dense from 0; duplicates are rejected.
    """
    lines = []
    for i, event in enumerate(events):
        if event.sequence_no != i:
            seen = {e.sequence_no for e in events[:i]}
            if event.sequence_no in seen:
                raise TraceCodecError(f"duplicate sequence_no {event.sequence_no}")
            raise TraceCodecError(
                f"sequence_no {event.sequence_no} at position {i}; expected dense numbering from 0"
            )
        lines.append(_encode_line(event, first=i == 0))
    if not lines:
        return b""
    return ("\n".join(lines) + "\n").encode("utf-8")


def decode_trace(stream: bytes) -> list[TraceEvent]:
    """Decode a trace stream, re-validating the ordering invariants.

    Raises :class:`TraceCodecError` naming the offending line for malformed
    JSON, missing fields, unknown kinds, or out-of-order sequence numbers.
    """
    events: list[TraceEvent] = []
    if not stream:
        return events
    text = stream.decode("utf-8")
    if not text.endswith("\n"):
        n_lines = text.count("\n") + 1
        raise TraceCodecError(f"line {n_lines}: truncated final line")
    # Split strictly on "\n": json escapes newlines inside strings, but not
    # other line-break code points (NEL, LS, PS) that splitlines() honors.
    for lineno, line in enumerate(text[:-1].split("\n"), start=1):
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TraceCodecError(f"line {lineno}: malformed JSON ({exc.msg})") from exc
        if not isinstance(record, dict):
            raise TraceCodecError(f"line {lineno}: record is not an object")
        if lineno == 1 and record.get("schema") != TRACE_SCHEMA:
            raise TraceCodecError(f"line 1: missing or unsupported schema tag (want {TRACE_SCHEMA!r})")
        try:
            kind = EventKind(record["kind"])
            event = TraceEvent(
                sequence_no=record["sequence_no"],
                timestamp=str(record["timestamp"]),
                kind=kind,
                payload=record["payload"],
            )
        except KeyError as exc:
            raise TraceCodecError(f"line {lineno}: missing field {exc.args[0]!r}") from exc
        except ValueError as exc:
            raise TraceCodecError(f"line {lineno}: {exc}") from exc
        if event.sequence_no != lineno - 1:
            raise TraceCodecError(
                f"line {lineno}: sequence_no {event.sequence_no} out of order (expected {lineno - 1})"
            )
        events.append(event)
    return events


def normalize_trace(stream: bytes) -> bytes:
    """Replace every timestamp by the event's sequence number.

    Timestamps are the only run-dependent bytes in a scripted trace; after
    this pass two runs over the same fixtures compare byte-for-byte.
    """
    events = decode_trace(stream)
    normalized = [
        TraceEvent(e.sequence_no, str(e.sequence_no), e.kind, e.payload) for e in events
    ]
    return encode_trace(normalized)


def check_trace_order(events: list[TraceEvent]) -> list[str]:
    """Validate the pipeline state machine over a decoded event list.

    Returns human-readable violations; empty means the trace is legal:
    dense numbering, query_received first, at most one terminal event and
    nothing after it, and per-node search_issued < pages_fetched <
    pages_selected < response_summarized.
    """
    problems: list[str] = []
    for i, event in enumerate(events):
        if event.sequence_no != i:
            problems.append(f"event {i} has sequence_no {event.sequence_no}")
    if events and events[0].kind is not EventKind.QUERY_RECEIVED:
        problems.append(f"first event is {events[0].kind.value}, not query_received")
    for event in events[1:]:
        if event.kind is EventKind.QUERY_RECEIVED:
            problems.append(f"query_received repeated at sequence_no {event.sequence_no}")

    terminal_at: int | None = None
    for event in events:
        if terminal_at is not None:
            problems.append(
                f"event {event.sequence_no} ({event.kind.value}) after terminal event {terminal_at}"
            )
        if event.kind in TERMINAL_KINDS:
            terminal_at = event.sequence_no

    stage_by_node: dict[str, int] = {}
    for event in events:
        if event.kind not in NODE_KIND_ORDER:
            continue
        node_id = event.payload.get("node_id")
        if node_id is None:
            problems.append(f"{event.kind.value} at {event.sequence_no} lacks node_id")
            continue
        stage = NODE_KIND_ORDER.index(event.kind)
        previous = stage_by_node.get(node_id, -1)
        if stage != previous + 1:
            problems.append(
                f"node {node_id}: {event.kind.value} at {event.sequence_no} out of order"
            )
        stage_by_node[node_id] = stage
    return problems


class TraceRecorder:
    """Single-writer, append-only event sink for one query.

    Events are numbered densely as they are emitted, appended to the trace
    file (when one is configured), kept in memory for replay, and fanned out
    to any registered listeners. All of that happens under one lock, so the
    file, the memory copy, and every listener see the same order.
    """

    def __init__(
        self,
        path: Path | None = None,
        clock: Callable[[], str] = utc_now_iso,
    ) -> None:
        self._path = path
        self._clock = clock
        self._events: list[TraceEvent] = []
        self._listeners: list[Callable[[TraceEvent], None]] = []
        self._lock = threading.Lock()
        self._closed = False
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(b"")

    @property
    def path(self) -> Path | None:
        return self._path

    def emit(self, kind: EventKind, payload: dict[str, Any]) -> TraceEvent:
        with self._lock:
            if self._closed:
                raise RuntimeError("trace is closed (terminal event already emitted)")
            event = TraceEvent(len(self._events), self._clock(), kind, payload)
            self._events.append(event)
            if self._path is not None:
                with self._path.open("a", encoding="utf-8") as handle:
                    handle.write(_encode_line(event, first=event.sequence_no == 0) + "\n")
            if kind in TERMINAL_KINDS:
                self._closed = True
            listeners = list(self._listeners)
        for listener in listeners:
            listener(event)
        return event

    def events(self) -> list[TraceEvent]:
        with self._lock:
            return list(self._events)

    @property
    def closed(self) -> bool:
        with self._lock:
            return self._closed

    def subscribe(self, listener: Callable[[TraceEvent], None]) -> list[TraceEvent]:
        """Register a live listener and return the replay prefix it missed."""
        with self._lock:
            self._listeners.append(listener)
            return list(self._events)

    def unsubscribe(self, listener: Callable[[TraceEvent], None]) -> None:
        with self._lock:
            if listener in self._listeners:
                self._listeners.remove(listener)

    def encoded(self) -> bytes:
        return encode_trace(self.events())
