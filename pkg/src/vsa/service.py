"""HTTP service around the pipeline: session/query lifecycle, server-sent
event streaming of the trace, abort, and trace/answer retrieval.

The stream, the REST trace endpoint, and the trace file expose the same
event records; the stream replays everything already persisted before
switching to live events, so a subscriber never sees a gap or a duplicate.
"""

from __future__ import annotations

import json
import queue
import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from fastapi import FastAPI, File, Form, HTTPException, UploadFile
from fastapi.responses import JSONResponse, Response, StreamingResponse

from .config import ServiceConfig, ensure_trace_dir
from .model import ImagePayload, QueryMode, UserQuery
from .pipeline import PipelineDeps, PipelineError, QueryAborted, deps_from_config, run_query
from .trace import TERMINAL_KINDS, TraceEvent, TraceRecorder

MEDIA_TYPE_BY_CONTENT_TYPE = {
    "image/png": "png",
    "image/jpeg": "jpeg",
    "image/webp": "webp",
}


@dataclass
class QueryState:
    query_id: str
    session_id: str
    mode: QueryMode
    recorder: TraceRecorder
    abort_event: threading.Event = field(default_factory=threading.Event)
    status: str = "running"  # running | done | failed | aborted
    answer: dict | None = None


@dataclass
class SessionState:
    session_id: str
    created_at: str
    query_ids: list[str] = field(default_factory=list)


class ServiceState:
    """In-memory registry plus the sessions index file."""

    def __init__(self, config: ServiceConfig, deps: PipelineDeps) -> None:
        self.config = config
        self.deps = deps
        self.trace_dir = ensure_trace_dir(config)
        self.sessions: dict[str, SessionState] = {}
        self.queries: dict[str, QueryState] = {}
        self.lock = threading.Lock()
        self.executor = ThreadPoolExecutor(max_workers=config.query_parallelism)

    def write_index(self) -> None:
        with self.lock:
            index = {
                "sessions": {
                    sid: {"created_at": s.created_at, "queries": list(s.query_ids)}
                    for sid, s in self.sessions.items()
                },
                "queries": {
                    qid: {"session_id": q.session_id, "status": q.status, "mode": q.mode.value}
                    for qid, q in self.queries.items()
                },
            }
        (self.trace_dir / "sessions.json").write_text(
            json.dumps(index, indent=2, sort_keys=True), encoding="utf-8"
        )

    def running_query_in(self, session_id: str) -> QueryState | None:
        for qid in self.sessions[session_id].query_ids:
            state = self.queries[qid]
            if state.status == "running":
                return state
        return None


def _execute(state: ServiceState, query_state: QueryState, query: UserQuery) -> None:
    try:
        answer = run_query(
            query, state.deps, query_state.recorder, query_state.abort_event.is_set
        )
        query_state.answer = {
            "text": answer.text,
            "citations": [[url, node_id] for url, node_id in answer.citations],
            "used_regions": list(answer.used_regions),
            "partial": answer.partial,
        }
        query_state.status = "done"
    except QueryAborted:
        query_state.status = "aborted"
    except PipelineError:
        query_state.status = "failed"
    except Exception:  # defensive: the pipeline wraps everything, but never hang a query
        query_state.status = "failed"
    state.write_index()


def _sse_frame(event: TraceEvent) -> str:
    record = {
        "sequence_no": event.sequence_no,
        "timestamp": event.timestamp,
        "kind": event.kind.value,
        "payload": event.payload,
    }
    data = json.dumps(record, ensure_ascii=False, separators=(",", ":"))
    return f"id: {event.sequence_no}\nevent: trace\ndata: {data}\n\n"


def create_app(config: ServiceConfig | None = None, deps: PipelineDeps | None = None) -> FastAPI:
    config = config or ServiceConfig()
    deps = deps or deps_from_config(config)
    state = ServiceState(config, deps)
    app = FastAPI(title="vsa", version="0.1.0")
    app.state.vsa = state

    @app.post("/v1/sessions", status_code=201)
    def create_session() -> dict:
        session_id = uuid.uuid4().hex[:12]
        created = datetime.now(timezone.utc).isoformat(timespec="seconds")
        with state.lock:
            state.sessions[session_id] = SessionState(session_id, created)
        state.write_index()
        return {"session_id": session_id}

    @app.get("/v1/sessions/{session_id}")
    def get_session(session_id: str) -> dict:
        with state.lock:
            session = state.sessions.get(session_id)
            if session is None:
                raise HTTPException(404, "unknown session")
            return {
                "session_id": session.session_id,
                "created_at": session.created_at,
                "queries": [
                    {"query_id": qid, "status": state.queries[qid].status}
                    for qid in session.query_ids
                ],
            }

    @app.post("/v1/sessions/{session_id}/queries", status_code=202)
    async def submit_query(
        session_id: str,
        image: UploadFile = File(...),
        prompt: str = Form(...),
        mode: str = Form(default=""),
    ) -> dict:
        mode = mode or config.default_mode
        try:
            query_mode = QueryMode(mode)
        except ValueError:
            raise HTTPException(422, f"invalid mode {mode!r}") from None
        media_type = MEDIA_TYPE_BY_CONTENT_TYPE.get(image.content_type or "")
        if media_type is None:
            suffix = Path(image.filename or "").suffix.lower().lstrip(".")
            media_type = {"png": "png", "jpg": "jpeg", "jpeg": "jpeg", "webp": "webp"}.get(suffix)
        if media_type is None:
            raise HTTPException(422, f"unsupported image type {image.content_type!r}")
        data = await image.read()
        if len(data) > config.max_image_bytes:
            raise HTTPException(413, f"image exceeds {config.max_image_bytes} bytes")
        if not data:
            raise HTTPException(422, "empty image upload")
        if not prompt.strip():
            raise HTTPException(422, "empty prompt")

        with state.lock:
            if session_id not in state.sessions:
                raise HTTPException(404, "unknown session")
            running = None
            for qid in state.sessions[session_id].query_ids:
                if state.queries[qid].status == "running":
                    running = qid
            if running is not None:
                raise HTTPException(409, f"query {running} is still running in this session")
            query_id = uuid.uuid4().hex[:12]
            recorder = TraceRecorder(state.trace_dir / f"{query_id}.jsonl")
            query_state = QueryState(query_id, session_id, query_mode, recorder)
            state.queries[query_id] = query_state
            state.sessions[session_id].query_ids.append(query_id)

        query = UserQuery(query_id, ImagePayload(data, media_type), prompt, query_mode)
        state.executor.submit(_execute, state, query_state, query)
        state.write_index()
        return {"query_id": query_id}

    def _query_or_404(query_id: str) -> QueryState:
        query_state = state.queries.get(query_id)
        if query_state is None:
            raise HTTPException(404, "unknown query")
        return query_state

    @app.get("/v1/queries/{query_id}/events")
    def stream_events(query_id: str) -> StreamingResponse:
        query_state = _query_or_404(query_id)

        def generate():
            live: queue.SimpleQueue[TraceEvent] = queue.SimpleQueue()
            prefix = query_state.recorder.subscribe(live.put)
            try:
                terminal_seen = False
                for event in prefix:
                    yield _sse_frame(event)
                    terminal_seen = terminal_seen or event.kind in TERMINAL_KINDS
                while not terminal_seen:
                    try:
                        event = live.get(timeout=30.0)
                    except queue.Empty:
                        if query_state.status != "running":
                            break  # query ended without terminal event; stop streaming
                        yield ": keepalive\n\n"
                        continue
                    yield _sse_frame(event)
                    terminal_seen = event.kind in TERMINAL_KINDS
            finally:
                query_state.recorder.unsubscribe(live.put)

        return StreamingResponse(generate(), media_type="text/event-stream")

    @app.post("/v1/queries/{query_id}/abort")
    def abort_query(query_id: str) -> dict:
        query_state = _query_or_404(query_id)
        if query_state.status != "running":
            raise HTTPException(409, f"query is not running (status {query_state.status})")
        query_state.abort_event.set()
        return {"query_id": query_id, "status": "aborting"}

    @app.get("/v1/queries/{query_id}/trace")
    def get_trace(query_id: str) -> Response:
        query_state = _query_or_404(query_id)
        path = query_state.recorder.path
        assert path is not None
        return Response(content=path.read_bytes(), media_type="application/x-ndjson")

    @app.get("/v1/queries/{query_id}/answer")
    def get_answer(query_id: str) -> JSONResponse:
        query_state = _query_or_404(query_id)
        body = {"query_id": query_id, "status": query_state.status}
        if query_state.answer is not None:
            body["answer"] = query_state.answer
        return JSONResponse(body)

    return app
