"""Uniform access to the three model roles behind the pipeline.

The detector finds regions of interest, the VLM roles caption and generate
with image input, and the LLM roles plan, search, and judge with text only.
Every role is served either by a real HTTP backend (OpenAI-compatible chat
endpoint, simple JSON detector endpoint) or by a deterministic scripted
backend, so the whole pipeline runs bit-reproducibly without any model.
"""

from __future__ import annotations

import base64
import dataclasses
import io
import json
import re
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Protocol

import httpx
from PIL import Image

from .model import BoundingBox, ImagePayload

FIXTURES_SCHEMA = "fixtures_v1"


class ModelRole(str, Enum):
    DETECTOR = "detector"
    VLM_CAPTIONER = "vlm_captioner"
    LLM_PLANNER = "llm_planner"
    LLM_SEARCHER = "llm_searcher"
    LLM_JUDGE = "llm_judge"
    VLM_GENERATOR = "vlm_generator"


VLM_ROLES = (ModelRole.VLM_CAPTIONER, ModelRole.VLM_GENERATOR)
LLM_ROLES = (ModelRole.LLM_PLANNER, ModelRole.LLM_SEARCHER, ModelRole.LLM_JUDGE)


class FinishReason(str, Enum):
    STOP = "stop"
    LENGTH = "length"
    BACKEND_ERROR = "backend_error"


@dataclass(frozen=True)
class ChatMessage:
    role: str  # system | user | assistant
    text: str
    images: tuple[ImagePayload, ...] = ()

    def __post_init__(self) -> None:
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"unknown message role {self.role!r}")


@dataclass(frozen=True)
class ModelReply:
    text: str
    finish_reason: FinishReason
    latency_ms: int = 0

    @property
    def ok(self) -> bool:
        return self.finish_reason is not FinishReason.BACKEND_ERROR


@dataclass(frozen=True)
class RawBox:
    """A detector hit as the backend reports it, before clamping/filtering."""

    x0: int
    y0: int
    x1: int
    y1: int
    score: float
    label: str = ""


@dataclass(frozen=True)
class DetectionReply:
    boxes: tuple[BoundingBox, ...]
    labels: tuple[str, ...]
    clamped: tuple[int, ...] = ()  # indices of boxes that had to be clamped to image bounds


class GatewayError(Exception):
    """Base class for gateway failures."""


class GatewayInputError(GatewayError):
    """The caller handed the gateway something unusable (e.g. a broken image)."""


class BackendError(GatewayError):
    """A backend call failed. ``transient`` marks it as worth retrying."""

    def __init__(self, message: str, transient: bool = False) -> None:
        super().__init__(message)
        self.transient = transient


class FixtureMissError(GatewayError):
    """The scripted backend had no unconsumed entry for a call.

    Deliberately loud: a silent default reply would let prompt drift go
    unnoticed in golden tests.
    """


class ChatBackend(Protocol):
    def complete_raw(
        self, role: ModelRole, messages: tuple[ChatMessage, ...], max_tokens: int
    ) -> str: ...


class DetectorBackend(Protocol):
    def detect_raw(self, image: ImagePayload, phrases: list[str], threshold: float) -> list[RawBox]: ...


def render_prompt(messages: tuple[ChatMessage, ...]) -> str:
    """Flatten a message list to the text the scripted backend matches on."""
    return "\n".join(f"{m.role}: {m.text}" for m in messages)


@dataclass
class GatewayConfig:
    timeout_s: float = 60.0
    retries: int = 2
    backoff_base_s: float = 0.25
    summary_budget_tokens: int = 1024
    judgment_budget_tokens: int = 256


class Gateway:
    """Retry, policy, and normalization layer in front of the backends.

    Per-role chat backends are allowed (the paper uses one model for every
    text role, but a separate text-only LLM drops in without code changes).
    """

    def __init__(
        self,
        chat_backend: ChatBackend | None = None,
        detector_backend: DetectorBackend | None = None,
        config: GatewayConfig | None = None,
        chat_backends_by_role: dict[ModelRole, ChatBackend] | None = None,
        sleep=time.sleep,
    ) -> None:
        self._chat_default = chat_backend
        self._chat_by_role = chat_backends_by_role or {}
        self._detector = detector_backend
        self.config = config or GatewayConfig()
        self._sleep = sleep

    def _chat_backend_for(self, role: ModelRole) -> ChatBackend:
        backend = self._chat_by_role.get(role, self._chat_default)
        if backend is None:
            raise GatewayError(f"no chat backend configured for role {role.value}")
        return backend

    def complete(
        self, role: ModelRole, messages: tuple[ChatMessage, ...], max_tokens: int | None = None
    ) -> ModelReply:
        """Run one chat completion with retries on transient failures.

        Image policy is enforced at dispatch: text-only roles must not carry
        images and VLM roles carry at most one image per message. Exhausting
        the retry budget yields a ``backend_error`` reply rather than an
        exception; fixture misses always propagate.
        """
        if role is ModelRole.DETECTOR:
            raise GatewayInputError("detector requests do not use chat messages")
        if not messages:
            raise GatewayInputError("messages must be non-empty")
        for message in messages:
            if role in LLM_ROLES and message.images:
                raise GatewayInputError(f"role {role.value} must not transmit image payloads")
            if role in VLM_ROLES and len(message.images) > 1:
                raise GatewayInputError(f"role {role.value} messages carry at most one image")
        budget = max_tokens if max_tokens is not None else self.config.summary_budget_tokens
        backend = self._chat_backend_for(role)

        start = time.monotonic()
        attempts = self.config.retries + 1
        last_error: BackendError | None = None
        for attempt in range(attempts):
            try:
                text = backend.complete_raw(role, messages, budget)
                latency = int((time.monotonic() - start) * 1000)
                if not text:
                    return ModelReply("", FinishReason.LENGTH, latency)
                return ModelReply(text, FinishReason.STOP, latency)
            except FixtureMissError:
                raise
            except BackendError as exc:
                last_error = exc
                if not exc.transient or attempt == attempts - 1:
                    break
                self._sleep(self.config.backoff_base_s * (2**attempt))
        latency = int((time.monotonic() - start) * 1000)
        return ModelReply(f"backend error: {last_error}", FinishReason.BACKEND_ERROR, latency)

    def detect(
        self, image: ImagePayload, vocabulary: list[str], confidence_floor: float
    ) -> DetectionReply:
        """Detect regions for the given phrases, normalizing the raw hits.

        Boxes are clamped to image bounds (clamped indices flagged in the
        reply), filtered by the confidence floor, and sorted by descending
        confidence. Transient backend failures are retried like completions;
        a persistent failure raises :class:`BackendError`.
        """
        if not vocabulary:
            raise GatewayInputError("detector vocabulary must be non-empty")
        if self._detector is None:
            raise GatewayError("no detector backend configured")
        width, height = image_dimensions(image)

        attempts = self.config.retries + 1
        raw: list[RawBox] | None = None
        for attempt in range(attempts):
            try:
                raw = self._detector.detect_raw(image, vocabulary, confidence_floor)
                break
            except FixtureMissError:
                raise
            except BackendError as exc:
                if not exc.transient or attempt == attempts - 1:
                    raise BackendError(f"detector failed after {attempt + 1} attempts: {exc}") from exc
                self._sleep(self.config.backoff_base_s * (2**attempt))
        assert raw is not None

        boxes: list[BoundingBox] = []
        labels: list[str] = []
        clamped: list[int] = []
        for hit in raw:
            if hit.score < confidence_floor:
                continue
            x0, y0 = max(0, hit.x0), max(0, hit.y0)
            x1, y1 = min(width, hit.x1), min(height, hit.y1)
            if x0 >= x1 or y0 >= y1:
                continue  # fully outside the image
            if (x0, y0, x1, y1) != (hit.x0, hit.y0, hit.x1, hit.y1):
                clamped.append(len(boxes))
            boxes.append(BoundingBox(x0, y0, x1, y1, min(1.0, max(0.0, hit.score))))
            labels.append(hit.label)
        order = sorted(range(len(boxes)), key=lambda i: (-boxes[i].confidence, i))
        return DetectionReply(
            boxes=tuple(boxes[i] for i in order),
            labels=tuple(labels[i] for i in order),
            clamped=tuple(sorted(order.index(i) for i in clamped)),
        )


def image_dimensions(image: ImagePayload) -> tuple[int, int]:
    try:
        with Image.open(io.BytesIO(image.data)) as img:
            return img.width, img.height
    except Exception as exc:
        raise GatewayInputError(f"undecodable image: {exc}") from exc


# --- HTTP backends ---


class HttpChatBackend:
    """OpenAI-compatible chat-completions client.

    Sends ``POST {base_url}/v1/chat/completions`` with temperature pinned to 0
    for reproducibility; images travel as base64 data URLs.
    """

    def __init__(
        self,
        base_url: str,
        api_key: str = "",
        model: str = "llava-1.6-7b",
        timeout_s: float = 60.0,
    ) -> None:
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.model = model
        self.timeout_s = timeout_s

    def complete_raw(
        self, role: ModelRole, messages: tuple[ChatMessage, ...], max_tokens: int
    ) -> str:
        payload = {
            "model": self.model,
            "messages": [self._wire_message(m) for m in messages],
            "max_tokens": max_tokens,
            "temperature": 0,
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            response = httpx.post(
                f"{self.base_url}/v1/chat/completions",
                json=payload,
                headers=headers,
                timeout=self.timeout_s,
            )
        except httpx.TimeoutException as exc:
            raise BackendError(f"chat request timed out after {self.timeout_s}s", transient=True) from exc
        except httpx.HTTPError as exc:
            raise BackendError(f"chat transport error: {exc}", transient=True) from exc
        if response.status_code == 429 or response.status_code >= 500:
            raise BackendError(f"chat backend returned {response.status_code}", transient=True)
        if response.status_code >= 400:
            raise BackendError(f"chat backend rejected request: {response.status_code} {response.text[:200]}")
        try:
            return response.json()["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, ValueError) as exc:
            raise BackendError(f"malformed chat response: {exc}") from exc

    @staticmethod
    def _wire_message(message: ChatMessage) -> dict[str, Any]:
        if not message.images:
            return {"role": message.role, "content": message.text}
        content: list[dict[str, Any]] = [{"type": "text", "text": message.text}]
        for image in message.images:
            data_url = f"data:image/{image.media_type};base64," + base64.b64encode(image.data).decode()
            content.append({"type": "image_url", "image_url": {"url": data_url}})
        return {"role": message.role, "content": content}


class HttpDetectorBackend:
    """Open-vocabulary detector over a simple JSON endpoint.

    ``POST {detector_url}/detect`` with ``{image_b64, phrases, box_threshold}``;
    the reply is ``{boxes: [{x0, y0, x1, y1, score, label}]}``.
    """

    def __init__(self, base_url: str, timeout_s: float = 60.0) -> None:
        self.base_url = base_url.rstrip("/")
        self.timeout_s = timeout_s

    def detect_raw(self, image: ImagePayload, phrases: list[str], threshold: float) -> list[RawBox]:
        payload = {
            "image_b64": base64.b64encode(image.data).decode(),
            "phrases": phrases,
            "box_threshold": threshold,
        }
        try:
            response = httpx.post(f"{self.base_url}/detect", json=payload, timeout=self.timeout_s)
        except httpx.TimeoutException as exc:
            raise BackendError(f"detector timed out after {self.timeout_s}s", transient=True) from exc
        except httpx.HTTPError as exc:
            raise BackendError(f"detector transport error: {exc}", transient=True) from exc
        if response.status_code == 429 or response.status_code >= 500:
            raise BackendError(f"detector returned {response.status_code}", transient=True)
        if response.status_code >= 400:
            raise BackendError(f"detector rejected request: {response.status_code}")
        try:
            boxes = response.json()["boxes"]
            return [
                RawBox(
                    int(b["x0"]), int(b["y0"]), int(b["x1"]), int(b["y1"]),
                    float(b["score"]), str(b.get("label", "")),
                )
                for b in boxes
            ]
        except (KeyError, TypeError, ValueError) as exc:
            raise BackendError(f"malformed detector response: {exc}") from exc


# --- Scripted backend ---


@dataclass
class FixtureEntry:
    role: ModelRole
    match: str  # substring over the rendered prompt
    reply: str
    reusable: bool = False
    consumed: bool = False


@dataclass
class DetectFixture:
    match: str  # substring over the comma-joined phrase list; "*" matches anything
    boxes: list[RawBox] = field(default_factory=list)
    reusable: bool = False
    consumed: bool = False


class ScriptedBackend:
    """Deterministic chat + detector backend driven by an ordered fixture list.

    Dispatch picks the first unconsumed entry whose role matches and whose
    ``match`` substring occurs in the rendered prompt. Matching is substring
    based so prompt templates can evolve without invalidating fixtures, and a
    miss raises :class:`FixtureMissError` so drift never passes silently.
    Consumption is serialized under a lock, keeping concurrent runs
    deterministic in what they observe.
    """

    def __init__(
        self, entries: list[FixtureEntry] | None = None, detects: list[DetectFixture] | None = None
    ) -> None:
        # Consumption state belongs to this backend: snapshot the entries so
        # callers can reuse one fixture list across many backends.
        self.entries = [dataclasses.replace(e, consumed=False) for e in entries or []]
        self.detects = [dataclasses.replace(d, consumed=False) for d in detects or []]
        self.call_log: list[tuple[ModelRole, str]] = []
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: Path) -> "ScriptedBackend":
        doc = json.loads(path.read_text(encoding="utf-8"))
        if doc.get("schema") != FIXTURES_SCHEMA:
            raise ValueError(f"{path}: expected fixture schema {FIXTURES_SCHEMA!r}")
        entries = [
            FixtureEntry(
                role=ModelRole(e["role"]),
                match=e["match"],
                reply=e["reply"],
                reusable=bool(e.get("reusable", False)),
            )
            for e in doc.get("chat", [])
        ]
        detects = [
            DetectFixture(
                match=d.get("match", "*"),
                boxes=[
                    RawBox(
                        int(b["x0"]), int(b["y0"]), int(b["x1"]), int(b["y1"]),
                        float(b["score"]), str(b.get("label", "")),
                    )
                    for b in d.get("boxes", [])
                ],
                reusable=bool(d.get("reusable", False)),
            )
            for d in doc.get("detect", [])
        ]
        return cls(entries, detects)

    def complete_raw(
        self, role: ModelRole, messages: tuple[ChatMessage, ...], max_tokens: int
    ) -> str:
        prompt = render_prompt(messages)
        with self._lock:
            self.call_log.append((role, prompt))
            for entry in self.entries:
                if entry.consumed or entry.role is not role:
                    continue
                if entry.match in prompt:
                    if not entry.reusable:
                        entry.consumed = True
                    return entry.reply
        raise FixtureMissError(
            f"no scripted reply for role {role.value}; prompt starts: {prompt[:120]!r}"
        )

    def detect_raw(self, image: ImagePayload, phrases: list[str], threshold: float) -> list[RawBox]:
        key = ", ".join(phrases)
        with self._lock:
            self.call_log.append((ModelRole.DETECTOR, key))
            for fixture in self.detects:
                if fixture.consumed:
                    continue
                if fixture.match == "*" or fixture.match in key:
                    if not fixture.reusable:
                        fixture.consumed = True
                    return list(fixture.boxes)
        raise FixtureMissError(f"no scripted detection for phrases {key!r}")

    def prompts_for(self, role: ModelRole) -> list[str]:
        with self._lock:
            return [p for r, p in self.call_log if r is role]


def parse_integer_list(text: str) -> list[int]:
    """Pull integers out of a free-form model reply (``"1, 3"`` -> [1, 3])."""
    return [int(m) for m in re.findall(r"\d+", text)]
