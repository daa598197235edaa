from __future__ import annotations

import io
from pathlib import Path

import pytest
from PIL import Image, ImageDraw

from vsa.gateway import DetectFixture, FixtureEntry, Gateway, GatewayConfig, ModelRole, RawBox, ScriptedBackend
from vsa.model import ImagePayload
from vsa.templates import TemplateCatalog

FIXTURES = Path(__file__).parent / "fixtures"


def make_png(width: int = 64, height: int = 48, rects: list[tuple] | None = None) -> bytes:
    """A small PNG with optional colored rectangles (box, fill) drawn on gray."""
    img = Image.new("RGB", (width, height), (200, 200, 200))
    draw = ImageDraw.Draw(img)
    for box, fill in rects or []:
        draw.rectangle(box, fill=fill)
    buffer = io.BytesIO()
    img.save(buffer, format="PNG")
    return buffer.getvalue()


def image_payload(width: int = 64, height: int = 48) -> ImagePayload:
    return ImagePayload(make_png(width, height), "png")


def entry(role: ModelRole, match: str, reply: str, reusable: bool = False) -> FixtureEntry:
    return FixtureEntry(role=role, match=match, reply=reply, reusable=reusable)


def scripted_gateway(
    entries: list[FixtureEntry] | None = None,
    detects: list[DetectFixture] | None = None,
) -> tuple[Gateway, ScriptedBackend]:
    backend = ScriptedBackend(entries or [], detects or [])
    gateway = Gateway(
        chat_backend=backend,
        detector_backend=backend,
        config=GatewayConfig(backoff_base_s=0.0),
    )
    return gateway, backend


def boxes_fixture(boxes: list[tuple[int, int, int, int, float, str]], match: str = "*") -> DetectFixture:
    return DetectFixture(match=match, boxes=[RawBox(*b) for b in boxes])


class AnySearchProvider:
    """Returns the same result list for every query."""

    def __init__(self, urls: list[str]) -> None:
        self.urls = urls
        self.queries: list[str] = []

    def raw_search(self, query: str, top_k: int):
        from vsa.retrieval import SearchResult

        self.queries.append(query)
        return [
            SearchResult(i + 1, url, f"Title {i + 1}", f"Snippet {i + 1}")
            for i, url in enumerate(self.urls)
        ]


class DictFetcher:
    """Serves page bodies from an in-memory url -> html map."""

    def __init__(self, pages: dict[str, bytes]) -> None:
        self.pages = pages

    def fetch(self, url: str):
        from vsa.retrieval import FetchError, RawDocument

        if url not in self.pages:
            raise FetchError("not_found", url, "not in fixture map")
        return RawDocument(
            url=url,
            http_status=200,
            content_type="text/html",
            body=self.pages[url],
            fetched_at="1970-01-01T00:00:00Z",
            requested_url=url,
        )


def simple_page(title: str, text: str) -> bytes:
    return f"<html><head><title>{title}</title></head><body><p>{text}</p></body></html>".encode()


@pytest.fixture
def templates() -> TemplateCatalog:
    return TemplateCatalog.bundled()
