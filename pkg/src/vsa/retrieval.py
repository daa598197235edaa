"""Search-provider clients and page fetching.

Search results come from either a live JSON search API or a fixture file;
pages come from either a polite concurrent HTTP fetcher or a fixture
directory. Both sides sit behind small protocols so the chain never knows
which one it is talking to.
"""

from __future__ import annotations

import json
import re
import threading
import time
import urllib.robotparser
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Protocol
from urllib.parse import urlsplit

import httpx

SEARCHFIX_SCHEMA = "searchfix_v1"
PAGESFIX_SCHEMA = "pagesfix_v1"

TEXTUAL_CONTENT_TYPES = ("text/html", "application/xhtml+xml", "text/plain")


@dataclass
class RetrievalConfig:
    top_k: int = 10
    max_body_bytes: int = 1024 * 1024
    max_extracted_chars: int = 8000
    fetch_timeout_s: float = 10.0
    politeness_ms: int = 500
    chunk_chars: int = 2000
    max_parallel_fetches: int = 4
    max_redirects: int = 5
    user_agent: str = "vsa/0.1 (+https://example.invalid/vsa)"
    respect_robots: bool = True


@dataclass(frozen=True)
class SearchResult:
    rank: int
    url: str
    title: str
    snippet: str


@dataclass(frozen=True)
class RawDocument:
    url: str  # final URL after redirects
    http_status: int
    content_type: str
    body: bytes
    fetched_at: str
    requested_url: str = ""
    truncated: bool = False


class FetchError(Exception):
    """Typed fetch failure; recorded per page, never fatal to a chain."""

    def __init__(self, kind: str, url: str, detail: str) -> None:
        super().__init__(f"{kind}: {url}: {detail}")
        self.kind = kind
        self.url = url
        self.detail = detail


class RetrievalError(Exception):
    """Search provider failed after retries."""


def normalize_query(query: str) -> str:
    return re.sub(r"\s+", " ", query.strip()).lower()


class SearchProvider(Protocol):
    def raw_search(self, query: str, top_k: int) -> list[SearchResult]: ...


def search(provider: SearchProvider, query: str, top_k: int) -> list[SearchResult]:
    """Run one provider query, deduplicate by URL, and re-densify ranks."""
    if not query.strip():
        raise ValueError("query must be non-empty")
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    results = sorted(provider.raw_search(query, top_k), key=lambda r: r.rank)
    seen: set[str] = set()
    deduped: list[SearchResult] = []
    for result in results:
        if result.url in seen:
            continue
        seen.add(result.url)
        deduped.append(SearchResult(len(deduped) + 1, result.url, result.title, result.snippet))
        if len(deduped) == top_k:
            break
    return deduped


class FixtureSearchProvider:
    """Offline provider backed by a JSON map of normalized query -> results."""

    def __init__(self, queries: dict[str, list[dict]]) -> None:
        self._queries = queries

    @classmethod
    def from_file(cls, path: Path) -> "FixtureSearchProvider":
        doc = json.loads(path.read_text(encoding="utf-8"))
        if doc.get("schema") != SEARCHFIX_SCHEMA:
            raise ValueError(f"{path}: expected search fixture schema {SEARCHFIX_SCHEMA!r}")
        return cls(doc.get("queries", {}))

    def raw_search(self, query: str, top_k: int) -> list[SearchResult]:
        entries = self._queries.get(normalize_query(query), [])
        return [
            SearchResult(
                rank=int(e.get("rank", i + 1)),
                url=e["url"],
                title=e.get("title", ""),
                snippet=e.get("snippet", ""),
            )
            for i, e in enumerate(entries)
        ]


class HttpSearchProvider:
    """Generic JSON search API: GET {endpoint}?q=...&count=N with an optional key."""

    def __init__(self, endpoint: str, api_key: str = "", timeout_s: float = 10.0, retries: int = 2) -> None:
        self.endpoint = endpoint
        self.api_key = api_key
        self.timeout_s = timeout_s
        self.retries = retries

    def raw_search(self, query: str, top_k: int) -> list[SearchResult]:
        headers = {"Accept": "application/json"}
        if self.api_key:
            headers["X-API-Key"] = self.api_key
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                response = httpx.get(
                    self.endpoint,
                    params={"q": query, "count": top_k},
                    headers=headers,
                    timeout=self.timeout_s,
                )
                if response.status_code >= 500 or response.status_code == 429:
                    raise RetrievalError(f"search backend returned {response.status_code}")
                if response.status_code >= 400:
                    raise RetrievalError(
                        f"search backend rejected query: {response.status_code}"
                    ) from None
                items = response.json().get("results", [])
                return [
                    SearchResult(
                        rank=int(item.get("rank", i + 1)),
                        url=item["url"],
                        title=item.get("title", ""),
                        snippet=item.get("snippet", ""),
                    )
                    for i, item in enumerate(items)
                ]
            except (httpx.HTTPError, RetrievalError, KeyError, ValueError) as exc:
                last = exc
                if attempt < self.retries:
                    time.sleep(0.2 * (2**attempt))
        raise RetrievalError(f"search failed after {self.retries + 1} attempts: {last}")


class PageFetcher(Protocol):
    def fetch(self, url: str) -> RawDocument: ...


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds").replace("+00:00", "Z")


class HttpPageFetcher:
    """Polite HTTP fetcher: per-host serialization, start-to-start delay,
    redirect cap, body truncation, and robots.txt in live mode."""

    def __init__(self, config: RetrievalConfig | None = None) -> None:
        self.config = config or RetrievalConfig()
        self._host_locks: dict[str, threading.Lock] = {}
        self._next_allowed: dict[str, float] = {}
        self._robots: dict[str, urllib.robotparser.RobotFileParser | None] = {}
        self._registry_lock = threading.Lock()

    def _host_lock(self, host: str) -> threading.Lock:
        with self._registry_lock:
            return self._host_locks.setdefault(host, threading.Lock())

    def _robots_for(self, base: str, host: str) -> urllib.robotparser.RobotFileParser | None:
        with self._registry_lock:
            if host in self._robots:
                return self._robots[host]
        parser = urllib.robotparser.RobotFileParser()
        try:
            response = httpx.get(
                f"{base}/robots.txt",
                timeout=self.config.fetch_timeout_s,
                headers={"User-Agent": self.config.user_agent},
            )
            if response.status_code == 200:
                parser.parse(response.text.splitlines())
            else:
                parser = None  # no usable robots file: allow
        except httpx.HTTPError:
            parser = None
        with self._registry_lock:
            self._robots[host] = parser
        return parser

    def fetch(self, url: str) -> RawDocument:
        parts = urlsplit(url)
        if parts.scheme not in ("http", "https") or not parts.netloc:
            raise FetchError("bad_url", url, "absolute http(s) URL required")
        host = parts.netloc

        if self.config.respect_robots:
            robots = self._robots_for(f"{parts.scheme}://{host}", host)
            if robots is not None and not robots.can_fetch(self.config.user_agent, url):
                raise FetchError("robots_disallowed", url, "blocked by robots.txt")

        with self._host_lock(host):
            now = time.monotonic()
            wait = self._next_allowed.get(host, 0.0) - now
            if wait > 0:
                time.sleep(wait)
            self._next_allowed[host] = time.monotonic() + self.config.politeness_ms / 1000.0
            return self._request(url)

    def _request(self, url: str) -> RawDocument:
        try:
            with httpx.Client(
                follow_redirects=True,
                max_redirects=self.config.max_redirects,
                timeout=self.config.fetch_timeout_s,
                headers={"User-Agent": self.config.user_agent},
            ) as client:
                with client.stream("GET", url) as response:
                    status = response.status_code
                    final_url = str(response.url)
                    if status < 200 or status >= 300:
                        raise FetchError("http_status", url, f"status {status}")
                    content_type = response.headers.get("content-type", "").split(";")[0].strip().lower()
                    if content_type and content_type not in TEXTUAL_CONTENT_TYPES:
                        raise FetchError("unsupported_type", url, f"content-type {content_type}")
                    chunks: list[bytes] = []
                    total = 0
                    truncated = False
                    for chunk in response.iter_bytes():
                        room = self.config.max_body_bytes - total
                        if len(chunk) >= room:
                            chunks.append(chunk[:room])
                            total += room
                            truncated = len(chunk) > room
                            break
                        chunks.append(chunk)
                        total += len(chunk)
                    return RawDocument(
                        url=final_url,
                        http_status=status,
                        content_type=content_type or "text/html",
                        body=b"".join(chunks),
                        fetched_at=_utc_now(),
                        requested_url=url,
                        truncated=truncated,
                    )
        except httpx.TooManyRedirects as exc:
            raise FetchError("too_many_redirects", url, str(exc)) from exc
        except httpx.TimeoutException as exc:
            raise FetchError("timeout", url, str(exc)) from exc
        except httpx.HTTPError as exc:
            raise FetchError("transport", url, str(exc)) from exc


class FixturePageFetcher:
    """Offline fetcher resolving URLs to files listed in a pages.json index."""

    def __init__(self, root: Path, pages: dict[str, dict], max_body_bytes: int = 1024 * 1024) -> None:
        self._root = root
        self._pages = pages
        self._max_body_bytes = max_body_bytes

    @classmethod
    def from_dir(cls, root: Path, max_body_bytes: int = 1024 * 1024) -> "FixturePageFetcher":
        index = json.loads((root / "pages.json").read_text(encoding="utf-8"))
        if index.get("schema") != PAGESFIX_SCHEMA:
            raise ValueError(f"{root}/pages.json: expected schema {PAGESFIX_SCHEMA!r}")
        return cls(root, index.get("pages", {}), max_body_bytes)

    def fetch(self, url: str) -> RawDocument:
        entry = self._pages.get(url)
        if entry is None:
            raise FetchError("not_found", url, "url not in fixture index")
        status = int(entry.get("status", 200))
        if status < 200 or status >= 300:
            raise FetchError("http_status", url, f"status {status}")
        body = (self._root / entry["file"]).read_bytes()
        truncated = len(body) > self._max_body_bytes
        return RawDocument(
            url=url,
            http_status=status,
            content_type=entry.get("content_type", "text/html"),
            body=body[: self._max_body_bytes],
            fetched_at="1970-01-01T00:00:00Z",
            requested_url=url,
            truncated=truncated,
        )


@dataclass(frozen=True)
class FetchOutcome:
    url: str
    document: RawDocument | None = None
    error_kind: str = ""
    error_detail: str = ""

    @property
    def ok(self) -> bool:
        return self.document is not None


def fetch_many(fetcher: PageFetcher, urls: list[str], max_parallel: int = 4) -> list[FetchOutcome]:
    """Fetch URLs concurrently, preserving input order; failures are recorded
    per URL and never raise."""

    def one(url: str) -> FetchOutcome:
        try:
            return FetchOutcome(url=url, document=fetcher.fetch(url))
        except FetchError as exc:
            return FetchOutcome(url=url, error_kind=exc.kind, error_detail=exc.detail)

    if not urls:
        return []
    if max_parallel <= 1 or len(urls) == 1:
        return [one(url) for url in urls]
    with ThreadPoolExecutor(max_workers=max_parallel) as pool:
        return list(pool.map(one, urls))
