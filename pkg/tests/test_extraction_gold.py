"""Gold corpus: saved pages with hand-verified expected text, matched exactly."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from vsa.extraction import extract_text
from vsa.retrieval import RawDocument

GOLD_DIR = Path(__file__).parent / "fixtures" / "html_gold"
CASES = sorted(p.name for p in GOLD_DIR.iterdir() if p.is_dir())


def test_corpus_is_large_enough():
    assert len(CASES) >= 20


@pytest.mark.parametrize("case", CASES)
def test_gold_exact_match(case):
    directory = GOLD_DIR / case
    meta = json.loads((directory / "meta.json").read_text())
    doc = RawDocument(
        url=f"https://gold.test/{case}",
        http_status=200,
        content_type=meta["content_type"],
        body=(directory / "page.html").read_bytes(),
        fetched_at="1970-01-01T00:00:00Z",
    )
    expected = (directory / "expected.txt").read_text(encoding="utf-8")
    assert extract_text(doc).text == expected
