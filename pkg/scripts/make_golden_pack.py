#!/usr/bin/env python3
"""Regenerate the bundled golden fixture pack and the frozen golden trace.

The pack scripts a full two-region run: two sub-questions planned per node,
judge INSUFFICIENT at level 1 and SUFFICIENT at level 2. Region 0's level-2
planner replies consist mostly of duplicates, so that chain ends at 4 nodes
and exercises the dedup path; region 1 expands fully to 7 nodes.

Run from the repo root:  python3 scripts/make_golden_pack.py
"""

from __future__ import annotations

import io
import json
import sys
from pathlib import Path

from PIL import Image, ImageDraw

REPO = Path(__file__).resolve().parent.parent
PACK = REPO / "tests" / "fixtures" / "golden_pack"
GOLDEN_TRACE = REPO / "tests" / "fixtures" / "golden_trace.jsonl"

sys.path.insert(0, str(REPO / "src"))

from vsa.chain import build_query  # noqa: E402
from vsa.model import CorrelatedFormulation, ImagePayload, QueryMode, SubQuestion, UserQuery  # noqa: E402
from vsa.pipeline import deterministic_query_id, load_fixture_deps, run_query  # noqa: E402
from vsa.retrieval import normalize_query  # noqa: E402
from vsa.trace import TraceRecorder, check_trace_order, normalize_trace  # noqa: E402

PROMPT = "What brand is the red handbag and when was it released?"

CAPTION_0 = "A glossy red leather handbag with a gold clasp and short handles."
CAPTION_1 = "White low-top sneakers with red accents on the sole."
FORMULATION_0 = (
    "A glossy red leather handbag with a gold clasp, displayed beside white low-top sneakers. "
    "The pairing suggests a fashion product showcase."
)
FORMULATION_1 = (
    "White low-top sneakers with red accents, displayed beside a red designer handbag. "
    "The arrangement suggests a coordinated fashion shoot."
)

Q_R0 = [
    "What brand is the red handbag with a gold clasp?",
    "When was this red handbag released?",
    "What is the price of the Maison Vergne Aurelie handbag?",
]
Q_R1 = [
    "What sneaker model is shown with red accents?",
    "Are these sneakers a limited edition?",
    "When did the Velocitas Corsa Court release?",
    "What colorways exist for the Corsa Court?",
    "How many pairs of the limited Corsa Court were made?",
    "Where can the limited Corsa Court be bought?",
]

RESPONSES = {
    Q_R0[0]: "Fashion blogs attribute the red gold-clasp handbag to Maison Vergne, most likely the Aurelie line.",
    Q_R0[1]: "Retail listings indicate the Aurelie handbag line first shipped in spring 2024.",
    Q_R0[2]: "The Maison Vergne Aurelie retails for 980 euros and launched on 18 April 2024.",
    Q_R1[0]: "Sneaker forums identify the silhouette as the Velocitas Corsa Court low-top.",
    Q_R1[1]: "Collector posts mention a limited run of the Corsa Court but give no numbers.",
    Q_R1[2]: "Velocitas released the Corsa Court on 2 June 2024 through its own stores.",
    Q_R1[3]: "The Corsa Court ships in white with red accents, all white, and a navy edition.",
    Q_R1[4]: "The launch run was limited to 5,000 numbered pairs worldwide.",
    Q_R1[5]: "Numbered pairs sold through Velocitas stores and the brand's web shop.",
}

KNOWLEDGE = {
    ("r0", 1): "The handbag appears to be the Maison Vergne Aurelie, released around spring 2024, though the exact launch date is unconfirmed.",
    ("r0", 2): "The handbag is the Maison Vergne Aurelie, launched 18 April 2024 at 980 euros.",
    ("r1", 1): "The sneakers are likely the Velocitas Corsa Court low-top; a limited edition is rumored but unverified.",
    ("r1", 2): "The sneakers are the Velocitas Corsa Court low-top, released 2 June 2024 in a numbered run of 5,000 pairs, sold in three colorways.",
}

FINAL_ANSWER = (
    "The red handbag is the Maison Vergne Aurelie, released on 18 April 2024 and priced at 980 euros. "
    "The sneakers beside it are the Velocitas Corsa Court low-top, released 2 June 2024 as a numbered run of 5,000 pairs."
)

URLS = {
    "stylenotes": "https://stylenotes.example/vergne-aurelie-review",
    "fashionwire": "https://fashionwire.example/spring-releases-2024",
    "maisonvergne": "https://maisonvergne.example/collections/aurelie",
    "pricewatch": "https://pricewatch.example/bags/aurelie",
    "kicksarchive": "https://kicksarchive.example/velocitas-corsa-court",
    "velocitas": "https://velocitas.example/press/corsa-court-launch",
    "sneakerforum": "https://sneakerforum.example/threads/corsa-court-id",
    "collectorsdigest": "https://collectorsdigest.example/numbered-runs-2024",
}

# results per sub-question, and the scripted selector reply for that node
SEARCH_PLAN = {
    Q_R0[0]: (["stylenotes", "maisonvergne", "fashionwire"], "1, 2"),
    Q_R0[1]: (["fashionwire", "maisonvergne", "stylenotes"], "1, 2"),
    Q_R0[2]: (["pricewatch", "maisonvergne", "stylenotes"], "1"),
    Q_R1[0]: (["kicksarchive", "sneakerforum", "velocitas"], "1, 2"),
    Q_R1[1]: (["sneakerforum", "collectorsdigest", "kicksarchive"], "2, 1"),
    Q_R1[2]: (["velocitas", "kicksarchive", "collectorsdigest"], "1"),
    Q_R1[3]: (["kicksarchive", "velocitas", "sneakerforum"], "5, 1"),  # 5 is out of range
    Q_R1[4]: (["collectorsdigest", "velocitas", "sneakerforum"], "1, 2"),
    Q_R1[5]: (["velocitas", "collectorsdigest", "kicksarchive"], "none"),  # rank fallback
}


def page_html(title: str, heading: str, paragraphs: list[str]) -> str:
    body = "\n".join(f"<p>{p}</p>" for p in paragraphs)
    return f"""<!DOCTYPE html>
<html lang="en">
<head>
<meta charset="utf-8">
<title>{title}</title>
<script>var page = true;</script>
</head>
<body>
<header><h1>{title.split("|")[0].strip()}</h1></header>
<nav><a href="/">Home</a> <a href="/archive">Archive</a> <a href="/about">About</a></nav>
<main>
<h1>{heading}</h1>
{body}
</main>
<aside>Subscribe for updates.</aside>
<footer>All rights reserved.</footer>
</body>
</html>
"""


PAGES = {
    "stylenotes": page_html(
        "Style Notes | Aurelie first look",
        "First look: the Maison Vergne Aurelie bag",
        [
            "Maison Vergne's new Aurelie handbag arrived at our studio this week, and the glossy red leather reads even deeper in person.",
            "The gold clasp is the signature of the line, machined in-house and stamped with the atelier mark.",
            "Expect the Aurelie to anchor the maison's spring 2024 accessories push.",
        ],
    ),
    "fashionwire": page_html(
        "Fashion Wire | Spring 2024 releases",
        "Spring 2024: the accessory releases that matter",
        [
            "Among the season's launches, Maison Vergne confirmed its Aurelie handbag for an April 2024 release.",
            "The house says the first shipment reaches boutiques on 18 April 2024.",
            "Velocitas also teased a numbered sneaker drop for early summer.",
        ],
    ),
    "maisonvergne": page_html(
        "Maison Vergne | Aurelie collection",
        "The Aurelie collection",
        [
            "Aurelie is a structured handbag in glossy red calf leather with a hand-polished gold clasp.",
            "The line launched on 18 April 2024 and is priced at 980 euros in continental boutiques.",
            "Each bag carries a serial tag under the interior pocket.",
        ],
    ),
    "pricewatch": page_html(
        "PriceWatch | Maison Vergne Aurelie",
        "Price history: Maison Vergne Aurelie",
        [
            "The Aurelie listed at 980 euros at launch and has held its price since.",
            "Boutique stock has stayed steady; no markdowns were observed in the first quarter after release.",
        ],
    ),
    "kicksarchive": page_html(
        "Kicks Archive | Velocitas Corsa Court",
        "Velocitas Corsa Court low-top, catalogued",
        [
            "The Corsa Court is Velocitas's court-inspired low-top, first released on 2 June 2024.",
            "Catalogue entries list three colorways: white with red accents, triple white, and navy.",
            "The launch batch was numbered, a first for the brand.",
        ],
    ),
    "velocitas": page_html(
        "Velocitas | Corsa Court launch",
        "Press: Corsa Court launch details",
        [
            "Velocitas introduces the Corsa Court low-top, releasing 2 June 2024 through our stores and web shop.",
            "The launch edition is limited to 5,000 numbered pairs worldwide.",
            "White with red accents leads the range; further colorways follow in autumn.",
        ],
    ),
    "sneakerforum": page_html(
        "Sneaker Forum | Corsa Court identification",
        "Thread: help identifying this low-top",
        [
            "OP: White low-top with red accents on the sole, any ideas which model this is?",
            "Reply: That silhouette is the Velocitas Corsa Court, the stitching on the toe gives it away.",
            "Reply: Mine is numbered 1287 of 5000, so the launch run was definitely limited.",
        ],
    ),
    "collectorsdigest": page_html(
        "Collectors Digest | Numbered runs of 2024",
        "The year in numbered releases",
        [
            "Velocitas capped the Corsa Court launch at 5,000 numbered pairs, selling through its own channels only.",
            "Secondary prices rose within weeks, a pattern we saw across 2024's numbered drops.",
        ],
    ),
}


def make_image() -> bytes:
    img = Image.new("RGB", (64, 48), (214, 214, 210))
    draw = ImageDraw.Draw(img)
    draw.rectangle((4, 6, 29, 39), fill=(178, 24, 43))  # the handbag
    draw.rectangle((34, 8, 59, 43), fill=(245, 245, 245))  # the sneakers
    draw.rectangle((40, 20, 53, 24), fill=(178, 24, 43))  # red accent stripe
    buffer = io.BytesIO()
    img.save(buffer, format="PNG")
    return buffer.getvalue()


def chat_entries() -> list[dict]:
    e: list[dict] = []

    def add(role: str, match: str, reply: str) -> None:
        e.append({"role": role, "match": match, "reply": reply})

    add("llm_planner", "objects or entities", "handbag\nsneakers")
    add("vlm_captioner", "User's question: " + PROMPT, CAPTION_0)
    add("vlm_captioner", "User's question: " + PROMPT, CAPTION_1)
    add("vlm_generator", "Caption of this object: " + CAPTION_0, FORMULATION_0)
    add("vlm_generator", "Caption of this object: " + CAPTION_1, FORMULATION_1)

    def add_node(question: str) -> None:
        add("llm_searcher", "Sub-question: " + question, SEARCH_PLAN[question][1])
        add("llm_searcher", "Sub-question: " + question, RESPONSES[question])

    # region 0
    add("llm_planner", "What we know about the object:\n" + FORMULATION_0, f"{Q_R0[0]}\n{Q_R0[1]}")
    add_node(Q_R0[0])
    add_node(Q_R0[1])
    add("llm_searcher", "[r0.k1.0]", KNOWLEDGE[("r0", 1)])
    add("llm_judge", "exact launch date is unconfirmed", "INSUFFICIENT")
    add("llm_planner", "Earlier sub-question: " + Q_R0[0], f"{Q_R0[2]}\n{Q_R0[1]}")
    add("llm_planner", "Earlier sub-question: " + Q_R0[1],
        "WHEN WAS THIS RED HANDBAG RELEASED?\nWhat brand is the red handbag with a gold clasp?")
    add_node(Q_R0[2])
    add("llm_searcher", "[r0.k2.0]", KNOWLEDGE[("r0", 2)])
    add("llm_judge", "launched 18 April 2024 at 980 euros", "SUFFICIENT")

    # region 1
    add("llm_planner", "What we know about the object:\n" + FORMULATION_1, f"{Q_R1[0]}\n{Q_R1[1]}")
    add_node(Q_R1[0])
    add_node(Q_R1[1])
    add("llm_searcher", "[r1.k1.0]", KNOWLEDGE[("r1", 1)])
    add("llm_judge", "rumored but unverified", "INSUFFICIENT")
    add("llm_planner", "Earlier sub-question: " + Q_R1[0], f"{Q_R1[2]}\n{Q_R1[3]}")
    add("llm_planner", "Earlier sub-question: " + Q_R1[1], f"{Q_R1[4]}\n{Q_R1[5]}")
    add_node(Q_R1[2])
    add_node(Q_R1[3])
    add_node(Q_R1[4])
    add_node(Q_R1[5])
    add("llm_searcher", "[r1.k2.0]", KNOWLEDGE[("r1", 2)])
    add("llm_judge", "numbered run of 5,000 pairs", "SUFFICIENT")

    add("vlm_generator", "Sources:", FINAL_ANSWER)
    return e


def search_fixture() -> dict:
    formulations = {
        **{q: FORMULATION_0 for q in Q_R0},
        **{q: FORMULATION_1 for q in Q_R1},
    }
    queries = {}
    for question, (page_keys, _reply) in SEARCH_PLAN.items():
        formulation = CorrelatedFormulation(0, formulations[question])
        sub_question = SubQuestion("tmp", 1, 0, question)
        query = normalize_query(build_query(formulation, sub_question))
        queries[query] = [
            {"url": URLS[key], "title": PAGES[key].split("<title>")[1].split("</title>")[0], "snippet": f"About: {question}"}
            for key in page_keys
        ]
    return {"schema": "searchfix_v1", "queries": queries}


def main() -> None:
    PACK.mkdir(parents=True, exist_ok=True)
    pages_dir = PACK / "pages"
    pages_dir.mkdir(exist_ok=True)

    image_bytes = make_image()
    (PACK / "image.png").write_bytes(image_bytes)
    (PACK / "question.txt").write_text(PROMPT, encoding="utf-8")

    boxes = [
        {"x0": 4, "y0": 6, "x1": 30, "y1": 40, "score": 0.92, "label": "handbag"},
        {"x0": 34, "y0": 8, "x1": 60, "y1": 44, "score": 0.81, "label": "sneakers"},
    ]
    fixtures = {
        "schema": "fixtures_v1",
        "chat": chat_entries(),
        "detect": [{"match": "*", "boxes": boxes}],
    }
    (PACK / "fixtures.json").write_text(json.dumps(fixtures, indent=2, ensure_ascii=False), encoding="utf-8")
    (PACK / "search.json").write_text(
        json.dumps(search_fixture(), indent=2, ensure_ascii=False), encoding="utf-8"
    )

    index = {"schema": "pagesfix_v1", "pages": {}}
    for key, html in PAGES.items():
        filename = f"{key}.html"
        (pages_dir / filename).write_text(html, encoding="utf-8")
        index["pages"][URLS[key]] = {"file": filename, "content_type": "text/html; charset=utf-8"}
    (pages_dir / "pages.json").write_text(json.dumps(index, indent=2), encoding="utf-8")

    # run the pipeline against the freshly written pack and freeze the trace
    deps = load_fixture_deps(PACK)
    image = ImagePayload(image_bytes, "png")
    query_id = deterministic_query_id(image, PROMPT, QueryMode.FULL)
    recorder = TraceRecorder()
    answer = run_query(UserQuery(query_id, image, PROMPT, QueryMode.FULL), deps, recorder)

    events = recorder.events()
    problems = check_trace_order(events)
    if problems:
        raise SystemExit(f"trace order violations: {problems}")
    GOLDEN_TRACE.write_bytes(normalize_trace(recorder.encoded()))
    print(f"pack: {PACK}")
    print(f"golden trace: {GOLDEN_TRACE} ({len(events)} events)")
    print(f"answer: {answer.text[:80]}...")


if __name__ == "__main__":
    main()
