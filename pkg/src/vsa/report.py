"""Report rendering: evaluation tables, delimited score output, and
matplotlib figures written next to them; plus trace replay as a transcript
and per-region search-graph figures."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .evalharness import CATEGORIES, ModeComparison, ScoreReport, format_comparison
from .trace import EventKind, TraceEvent


def write_eval_outputs(out_dir: Path, reports: list[ScoreReport]) -> dict[str, Path]:
    """Write report.json, report.txt, scores.csv, and figures/scores.png."""
    out_dir.mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}

    paths["json"] = out_dir / "report.json"
    paths["json"].write_text(
        json.dumps({"reports": [r.to_dict() for r in reports]}, indent=2, ensure_ascii=False),
        encoding="utf-8",
    )

    paths["text"] = out_dir / "report.txt"
    if len(reports) >= 2:
        table = format_comparison(ModeComparison(reports))
    else:
        report = reports[0]
        lines = [f"Mode: {report.mode}"]
        for category in CATEGORIES:
            lines.append(f"  {category}: {report.category_mean(category):.1f}")
        lines.append(f"  overall: {report.overall():.1f}")
        table = "\n".join(lines)
    metadata = "\n".join(f"# {key}: {value}" for key, value in reports[0].metadata.items())
    paths["text"].write_text(metadata + "\n" + table + "\n", encoding="utf-8")

    paths["csv"] = out_dir / "scores.csv"
    with paths["csv"].open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["mode", "case_id", "category", "score", "error"])
        for report in reports:
            for case in report.cases:
                writer.writerow([report.mode, case.case_id, case.category, case.score, case.error])

    figures = out_dir / "figures"
    figures.mkdir(exist_ok=True)
    paths["figure"] = figures / "scores.png"
    _score_figure(reports, paths["figure"])
    return paths


def _score_figure(reports: list[ScoreReport], path: Path) -> None:
    groups = list(CATEGORIES) + ["overall"]
    width = 0.8 / max(1, len(reports))
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for i, report in enumerate(reports):
        values = [report.category_mean(c) for c in CATEGORIES] + [report.overall()]
        positions = [g + i * width for g in range(len(groups))]
        ax.bar(positions, values, width=width, label=report.mode)
    ax.set_xticks([g + width * (len(reports) - 1) / 2 for g in range(len(groups))])
    ax.set_xticklabels(groups)
    ax.set_ylabel("judge score (%)")
    ax.set_ylim(0, 100)
    ax.legend()
    ax.set_title("Per-category judge scores by mode")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def replay_transcript(events: list[TraceEvent]) -> str:
    """Human-readable rendering of one trace."""
    lines = []
    for event in events:
        payload = event.payload
        kind = event.kind
        if kind is EventKind.QUERY_RECEIVED:
            detail = f"mode={payload.get('mode')} prompt={payload.get('prompt_text')!r}"
        elif kind is EventKind.REGIONS_DETECTED:
            detail = (
                f"{len(payload.get('regions', []))} region(s) in "
                f"{payload.get('image_width')}x{payload.get('image_height')} image"
                + (" [fallback]" if payload.get("fallback_used") else "")
            )
        elif kind is EventKind.CAPTION_READY:
            detail = f"region {payload.get('region_index')}: {payload.get('text')!r}"
        elif kind is EventKind.FORMULATION_READY:
            detail = f"region {payload.get('region_index')}: {payload.get('text')!r}"
        elif kind is EventKind.SUBQUESTIONS_PLANNED:
            questions = ", ".join(s["text"] for s in payload.get("subquestions", []))
            detail = f"under {payload.get('parent_node_id')}: {questions or '(none)'}"
        elif kind is EventKind.SEARCH_ISSUED:
            detail = f"{payload.get('node_id')}: {payload.get('query')!r}"
        elif kind is EventKind.PAGES_FETCHED:
            ok = sum(1 for p in payload.get("pages", []) if p.get("ok"))
            detail = f"{payload.get('node_id')}: {ok}/{len(payload.get('pages', []))} pages fetched"
        elif kind is EventKind.PAGES_SELECTED:
            detail = (
                f"{payload.get('node_id')}: selected {payload.get('selected')}"
                f" of {len(payload.get('candidates', []))}"
                + (" [fallback]" if payload.get("fallback") else "")
            )
        elif kind is EventKind.RESPONSE_SUMMARIZED:
            detail = f"{payload.get('node_id')}: {payload.get('text')!r}"
        elif kind is EventKind.KNOWLEDGE_SUMMARIZED:
            detail = f"region {payload.get('region_index')} level {payload.get('level')}: {payload.get('text')!r}"
        elif kind is EventKind.SUFFICIENCY_JUDGED:
            verdict = "sufficient" if payload.get("sufficient") else "insufficient"
            detail = f"region {payload.get('region_index')} level {payload.get('level')}: {verdict}"
        elif kind is EventKind.ANSWER_READY:
            partial = " [partial]" if payload.get("partial") else ""
            detail = f"{payload.get('text')!r}{partial}"
        else:
            detail = json.dumps(payload, ensure_ascii=False)
        lines.append(f"[{event.sequence_no:>3}] {kind.value:<22} {detail}")
    return "\n".join(lines)


def graph_figures(events: list[TraceEvent], out_dir: Path) -> list[Path]:
    """Draw each region's search graph (as reconstructed from the trace) to
    a PNG under ``out_dir``; returns the written paths."""
    regions: dict[int, dict] = {}
    for event in events:
        payload = event.payload
        if event.kind is EventKind.SUBQUESTIONS_PLANNED:
            region = regions.setdefault(
                payload["region_index"], {"nodes": {}, "edges": [], "root": None}
            )
            parent = payload["parent_node_id"]
            if parent.endswith(".root"):
                region["root"] = parent
                region["nodes"].setdefault(parent, {"level": 0, "label": parent})
            for sub in payload["subquestions"]:
                region["nodes"][sub["node_id"]] = {
                    "level": payload["level"],
                    "label": sub["text"],
                }
                region["edges"].append((parent, sub["node_id"]))

    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    for region_index, graph in sorted(regions.items()):
        by_level: dict[int, list[str]] = {}
        for node_id, info in graph["nodes"].items():
            by_level.setdefault(info["level"], []).append(node_id)
        positions: dict[str, tuple[float, float]] = {}
        for level, node_ids in sorted(by_level.items()):
            for i, node_id in enumerate(sorted(node_ids)):
                positions[node_id] = (i - (len(node_ids) - 1) / 2, -level)

        fig, ax = plt.subplots(figsize=(8, 4.5))
        for parent, child in graph["edges"]:
            if parent in positions and child in positions:
                (x0, y0), (x1, y1) = positions[parent], positions[child]
                ax.plot([x0, x1], [y0, y1], color="gray", linewidth=1, zorder=1)
        for node_id, (x, y) in positions.items():
            ax.scatter([x], [y], s=400, color="#4c72b0", zorder=2)
            ax.annotate(
                node_id.split(".")[-1],
                (x, y),
                ha="center",
                va="center",
                color="white",
                fontsize=8,
                zorder=3,
            )
        ax.set_title(f"Region {region_index} search graph")
        ax.axis("off")
        fig.tight_layout()
        path = out_dir / f"region{region_index}_graph.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written
