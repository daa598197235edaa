"""Closed-set evaluation harness.

Runs a question suite through the pipeline in one or more modes, scores each
answer with a judge model (0-100, absolute scoring with an optional reference
answer), and aggregates per-category and overall means. The overall score is
the unweighted mean over cases, not over categories; that choice, and the
fact that the judging rubric is absolute rather than pairwise, are recorded
in the report metadata since comparable benchmarks vary on both.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .gateway import ChatMessage, Gateway, ModelRole
from .model import ImagePayload, QueryMode, UserQuery
from .pipeline import PipelineDeps, PipelineError, run_query
from .templates import TemplateCatalog
from .trace import TraceRecorder

SUITE_SCHEMA = "suite_v1"
CATEGORIES = ("conversation", "detail", "reasoning")

MEDIA_TYPE_BY_SUFFIX = {".png": "png", ".jpg": "jpeg", ".jpeg": "jpeg", ".webp": "webp"}


class SuiteError(Exception):
    pass


@dataclass(frozen=True)
class EvalCase:
    case_id: str
    image_path: Path
    question: str
    category: str
    reference: str = ""

    def __post_init__(self) -> None:
        if self.category not in CATEGORIES:
            raise SuiteError(f"case {self.case_id}: unknown category {self.category!r}")


@dataclass(frozen=True)
class CaseScore:
    case_id: str
    category: str
    score: float
    rationale: str = ""
    answer: str = ""
    error: str = ""


@dataclass
class ScoreReport:
    mode: str
    cases: list[CaseScore] = field(default_factory=list)
    metadata: dict = field(
        default_factory=lambda: {
            "aggregation": "overall is the unweighted mean over all cases",
            "scoring": "absolute judge scores 0-100; reference answer optional; rubric is not pairwise",
        }
    )

    def category_mean(self, category: str) -> float:
        scores = [c.score for c in self.cases if c.category == category]
        return sum(scores) / len(scores) if scores else 0.0

    def overall(self) -> float:
        return sum(c.score for c in self.cases) / len(self.cases) if self.cases else 0.0

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "metadata": self.metadata,
            "overall": round(self.overall(), 2),
            "categories": {c: round(self.category_mean(c), 2) for c in CATEGORIES},
            "cases": [
                {
                    "case_id": c.case_id,
                    "category": c.category,
                    "score": c.score,
                    "rationale": c.rationale,
                    "answer": c.answer,
                    "error": c.error,
                }
                for c in self.cases
            ],
        }


def load_suite(path: Path) -> list[EvalCase]:
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise SuiteError(f"cannot read suite: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SuiteError(f"{path}: invalid JSON ({exc.msg})") from exc
    if isinstance(doc, dict):
        if doc.get("schema") != SUITE_SCHEMA:
            raise SuiteError(f"{path}: expected suite schema {SUITE_SCHEMA!r}")
        records = doc.get("cases", [])
    else:
        records = doc
    cases = []
    base = path.parent
    for i, record in enumerate(records):
        try:
            image_path = Path(record["image"])
            if not image_path.is_absolute():
                image_path = base / image_path
            cases.append(
                EvalCase(
                    case_id=str(record.get("case_id", f"case-{i}")),
                    image_path=image_path,
                    question=record["question"],
                    category=record["category"],
                    reference=record.get("reference", ""),
                )
            )
        except KeyError as exc:
            raise SuiteError(f"{path}: case {i} missing field {exc.args[0]!r}") from exc
    if not cases:
        raise SuiteError(f"{path}: suite contains no cases")
    for case in cases:
        if not case.image_path.is_file():
            raise SuiteError(f"case {case.case_id}: image not readable: {case.image_path}")
    return cases


def _load_image(path: Path) -> ImagePayload:
    media_type = MEDIA_TYPE_BY_SUFFIX.get(path.suffix.lower())
    if media_type is None:
        raise SuiteError(f"unsupported image suffix: {path.name}")
    return ImagePayload(path.read_bytes(), media_type)


_FIRST_INT = re.compile(r"-?\d+")


def parse_judge_score(text: str) -> float:
    """First integer in the reply, clamped to [0, 100]."""
    match = _FIRST_INT.search(text)
    if match is None:
        raise ValueError(f"judge reply contains no integer: {text[:80]!r}")
    return float(min(100, max(0, int(match.group()))))


def judge_answer(
    judge: Gateway, templates: TemplateCatalog, question: str, reference: str, answer: str
) -> tuple[float, str]:
    reference_section = f"Reference answer: {reference}\n" if reference else ""
    prompt = templates.render(
        "judge_score",
        question=question,
        reference_section=reference_section,
        answer=answer,
    )
    reply = judge.complete(
        ModelRole.LLM_JUDGE, (ChatMessage("user", prompt),), judge.config.judgment_budget_tokens
    )
    if not reply.ok:
        raise PipelineError(f"judge backend failed: {reply.text}")
    return parse_judge_score(reply.text), reply.text.strip()


def run_suite(
    cases: list[EvalCase],
    mode: QueryMode,
    deps: PipelineDeps,
    judge: Gateway | None = None,
) -> ScoreReport:
    """Run every case through the pipeline and judge the answers.

    Per-case failures score 0 with the error recorded; they never abort the
    suite. Cases run sequentially so scripted fixture consumption stays
    deterministic.
    """
    judge = judge or deps.gateway
    report = ScoreReport(mode=mode.value)
    for case in cases:
        try:
            query = UserQuery(
                query_id=f"{mode.value}-{case.case_id}",
                image=_load_image(case.image_path),
                prompt_text=case.question,
                mode=mode,
            )
            answer = run_query(query, deps, TraceRecorder())
            score, rationale = judge_answer(
                judge, deps.templates, case.question, case.reference, answer.text
            )
            report.cases.append(
                CaseScore(case.case_id, case.category, score, rationale, answer.text)
            )
        except (PipelineError, ValueError, SuiteError) as exc:
            report.cases.append(
                CaseScore(case.case_id, case.category, 0.0, error=str(exc))
            )
    return report


@dataclass
class ModeComparison:
    reports: list[ScoreReport]

    def baseline(self) -> ScoreReport:
        return self.reports[0]


def compare_modes(
    cases: list[EvalCase],
    modes: list[QueryMode],
    deps: PipelineDeps,
    judge: Gateway | None = None,
) -> ModeComparison:
    """Score the suite under each mode; the first mode is the baseline."""
    if len(modes) < 2:
        raise SuiteError(">=2 modes required for comparison")
    return ModeComparison([run_suite(cases, mode, deps, judge) for mode in modes])


def _cell(value: float, base: float | None) -> str:
    if base is None:
        return f"{value:.1f}"
    return f"{value:.1f} ({round(value, 1) - round(base, 1):+.1f})"


def format_comparison(comparison: ModeComparison) -> str:
    """Aligned text table: one row per mode, deltas vs the first in parens."""
    header = ["Mode", "Conversation (%)", "Detail (%)", "Reasoning (%)", "Overall (%)"]
    base = comparison.baseline()
    rows = []
    for i, report in enumerate(comparison.reports):
        is_base = i == 0
        rows.append(
            [
                report.mode + (" (baseline)" if is_base else ""),
                _cell(report.category_mean("conversation"),
                      None if is_base else base.category_mean("conversation")),
                _cell(report.category_mean("detail"),
                      None if is_base else base.category_mean("detail")),
                _cell(report.category_mean("reasoning"),
                      None if is_base else base.category_mean("reasoning")),
                _cell(report.overall(), None if is_base else base.overall()),
            ]
        )
    widths = [max(len(row[i]) for row in [header] + rows) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)) for row in [header] + rows]
    return "\n".join(lines)
