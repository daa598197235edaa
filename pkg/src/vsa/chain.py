"""The iterative per-region web search loop.

Starting from a region's correlated formulation (the root node), each level
plans sub-questions off the previous level's nodes, searches and fetches
pages for every sub-question, asks the searcher LLM which pages matter (the
parent's response joins that prompt from level 2 on), summarizes the selected
pages into a per-node search response, then folds everything known so far
into one cumulative web-knowledge summary. A judge stops the loop once that
knowledge suffices; caps bound it otherwise.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

from .extraction import ExtractedDocument, ExtractionError, chunk_document, extract_text
from .gateway import ChatMessage, Gateway, ModelRole, parse_integer_list
from .model import (
    CorrelatedFormulation,
    GraphNode,
    SearchGraph,
    SearchedPayload,
    SubQuestion,
    WebKnowledge,
)
from .retrieval import (
    PageFetcher,
    RetrievalConfig,
    RetrievalError,
    SearchProvider,
    fetch_many,
    search,
)
from .templates import (
    PARENT_RESPONSE_HEADER,
    PRIOR_KNOWLEDGE_HEADER,
    PRIOR_RESPONSES_HEADER,
    TemplateCatalog,
)
from .trace import EventKind, TraceRecorder

NO_EVIDENCE_SENTINEL = "no evidence found"

_ENUMERATION_MARKER = re.compile(r"^\s*(?:[-*•]+|\d+[.)]|[Qq]\d+[:.)])\s*")
_SENTENCE_SPLIT = re.compile(r"(?<=[.!?])\s")

MAX_QUERY_CHARS = 256
FORMULATION_DIGEST_CHARS = 120
CANDIDATE_EXCERPT_CHARS = 200


class TerminationReason(str, Enum):
    SUFFICIENCY = "sufficiency"
    LEVEL_CAP = "level_cap"
    NO_NEW_SUBQUESTIONS = "no_new_subquestions"


@dataclass
class ChainConfig:
    max_levels: int = 3
    max_subquestions_per_node: int = 3
    pages_per_subquestion: int = 3
    context_char_budget: int = 24000

    def __post_init__(self) -> None:
        if min(self.max_levels, self.max_subquestions_per_node, self.pages_per_subquestion) < 1:
            raise ValueError("chain limits must be positive")
        if self.context_char_budget < 2000:
            raise ValueError("context_char_budget must be >= 2000")


@dataclass(frozen=True)
class ChainResult:
    graph: SearchGraph
    final_knowledge: WebKnowledge
    terminated_by: TerminationReason
    levels_run: int


class ChainError(Exception):
    """A hard model-backend failure; carries whatever graph was built."""

    def __init__(self, message: str, graph: SearchGraph) -> None:
        super().__init__(message)
        self.graph = graph


def init_graph(formulation: CorrelatedFormulation) -> SearchGraph:
    root = GraphNode(
        node_id=f"r{formulation.region_index}.root", level=0, root=formulation
    )
    return SearchGraph(region_index=formulation.region_index, nodes=[root])


def truncate_on_word(text: str, limit: int) -> str:
    if len(text) <= limit:
        return text
    cut = text[:limit]
    boundary = cut.rfind(" ")
    if boundary > 0:
        cut = cut[:boundary]
    return cut.rstrip()


def formulation_digest(text: str) -> str:
    """First sentence of a formulation, capped for use as query keywords."""
    first = _SENTENCE_SPLIT.split(text.strip(), maxsplit=1)[0].strip()
    return truncate_on_word(first, FORMULATION_DIGEST_CHARS)


def build_query(formulation: CorrelatedFormulation, sub_question: SubQuestion) -> str:
    query = f"{sub_question.text} {formulation_digest(formulation.text)}".strip()
    return truncate_on_word(query, MAX_QUERY_CHARS)


def parse_subquestion_lines(reply_text: str) -> list[str]:
    """One sub-question per line; enumeration markers stripped, NONE ignored."""
    lines = []
    for raw in reply_text.splitlines():
        line = _ENUMERATION_MARKER.sub("", raw).strip()
        if not line or line.upper() == "NONE":
            continue
        lines.append(line)
    return lines


@dataclass
class ChainDeps:
    gateway: Gateway
    templates: TemplateCatalog
    search_provider: SearchProvider
    fetcher: PageFetcher
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)


class ChainRunner:
    """Single-writer state machine over one region's search graph."""

    def __init__(
        self,
        deps: ChainDeps,
        config: ChainConfig | None = None,
        recorder: TraceRecorder | None = None,
        should_abort: Callable[[], bool] = lambda: False,
    ) -> None:
        self.deps = deps
        self.config = config or ChainConfig()
        self.recorder = recorder
        self.should_abort = should_abort

    def _emit(self, kind: EventKind, payload: dict) -> None:
        if self.recorder is not None:
            self.recorder.emit(kind, payload)

    def _complete(self, role: ModelRole, prompt: str, graph: SearchGraph, budget: int | None = None) -> str:
        reply = self.deps.gateway.complete(role, (ChatMessage("user", prompt),), budget)
        if not reply.ok:
            raise ChainError(f"{role.value} call failed: {reply.text}", graph)
        return reply.text

    # -- planning --

    def plan_subquestions(
        self,
        graph: SearchGraph,
        parent: GraphNode,
        user_prompt: str,
        prior_knowledge: WebKnowledge | None,
        cap: int,
    ) -> list[SubQuestion]:
        """Ask the planner for the next sub-questions under ``parent``.

        Replies are parsed one question per line, deduplicated
        case-insensitively against every sub-question already in the chain,
        and truncated to ``cap``. An unparseable reply simply makes the
        parent a leaf.
        """
        if parent.is_root:
            focus = f"What we know about the object:\n{parent.root.text}\n"
        else:
            focus = (
                f"Earlier sub-question: {parent.searched.sub_question.text}\n"
                f"Its search response: {parent.searched.response_text}\n"
            )
        knowledge_section = ""
        if prior_knowledge is not None and prior_knowledge.level > 0:
            knowledge_section = f"{PRIOR_KNOWLEDGE_HEADER}\n{prior_knowledge.text}\n"
        prompt = self.deps.templates.render(
            "plan_subquestions",
            cap=str(cap),
            prompt_text=user_prompt,
            focus_section=focus,
            knowledge_section=knowledge_section,
        )
        text = self._complete(ModelRole.LLM_PLANNER, prompt, graph,
                              self.deps.gateway.config.judgment_budget_tokens)

        existing = {
            node.searched.sub_question.text.strip().lower()
            for node in graph.nodes
            if node.searched is not None
        }
        level = parent.level + 1
        next_ordinal = len(graph.nodes_at_level(level))
        picked: list[SubQuestion] = []
        for line in parse_subquestion_lines(text):
            key = line.strip().lower()
            if key in existing:
                continue
            existing.add(key)
            picked.append(
                SubQuestion(
                    node_id=f"r{graph.region_index}.k{level}.{next_ordinal + len(picked)}",
                    level=level,
                    ordinal=next_ordinal + len(picked),
                    text=line,
                )
            )
            if len(picked) == cap:
                break
        return picked

    # -- page selection (Eq. 4 / Eq. 6 first line) --

    def select_pages(
        self,
        graph: SearchGraph,
        sub_question: SubQuestion,
        parent_response: str | None,
        candidates: list[ExtractedDocument],
    ) -> tuple[list[int], bool]:
        """Pick the most relevant candidate pages (1-based indices).

        The relevance prompt always carries the root formulation and the
        sub-question; from level 2 on it additionally carries exactly one
        parent-response section. Degenerate replies fall back to the top
        candidates by search rank, so this never fails.
        """
        m = self.config.pages_per_subquestion
        if not candidates:
            return [], False
        parent_section = ""
        if parent_response is not None:
            parent_section = f"{PARENT_RESPONSE_HEADER} {parent_response}\n"
        listing = "\n".join(
            f"{i}. {doc.title or doc.url}: {doc.text[:CANDIDATE_EXCERPT_CHARS]}"
            for i, doc in enumerate(candidates, start=1)
        )
        prompt = self.deps.templates.render(
            "select_pages",
            m=str(m),
            formulation=graph.root().root.text,
            sub_question=sub_question.text,
            parent_section=parent_section,
            candidates=listing,
        )
        reply = self.deps.gateway.complete(
            ModelRole.LLM_SEARCHER,
            (ChatMessage("user", prompt),),
            self.deps.gateway.config.judgment_budget_tokens,
        )
        picked: list[int] = []
        if reply.ok:
            for index in parse_integer_list(reply.text):
                if 1 <= index <= len(candidates) and index not in picked:
                    picked.append(index)
                if len(picked) == m:
                    break
        if picked:
            return picked, False
        return list(range(1, min(m, len(candidates)) + 1)), True

    # -- response summarization --

    def summarize_response(
        self, graph: SearchGraph, sub_question: SubQuestion, selected: list[ExtractedDocument]
    ) -> str:
        """Summarize the selected pages into the node's search response.

        Page texts are chunked and interleaved round-robin (leading chunks of
        every document first) until the rendered prompt would exceed the
        context budget. An empty selection yields the no-evidence sentinel
        without any model call.
        """
        if not selected:
            return NO_EVIDENCE_SENTINEL
        base = self.deps.templates.render(
            "summarize_response", sub_question=sub_question.text, passages=""
        )
        budget = self.config.context_char_budget - len(base)
        chunk_lists = [
            chunk_document(doc.text, self.deps.retrieval.chunk_chars) if doc.text else []
            for doc in selected
        ]
        passages: list[str] = []
        used = 0
        for round_index in range(max((len(c) for c in chunk_lists), default=0)):
            for doc, chunks in zip(selected, chunk_lists):
                if round_index >= len(chunks):
                    continue
                piece = f"Source ({doc.url}):\n{chunks[round_index]}"
                cost = len(piece) + 1
                if used + cost > budget:
                    break
                passages.append(piece)
                used += cost
            else:
                continue
            break
        prompt = self.deps.templates.render(
            "summarize_response", sub_question=sub_question.text, passages="\n".join(passages)
        )
        return self._complete(ModelRole.LLM_SEARCHER, prompt, graph).strip()

    # -- knowledge summarization (Eq. 5 / Eq. 6 second line) --

    def summarize_web_knowledge(
        self, graph: SearchGraph, level: int, user_prompt: str
    ) -> tuple[WebKnowledge, list[str]]:
        """Fold everything known after ``level`` into one knowledge summary.

        Level 1 summarizes exactly the level-1 responses. Deeper levels also
        see every prior knowledge summary and every earlier response, oldest
        levels trimmed first if the budget demands it (prior knowledge
        already covers them). Returns the knowledge plus the node ids whose
        responses were dropped by trimming.
        """
        current = [
            (node.node_id, node.searched.response_text)
            for node in graph.nodes_at_level(level)
        ]
        prior_responses = [
            (node.level, node.node_id, node.searched.response_text)
            for node in graph.nodes
            if node.searched is not None and node.level < level
        ]
        prior_responses.sort(key=lambda item: (item[0], item[1]))

        knowledge_section = ""
        if level > 1:
            knowledge_lines = "\n".join(
                f"Level {k.level}: {k.text}" for k in graph.knowledge_by_level[: level - 1]
            )
            knowledge_section = f"{PRIOR_KNOWLEDGE_HEADER}\n{knowledge_lines}\n"

        def render(included_prior: list[tuple[int, str, str]]) -> str:
            prior_section = ""
            if level > 1 and included_prior:
                lines = "\n".join(f"[{node_id}] {text}" for _, node_id, text in included_prior)
                prior_section = f"{PRIOR_RESPONSES_HEADER}\n{lines}\n"
            return self.deps.templates.render(
                "summarize_knowledge",
                prompt_text=user_prompt,
                knowledge_section=knowledge_section,
                prior_responses_section=prior_section,
                current_responses="\n".join(f"[{nid}] {text}" for nid, text in current),
            )

        included = list(prior_responses)
        dropped: list[str] = []
        prompt = render(included)
        while len(prompt) > self.config.context_char_budget and included:
            dropped.append(included.pop(0)[1])  # oldest level first
            prompt = render(included)

        text = self._complete(ModelRole.LLM_SEARCHER, prompt, graph).strip()
        knowledge = WebKnowledge(
            region_index=graph.region_index,
            level=level,
            text=text,
            source_node_ids=graph.searched_node_ids(max_level=level),
        )
        return knowledge, dropped

    # -- sufficiency --

    def judge_sufficiency(
        self, graph: SearchGraph, user_prompt: str, knowledge: WebKnowledge
    ) -> tuple[bool, str]:
        """Ask the judge whether the knowledge answers the question.

        Only the exact reply SUFFICIENT counts as sufficient; anything else
        is insufficient. A backend failure terminates the chain (treated as
        sufficient) rather than looping, with a warning recorded.
        """
        prompt = self.deps.templates.render(
            "judge_sufficiency",
            prompt_text=user_prompt,
            formulation=graph.root().root.text,
            knowledge=knowledge.text,
        )
        reply = self.deps.gateway.complete(
            ModelRole.LLM_JUDGE,
            (ChatMessage("user", prompt),),
            self.deps.gateway.config.judgment_budget_tokens,
        )
        if not reply.ok:
            return True, f"judge backend error; terminating chain ({reply.text})"
        return reply.text.strip() == "SUFFICIENT", ""

    # -- level expansion --

    def expand_level(self, graph: SearchGraph, level: int, user_prompt: str) -> int:
        """Grow the graph by one level; returns the number of new nodes."""
        parents = graph.nodes_at_level(level - 1)
        prior = graph.knowledge_by_level[-1] if graph.knowledge_by_level else None
        new_count = 0
        for parent in parents:
            batch = self.plan_subquestions(
                graph, parent, user_prompt, prior, self.config.max_subquestions_per_node
            )
            self._emit(
                EventKind.SUBQUESTIONS_PLANNED,
                {
                    "region_index": graph.region_index,
                    "parent_node_id": parent.node_id,
                    "level": level,
                    "subquestions": [
                        {"node_id": sq.node_id, "ordinal": sq.ordinal, "text": sq.text}
                        for sq in batch
                    ],
                },
            )
            for sub_question in batch:
                self._run_subquestion(graph, parent, sub_question)
                new_count += 1

        if new_count:
            knowledge, dropped = self.summarize_web_knowledge(graph, level, user_prompt)
            graph.knowledge_by_level.append(knowledge)
            self._emit(
                EventKind.KNOWLEDGE_SUMMARIZED,
                {
                    "region_index": graph.region_index,
                    "level": level,
                    "text": knowledge.text,
                    "source_node_ids": list(knowledge.source_node_ids),
                    "dropped_for_budget": dropped,
                },
            )
        return new_count

    def _run_subquestion(self, graph: SearchGraph, parent: GraphNode, sub_question: SubQuestion) -> None:
        query = build_query(graph.root().root, sub_question)
        self._emit(
            EventKind.SEARCH_ISSUED,
            {
                "region_index": graph.region_index,
                "node_id": sub_question.node_id,
                "level": sub_question.level,
                "query": query,
            },
        )
        try:
            results = search(self.deps.search_provider, query, self.deps.retrieval.top_k)
        except RetrievalError as exc:
            self._emit(
                EventKind.PAGES_FETCHED,
                {
                    "region_index": graph.region_index,
                    "node_id": sub_question.node_id,
                    "error": str(exc),
                    "pages": [],
                },
            )
            results = []
            outcomes = []
        else:
            outcomes = fetch_many(
                self.deps.fetcher,
                [r.url for r in results],
                self.deps.retrieval.max_parallel_fetches,
            )
            self._emit(
                EventKind.PAGES_FETCHED,
                {
                    "region_index": graph.region_index,
                    "node_id": sub_question.node_id,
                    "pages": [
                        {
                            "url": o.url,
                            "ok": o.ok,
                            "status": o.document.http_status if o.ok else None,
                            "error": o.error_kind or None,
                        }
                        for o in outcomes
                    ],
                },
            )

        candidates: list[ExtractedDocument] = []
        for outcome in outcomes:
            if not outcome.ok:
                continue
            try:
                candidates.append(
                    extract_text(outcome.document, self.deps.retrieval.max_extracted_chars)
                )
            except ExtractionError:
                continue

        parent_response = None
        if sub_question.level > 1:
            parent_response = parent.searched.response_text
        picked, fallback = self.select_pages(graph, sub_question, parent_response, candidates)
        self._emit(
            EventKind.PAGES_SELECTED,
            {
                "region_index": graph.region_index,
                "node_id": sub_question.node_id,
                "selected": picked,
                "fallback": fallback,
                "candidates": [{"url": d.url, "title": d.title} for d in candidates],
            },
        )
        selected_docs = [candidates[i - 1] for i in picked]
        response = self.summarize_response(graph, sub_question, selected_docs)
        self._emit(
            EventKind.RESPONSE_SUMMARIZED,
            {
                "region_index": graph.region_index,
                "node_id": sub_question.node_id,
                "text": response,
            },
        )
        graph.nodes.append(
            GraphNode(
                node_id=sub_question.node_id,
                level=sub_question.level,
                searched=SearchedPayload(
                    sub_question=sub_question,
                    selected_page_ids=tuple(doc.url for doc in selected_docs),
                    response_text=response,
                ),
            )
        )
        graph.edges.append((parent.node_id, sub_question.node_id))

    # -- the loop --

    def run_chain(self, formulation: CorrelatedFormulation, user_prompt: str) -> ChainResult:
        """Run the full iterative loop for one region."""
        graph = init_graph(formulation)
        terminated = TerminationReason.LEVEL_CAP
        levels_run = 0
        for level in range(1, self.config.max_levels + 1):
            if self.should_abort():
                terminated = TerminationReason.LEVEL_CAP
                break
            new_nodes = self.expand_level(graph, level, user_prompt)
            if new_nodes == 0:
                terminated = TerminationReason.NO_NEW_SUBQUESTIONS
                break
            levels_run = level
            sufficient, warning = self.judge_sufficiency(
                graph, user_prompt, graph.knowledge_by_level[-1]
            )
            payload = {
                "region_index": graph.region_index,
                "level": level,
                "sufficient": sufficient,
            }
            if warning:
                payload["warning"] = warning
            self._emit(EventKind.SUFFICIENCY_JUDGED, payload)
            if sufficient:
                terminated = TerminationReason.SUFFICIENCY
                break

        if graph.knowledge_by_level:
            final = graph.knowledge_by_level[-1]
        else:
            final = WebKnowledge(graph.region_index, 0, "", ())
        return ChainResult(
            graph=graph,
            final_knowledge=final,
            terminated_by=terminated,
            levels_run=levels_run,
        )
