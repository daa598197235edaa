"""Final answer generation, plus the single-shot naive-search baseline.

The full path feeds the generator the original image, the user's question,
every region's correlated formulation, and every region's final web
knowledge, in region order. The naive baseline skips all of that: one
whole-image caption, one search, one summary, one generation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .chain import ChainResult, NO_EVIDENCE_SENTINEL, formulation_digest, truncate_on_word
from .extraction import ExtractedDocument, ExtractionError, extract_text
from .formulation import FormulationResult, Formulator, full_image_region
from .gateway import ChatMessage, Gateway, ModelRole
from .model import CorrelatedFormulation, FinalAnswer, ImagePayload, UserQuery, WebKnowledge
from .retrieval import PageFetcher, RetrievalConfig, RetrievalError, SearchProvider, fetch_many, search
from .templates import TemplateCatalog
from .trace import EventKind, TraceRecorder

NAIVE_NODE_ID = "naive"


class SynthesisError(Exception):
    pass


@dataclass(frozen=True)
class SynthesisContext:
    image: ImagePayload
    prompt_text: str
    formulations: tuple[CorrelatedFormulation, ...]
    knowledge: tuple[WebKnowledge, ...]
    citations: tuple[tuple[str, str], ...]  # (url, node_id), deduplicated by url
    extra_knowledge: tuple[tuple[str, ...], ...] = ()  # earlier levels, when requested

    def __post_init__(self) -> None:
        if len(self.formulations) != len(self.knowledge):
            raise ValueError("formulations and knowledge must align")
        for formulation, knowledge in zip(self.formulations, self.knowledge):
            if formulation.region_index != knowledge.region_index:
                raise ValueError("knowledge/formulation region mismatch")


@dataclass
class Synthesizer:
    gateway: Gateway
    templates: TemplateCatalog
    recorder: TraceRecorder | None = None
    include_all_levels: bool = False  # feed every level's knowledge, not just the final summary

    def _emit(self, kind: EventKind, payload: dict) -> None:
        if self.recorder is not None:
            self.recorder.emit(kind, payload)

    def compose_final_context(
        self,
        query: UserQuery,
        formulation_result: FormulationResult,
        chain_results: dict[int, ChainResult],
    ) -> SynthesisContext:
        """Assemble the generation context from all per-region chains.

        Citations are every page selected anywhere across the chains,
        deduplicated by URL in region/node/selection order.
        """
        knowledge: list[WebKnowledge] = []
        extra: list[tuple[str, ...]] = []
        citations: list[tuple[str, str]] = []
        seen_urls: set[str] = set()
        for formulation in formulation_result.formulations:
            chain = chain_results.get(formulation.region_index)
            if chain is None:
                raise SynthesisError(f"missing chain result for region {formulation.region_index}")
            knowledge.append(chain.final_knowledge)
            if self.include_all_levels:
                extra.append(tuple(k.text for k in chain.graph.knowledge_by_level[:-1]))
            else:
                extra.append(())
            for node in chain.graph.nodes:
                if node.searched is None:
                    continue
                for url in node.searched.selected_page_ids:
                    if url in seen_urls:
                        continue
                    seen_urls.add(url)
                    citations.append((url, node.node_id))
        return SynthesisContext(
            image=query.image,
            prompt_text=query.prompt_text,
            formulations=formulation_result.formulations,
            knowledge=tuple(knowledge),
            citations=tuple(citations),
            extra_knowledge=tuple(extra),
        )

    def render_context(self, context: SynthesisContext) -> str:
        """Render the final generation prompt: question, then one block per
        region (formulation, then its web knowledge), then the source list."""
        blocks = []
        for i, (formulation, knowledge) in enumerate(zip(context.formulations, context.knowledge)):
            lines = [
                f"Object {formulation.region_index} description: {formulation.text}",
                f"Object {formulation.region_index} web knowledge: "
                + (knowledge.text or "(no web knowledge gathered)"),
            ]
            for level_offset, text in enumerate(context.extra_knowledge[i], start=1):
                lines.append(f"Object {formulation.region_index} earlier knowledge {level_offset}: {text}")
            blocks.append("\n".join(lines))
        citations = "\n".join(f"- {url}" for url, _ in context.citations) or "(none)"
        return self.templates.render(
            "final_answer",
            prompt_text=context.prompt_text,
            region_blocks="\n\n".join(blocks),
            citations=citations,
        )

    def generate_answer(self, context: SynthesisContext) -> FinalAnswer:
        prompt = self.render_context(context)
        messages = (ChatMessage("user", prompt, images=(context.image,)),)
        reply = self.gateway.complete(ModelRole.VLM_GENERATOR, messages)
        if reply.ok and not reply.text.strip():
            reply = self.gateway.complete(ModelRole.VLM_GENERATOR, messages)
        if not reply.ok:
            raise SynthesisError(f"answer generation failed: {reply.text}")
        if not reply.text.strip():
            raise SynthesisError("answer generation returned empty text twice")
        return FinalAnswer(
            text=reply.text.strip(),
            citations=context.citations,
            used_regions=tuple(f.region_index for f in context.formulations),
        )


@dataclass
class NaiveSearcher:
    """Table-style baseline: caption the whole image, search once, summarize
    the top pages once, and answer. No graph, no iteration."""

    gateway: Gateway
    templates: TemplateCatalog
    search_provider: SearchProvider
    fetcher: PageFetcher
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    pages_to_summarize: int = 3
    recorder: TraceRecorder | None = None

    def _emit(self, kind: EventKind, payload: dict) -> None:
        if self.recorder is not None:
            self.recorder.emit(kind, payload)

    def answer(self, query: UserQuery) -> FinalAnswer:
        formulator = Formulator(self.gateway, self.templates, recorder=None)
        region = full_image_region(query.image)
        self._emit(
            EventKind.REGIONS_DETECTED,
            {
                "image_width": region.box.x_max,
                "image_height": region.box.y_max,
                "fallback_used": True,
                "regions": [
                    {
                        "region_index": 0,
                        "label": region.label,
                        "box": {
                            "x_min": 0,
                            "y_min": 0,
                            "x_max": region.box.x_max,
                            "y_max": region.box.y_max,
                            "confidence": 1.0,
                        },
                    }
                ],
            },
        )
        caption = formulator.caption_region(region, query.prompt_text)
        self._emit(EventKind.CAPTION_READY, {"region_index": 0, "text": caption.text})

        search_query = truncate_on_word(
            f"{query.prompt_text} {formulation_digest(caption.text)}".strip(), 256
        )
        self._emit(
            EventKind.SEARCH_ISSUED,
            {"region_index": 0, "node_id": NAIVE_NODE_ID, "level": 1, "query": search_query},
        )
        try:
            results = search(self.search_provider, search_query, self.retrieval.top_k)
        except RetrievalError:
            results = []
        outcomes = fetch_many(
            self.fetcher, [r.url for r in results], self.retrieval.max_parallel_fetches
        )
        self._emit(
            EventKind.PAGES_FETCHED,
            {
                "region_index": 0,
                "node_id": NAIVE_NODE_ID,
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
                candidates.append(extract_text(outcome.document, self.retrieval.max_extracted_chars))
            except ExtractionError:
                continue
        top = candidates[: self.pages_to_summarize]
        self._emit(
            EventKind.PAGES_SELECTED,
            {
                "region_index": 0,
                "node_id": NAIVE_NODE_ID,
                "selected": list(range(1, len(top) + 1)),
                "fallback": False,
                "candidates": [{"url": d.url, "title": d.title} for d in candidates],
            },
        )

        if top:
            passages = "\n".join(f"Source ({doc.url}):\n{doc.text}" for doc in top)
            prompt = self.templates.render(
                "naive_summary", prompt_text=query.prompt_text, passages=passages
            )
            reply = self.gateway.complete(ModelRole.LLM_SEARCHER, (ChatMessage("user", prompt),))
            if not reply.ok:
                raise SynthesisError(f"naive summary failed: {reply.text}")
            summary = reply.text.strip()
        else:
            summary = NO_EVIDENCE_SENTINEL
        self._emit(
            EventKind.RESPONSE_SUMMARIZED,
            {"region_index": 0, "node_id": NAIVE_NODE_ID, "text": summary},
        )

        prompt = self.templates.render(
            "naive_answer",
            prompt_text=query.prompt_text,
            caption=caption.text,
            summary=summary,
        )
        reply = self.gateway.complete(
            ModelRole.VLM_GENERATOR, (ChatMessage("user", prompt, images=(query.image,)),)
        )
        if not reply.ok or not reply.text.strip():
            raise SynthesisError("naive answer generation failed")
        return FinalAnswer(
            text=reply.text.strip(),
            citations=tuple((doc.url, NAIVE_NODE_ID) for doc in top),
            used_regions=(0,),
        )
