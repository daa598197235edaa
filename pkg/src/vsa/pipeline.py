"""End-to-end query execution: the one entry point the CLI, the HTTP
service, and the eval harness all share.

Chains for distinct regions are independent and could run concurrently; they
run sequentially here so a scripted run always produces the same trace bytes.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

from .chain import ChainConfig, ChainDeps, ChainResult, ChainRunner, TerminationReason, init_graph
from .formulation import FormulationConfig, Formulator
from .gateway import Gateway, GatewayConfig, ScriptedBackend
from .model import FinalAnswer, ImagePayload, QueryMode, UserQuery, WebKnowledge
from .retrieval import (
    FixturePageFetcher,
    FixtureSearchProvider,
    PageFetcher,
    RetrievalConfig,
    SearchProvider,
)
from .synthesis import NaiveSearcher, Synthesizer
from .templates import TemplateCatalog
from .trace import EventKind, TraceRecorder


class PipelineError(Exception):
    pass


def deterministic_query_id(image: ImagePayload, prompt_text: str, mode: QueryMode) -> str:
    """Same inputs, same id: keeps one-shot runs byte-reproducible."""
    digest = hashlib.sha256(image.data + prompt_text.encode() + mode.value.encode())
    return digest.hexdigest()[:12]


class QueryAborted(Exception):
    """Raised when an abort lands before any web knowledge exists."""


@dataclass
class PipelineDeps:
    gateway: Gateway
    templates: TemplateCatalog
    search_provider: SearchProvider
    fetcher: PageFetcher
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    chain: ChainConfig = field(default_factory=ChainConfig)
    formulation: FormulationConfig = field(default_factory=FormulationConfig)
    include_all_levels: bool = False


def load_fixture_deps(
    fixtures_dir: Path,
    chain: ChainConfig | None = None,
    retrieval: RetrievalConfig | None = None,
    gateway_config: GatewayConfig | None = None,
) -> PipelineDeps:
    """Build fully offline deps from a fixture pack directory.

    Expected layout: ``fixtures.json`` (scripted model replies),
    ``search.json`` (query -> results map), ``pages/`` (pages.json index plus
    the saved bodies).
    """
    backend = ScriptedBackend.from_file(fixtures_dir / "fixtures.json")
    retrieval = retrieval or RetrievalConfig(respect_robots=False)
    return PipelineDeps(
        gateway=Gateway(
            chat_backend=backend,
            detector_backend=backend,
            config=gateway_config or GatewayConfig(backoff_base_s=0.0),
        ),
        templates=TemplateCatalog.bundled(),
        search_provider=FixtureSearchProvider.from_file(fixtures_dir / "search.json"),
        fetcher=FixturePageFetcher.from_dir(
            fixtures_dir / "pages", retrieval.max_body_bytes
        ),
        retrieval=retrieval,
        chain=chain or ChainConfig(),
    )


def deps_from_config(config) -> PipelineDeps:
    """Build pipeline deps from a :class:`vsa.config.ServiceConfig`.

    A set ``fixtures_dir`` selects the fully offline scripted stack;
    otherwise the live HTTP backends are wired from the configured endpoints.
    """
    from .gateway import HttpChatBackend, HttpDetectorBackend
    from .retrieval import HttpPageFetcher, HttpSearchProvider

    templates = (
        TemplateCatalog.from_dir(Path(config.template_dir))
        if config.template_dir
        else TemplateCatalog.bundled()
    )
    if config.fixtures_dir:
        deps = load_fixture_deps(
            Path(config.fixtures_dir),
            chain=config.chain,
            retrieval=config.retrieval,
            gateway_config=config.gateway,
        )
        deps.templates = templates
        deps.include_all_levels = config.include_all_levels
        return deps

    if not config.chat_url:
        raise PipelineError("no chat backend configured: set chat_url or fixtures_dir")
    chat = HttpChatBackend(
        config.chat_url, config.chat_key, config.chat_model, config.gateway.timeout_s
    )
    detector = (
        HttpDetectorBackend(config.detector_url, config.gateway.timeout_s)
        if config.detector_url
        else None
    )
    search_provider = (
        HttpSearchProvider(config.search_endpoint, config.search_key)
        if config.search_endpoint
        else FixtureSearchProvider({})
    )
    return PipelineDeps(
        gateway=Gateway(chat_backend=chat, detector_backend=detector, config=config.gateway),
        templates=templates,
        search_provider=search_provider,
        fetcher=HttpPageFetcher(config.retrieval),
        retrieval=config.retrieval,
        chain=config.chain,
        include_all_levels=config.include_all_levels,
    )


def _empty_chain_result(region_index: int, formulation) -> ChainResult:
    return ChainResult(
        graph=init_graph(formulation),
        final_knowledge=WebKnowledge(region_index, 0, "", ()),
        terminated_by=TerminationReason.LEVEL_CAP,
        levels_run=0,
    )


def run_query(
    query: UserQuery,
    deps: PipelineDeps,
    recorder: TraceRecorder,
    should_abort: Callable[[], bool] = lambda: False,
) -> FinalAnswer:
    """Execute one query, emitting the full trace; returns the final answer.

    Any failure is recorded as a terminal error event before propagating.
    An abort that lands after at least one knowledge level still produces an
    answer, flagged partial; an earlier abort raises :class:`QueryAborted`.
    """
    recorder.emit(
        EventKind.QUERY_RECEIVED,
        {
            "query_id": query.query_id,
            "prompt_text": query.prompt_text,
            "mode": query.mode.value,
            "media_type": query.image.media_type,
            "image_bytes": len(query.image.data),
        },
    )
    try:
        if query.mode is QueryMode.NAIVE_SEARCH:
            answer = NaiveSearcher(
                gateway=deps.gateway,
                templates=deps.templates,
                search_provider=deps.search_provider,
                fetcher=deps.fetcher,
                retrieval=deps.retrieval,
                pages_to_summarize=deps.chain.pages_per_subquestion,
                recorder=recorder,
            ).answer(query)
        else:
            answer = _run_chain_modes(query, deps, recorder, should_abort)
    except QueryAborted:
        raise
    except Exception as exc:
        recorder.emit(EventKind.ERROR, {"stage": type(exc).__name__, "message": str(exc)})
        raise PipelineError(str(exc)) from exc

    recorder.emit(
        EventKind.ANSWER_READY,
        {
            "text": answer.text,
            "citations": [[url, node_id] for url, node_id in answer.citations],
            "used_regions": list(answer.used_regions),
            "partial": answer.partial,
        },
    )
    return answer


def _run_chain_modes(
    query: UserQuery,
    deps: PipelineDeps,
    recorder: TraceRecorder,
    should_abort: Callable[[], bool],
) -> FinalAnswer:
    formulator = Formulator(deps.gateway, deps.templates, deps.formulation, recorder)
    formulation_result = formulator.formulate_visual_content(query)

    chain_results: dict[int, ChainResult] = {}
    for formulation in formulation_result.formulations:
        if should_abort():
            chain_results[formulation.region_index] = _empty_chain_result(
                formulation.region_index, formulation
            )
            continue
        runner = ChainRunner(
            ChainDeps(
                gateway=deps.gateway,
                templates=deps.templates,
                search_provider=deps.search_provider,
                fetcher=deps.fetcher,
                retrieval=deps.retrieval,
            ),
            config=deps.chain,
            recorder=recorder,
            should_abort=should_abort,
        )
        chain_results[formulation.region_index] = runner.run_chain(
            formulation, query.prompt_text
        )

    aborted = should_abort()
    if aborted and not any(c.levels_run > 0 for c in chain_results.values()):
        recorder.emit(
            EventKind.ERROR,
            {"stage": "abort", "message": "aborted before any knowledge level completed"},
        )
        raise QueryAborted("aborted before any knowledge level completed")

    synthesizer = Synthesizer(
        deps.gateway, deps.templates, recorder, include_all_levels=deps.include_all_levels
    )
    context = synthesizer.compose_final_context(query, formulation_result, chain_results)
    answer = synthesizer.generate_answer(context)
    if aborted:
        answer = replace(answer, partial=True)
    return answer
