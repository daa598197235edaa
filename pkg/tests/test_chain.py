from __future__ import annotations

import pytest

from conftest import AnySearchProvider, DictFetcher, entry, scripted_gateway, simple_page
from vsa.chain import (
    NO_EVIDENCE_SENTINEL,
    ChainConfig,
    ChainDeps,
    ChainError,
    ChainRunner,
    TerminationReason,
    build_query,
    init_graph,
    parse_subquestion_lines,
)
from vsa.extraction import ExtractedDocument
from vsa.gateway import ModelRole
from vsa.model import CorrelatedFormulation, SubQuestion, check_graph
from vsa.retrieval import RetrievalConfig
from vsa.templates import PARENT_RESPONSE_HEADER, PRIOR_KNOWLEDGE_HEADER, TemplateCatalog

FORMULATION = CorrelatedFormulation(0, "A red handbag with gold clasp. It sits on a table.")

URLS = [f"https://site{i}.test/page" for i in range(1, 5)]
PAGES = {url: simple_page(f"Page {i}", f"Contents of page {i} about handbags.") for i, url in enumerate(URLS, 1)}


def runner(entries, config=None, recorder=None, urls=URLS, should_abort=None):
    gateway, backend = scripted_gateway(entries)
    provider = AnySearchProvider(urls)
    deps = ChainDeps(
        gateway=gateway,
        templates=TemplateCatalog.bundled(),
        search_provider=provider,
        fetcher=DictFetcher(PAGES),
        retrieval=RetrievalConfig(top_k=4, respect_robots=False),
    )
    kwargs = {}
    if should_abort is not None:
        kwargs["should_abort"] = should_abort
    return ChainRunner(deps, config or ChainConfig(), recorder, **kwargs), backend, provider


def doc(url: str, text: str, title: str = "t") -> ExtractedDocument:
    return ExtractedDocument(url=url, title=title, text=text, char_count=len(text))


SELECT = entry(ModelRole.LLM_SEARCHER, "Candidate pages:", "1, 2", reusable=True)
SUMMARIZE = entry(ModelRole.LLM_SEARCHER, "Passages:", "a search response", reusable=True)
KNOWLEDGE = entry(
    ModelRole.LLM_SEARCHER, "Search responses from this level:", "the knowledge", reusable=True
)
JUDGE_NO = entry(ModelRole.LLM_JUDGE, "Web knowledge:", "INSUFFICIENT", reusable=True)
JUDGE_YES = entry(ModelRole.LLM_JUDGE, "Web knowledge:", "SUFFICIENT", reusable=True)


class TestInitGraph:
    def test_single_root_no_edges(self):
        graph = init_graph(FORMULATION)
        assert len(graph.nodes) == 1
        assert graph.edges == []
        assert graph.root().root.text == FORMULATION.text
        assert check_graph(graph).ok


class TestPlanning:
    def test_cap_applied(self):
        run, _, _ = runner([entry(ModelRole.LLM_PLANNER, "", "Q1\nQ2\nQ3")])
        graph = init_graph(FORMULATION)
        picked = run.plan_subquestions(graph, graph.root(), "q", None, cap=2)
        assert [sq.text for sq in picked] == ["Q1", "Q2"]

    def test_levels_and_ordinals(self):
        run, _, _ = runner([entry(ModelRole.LLM_PLANNER, "", "Q1\nQ2")])
        graph = init_graph(FORMULATION)
        picked = run.plan_subquestions(graph, graph.root(), "q", None, cap=3)
        assert [(sq.level, sq.ordinal) for sq in picked] == [(1, 0), (1, 1)]
        assert [sq.node_id for sq in picked] == ["r0.k1.0", "r0.k1.1"]

    def test_markers_stripped_and_none_ignored(self):
        assert parse_subquestion_lines("1. first?\n- second?\n* third?\nNONE\n\nQ4: fourth?") == [
            "first?",
            "second?",
            "third?",
            "fourth?",
        ]

    def test_duplicate_dropped_case_insensitively(self):
        run, _, _ = runner(
            [
                entry(ModelRole.LLM_PLANNER, "What we know", "Q one\nQ two"),
                entry(ModelRole.LLM_PLANNER, "Earlier sub-question", "q ONE\nQ three"),
            ]
        )
        graph = init_graph(FORMULATION)
        first = run.plan_subquestions(graph, graph.root(), "q", None, 3)
        # materialize level-1 nodes so dedup sees them
        from vsa.model import GraphNode, SearchedPayload

        for sq in first:
            graph.nodes.append(
                GraphNode(sq.node_id, sq.level, searched=SearchedPayload(sq, (), "resp"))
            )
            graph.edges.append((graph.root().node_id, sq.node_id))
        second = run.plan_subquestions(graph, graph.nodes[1], "q", None, 3)
        assert [sq.text for sq in second] == ["Q three"]
        assert all(sq.level == 2 for sq in second)

    def test_unparseable_reply_gives_leaf(self):
        run, _, _ = runner([entry(ModelRole.LLM_PLANNER, "", "NONE")])
        graph = init_graph(FORMULATION)
        assert run.plan_subquestions(graph, graph.root(), "q", None, 3) == []

    def test_prior_knowledge_in_prompt(self):
        from vsa.model import WebKnowledge

        run, backend, _ = runner([entry(ModelRole.LLM_PLANNER, "", "Qx")])
        graph = init_graph(FORMULATION)
        run.plan_subquestions(graph, graph.root(), "q", WebKnowledge(0, 1, "prior facts", ()), 3)
        prompt = backend.prompts_for(ModelRole.LLM_PLANNER)[0]
        assert PRIOR_KNOWLEDGE_HEADER in prompt
        assert "prior facts" in prompt


class TestBuildQuery:
    def sq(self, text="what brand is it"):
        return SubQuestion("r0.k1.0", 1, 0, text)

    def test_combines_question_and_first_sentence(self):
        formulation = CorrelatedFormulation(0, "A red handbag with gold clasp.")
        assert build_query(formulation, self.sq()) == "what brand is it A red handbag with gold clasp."

    def test_only_first_sentence_used(self):
        formulation = CorrelatedFormulation(
            0, "First sentence. Second one. Third. Fourth here. Fifth."
        )
        assert build_query(formulation, self.sq()) == "what brand is it First sentence."

    def test_total_length_capped_on_word_boundary(self):
        formulation = CorrelatedFormulation(0, "word " * 60)
        query = build_query(formulation, self.sq("x" * 200))
        assert len(query) <= 256
        assert not query.endswith(" ")


class TestSelectPages:
    def candidates(self, n=4):
        return [doc(URLS[i % 4] + f"?i={i}", f"text {i}") for i in range(n)]

    def test_parse_reply(self):
        run, _, _ = runner([entry(ModelRole.LLM_SEARCHER, "", "1, 3")])
        graph = init_graph(FORMULATION)
        picked, fallback = run.select_pages(graph, self.sq(), None, self.candidates())
        assert picked == [1, 3]
        assert not fallback

    def sq(self, level=1):
        return SubQuestion(f"r0.k{level}.0", level, 0, "what brand is it")

    def test_out_of_range_dropped(self):
        run, _, _ = runner([entry(ModelRole.LLM_SEARCHER, "", "7, 2")])
        graph = init_graph(FORMULATION)
        picked, _ = run.select_pages(graph, self.sq(), None, self.candidates())
        assert picked == [2]

    def test_degenerate_reply_falls_back_to_top_m(self):
        run, _, _ = runner([entry(ModelRole.LLM_SEARCHER, "", "none")])
        graph = init_graph(FORMULATION)
        picked, fallback = run.select_pages(graph, self.sq(), None, self.candidates())
        assert picked == [1, 2, 3]
        assert fallback

    def test_level1_prompt_has_no_parent_section(self):
        run, backend, _ = runner([entry(ModelRole.LLM_SEARCHER, "", "1")])
        graph = init_graph(FORMULATION)
        run.select_pages(graph, self.sq(), None, self.candidates())
        prompt = backend.prompts_for(ModelRole.LLM_SEARCHER)[0]
        assert PARENT_RESPONSE_HEADER not in prompt
        assert FORMULATION.text in prompt

    def test_level2_prompt_has_exactly_one_parent_section(self):
        run, backend, _ = runner([entry(ModelRole.LLM_SEARCHER, "", "1")])
        graph = init_graph(FORMULATION)
        run.select_pages(graph, self.sq(level=2), "the parent response", self.candidates())
        prompt = backend.prompts_for(ModelRole.LLM_SEARCHER)[0]
        assert prompt.count(PARENT_RESPONSE_HEADER) == 1
        assert "the parent response" in prompt

    def test_candidates_numbered_from_one(self):
        run, backend, _ = runner([entry(ModelRole.LLM_SEARCHER, "", "1")])
        graph = init_graph(FORMULATION)
        run.select_pages(graph, self.sq(), None, self.candidates(2))
        prompt = backend.prompts_for(ModelRole.LLM_SEARCHER)[0]
        assert "\n1. " in prompt and "\n2. " in prompt


class TestSummarizeResponse:
    def sq(self):
        return SubQuestion("r0.k1.0", 1, 0, "what brand is it")

    def test_scripted_summary(self):
        run, _, _ = runner([entry(ModelRole.LLM_SEARCHER, "", "The bag is a 2024 release.")])
        graph = init_graph(FORMULATION)
        text = run.summarize_response(graph, self.sq(), [doc(URLS[0], "some text")])
        assert text == "The bag is a 2024 release."

    def test_empty_selection_sentinel_without_model_call(self):
        run, backend, _ = runner([])
        graph = init_graph(FORMULATION)
        assert run.summarize_response(graph, self.sq(), []) == NO_EVIDENCE_SENTINEL
        assert backend.call_log == []

    def test_prompt_stays_within_budget_round_robin(self):
        gateway, backend = scripted_gateway([entry(ModelRole.LLM_SEARCHER, "", "ok")])
        deps = ChainDeps(
            gateway=gateway,
            templates=TemplateCatalog.bundled(),
            search_provider=AnySearchProvider(URLS),
            fetcher=DictFetcher(PAGES),
            retrieval=RetrievalConfig(chunk_chars=300),
        )
        run = ChainRunner(deps, ChainConfig(context_char_budget=2000))
        graph = init_graph(FORMULATION)
        big_docs = [
            doc(url, f"doc{i} begins. " + ("filler words here. " * 110))
            for i, url in enumerate(URLS[:3])
        ]
        assert sum(len(d.text) for d in big_docs) > 3 * 2000
        run.summarize_response(graph, self.sq(), big_docs)
        prompt = backend.prompts_for(ModelRole.LLM_SEARCHER)[0]
        assert len(prompt) <= 2000
        # round-robin: the leading chunk of every doc made it in
        assert all(f"doc{i} begins." in prompt for i in range(3))


class TestKnowledge:
    def build_graph_with_level1(self, run, responses=("R1", "R2")):
        graph = init_graph(FORMULATION)
        from vsa.model import GraphNode, SearchedPayload

        for j, response in enumerate(responses):
            sq = SubQuestion(f"r0.k1.{j}", 1, j, f"sub q {j}")
            graph.nodes.append(
                GraphNode(sq.node_id, 1, searched=SearchedPayload(sq, (), response))
            )
            graph.edges.append(("r0.root", sq.node_id))
        return graph

    def test_level1_prompt_contains_only_responses(self):
        run, backend, _ = runner([KNOWLEDGE])
        graph = self.build_graph_with_level1(run)
        knowledge, dropped = run.summarize_web_knowledge(graph, 1, "q")
        prompt = backend.prompts_for(ModelRole.LLM_SEARCHER)[0]
        assert "R1" in prompt and "R2" in prompt
        assert PRIOR_KNOWLEDGE_HEADER not in prompt
        assert dropped == []
        assert knowledge.level == 1
        assert set(knowledge.source_node_ids) == {"r0.k1.0", "r0.k1.1"}

    def test_level2_prompt_accumulates(self):
        from vsa.model import GraphNode, SearchedPayload, WebKnowledge

        run, backend, _ = runner([KNOWLEDGE])
        graph = self.build_graph_with_level1(run)
        graph.knowledge_by_level.append(WebKnowledge(0, 1, "knowledge one", ("r0.k1.0", "r0.k1.1")))
        sq = SubQuestion("r0.k2.0", 2, 0, "deeper q")
        graph.nodes.append(GraphNode(sq.node_id, 2, searched=SearchedPayload(sq, (), "R3")))
        graph.edges.append(("r0.k1.0", sq.node_id))

        knowledge, _ = run.summarize_web_knowledge(graph, 2, "q")
        prompt = backend.prompts_for(ModelRole.LLM_SEARCHER)[0]
        assert "knowledge one" in prompt
        assert "R1" in prompt and "R2" in prompt and "R3" in prompt
        assert prompt.count(PRIOR_KNOWLEDGE_HEADER) == 1
        assert set(knowledge.source_node_ids) == {"r0.k1.0", "r0.k1.1", "r0.k2.0"}

    def test_budget_trim_drops_oldest_responses_first(self):
        from vsa.model import GraphNode, SearchedPayload, WebKnowledge

        run, backend, _ = runner([KNOWLEDGE], config=ChainConfig(context_char_budget=2000))
        graph = self.build_graph_with_level1(run, responses=("old " * 300, "R2"))
        graph.knowledge_by_level.append(WebKnowledge(0, 1, "knowledge one", ("r0.k1.0", "r0.k1.1")))
        sq = SubQuestion("r0.k2.0", 2, 0, "deeper q")
        graph.nodes.append(GraphNode(sq.node_id, 2, searched=SearchedPayload(sq, (), "current " * 150)))
        graph.edges.append(("r0.k1.0", sq.node_id))

        _, dropped = run.summarize_web_knowledge(graph, 2, "q")
        prompt = backend.prompts_for(ModelRole.LLM_SEARCHER)[0]
        assert "r0.k1.0" in dropped  # oldest level trimmed
        assert "knowledge one" in prompt  # prior knowledge never trimmed
        assert "current" in prompt  # current level never trimmed


class TestJudge:
    def knowledge(self):
        from vsa.model import WebKnowledge

        return WebKnowledge(0, 1, "facts", ())

    def test_sufficient(self):
        run, _, _ = runner([JUDGE_YES])
        ok, warning = run.judge_sufficiency(init_graph(FORMULATION), "q", self.knowledge())
        assert ok and warning == ""

    def test_anything_else_is_insufficient(self):
        run, _, _ = runner([entry(ModelRole.LLM_JUDGE, "", "maybe")])
        ok, _ = run.judge_sufficiency(init_graph(FORMULATION), "q", self.knowledge())
        assert not ok

    def test_backend_error_fails_closed_to_sufficient(self):
        from vsa.gateway import BackendError, Gateway, GatewayConfig

        class Failing:
            def complete_raw(self, role, messages, max_tokens):
                raise BackendError("down", transient=False)

        gateway = Gateway(chat_backend=Failing(), config=GatewayConfig(backoff_base_s=0.0))
        deps = ChainDeps(
            gateway=gateway,
            templates=TemplateCatalog.bundled(),
            search_provider=AnySearchProvider([]),
            fetcher=DictFetcher({}),
        )
        run = ChainRunner(deps)
        ok, warning = run.judge_sufficiency(init_graph(FORMULATION), "q", self.knowledge())
        assert ok
        assert "judge backend error" in warning


LEVEL1_PLAN = entry(ModelRole.LLM_PLANNER, "What we know", "Q1\nQ2\nQ3")
LEVEL2_PLANS = [
    entry(ModelRole.LLM_PLANNER, "Earlier sub-question: Q1", "Q1a\nQ1b"),
    entry(ModelRole.LLM_PLANNER, "Earlier sub-question: Q2", "Q2a\nQ2b"),
    entry(ModelRole.LLM_PLANNER, "Earlier sub-question: Q3", "Q3a\nQ3b"),
]


class TestExpandAndRun:
    def test_expand_level1_arithmetic(self):
        run, _, _ = runner([LEVEL1_PLAN, SELECT, SUMMARIZE, KNOWLEDGE])
        graph = init_graph(FORMULATION)
        added = run.expand_level(graph, 1, "q")
        assert added == 3
        assert len(graph.nodes) == 4
        assert len(graph.edges) == 3
        assert len(graph.knowledge_by_level) == 1
        assert check_graph(graph).ok

    def test_expand_level2_arithmetic(self):
        run, _, _ = runner([LEVEL1_PLAN, *LEVEL2_PLANS, SELECT, SUMMARIZE, KNOWLEDGE])
        graph = init_graph(FORMULATION)
        run.expand_level(graph, 1, "q")
        added = run.expand_level(graph, 2, "q")
        assert added == 6
        assert len(graph.nodes) == 10
        assert check_graph(graph).ok

    def test_run_chain_sufficiency_at_level1(self):
        run, _, _ = runner([LEVEL1_PLAN, SELECT, SUMMARIZE, KNOWLEDGE, JUDGE_YES])
        result = run.run_chain(FORMULATION, "q")
        assert result.terminated_by is TerminationReason.SUFFICIENCY
        assert result.levels_run == 1
        assert result.final_knowledge.level == 1

    def test_run_chain_level_cap(self):
        plans = [
            LEVEL1_PLAN,
            *LEVEL2_PLANS,
            entry(ModelRole.LLM_PLANNER, "Earlier sub-question", "NONE", reusable=True),
        ]
        run, _, _ = runner(
            [*plans, SELECT, SUMMARIZE, KNOWLEDGE, JUDGE_NO], config=ChainConfig(max_levels=2)
        )
        result = run.run_chain(FORMULATION, "q")
        assert result.terminated_by is TerminationReason.LEVEL_CAP
        assert result.levels_run == 2
        assert result.final_knowledge.level == 2

    def test_run_chain_no_new_subquestions(self):
        plans = [
            LEVEL1_PLAN,
            entry(ModelRole.LLM_PLANNER, "Earlier sub-question", "NONE", reusable=True),
        ]
        run, _, _ = runner([*plans, SELECT, SUMMARIZE, KNOWLEDGE, JUDGE_NO])
        result = run.run_chain(FORMULATION, "q")
        assert result.terminated_by is TerminationReason.NO_NEW_SUBQUESTIONS
        assert result.levels_run == 1
        assert result.final_knowledge.level == 1  # deepest completed level
        assert check_graph(result.graph).ok

    def test_chain_error_carries_partial_graph(self):
        from vsa.gateway import BackendError, Gateway, GatewayConfig

        class FailAfterPlan:
            def __init__(self):
                self.calls = 0

            def complete_raw(self, role, messages, max_tokens):
                if role is ModelRole.LLM_PLANNER:
                    return "Q1"
                raise BackendError("down")

        gateway = Gateway(chat_backend=FailAfterPlan(), config=GatewayConfig(backoff_base_s=0.0))
        deps = ChainDeps(
            gateway=gateway,
            templates=TemplateCatalog.bundled(),
            search_provider=AnySearchProvider(URLS),
            fetcher=DictFetcher(PAGES),
            retrieval=RetrievalConfig(top_k=4, respect_robots=False),
        )
        run = ChainRunner(deps)
        with pytest.raises(ChainError) as excinfo:
            run.run_chain(FORMULATION, "q")
        assert len(excinfo.value.graph.nodes) >= 1

    def test_search_failure_degrades_to_sentinel(self):
        class FailingProvider:
            def raw_search(self, query, top_k):
                from vsa.retrieval import RetrievalError

                raise RetrievalError("provider down")

        gateway, _ = scripted_gateway([LEVEL1_PLAN, KNOWLEDGE, JUDGE_YES])
        deps = ChainDeps(
            gateway=gateway,
            templates=TemplateCatalog.bundled(),
            search_provider=FailingProvider(),
            fetcher=DictFetcher({}),
        )
        run = ChainRunner(deps)
        result = run.run_chain(FORMULATION, "q")
        responses = [n.searched.response_text for n in result.graph.nodes if n.searched]
        assert responses == [NO_EVIDENCE_SENTINEL] * 3

    def test_abort_at_level_barrier(self):
        run, _, _ = runner(
            [LEVEL1_PLAN, *LEVEL2_PLANS, SELECT, SUMMARIZE, KNOWLEDGE, JUDGE_NO],
            should_abort=lambda: True,
        )
        result = run.run_chain(FORMULATION, "q")
        assert result.levels_run == 0
        assert len(result.graph.nodes) == 1
