from __future__ import annotations

import pytest

from vsa.templates import TemplateCatalog, TemplateError


def test_bundled_catalog_has_expected_templates(templates):
    for name in (
        "detector_vocabulary",
        "region_caption",
        "correlate_region",
        "correlate_region_single",
        "plan_subquestions",
        "select_pages",
        "summarize_response",
        "summarize_knowledge",
        "judge_sufficiency",
        "final_answer",
        "naive_summary",
        "naive_answer",
        "judge_score",
    ):
        assert name in templates.names()


def test_render_substitutes_placeholders(templates):
    rendered = templates.render("region_caption", prompt_text="what brand is this?")
    assert "what brand is this?" in rendered
    assert "{{" not in rendered


def test_missing_value_rejected(templates):
    with pytest.raises(TemplateError, match="prompt_text"):
        templates.render("region_caption")


def test_unused_value_rejected(templates):
    with pytest.raises(TemplateError, match="unused"):
        templates.render("region_caption", prompt_text="x", bogus="y")


def test_unknown_template_rejected(templates):
    with pytest.raises(TemplateError, match="unknown template"):
        templates.render("does_not_exist")


def test_from_dir_overrides(tmp_path):
    (tmp_path / "greeting.txt").write_text("hi {{name}}", encoding="utf-8")
    catalog = TemplateCatalog.from_dir(tmp_path)
    assert catalog.render("greeting", name="sam") == "hi sam"


def test_from_empty_dir_rejected(tmp_path):
    with pytest.raises(TemplateError):
        TemplateCatalog.from_dir(tmp_path)
