"""Prompt template catalog.

Templates are data, not code: UTF-8 text files with ``{{name}}`` placeholders,
shipped with the package and overridable via a directory of the same layout.
Section headers used by optional blocks live here as constants so tests can
assert on prompt shape without duplicating template text.
"""

from __future__ import annotations

import re
from importlib import resources
from pathlib import Path

CATALOG_VERSION = "1"

# Section headers recognizable in rendered prompts. PARENT_RESPONSE_HEADER is
# the marker that must appear exactly once in level-k>1 page-selection prompts
# and never in level-1 ones.
PARENT_RESPONSE_HEADER = "Parent search response:"
PRIOR_KNOWLEDGE_HEADER = "Known web knowledge so far:"
PRIOR_RESPONSES_HEADER = "Search responses from earlier levels:"
CURRENT_RESPONSES_HEADER = "Search responses from this level:"
OTHER_OBJECTS_HEADER = "Other objects in the scene:"

_PLACEHOLDER = re.compile(r"\{\{([a-z_]+)\}\}")


class TemplateError(ValueError):
    pass


class TemplateCatalog:
    """Loads and renders the named templates of one catalog directory."""

    def __init__(self, templates: dict[str, str]) -> None:
        self._templates = templates

    @classmethod
    def bundled(cls) -> "TemplateCatalog":
        root = resources.files("vsa").joinpath("prompts")
        templates = {}
        for entry in root.iterdir():
            if entry.name.endswith(".txt"):
                templates[entry.name[:-4]] = entry.read_text(encoding="utf-8")
        return cls(templates)

    @classmethod
    def from_dir(cls, path: Path) -> "TemplateCatalog":
        templates = {
            file.stem: file.read_text(encoding="utf-8") for file in sorted(path.glob("*.txt"))
        }
        if not templates:
            raise TemplateError(f"no *.txt templates found in {path}")
        return cls(templates)

    def names(self) -> list[str]:
        return sorted(self._templates)

    def render(self, name: str, /, **values: str) -> str:
        if name not in self._templates:
            raise TemplateError(f"unknown template {name!r}; have {', '.join(self.names())}")
        template = self._templates[name]
        wanted = set(_PLACEHOLDER.findall(template))
        missing = wanted - set(values)
        if missing:
            raise TemplateError(f"template {name!r} missing values for: {', '.join(sorted(missing))}")
        extra = set(values) - wanted
        if extra:
            raise TemplateError(f"template {name!r} got unused values: {', '.join(sorted(extra))}")
        return _PLACEHOLDER.sub(lambda m: values[m.group(1)], template)
