"""Prompt template files and placeholder rendering.

Templates are plain UTF-8 text with ``{name}`` placeholders. Only names that
are supplied get substituted, so literal JSON braces in a template survive
rendering untouched.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path

_PLACEHOLDER_RE = re.compile(r"\{([a-z_]+)\}")


def render(template: str, **values: object) -> str:
    def substitute(match: re.Match) -> str:
        name = match.group(1)
        return str(values[name]) if name in values else match.group(0)

    return _PLACEHOLDER_RE.sub(substitute, template)


def placeholders(template: str) -> set[str]:
    return set(_PLACEHOLDER_RE.findall(template))


def _builtin(name: str) -> str:
    return resources.files("ckma").joinpath("templates", name).read_text(encoding="utf-8")


@dataclass(frozen=True)
class TemplateSet:
    graph_system: str
    graph_initial: str
    graph_iterative: str
    graph_demonstration: str
    summary_system: str
    summary_chunk: str
    summary_expert: str
    summary_demonstration: str


# attribute -> file name; both summary stages share one prompt by default
_FILES = {
    "graph_system": "graph_system.txt",
    "graph_initial": "graph_initial.txt",
    "graph_iterative": "graph_iterative.txt",
    "graph_demonstration": "graph_demonstration.txt",
    "summary_system": "summary_system.txt",
    "summary_chunk": "summary.txt",
    "summary_expert": "summary.txt",
    "summary_demonstration": "summary_demonstration.txt",
}
_OVERRIDE_FILES = {"summary_chunk": "summary_chunk.txt", "summary_expert": "summary_expert.txt"}


def load_templates(directory: str | Path | None = None) -> TemplateSet:
    """Built-in templates, with any same-named file in ``directory`` taking precedence.

    A directory may also hold ``summary_chunk.txt`` / ``summary_expert.txt``
    to give the two summarization stages different prompts.
    """
    texts = {}
    base = Path(directory) if directory is not None else None
    if base is not None and not base.is_dir():
        raise FileNotFoundError(f"templates directory not found: {base}")
    for f in fields(TemplateSet):
        candidates = [_OVERRIDE_FILES.get(f.name), _FILES[f.name]]
        text = None
        if base is not None:
            for name in filter(None, candidates):
                if (base / name).is_file():
                    text = (base / name).read_text(encoding="utf-8")
                    break
        texts[f.name] = text if text is not None else _builtin(_FILES[f.name])
    return TemplateSet(**{k: v.strip("\n") for k, v in texts.items()})


DEFAULT_TEMPLATES = load_templates()
