"""Knowledge minigraph construction.

The references are walked chunk by chunk. The first chunk produces a graph
on its own; every later chunk is shown together with the text rendering of
the graph so far, and the model returns the merged, re-selected graph.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

from .chunker import Chunk, chunk_instance
from .documents import QueryInstance, ReferenceDocument
from .errors import CkmaError, ContextOverflowError, StageError
from .graph import (
    ENTITY_TYPE_NAMES,
    RELATION_TYPE_NAMES,
    DroppedRecord,
    KnowledgeMinigraph,
    minigraph_from_json,
    minigraph_to_text,
    validate_minigraph,
)
from .llm import Backend, CompletionRequest, complete_json
from .templates import DEFAULT_TEMPLATES, TemplateSet, render

log = logging.getLogger(__name__)

EMPTY_PRIOR_GRAPH = "(empty graph)"


@dataclass(frozen=True)
class KmcaConfig:
    k: int = 3
    m: int = 32
    max_context_chars: int = 48_000
    prompt_template_initial: str = DEFAULT_TEMPLATES.graph_initial
    prompt_template_iterative: str = DEFAULT_TEMPLATES.graph_iterative
    demonstration: str = DEFAULT_TEMPLATES.graph_demonstration
    system_text: str = DEFAULT_TEMPLATES.graph_system
    temperature: float = 0.0
    max_output_tokens: int = 2048
    truncate_abstracts: bool = True

    def __post_init__(self):
        if self.k < 1 or self.m < 1 or self.max_context_chars < 1:
            raise ValueError("k, m and max_context_chars must be positive")

    @classmethod
    def from_templates(cls, templates: TemplateSet, **overrides) -> "KmcaConfig":
        return cls(
            prompt_template_initial=templates.graph_initial,
            prompt_template_iterative=templates.graph_iterative,
            demonstration=templates.graph_demonstration,
            system_text=templates.graph_system,
            **overrides,
        )


def format_reference(ref: ReferenceDocument, abstract: Optional[str] = None) -> str:
    body = ref.abstract if abstract is None else abstract
    if ref.title:
        return f"[{ref.id}] {ref.title}\n{body}"
    return f"[{ref.id}] {body}"


_SENTENCE_END_RE = re.compile(r"[.!?](?=\s|$)")


def truncate_at_sentence(text: str, budget: int) -> str:
    """Cut ``text`` to at most ``budget`` chars, ending on a sentence if one fits."""
    if len(text) <= budget:
        return text
    head = text[:budget]
    ends = [m.end() for m in _SENTENCE_END_RE.finditer(head)]
    if ends:
        return head[:ends[-1]]
    return head.rsplit(" ", 1)[0] if " " in head else head


def _render_graph_prompt(cfg: KmcaConfig, prev_graph_text: Optional[str], abstracts: str, m: int) -> str:
    values = dict(
        entity_types=", ".join(ENTITY_TYPE_NAMES),
        relation_types=", ".join(RELATION_TYPE_NAMES),
        m=m,
        demonstration=cfg.demonstration,
        abstracts=abstracts,
    )
    if prev_graph_text is None:
        return render(cfg.prompt_template_initial, **values)
    return render(cfg.prompt_template_iterative,
                  prior_graph=prev_graph_text or EMPTY_PRIOR_GRAPH, **values)


def build_graph_prompt(prev_graph_text: Optional[str], chunk: Chunk, m: int,
                       cfg: KmcaConfig | None = None) -> CompletionRequest:
    """Render the graph-construction request for one chunk.

    ``prev_graph_text`` is None for the first chunk; afterwards it is the
    text rendering of the graph built so far. Prompts over
    ``cfg.max_context_chars`` get each abstract trimmed to an equal share of
    the remaining room; if that still does not fit, ``ContextOverflowError``.
    """
    cfg = cfg or KmcaConfig()
    refs = chunk.references
    text = _render_graph_prompt(cfg, prev_graph_text,
                                "\n\n".join(format_reference(r) for r in refs), m)
    if len(text) > cfg.max_context_chars and cfg.truncate_abstracts:
        skeleton = _render_graph_prompt(
            cfg, prev_graph_text, "\n\n".join(format_reference(r, "") for r in refs), m)
        budget = (cfg.max_context_chars - len(skeleton)) // len(refs)
        if budget > 0:
            trimmed = "\n\n".join(
                format_reference(r, truncate_at_sentence(r.abstract, budget)) for r in refs)
            text = _render_graph_prompt(cfg, prev_graph_text, trimmed, m)
            log.info("chunk %d: abstracts truncated to %d chars each", chunk.index, budget)
    if len(text) > cfg.max_context_chars:
        longest = max(refs, key=lambda r: len(r.abstract))
        raise ContextOverflowError(len(text), cfg.max_context_chars, longest.id)
    return CompletionRequest(
        system_text=cfg.system_text,
        user_text=text,
        temperature=cfg.temperature,
        max_output_tokens=cfg.max_output_tokens,
    )


@dataclass(frozen=True)
class GraphIteration:
    index: int
    graph: KnowledgeMinigraph
    dropped: list[DroppedRecord] = field(default_factory=list)
    calls: int = 1


def _graph_step(backend: Backend, request: CompletionRequest, m: int):
    def parse(payload: str):
        return validate_minigraph(minigraph_from_json(payload), m)

    return complete_json(backend, request, parse)


def iterate_minigraphs(chunks: Sequence[Chunk], cfg: KmcaConfig,
                       backend: Backend) -> Iterator[GraphIteration]:
    """Yield the intermediate graph after each chunk, in chunk order."""
    graph: KnowledgeMinigraph | None = None
    for chunk in chunks:
        prev_text = None if graph is None else minigraph_to_text(graph)
        try:
            request = build_graph_prompt(prev_text, chunk, cfg.m, cfg)
            result, calls = _graph_step(backend, request, cfg.m)
            if not result.graph.relations:
                # one retry for an empty answer; a second empty graph stands
                log.info("chunk %d produced an empty graph; retrying once", chunk.index)
                result, extra = _graph_step(backend, request, cfg.m)
                calls += extra
        except CkmaError as exc:
            raise StageError("graph", chunk.index, exc) from exc
        if result.dropped:
            log.info("chunk %d: dropped %d relation records", chunk.index, len(result.dropped))
        graph = result.graph
        yield GraphIteration(chunk.index, graph, result.dropped, calls)


def construct_minigraph(instance: QueryInstance, cfg: KmcaConfig, backend: Backend,
                        seed: int, chunks: Sequence[Chunk] | None = None) -> KnowledgeMinigraph:
    """Build the final minigraph for ``instance``.

    ``chunks`` lets the caller reuse an existing chunking; otherwise the
    references are chunked from ``seed``.
    """
    if chunks is None:
        chunks = chunk_instance(instance.references, cfg.k, seed)
    graph = KnowledgeMinigraph((), cfg.m)
    for step in iterate_minigraphs(chunks, cfg, backend):
        graph = step.graph
    return graph
