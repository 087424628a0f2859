"""Multiple path summarization: chunk summaries, expert summaries, routing."""

from __future__ import annotations

import math
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence, TypeVar

from .chunker import Chunk, substream_seed
from .documents import QueryInstance
from .errors import CkmaError, StageError
from .graph import KnowledgeMinigraph, minigraph_to_dict, minigraph_to_text
from .kmca import format_reference
from .llm import Backend, CompletionRequest
from .rouge import pairwise_agreement
from .templates import DEFAULT_TEMPLATES, TemplateSet, render

NO_GRAPH_MARKER = "(no graph available)"

T = TypeVar("T")
R = TypeVar("R")


@dataclass(frozen=True)
class MpsaConfig:
    experts: int = 3
    prompt_template_chunk: str = DEFAULT_TEMPLATES.summary_chunk
    prompt_template_expert: str = DEFAULT_TEMPLATES.summary_expert
    demonstration: str = DEFAULT_TEMPLATES.summary_demonstration
    system_text: str = DEFAULT_TEMPLATES.summary_system
    temperature: float = 0.0
    max_output_tokens: int = 1024

    def __post_init__(self):
        if self.experts < 1:
            raise ValueError("experts must be >= 1")

    @classmethod
    def from_templates(cls, templates: TemplateSet, **overrides) -> "MpsaConfig":
        return cls(
            prompt_template_chunk=templates.summary_chunk,
            prompt_template_expert=templates.summary_expert,
            demonstration=templates.summary_demonstration,
            system_text=templates.summary_system,
            **overrides,
        )


@dataclass(frozen=True)
class ChunkSummary:
    chunk_index: int
    text: str

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError(f"empty summary for chunk {self.chunk_index}")


@dataclass(frozen=True)
class ExpertSummary:
    expert_index: int
    permutation: tuple[int, ...]
    text: str

    def __post_init__(self):
        object.__setattr__(self, "permutation", tuple(self.permutation))
        if sorted(self.permutation) != list(range(len(self.permutation))):
            raise ValueError(f"not a permutation: {self.permutation}")
        if not self.text.strip():
            raise ValueError(f"empty summary from expert {self.expert_index}")


@dataclass(frozen=True)
class ReviewOutput:
    final_text: str
    selected_expert: int
    all_experts: tuple[ExpertSummary, ...]
    agreement_scores: tuple[float, ...]
    chunk_summaries: tuple[ChunkSummary, ...] = ()

    def to_dict(self, graph: KnowledgeMinigraph | None = None) -> dict:
        out = {
            "final_text": self.final_text,
            "selected_expert": self.selected_expert,
            "experts": [
                {
                    "expert_index": e.expert_index,
                    "permutation": list(e.permutation),
                    "agreement": score,
                    "text": e.text,
                }
                for e, score in zip(self.all_experts, self.agreement_scores)
            ],
            "chunk_summaries": [
                {"chunk_index": s.chunk_index, "text": s.text} for s in self.chunk_summaries
            ],
        }
        if graph is not None:
            out["minigraph"] = minigraph_to_dict(graph)
        return out


def _graph_text(graph: KnowledgeMinigraph) -> str:
    return minigraph_to_text(graph) or NO_GRAPH_MARKER


def _request(cfg: MpsaConfig, template: str, query_abstract: str, items: str,
             graph: KnowledgeMinigraph) -> CompletionRequest:
    text = render(
        template,
        query_abstract=query_abstract,
        items=items,
        graph_text=_graph_text(graph),
        demonstration=cfg.demonstration,
    )
    return CompletionRequest(
        system_text=cfg.system_text,
        user_text=text,
        temperature=cfg.temperature,
        max_output_tokens=cfg.max_output_tokens,
    )


def summarize_chunk(query_abstract: str, chunk: Chunk, graph: KnowledgeMinigraph,
                    backend: Backend, cfg: MpsaConfig | None = None) -> ChunkSummary:
    cfg = cfg or MpsaConfig()
    items = "\n\n".join(format_reference(r) for r in chunk.references)
    request = _request(cfg, cfg.prompt_template_chunk, query_abstract, items, graph)
    try:
        return ChunkSummary(chunk.index, backend.complete(request).text.strip())
    except (CkmaError, ValueError) as exc:
        raise StageError("chunk-summary", chunk.index, exc) from exc


def unrank_permutation(rank: int, n: int) -> tuple[int, ...]:
    """Permutation of ``range(n)`` at position ``rank`` in lexicographic order."""
    pool = list(range(n))
    out = []
    for i in range(n - 1, -1, -1):
        digit, rank = divmod(rank, math.factorial(i))
        out.append(pool.pop(digit))
    return tuple(out)


def sample_permutations(i_count: int, e_count: int, seed: int) -> list[tuple[int, ...]]:
    """Identity first, then ``min(e_count, i_count!) - 1`` distinct random orders.

    The non-identity permutations are drawn uniformly without replacement.
    """
    if i_count < 1 or e_count < 1:
        raise ValueError("i_count and e_count must be >= 1")
    total = math.factorial(i_count)
    wanted = min(e_count, total) - 1
    rng = random.Random(seed)
    if total <= 2**62:
        ranks = rng.sample(range(1, total), wanted)
    else:
        chosen: dict[int, None] = {}
        while len(chosen) < wanted:
            chosen.setdefault(rng.randrange(1, total))
        ranks = list(chosen)
    return [unrank_permutation(r, i_count) for r in [0, *ranks]]


def expert_summarize(query_abstract: str, summaries: Sequence[ChunkSummary],
                     perm: Sequence[int], graph: KnowledgeMinigraph, backend: Backend,
                     cfg: MpsaConfig | None = None, expert_index: int = 0) -> ExpertSummary:
    """One expert's review, reading the chunk summaries in ``perm`` order."""
    cfg = cfg or MpsaConfig()
    by_index = {s.chunk_index: s for s in summaries}
    items = "\n\n".join(f"[chunk {i} summary] {by_index[i].text}" for i in perm)
    request = _request(cfg, cfg.prompt_template_expert, query_abstract, items, graph)
    try:
        return ExpertSummary(expert_index, tuple(perm), backend.complete(request).text.strip())
    except (CkmaError, ValueError) as exc:
        raise StageError("expert-summary", expert_index, exc) from exc


def route(candidates: Sequence[ExpertSummary]) -> ReviewOutput:
    """Pick the candidate the other experts agree with most.

    Agreement of expert e is the sum over j != e of the unigram recall of Y_j
    measured against Y_e as reference. Ties go to the lowest index.
    """
    if not candidates:
        raise ValueError("route needs at least one candidate")
    scores = pairwise_agreement([c.text for c in candidates])
    best = max(range(len(scores)), key=lambda e: (scores[e], -e))
    return ReviewOutput(
        final_text=candidates[best].text,
        selected_expert=candidates[best].expert_index,
        all_experts=tuple(candidates),
        agreement_scores=tuple(scores),
    )


def _map(backend: Backend, fn: Callable[[T], R], items: Sequence[T]) -> list[R]:
    workers = min(getattr(backend, "max_concurrency", 1), len(items))
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def generate_review(instance: QueryInstance, graph: KnowledgeMinigraph, cfg: MpsaConfig,
                    chunks: Sequence[Chunk], backend: Backend, seed: int) -> ReviewOutput:
    """Chunk summaries, then one expert per sampled order, then routing.

    Issues exactly ``len(chunks) + min(cfg.experts, len(chunks)!)`` calls.
    """
    abstract = instance.query_abstract
    summaries = _map(backend, lambda c: summarize_chunk(abstract, c, graph, backend, cfg), chunks)
    perms = sample_permutations(len(chunks), cfg.experts, substream_seed(seed, "permutations"))
    experts = _map(
        backend,
        lambda ep: expert_summarize(abstract, summaries, ep[1], graph, backend, cfg, ep[0]),
        list(enumerate(perms)),
    )
    routed = route(experts)
    return ReviewOutput(
        final_text=routed.final_text,
        selected_expert=routed.selected_expert,
        all_experts=routed.all_experts,
        agreement_scores=routed.agreement_scores,
        chunk_summaries=tuple(summaries),
    )
