from __future__ import annotations

from dataclasses import dataclass

from .chunker import Chunk, chunk_instance
from .documents import QueryInstance
from .graph import KnowledgeMinigraph
from .kmca import KmcaConfig, construct_minigraph
from .llm import Backend, RecordingBackend
from .mpsa import MpsaConfig, ReviewOutput, generate_review


@dataclass(frozen=True)
class GraphRun:
    chunks: tuple[Chunk, ...]
    graph: KnowledgeMinigraph
    graph_calls: int


@dataclass(frozen=True)
class ReviewRun:
    chunks: tuple[Chunk, ...]
    graph: KnowledgeMinigraph
    review: ReviewOutput
    graph_calls: int
    summary_calls: int

    def sidecar(self) -> dict:
        out = self.review.to_dict(self.graph)
        out["chunks"] = [[r.id for r in c.references] for c in self.chunks]
        return out


def run_graph(instance: QueryInstance, cfg: KmcaConfig, backend: Backend, seed: int) -> GraphRun:
    chunks = tuple(chunk_instance(instance.references, cfg.k, seed))
    counter = RecordingBackend(backend)
    graph = construct_minigraph(instance, cfg, counter, seed, chunks=chunks)
    return GraphRun(chunks, graph, counter.calls)


def run_review(instance: QueryInstance, kmca_cfg: KmcaConfig, mpsa_cfg: MpsaConfig,
               backend: Backend, seed: int) -> ReviewRun:
    """Build the minigraph, then summarize; both stages share one chunking."""
    built = run_graph(instance, kmca_cfg, backend, seed)
    counter = RecordingBackend(backend)
    review = generate_review(instance, built.graph, mpsa_cfg, built.chunks, counter, seed)
    return ReviewRun(built.chunks, built.graph, review, built.graph_calls, counter.calls)
