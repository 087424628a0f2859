"""Literature review generation from knowledge minigraphs and multi-path summarization."""

from .chunker import Chunk, chunk_references
from .documents import QueryInstance, ReferenceDocument
from .graph import (
    Entity,
    EntityType,
    KnowledgeMinigraph,
    Relation,
    RelationType,
    minigraph_from_json,
    minigraph_to_json,
    minigraph_to_text,
    validate_minigraph,
)
from .kmca import KmcaConfig, construct_minigraph
from .llm import CompletionRequest, CompletionResponse, HttpBackend, MockBackend, extract_json
from .mpsa import MpsaConfig, ReviewOutput, generate_review, route, sample_permutations
from .rouge import RougeScore, pairwise_agreement, rouge_n, tokenize

__version__ = "0.1.0"

__all__ = [
    "Chunk", "chunk_references", "QueryInstance", "ReferenceDocument", "Entity", "EntityType",
    "KnowledgeMinigraph", "Relation", "RelationType", "minigraph_from_json", "minigraph_to_json",
    "minigraph_to_text", "validate_minigraph", "KmcaConfig", "construct_minigraph",
    "CompletionRequest", "CompletionResponse", "HttpBackend", "MockBackend", "extract_json",
    "MpsaConfig", "ReviewOutput", "generate_review", "route", "sample_permutations",
    "RougeScore", "pairwise_agreement", "rouge_n", "tokenize",
]
