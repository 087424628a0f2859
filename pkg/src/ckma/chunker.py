"""Seeded random partition of references into chunks of at most ``k``."""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass
from typing import Sequence

from .documents import ReferenceDocument


@dataclass(frozen=True)
class Chunk:
    index: int
    references: tuple[ReferenceDocument, ...]

    def __post_init__(self):
        object.__setattr__(self, "references", tuple(self.references))
        if not self.references:
            raise ValueError("a chunk must hold at least one reference")

    def __len__(self) -> int:
        return len(self.references)


def substream_seed(seed: int, name: str) -> int:
    """Derive an independent 64-bit seed for a named stage from the master seed."""
    digest = hashlib.sha256(f"{int(seed)}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def chunk_references(refs: Sequence[ReferenceDocument], k: int, seed: int) -> list[Chunk]:
    """Shuffle ``refs`` with ``seed`` and slice the result into chunks of ``k``.

    The last chunk holds the ``len(refs) % k`` leftovers when the division is
    not exact. Same inputs and seed always give the same chunks.
    """
    if k < 1:
        raise ValueError(f"chunk size must be >= 1, got {k}")
    if not refs:
        raise ValueError("cannot chunk an empty reference list")
    order = list(refs)
    random.Random(seed).shuffle(order)
    return [Chunk(i, tuple(order[start:start + k]))
            for i, start in enumerate(range(0, len(order), k))]


def chunk_instance(references: Sequence[ReferenceDocument], k: int, seed: int) -> list[Chunk]:
    """Chunk with the pipeline's ``chunking`` substream of a master seed."""
    return chunk_references(references, k, substream_seed(seed, "chunking"))
