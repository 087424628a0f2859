from __future__ import annotations

from dataclasses import dataclass
from typing import Optional


@dataclass(frozen=True)
class ReferenceDocument:
    id: str
    abstract: str
    title: Optional[str] = None

    def __post_init__(self):
        if not str(self.id).strip():
            raise ValueError("reference id must be non-empty")
        if not self.abstract or not self.abstract.strip():
            raise ValueError(f"reference {self.id!r} has an empty abstract")


@dataclass(frozen=True)
class QueryInstance:
    """A query paper's abstract, the references it cites and its gold related-work text."""

    query_abstract: str
    references: tuple[ReferenceDocument, ...]
    gold_summary: Optional[str] = None
    id: str = "0"

    def __post_init__(self):
        object.__setattr__(self, "references", tuple(self.references))
        if not self.query_abstract or not self.query_abstract.strip():
            raise ValueError("query abstract must be non-empty")
        if not self.references:
            raise ValueError("references must be non-empty")
        ids = [r.id for r in self.references]
        if len(set(ids)) != len(ids):
            dup = next(i for i in ids if ids.count(i) > 1)
            raise ValueError(f"duplicate reference id {dup!r}")

    @property
    def reference_count(self) -> int:
        return len(self.references)

    def to_dict(self) -> dict:
        out: dict = {
            "id": self.id,
            "abstract": self.query_abstract,
            "references": [],
        }
        for ref in self.references:
            item = {"id": ref.id, "abstract": ref.abstract}
            if ref.title is not None:
                item["title"] = ref.title
            out["references"].append(item)
        if self.gold_summary is not None:
            out["related_work"] = self.gold_summary
        return out
