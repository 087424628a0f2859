"""Multi-XScience style JSONL corpora and corpus-level ROUGE evaluation.

One JSON object per line::

    {"id": "...", "abstract": "...",
     "references": [{"id": "...", "abstract": "...", "title": "..."}],
     "related_work": "..."}

``id``, ``title`` and ``related_work`` are optional. The gold related-work
paragraph is what generated reviews are scored against.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from statistics import fmean
from typing import Any, Iterable, Mapping

from .documents import QueryInstance, ReferenceDocument
from .errors import CorpusError, EvaluationError
from .rouge import RougeScore, rouge_n

ROUGE_LABEL = "ROUGE-1/2 (unstemmed)"


def _field(obj: Mapping, key: str, line: int | None, kind=str) -> Any:
    if key not in obj or obj[key] is None:
        raise CorpusError(f"missing required field {key!r}", line)
    value = obj[key]
    if not isinstance(value, kind):
        raise CorpusError(f"field {key!r} must be a {kind.__name__}", line)
    return value


def parse_instance(obj: Any, line: int | None = None, default_id: str = "0") -> QueryInstance:
    if not isinstance(obj, Mapping):
        raise CorpusError("instance must be a JSON object", line)
    abstract = _field(obj, "abstract", line)
    raw_refs = _field(obj, "references", line, list)
    if not raw_refs:
        raise CorpusError("references must be non-empty", line)
    refs = []
    for i, ref in enumerate(raw_refs):
        if not isinstance(ref, Mapping):
            raise CorpusError(f"references[{i}] must be an object", line)
        ref_id = ref.get("id")
        if ref_id is None:
            raise CorpusError(f"missing required field 'references[{i}].id'", line)
        ref_abstract = ref.get("abstract")
        if not isinstance(ref_abstract, str):
            raise CorpusError(f"missing required field 'references[{i}].abstract'", line)
        title = ref.get("title")
        try:
            refs.append(ReferenceDocument(str(ref_id), ref_abstract,
                                          title if isinstance(title, str) else None))
        except ValueError as exc:
            raise CorpusError(str(exc), line) from exc
    gold = obj.get("related_work")
    try:
        return QueryInstance(
            query_abstract=abstract,
            references=tuple(refs),
            gold_summary=gold if isinstance(gold, str) else None,
            id=str(obj.get("id", default_id)),
        )
    except ValueError as exc:
        raise CorpusError(str(exc), line) from exc


def load_corpus(path: str | Path) -> list[QueryInstance]:
    """Read a JSONL corpus. Blank lines are skipped; ids default to the line number."""
    instances = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"malformed JSON: {exc.msg}", lineno) from exc
            instances.append(parse_instance(obj, lineno, default_id=str(lineno)))
    return instances


def load_instance(path: str | Path) -> QueryInstance:
    """Read a single instance: a JSON object file or the first line of a JSONL file."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError:
        corpus = load_corpus(path)
        if not corpus:
            raise CorpusError(f"{path} holds no instance") from None
        return corpus[0]
    return parse_instance(obj)


@dataclass(frozen=True)
class InstanceScore:
    id: str
    reference_count: int
    rouge1: RougeScore
    rouge2: RougeScore


@dataclass(frozen=True)
class GroupScore:
    count: int
    rouge1: RougeScore
    rouge2: RougeScore


def _mean_score(scores: Iterable[RougeScore]) -> RougeScore:
    scores = list(scores)
    return RougeScore(
        recall=fmean(s.recall for s in scores),
        precision=fmean(s.precision for s in scores),
        f1=fmean(s.f1 for s in scores),
    )


@dataclass(frozen=True)
class EvaluationReport:
    per_instance: tuple[InstanceScore, ...]
    rouge1: RougeScore
    rouge2: RougeScore
    groups: dict[int, GroupScore]
    excluded: tuple[str, ...] = ()
    failures: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "metric": ROUGE_LABEL,
            "instances": len(self.per_instance),
            "aggregate": {"rouge1": self.rouge1.to_dict(), "rouge2": self.rouge2.to_dict()},
            "groups": {
                str(n): {"count": g.count, "rouge1": g.rouge1.to_dict(), "rouge2": g.rouge2.to_dict()}
                for n, g in sorted(self.groups.items())
            },
            "per_instance": [
                {
                    "id": s.id,
                    "reference_count": s.reference_count,
                    "rouge1": s.rouge1.to_dict(),
                    "rouge2": s.rouge2.to_dict(),
                }
                for s in self.per_instance
            ],
            "excluded_without_gold": list(self.excluded),
            "failures": dict(self.failures),
        }

    def to_table(self) -> str:
        """Aligned plain-text summary; scores are percentages."""
        header = ("group", "n", "R1-R", "R1-P", "R1-F", "R2-R", "R2-P", "R2-F")
        rows = [("all", len(self.per_instance), self.rouge1, self.rouge2)]
        rows += [(f"refs={n}", g.count, g.rouge1, g.rouge2) for n, g in sorted(self.groups.items())]
        lines = [f"{ROUGE_LABEL}, {len(self.per_instance)} evaluated instances"]
        lines.append(f"{header[0]:<10}{header[1]:>6}" + "".join(f"{h:>8}" for h in header[2:]))
        for label, n, r1, r2 in rows:
            nums = [r1.recall, r1.precision, r1.f1, r2.recall, r2.precision, r2.f1]
            lines.append(f"{label:<10}{n:>6}" + "".join(f"{100 * x:>8.2f}" for x in nums))
        if self.excluded:
            lines.append(f"excluded (no gold summary): {len(self.excluded)}")
        if self.failures:
            lines.append(f"failed instances: {', '.join(sorted(self.failures))}")
        return "\n".join(lines)


def evaluate_corpus(instances: Iterable[QueryInstance], generated: Mapping[str, str],
                    failures: Mapping[str, str] | None = None) -> EvaluationReport:
    """Score generated reviews against gold related-work text.

    Instances without a gold summary are left out and listed in ``excluded``.
    """
    per_instance = []
    excluded = []
    for inst in instances:
        if inst.gold_summary is None:
            excluded.append(inst.id)
            continue
        if inst.id not in generated:
            raise EvaluationError(f"no generated text for instance {inst.id!r}")
        text = generated[inst.id]
        per_instance.append(InstanceScore(
            id=inst.id,
            reference_count=inst.reference_count,
            rouge1=rouge_n(inst.gold_summary, text, 1),
            rouge2=rouge_n(inst.gold_summary, text, 2),
        ))
    if not per_instance:
        raise EvaluationError("zero evaluable instances")
    by_count: dict[int, list[InstanceScore]] = {}
    for s in per_instance:
        by_count.setdefault(s.reference_count, []).append(s)
    groups = {
        n: GroupScore(len(items), _mean_score(i.rouge1 for i in items),
                      _mean_score(i.rouge2 for i in items))
        for n, items in sorted(by_count.items())
    }
    return EvaluationReport(
        per_instance=tuple(per_instance),
        rouge1=_mean_score(s.rouge1 for s in per_instance),
        rouge2=_mean_score(s.rouge2 for s in per_instance),
        groups=groups,
        excluded=tuple(excluded),
        failures=dict(failures or {}),
    )
