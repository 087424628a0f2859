"""Command line entry point: ``ckma graph|review|eval``.

Exit codes: 0 success, 1 pipeline failure, 2 bad input or configuration,
3 corpus evaluation finished but some instances failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any

from . import __version__
from .errors import BackendConfigError, CkmaError, CorpusError
from .evaluation import evaluate_corpus, load_corpus, load_instance
from .graph import minigraph_to_json
from .kmca import KmcaConfig
from .llm import (
    API_KEY_ENV,
    DEFAULT_BASE_URL,
    DEFAULT_MODEL,
    Backend,
    HttpBackend,
    MockBackend,
    load_mock_script,
)
from .mpsa import MpsaConfig
from .pipeline import run_graph, run_review
from .templates import load_templates

log = logging.getLogger("ckma")

EXIT_OK, EXIT_FAILED, EXIT_USAGE, EXIT_PARTIAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k", type=int, default=3, help="references per chunk (default 3)")
    p.add_argument("--m", type=int, default=32, help="max relations in the minigraph (default 32)")
    p.add_argument("--experts", type=int, default=3, help="number of summarization experts (default 3)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--temperature", type=float, default=0.0)
    p.add_argument("--model", default=DEFAULT_MODEL)
    p.add_argument("--base-url", default=DEFAULT_BASE_URL)
    p.add_argument("--timeout", type=float, default=60.0, help="HTTP timeout in seconds")
    p.add_argument("--backend", default="http",
                   help="'http' (needs %s), 'mock:echo' or 'mock:<script.json>'" % API_KEY_ENV)
    p.add_argument("--templates-dir", type=Path, default=None)
    p.add_argument("--concurrency", type=int, default=4, help="max parallel HTTP calls")
    p.add_argument("--max-context-chars", type=int, default=KmcaConfig.max_context_chars)
    p.add_argument("--output", type=Path, default=Path("ckma-out"), help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ckma", description="Literature review generation "
                                     "with knowledge minigraphs and multi-path summarization.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("graph", help="build the knowledge minigraph for one instance")
    g.add_argument("input", type=Path, help="instance JSON (or JSONL, first line used)")
    _add_common(g)

    r = sub.add_parser("review", help="generate a related-work paragraph for one instance")
    r.add_argument("input", type=Path)
    _add_common(r)

    e = sub.add_parser("eval", help="generate and score reviews for a JSONL corpus")
    e.add_argument("corpus", type=Path)
    e.add_argument("--limit", type=int, default=None, help="only the first N instances")
    _add_common(e)
    return parser


def make_backend(args: argparse.Namespace) -> Backend:
    spec = args.backend
    if spec == "http":
        return HttpBackend(base_url=args.base_url, model_id=args.model,
                           timeout_seconds=args.timeout, max_concurrency=args.concurrency)
    if spec == "mock:echo":
        return MockBackend.echo()
    if spec.startswith("mock:"):
        path = Path(spec[len("mock:"):])
        if not path.is_file():
            raise UsageError(f"mock script not found: {path}")
        return load_mock_script(path)
    raise UsageError(f"unknown backend {spec!r}")


def make_configs(args: argparse.Namespace) -> tuple[KmcaConfig, MpsaConfig]:
    try:
        templates = load_templates(args.templates_dir)
        kmca = KmcaConfig.from_templates(templates, k=args.k, m=args.m,
                                         temperature=args.temperature,
                                         max_context_chars=args.max_context_chars)
        mpsa = MpsaConfig.from_templates(templates, experts=args.experts,
                                         temperature=args.temperature)
    except (ValueError, FileNotFoundError) as exc:
        raise UsageError(str(exc)) from exc
    return kmca, mpsa


def run_config(args: argparse.Namespace) -> dict:
    cfg = {
        "k": args.k, "m": args.m, "experts": args.experts, "seed": args.seed,
        "temperature": args.temperature, "model_id": args.model, "base_url": args.base_url,
        "backend": args.backend, "concurrency": args.concurrency,
        "max_context_chars": args.max_context_chars,
        "templates_dir": str(args.templates_dir) if args.templates_dir else None,
    }
    if getattr(args, "limit", None) is not None:
        cfg["limit"] = args.limit
    return cfg


def _write_json(path: Path, obj: Any) -> None:
    path.write_text(json.dumps(obj, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def _manifest(args: argparse.Namespace, backend: Backend, calls: dict, **extra) -> dict:
    return {
        "ckma_version": __version__,
        "command": args.command,
        "input": str(getattr(args, "input", None) or args.corpus),
        "config": run_config(args),
        "backend": backend.describe(),
        "calls": calls,
        **extra,
    }


def _read_instance(path: Path):
    if not path.is_file():
        raise UsageError(f"input file not found: {path}")
    return load_instance(path)


def cmd_graph(args: argparse.Namespace) -> int:
    instance = _read_instance(args.input)
    kmca_cfg, _ = make_configs(args)
    backend = make_backend(args)
    run = run_graph(instance, kmca_cfg, backend, args.seed)
    args.output.mkdir(parents=True, exist_ok=True)
    (args.output / "minigraph.json").write_text(minigraph_to_json(run.graph, indent=2) + "\n",
                                                encoding="utf-8")
    _write_json(args.output / "manifest.json",
                _manifest(args, backend, {"graph": run.graph_calls},
                          chunks=[[r.id for r in c.references] for c in run.chunks]))
    print(f"minigraph with {len(run.graph)} relations written to {args.output / 'minigraph.json'}")
    return EXIT_OK


def cmd_review(args: argparse.Namespace) -> int:
    instance = _read_instance(args.input)
    kmca_cfg, mpsa_cfg = make_configs(args)
    backend = make_backend(args)
    run = run_review(instance, kmca_cfg, mpsa_cfg, backend, args.seed)
    args.output.mkdir(parents=True, exist_ok=True)
    (args.output / "review.txt").write_text(run.review.final_text + "\n", encoding="utf-8")
    _write_json(args.output / "review.json", run.sidecar())
    _write_json(args.output / "manifest.json",
                _manifest(args, backend, {"graph": run.graph_calls, "summary": run.summary_calls}))
    print(run.review.final_text)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    if not args.corpus.is_file():
        raise UsageError(f"corpus file not found: {args.corpus}")
    instances = load_corpus(args.corpus)
    if args.limit is not None:
        if args.limit < 1:
            raise UsageError("--limit must be >= 1")
        instances = instances[:args.limit]
    kmca_cfg, mpsa_cfg = make_configs(args)
    backend = make_backend(args)
    # instances without gold cannot be scored, so no calls are spent on them
    todo = [inst for inst in instances if inst.gold_summary is not None]

    def generate(inst):
        try:
            return inst.id, run_review(inst, kmca_cfg, mpsa_cfg, backend, args.seed), None
        except CkmaError as exc:
            log.error("instance %s failed: %s", inst.id, exc)
            return inst.id, None, str(exc)

    workers = min(backend.max_concurrency, max(len(todo), 1))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(generate, todo))
    else:
        results = [generate(inst) for inst in todo]

    generated = {i: run.review.final_text for i, run, _ in results if run is not None}
    failures = {i: err for i, _, err in results if err is not None}
    scored = [inst for inst in instances if inst.id in generated or inst.gold_summary is None]
    report = evaluate_corpus(scored, generated, failures)

    args.output.mkdir(parents=True, exist_ok=True)
    with open(args.output / "reviews.jsonl", "w", encoding="utf-8") as fh:
        for inst_id, run, _ in results:
            if run is not None:
                row = {"id": inst_id, "review": run.review.final_text,
                       "selected_expert": run.review.selected_expert}
                fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    _write_json(args.output / "report.json", report.to_dict())
    table = report.to_table()
    (args.output / "report.txt").write_text(table + "\n", encoding="utf-8")
    calls = {
        "graph": sum(run.graph_calls for _, run, _ in results if run is not None),
        "summary": sum(run.summary_calls for _, run, _ in results if run is not None),
    }
    _write_json(args.output / "manifest.json", _manifest(args, backend, calls))
    print(table)
    return EXIT_PARTIAL if failures else EXIT_OK


COMMANDS = {"graph": cmd_graph, "review": cmd_review, "eval": cmd_eval}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, CorpusError, BackendConfigError) as exc:
        print(f"ckma: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CkmaError as exc:
        print(f"ckma: {args.command} failed: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
