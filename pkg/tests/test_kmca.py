import json

import pytest

from ckma.chunker import Chunk, chunk_instance
from ckma.documents import ReferenceDocument
from ckma.errors import ContextOverflowError, StageError
from ckma.graph import (
    ENTITY_TYPE_NAMES,
    RELATION_TYPE_NAMES,
    load_minigraph,
    minigraph_to_text,
)
from ckma.kmca import (
    EMPTY_PRIOR_GRAPH,
    KmcaConfig,
    build_graph_prompt,
    construct_minigraph,
    iterate_minigraphs,
    truncate_at_sentence,
)
from ckma.llm import MockBackend, RecordingBackend

from conftest import graph_payload, make_instance, make_refs, relation_record


def one_chunk(n=1):
    return Chunk(0, tuple(make_refs(n)))


def test_prompt_lists_every_type():
    text = build_graph_prompt(None, one_chunk(), 32).user_text
    for name in ENTITY_TYPE_NAMES + RELATION_TYPE_NAMES:
        assert name in text
    assert "JSON" in text
    assert "[r0] Abstract 0" in text
    assert KmcaConfig().demonstration in text


def test_prompt_embeds_prior_graph():
    prior = load_minigraph(graph_payload(2), 32)
    prior_text = minigraph_to_text(prior)
    text = build_graph_prompt(prior_text, one_chunk(), 32).user_text
    assert prior_text in text
    for line in prior_text.splitlines():
        assert line in text


def test_prompt_volume_literal():
    text = build_graph_prompt(None, one_chunk(), 5).user_text
    assert "select the 5 most significant relations" in text
    assert "32" not in text


def test_empty_prior_graph_marker():
    assert EMPTY_PRIOR_GRAPH in build_graph_prompt("", one_chunk(), 32).user_text
    assert EMPTY_PRIOR_GRAPH not in build_graph_prompt(None, one_chunk(), 32).user_text


def test_request_settings():
    cfg = KmcaConfig(temperature=0.7, max_output_tokens=99)
    request = build_graph_prompt(None, one_chunk(), 32, cfg)
    assert request.temperature == 0.7 and request.max_output_tokens == 99
    assert request.system_text == cfg.system_text


def test_truncate_at_sentence():
    text = "First one. Second sentence here. Third."
    assert truncate_at_sentence(text, 100) == text
    assert truncate_at_sentence(text, 20) == "First one."
    assert truncate_at_sentence("no stops in this text", 12) == "no stops in"


def test_long_abstracts_are_truncated_to_fit():
    long = " ".join(f"Sentence number {i} about things." for i in range(400))
    chunk = Chunk(0, (ReferenceDocument("big", long), ReferenceDocument("small", "Tiny.")))
    cfg = KmcaConfig(max_context_chars=6000)
    text = build_graph_prompt(None, chunk, 32, cfg).user_text
    assert len(text) <= 6000
    assert "[small] Tiny." in text
    assert "Sentence number 0 about things." in text


def test_overflow_error_names_longest_abstract():
    chunk = Chunk(0, (ReferenceDocument("a", "Short."), ReferenceDocument("b", "Much longer abstract.")))
    with pytest.raises(ContextOverflowError) as err:
        build_graph_prompt(None, chunk, 32, KmcaConfig(max_context_chars=200))
    assert err.value.longest_reference == "b"
    full = len(build_graph_prompt(None, chunk, 32).user_text)
    with pytest.raises(ContextOverflowError):
        build_graph_prompt(None, chunk, 32, KmcaConfig(max_context_chars=full - 1, truncate_abstracts=False))


def test_single_chunk_single_call():
    rec = RecordingBackend(MockBackend.scripted([graph_payload(3)]))
    graph = construct_minigraph(make_instance(3), KmcaConfig(), rec, seed=0)
    assert rec.calls == 1
    assert graph == load_minigraph(graph_payload(3), 32)


def test_seven_references_three_iterations():
    payloads = [graph_payload(2, "a"), graph_payload(3, "b"), graph_payload(4, "c")]
    rec = RecordingBackend(MockBackend.scripted(payloads))
    graph = construct_minigraph(make_instance(7), KmcaConfig(), rec, seed=3)
    assert rec.calls == 3
    for i in (1, 2):
        prev_text = minigraph_to_text(load_minigraph(payloads[i - 1], 32))
        assert prev_text in rec.requests[i].user_text
    assert "Current knowledge minigraph" not in rec.requests[0].user_text
    assert graph == load_minigraph(payloads[2], 32)


def test_chunk_abstracts_appear_in_their_call():
    instance = make_instance(7)
    chunks = chunk_instance(instance.references, 3, 11)
    rec = RecordingBackend(MockBackend.scripted([graph_payload(1)] * 3))
    construct_minigraph(instance, KmcaConfig(), rec, seed=11)
    for chunk, request in zip(chunks, rec.requests):
        for ref in chunk.references:
            assert f"[{ref.id}] {ref.abstract}" in request.user_text


def test_volume_truncation_of_scripted_payload():
    rec = RecordingBackend(MockBackend.scripted([graph_payload(40)]))
    graph = construct_minigraph(make_instance(2), KmcaConfig(), rec, seed=0)
    # prefix-truncation oracle on the scripted payload
    expected = [r["head"]["name"] for r in json.loads(graph_payload(40))["relations"]][:32]
    assert [r.head.name for r in graph.relations] == expected


def test_m_applies_every_iteration():
    rec = RecordingBackend(MockBackend.scripted([graph_payload(10, "a"), graph_payload(10, "b")]))
    steps = list(iterate_minigraphs(chunk_instance(make_refs(4), 2, 0), KmcaConfig(k=2, m=4), rec))
    assert [len(s.graph) for s in steps] == [4, 4]
    assert minigraph_to_text(steps[0].graph) in rec.requests[1].user_text


def test_invalid_records_dropped_with_reasons():
    payload = json.dumps({"relations": [
        relation_record("A", "Uses", "B"),
        relation_record("C", "Compare", "D"),
        relation_record("E", "Compare", "F", tail_type="Dataset"),
    ]})
    steps = list(iterate_minigraphs([one_chunk()], KmcaConfig(), MockBackend.scripted([payload])))
    assert len(steps[0].graph) == 1
    assert [d.index for d in steps[0].dropped] == [0, 2]
    assert "unknown relation type" in steps[0].dropped[0].reason


def test_fenced_and_chatty_output_is_recovered():
    text = f"Sure, here is the graph:\n```json\n{graph_payload(2)}\n```\nLet me know!"
    graph = construct_minigraph(make_instance(1), KmcaConfig(), MockBackend.scripted([text]), seed=0)
    assert len(graph) == 2


def test_empty_graph_retried_once_then_accepted():
    rec = RecordingBackend(MockBackend.scripted(['{"relations": []}', '{"relations": []}']))
    graph = construct_minigraph(make_instance(2), KmcaConfig(), rec, seed=0)
    assert rec.calls == 2 and len(graph) == 0
    rec = RecordingBackend(MockBackend.scripted(['{"relations": []}', graph_payload(1)]))
    assert len(construct_minigraph(make_instance(2), KmcaConfig(), rec, seed=0)) == 1


def test_failure_carries_iteration_index():
    mock = MockBackend.scripted([graph_payload(1), "no json", "still none"])
    with pytest.raises(StageError) as err:
        construct_minigraph(make_instance(6), KmcaConfig(), mock, seed=0)
    assert err.value.stage == "graph" and err.value.index == 1


def test_deterministic_with_scripted_mock():
    payloads = [graph_payload(3, "a"), graph_payload(3, "b"), graph_payload(3, "c")]
    graphs = [construct_minigraph(make_instance(7), KmcaConfig(), MockBackend.scripted(payloads), seed=5)
              for _ in range(2)]
    assert graphs[0] == graphs[1]


def test_config_defaults():
    cfg = KmcaConfig()
    assert (cfg.k, cfg.m, cfg.temperature) == (3, 32, 0.0)
    with pytest.raises(ValueError):
        KmcaConfig(m=0)
