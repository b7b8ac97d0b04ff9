"""Backends, caching, chunking, and the deterministic mock."""
import json

import pytest
import requests
from hypothesis import given, settings
from hypothesis import strategies as st

from notepheno.inference import (
    BackendError,
    CachedBackend,
    CompletionRequest,
    CompletionResponse,
    GenerationParams,
    HttpBackend,
    MockBackend,
    ResponseCache,
    TransportError,
    chunk_text,
    run_parallel,
)
from notepheno.prompting import builtin_profiles, render_prompt


def test_generation_defaults():
    params = GenerationParams()
    assert (params.temperature, params.top_p, params.top_k) == (0.5, 0.9, 50)


def test_generation_validation():
    with pytest.raises(ValueError):
        GenerationParams(temperature=1.5)
    with pytest.raises(ValueError):
        GenerationParams(top_p=0.0)
    with pytest.raises(ValueError):
        GenerationParams(top_k=1)
    with pytest.raises(ValueError):
        GenerationParams(max_new_tokens=0)


# -- chunking ----------------------------------------------------------------

def test_chunk_short_text_is_single_chunk():
    assert chunk_text("short note.") == [chunk_text("short note.")[0]]
    assert chunk_text("") == []


def test_chunk_splits_at_sentence_boundaries():
    text = "One sentence here. " * 40
    chunks = chunk_text(text, max_units=100)
    assert all(len(c.text) <= 100 for c in chunks)
    assert "".join(c.text for c in chunks) == text
    assert all(not c.oversized for c in chunks)


def test_chunk_oversized_sentence_flagged():
    text = "a" * 250 + ". tail."
    chunks = chunk_text(text, max_units=100)
    assert chunks[0].oversized
    assert "".join(c.text for c in chunks) == text
    with pytest.raises(ValueError):
        chunk_text("x", max_units=0)


@given(st.text(max_size=500), st.integers(min_value=5, max_value=200))
@settings(max_examples=200)
def test_chunks_concatenate_to_input(text, budget):
    chunks = chunk_text(text, budget)
    assert "".join(c.text for c in chunks) == text
    for c in chunks:
        assert c.oversized or len(c.text) <= budget


# -- http backend ------------------------------------------------------------

class _FakeResponse:
    def __init__(self, status_code, payload=None, text=""):
        self.status_code = status_code
        self._payload = payload
        self.text = text

    def json(self):
        return self._payload


class _FakeSession:
    def __init__(self, outcomes):
        self.outcomes = list(outcomes)
        self.calls = 0

    def post(self, url, json=None, headers=None, timeout=None):
        self.calls += 1
        outcome = self.outcomes.pop(0)
        if isinstance(outcome, Exception):
            raise outcome
        return outcome


def _backend(session, **kwargs):
    kwargs.setdefault("backoff_s", 0.0)
    return HttpBackend("http://localhost:9", session=session, **kwargs)


def test_http_success_payload_shapes():
    for payload in (
        {"text": "ok"},
        {"completion": "ok"},
        {"choices": [{"text": "ok"}]},
        {"choices": [{"message": {"content": "ok"}}]},
    ):
        session = _FakeSession([_FakeResponse(200, payload)])
        response = _backend(session).complete(CompletionRequest("p"))
        assert response.text == "ok"


def test_http_4xx_not_retried():
    session = _FakeSession([_FakeResponse(400, text="bad request")])
    with pytest.raises(BackendError, match="400"):
        _backend(session).complete(CompletionRequest("p"))
    assert session.calls == 1


def test_http_5xx_retried_then_succeeds():
    session = _FakeSession(
        [_FakeResponse(503), requests.ConnectionError("boom"), _FakeResponse(200, {"text": "ok"})]
    )
    response = _backend(session).complete(CompletionRequest("p"))
    assert response.text == "ok"
    assert session.calls == 3


def test_http_exhausted_retries_raise_transport_error():
    session = _FakeSession([requests.ConnectionError("boom")] * 4)
    with pytest.raises(TransportError, match="after 4 attempts"):
        _backend(session).complete(CompletionRequest("p"))


def test_http_unrecognized_payload():
    session = _FakeSession([_FakeResponse(200, {"weird": 1})])
    with pytest.raises(BackendError, match="unrecognized"):
        _backend(session).complete(CompletionRequest("p"))


# -- cache -------------------------------------------------------------------

class _CountingBackend:
    backend_id = "counting"

    def __init__(self):
        self.calls = 0

    def complete(self, request):
        self.calls += 1
        return CompletionResponse(f"answer:{request.prompt}", 0.0, self.backend_id)


def test_cache_key_depends_on_prompt_and_params():
    a = CompletionRequest("p1")
    b = CompletionRequest("p2")
    c = CompletionRequest("p1", GenerationParams(temperature=0.7))
    assert ResponseCache.key(a) != ResponseCache.key(b)
    assert ResponseCache.key(a) != ResponseCache.key(c)
    assert ResponseCache.key(a) == ResponseCache.key(CompletionRequest("p1"))


def test_cached_backend_warm_cache_hits(tmp_path):
    inner = _CountingBackend()
    backend = CachedBackend(inner, ResponseCache(tmp_path))
    first = backend.complete(CompletionRequest("hello"))
    second = backend.complete(CompletionRequest("hello"))
    assert first.text == second.text == "answer:hello"
    assert inner.calls == 1
    assert (backend.hits, backend.misses) == (1, 1)
    # a fresh wrapper over the same directory is fully warm
    rewarmed = CachedBackend(_CountingBackend(), ResponseCache(tmp_path))
    rewarmed.complete(CompletionRequest("hello"))
    assert rewarmed.inner.calls == 0
    assert rewarmed.misses == 0


# -- mock backend ------------------------------------------------------------

def _profile(name):
    return next(p for p in builtin_profiles() if p.name == name)


def test_mock_inference_detects_trigger_tokens():
    backend = MockBackend()
    prompt = render_prompt(_profile("ami"), "inference", "Diagnosed with NSTEMI yesterday.").text
    assert backend.complete(CompletionRequest(prompt)).text.startswith("Yes,")
    prompt = render_prompt(_profile("ami"), "inference", "Family history unremarkable.").text
    assert backend.complete(CompletionRequest(prompt)).text.startswith("No,")
    # "mi" must not fire inside other words
    prompt = render_prompt(_profile("ami"), "inference", "The family was administered dinner.").text
    assert backend.complete(CompletionRequest(prompt)).text.startswith("No,")


def test_mock_routes_by_condition_not_by_note_content():
    backend = MockBackend()
    # a note mentioning hypertension, asked about diabetes, is negative
    prompt = render_prompt(_profile("diabetes"), "inference", "Longstanding hypertension.").text
    assert backend.complete(CompletionRequest(prompt)).text.startswith("No,")


def test_mock_extraction_echoes_lab_patterns():
    backend = MockBackend()
    prompt = render_prompt(
        _profile("diabetes"), "extraction", "glucose - mmol/l random : 13.4 mmol/l today"
    ).text
    text = backend.complete(CompletionRequest(prompt)).text
    assert "13.4 mmol/l" in text
    prompt = render_prompt(_profile("diabetes"), "extraction", "nothing measured").text
    text = backend.complete(CompletionRequest(prompt)).text
    assert text.startswith("There are no key-value pairs of")


def test_mock_evidence_prompt_quotes_supporting_text():
    backend = MockBackend()
    prompt = render_prompt(_profile("diabetes"), "evidence", "Known diabetes, on insulin.").text
    text = backend.complete(CompletionRequest(prompt)).text
    assert 'Supporting text: "diabetes"' in text


def test_mock_flips_are_deterministic():
    a = MockBackend(flip_fn_rate=0.5, flip_fp_rate=0.5, flip_seed=1)
    b = MockBackend(flip_fn_rate=0.5, flip_fp_rate=0.5, flip_seed=1)
    prompts = [
        render_prompt(_profile("diabetes"), "inference", f"note {i} diabetes noted.").text
        for i in range(40)
    ]
    answers_a = [a.complete(CompletionRequest(p)).text for p in prompts]
    answers_b = [b.complete(CompletionRequest(p)).text for p in prompts]
    assert answers_a == answers_b
    assert any(t.startswith("No,") for t in answers_a)  # some flips landed
    assert any(t.startswith("Yes,") for t in answers_a)


def test_run_parallel_preserves_order():
    backend = _CountingBackend()
    reqs = [CompletionRequest(f"q{i}") for i in range(20)]
    responses = run_parallel(backend, reqs, parallelism=4)
    assert [r.text for r in responses] == [f"answer:q{i}" for i in range(20)]
