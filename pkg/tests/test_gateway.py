import json

import httpx
import numpy as np
import pytest

from tkgforecast.gateway import (
    CachedEmbedder,
    DimensionError,
    GatewayError,
    GenerationRequest,
    HashEmbedder,
    HttpGateway,
    PayloadError,
    StubGenerator,
    TableEmbedder,
    TransportError,
    cosine,
)


def gateway(handler, **kw):
    return HttpGateway("http://model.test", transport=httpx.MockTransport(handler), sleep=lambda s: None, **kw)


def test_stub_generator_is_deterministic():
    prompt = "x\n2014-01-01: [A, R, 3.B]\n2014-01-02: [A, R, 4.C]\n2014-01-03: [A, R,"
    req = GenerationRequest(prompt, num_sequences=5, seed=1)
    a, b = StubGenerator(seed=7), StubGenerator(seed=7)
    assert a.generate(req) == b.generate(req)
    assert set(a.generate(req).texts) <= {"3.B", "4.C"}
    assert a.calls == 2


def test_stub_canned_text():
    gen = StubGenerator(canned={"p": ["1.X", "2.Y"]})
    assert gen.generate(GenerationRequest("p", num_sequences=1)).texts == ("1.X",)


def test_hash_embedder_unit_and_stable():
    e = HashEmbedder(dim=16, seed=3)
    v = e.embed("hello")
    assert v.shape == (16,)
    assert np.linalg.norm(v) == pytest.approx(1.0)
    assert np.array_equal(v, HashEmbedder(dim=16, seed=3).embed("hello"))
    assert not np.array_equal(v, e.embed("world"))


def test_cosine_matches_arithmetic():
    t = TableEmbedder({"a": [1.0, 2.0, 2.0], "b": [2.0, 0.0, 1.0]})
    assert cosine(t.embed("a"), t.embed("b")) == pytest.approx(4 / (3 * 5**0.5), abs=1e-15)
    with pytest.raises(GatewayError):
        t.embed("missing")


def test_cache_counts_and_persists(tmp_path):
    inner = TableEmbedder({"a": [1.0, 0.0], "b": [0.0, 1.0]})
    path = tmp_path / "cache.json"
    cache = CachedEmbedder(inner, path=path)
    cache.embed("a")
    cache.embed("a")
    cache.embed("b")
    assert (cache.hits, cache.misses, inner.calls) == (1, 2, 2)
    cache.save()
    again = CachedEmbedder(TableEmbedder({"z": [0.0, 0.0]}), path=path)
    assert np.array_equal(again.embed("a"), [1.0, 0.0])
    assert again.hits == 1


def test_cache_dimension_check():
    with pytest.raises(DimensionError):
        CachedEmbedder(TableEmbedder({"a": [1.0, 0.0]}), dim=3).embed("a")


def test_http_generate_round_trip():
    seen = []

    def handler(request):
        seen.append(json.loads(request.content))
        return httpx.Response(200, json={"generations": ["1.A", "2.B", "3.C"]})

    gw = gateway(handler)
    out = gw.generate(GenerationRequest("prompt", num_sequences=2, seed=4))
    assert out.texts == ("1.A", "2.B")
    assert seen[0]["prompt"] == "prompt" and seen[0]["seed"] == 4


def test_http_retries_then_succeeds():
    calls = []

    def handler(request):
        calls.append(1)
        if len(calls) < 3:
            return httpx.Response(503)
        return httpx.Response(200, json={"embedding": [0.0, 1.0]})

    gw = gateway(handler, dim=2, retries=3)
    assert np.array_equal(gw.embed("x"), [0.0, 1.0])
    assert len(calls) == 3


def test_http_transport_error_reports_attempts():
    def handler(request):
        raise httpx.ConnectError("refused")

    gw = gateway(handler, retries=2)
    with pytest.raises(TransportError) as info:
        gw.embed("x")
    assert info.value.attempts == 3


def test_http_client_error_not_retried():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(400, text="bad request")

    with pytest.raises(GatewayError, match="400"):
        gateway(handler).embed("x")
    assert len(calls) == 1


@pytest.mark.parametrize(
    "body",
    [{"embedding": "nope"}, {"vector": [1.0]}, {"embedding": ["a", "b"]}],
)
def test_http_malformed_payload(body):
    gw = gateway(lambda r: httpx.Response(200, json=body), dim=2)
    with pytest.raises(PayloadError):
        gw.embed("x")


def test_http_wrong_dimension():
    gw = gateway(lambda r: httpx.Response(200, json={"embedding": [1.0, 2.0, 3.0]}), dim=2)
    with pytest.raises(DimensionError):
        gw.embed("x")


def test_http_non_json():
    gw = gateway(lambda r: httpx.Response(200, text="<html>"))
    with pytest.raises(PayloadError):
        gw.generate(GenerationRequest("p"))
