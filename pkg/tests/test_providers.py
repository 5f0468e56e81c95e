import io
import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest
from PIL import Image

from geoprog.errors import (DimensionMismatch, MalformedResponse,
                            ProviderUnavailable)
from geoprog.providers import (HttpDetector, HttpEmbedder, HttpGenerator,
                               OracleDetector, OracleEmbedder, OracleGenerator,
                               ProviderEndpoint, normalize_text)


# -- local test server --------------------------------------------------------

class _Handler(BaseHTTPRequestHandler):
    server_version = "test"

    def log_message(self, *args):
        pass

    def _reply(self, code, payload, raw=None):
        body = raw if raw is not None else json.dumps(payload).encode()
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        self.server.hits.append(("GET", self.path))
        if self.path == "/info":
            self._reply(200, {"kind": "embed", "dim": 3, "model": "stub-1"})
        else:
            self._reply(404, {})

    def do_POST(self):
        self.server.hits.append(("POST", self.path))
        n = int(self.headers.get("Content-Length", 0))
        payload = json.loads(self.rfile.read(n)) if n else {}
        behavior = self.server.behavior
        if behavior.get("fail_next", 0) > 0:
            behavior["fail_next"] -= 1
            self._reply(500, {"error": "transient"})
            return
        if behavior.get("garbage"):
            self._reply(200, None, raw=b"{not json")
            return
        if self.path == "/embed":
            texts = payload["texts"]
            vecs = [[float(len(t)), 1.0, 0.0] for t in texts]
            self._reply(200, {"vectors": vecs, "dim": 3})
        elif self.path == "/detect":
            self._reply(200, {"boxes": [[1, 2, 5, 6]], "scores": [0.8]})
        elif self.path == "/generate":
            self._reply(200, {"text": "ANSWER=FullSeg()"})
        else:
            self._reply(404, {})


@pytest.fixture
def server():
    httpd = HTTPServer(("127.0.0.1", 0), _Handler)
    httpd.behavior = {}
    httpd.hits = []
    thread = threading.Thread(target=httpd.serve_forever, daemon=True)
    thread.start()
    try:
        yield httpd
    finally:
        httpd.shutdown()
        thread.join(timeout=5)


def endpoint(httpd, **kw):
    return ProviderEndpoint(base_url=f"http://127.0.0.1:{httpd.server_port}", **kw)


# -- HTTP clients -------------------------------------------------------------

def test_http_embedder_info_and_cache(server):
    emb = HttpEmbedder(endpoint(server))
    assert emb.dim == 3 and emb.model_id == "stub-1"
    v = emb.embed_text(["abc", "de"])
    assert v.shape == (2, 3)
    assert v[0][0] == 3.0 and v[1][0] == 2.0
    calls = emb.network_calls
    v2 = emb.embed_text(["abc", "de"])  # fully cached
    assert emb.network_calls == calls
    assert np.array_equal(v, v2)
    emb.embed_text(["abc", "xyzw"])  # one miss
    assert emb.network_calls == calls + 1


def test_http_embedder_retry_on_500(server):
    emb = HttpEmbedder(endpoint(server, retries=3))
    server.behavior["fail_next"] = 2
    v = emb.embed_text(["hello"])
    assert v[0][0] == 5.0


def test_http_embedder_gives_up(server):
    emb = HttpEmbedder(endpoint(server, retries=1))
    server.behavior["fail_next"] = 10
    with pytest.raises(ProviderUnavailable):
        emb.embed_text(["hello"])
    assert emb.attempts >= 3  # /info + 2 embed attempts


def test_http_malformed_json(server):
    emb = HttpEmbedder(endpoint(server))
    server.behavior["garbage"] = True
    with pytest.raises(MalformedResponse):
        emb.embed_text(["hello"])


def test_http_unreachable():
    ep = ProviderEndpoint(base_url="http://127.0.0.1:9", timeout=0.2, retries=0)
    with pytest.raises(ProviderUnavailable):
        HttpEmbedder(ep)


def test_http_detector_and_generator(server):
    det = HttpDetector(endpoint(server))
    out = det.detect(b"png-bytes", "car")
    assert out == [((1.0, 2.0, 5.0, 6.0), 0.8)]
    gen = HttpGenerator(endpoint(server))
    assert gen.generate("prompt") == "ANSWER=FullSeg()"


def test_endpoint_validation():
    with pytest.raises(ValueError):
        ProviderEndpoint(base_url="http://x", timeout=0)
    with pytest.raises(ValueError):
        ProviderEndpoint(base_url="http://x", retries=-1)


# -- oracle embedder ----------------------------------------------------------

def test_oracle_embedder_orthonormal():
    emb = OracleEmbedder(["building", "car", "ground", "sports field"], dim=8)
    v = emb.embed_text(["building", "car", "ground", "sports field"])
    assert np.allclose(v @ v.T, np.eye(4), atol=1e-12)


def test_oracle_embedder_deterministic():
    a = OracleEmbedder(["x", "y"], dim=8).embed_text(["x", "y"])
    b = OracleEmbedder(["x", "y"], dim=8).embed_text(["x", "y"])
    assert np.array_equal(a, b)


def test_oracle_embedder_normalization():
    emb = OracleEmbedder(["sports field"], dim=8)
    assert np.array_equal(emb.embed_text(["Sports_Field"]),
                          emb.embed_text(["sports  field"]))


def test_oracle_embedder_out_of_vocab():
    emb = OracleEmbedder(["a"], dim=8)
    v = emb.embed_text(["mystery"])[0]
    assert np.linalg.norm(v) == pytest.approx(1.0)
    assert np.array_equal(v, emb.embed_text(["mystery"])[0])


def test_oracle_embedder_validation():
    with pytest.raises(ValueError):
        OracleEmbedder(["a", "A"])  # duplicate after normalization
    with pytest.raises(ValueError):
        OracleEmbedder(["a", "b", "c"], dim=2)


# -- oracle detector ----------------------------------------------------------

def _png(arr):
    buf = io.BytesIO()
    Image.fromarray((arr * 255).astype(np.uint8)).save(buf, "PNG")
    return buf.getvalue()


def test_oracle_detector_finds_blobs():
    img = np.zeros((20, 30, 3))
    img[:] = (0.55, 0.55, 0.55)
    img[2:5, 3:8] = (0.85, 0.08, 0.08)
    img[10:14, 20:24] = (0.85, 0.08, 0.08)
    det = OracleDetector({"car": (0.85, 0.08, 0.08)})
    out = det.detect(_png(img), "car")
    boxes = sorted(b for b, s in out)
    assert boxes == [(3.0, 2.0, 8.0, 5.0), (20.0, 10.0, 24.0, 14.0)]


def test_oracle_detector_min_pixels_and_unknown():
    img = np.zeros((10, 10, 3))
    img[5, 5] = (0.85, 0.08, 0.08)  # single pixel below min_pixels=2
    det = OracleDetector({"car": (0.85, 0.08, 0.08)})
    assert det.detect(_png(img), "car") == []
    assert det.detect(_png(img), "submarine") == []


def test_oracle_detector_color_separation():
    img = np.zeros((10, 10, 3))
    img[2:4, 2:4] = (0.72, 0.62, 0.50)  # building tan, not car red
    det = OracleDetector({"car": (0.85, 0.08, 0.08)})
    assert det.detect(_png(img), "car") == []


# -- oracle generator ---------------------------------------------------------

def test_oracle_generator_roundtrip():
    gen = OracleGenerator(programs={"How many cars?": "ANSWER=FullSeg()"})
    prompt = ("Query: example one\nProgram:\nANSWER=FullSeg()\n\n"
              "Think step by step and generate a program that answers the "
              "question.\nQuery: How many cars?")
    assert gen.generate(prompt) == "ANSWER=FullSeg()"


def test_oracle_generator_min_ice():
    gen = OracleGenerator(programs={"q": "ANSWER=FullSeg()"},
                          min_ice={"q": 2})
    block = "Query: ex\nProgram:\nX=FullSeg()\n\n"
    tail = ("Think step by step and generate a program that answers the "
            "question.\nQuery: q")
    assert gen.generate(block + tail) == gen.garbage       # 1 example
    assert gen.generate(block * 2 + tail) == "ANSWER=FullSeg()"


def test_oracle_generator_unknown_query():
    gen = OracleGenerator(programs={})
    assert gen.generate("Query: whatever") == gen.garbage


def test_parse_prompt():
    q, n = OracleGenerator.parse_prompt(
        "Query: a\nProgram:\nX=FullSeg()\n\nQuery: b\nProgram:\nY=FullSeg()\n\n"
        "instructions\nQuery: the real one")
    assert q == "the real one"
    assert n == 2
    with pytest.raises(MalformedResponse):
        OracleGenerator.parse_prompt("no queries here")


def test_normalize_text():
    assert normalize_text(" Sports_Field ") == "sports field"
    assert normalize_text("A\tB") == "a b"
