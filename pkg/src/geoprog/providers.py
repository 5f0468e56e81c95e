"""Model-service clients and their deterministic oracle stubs.

Three services sit behind JSON-over-HTTP endpoints:
  POST /embed    {"texts": [...]}            -> {"vectors": [[...]], "dim": E}
  POST /detect   {"image_b64":.., "query":..} -> {"boxes": [[x0,y0,x1,y1]], "scores": [...]}
  POST /generate {"prompt": ..}              -> {"text": ...}
  GET  /info                                  -> {"kind", "dim", "model"}

Oracle mode replaces all three with deterministic stubs so benchmark runs
are bit-reproducible without any network or model weights.
"""

from __future__ import annotations

import base64
import hashlib
import io
import re
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, MalformedResponse, ProviderUnavailable

DEFAULT_DETECT_THRESHOLD = 0.35


def normalize_text(text: str) -> str:
    return re.sub(r"[\s_]+", " ", text.strip()).casefold()


# -- endpoint config ----------------------------------------------------------

@dataclass(frozen=True)
class ProviderEndpoint:
    base_url: str
    timeout: float = 10.0
    retries: int = 2
    auth_token: str | None = None
    max_in_flight: int = 4

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be > 0")
        if self.retries < 0:
            raise ValueError("retries must be >= 0")


class _HttpClient:
    """Shared retry/backoff/concurrency machinery for the three clients."""

    backoff_base = 0.1

    def __init__(self, endpoint: ProviderEndpoint):
        self.endpoint = endpoint
        self.attempts = 0  # instrumentation
        self._sem = threading.Semaphore(endpoint.max_in_flight)

    def _headers(self):
        h = {"Content-Type": "application/json"}
        if self.endpoint.auth_token:
            h["Authorization"] = f"Bearer {self.endpoint.auth_token}"
        return h

    def _request(self, method, path, payload=None):
        import requests
        url = self.endpoint.base_url.rstrip("/") + path
        last_exc = None
        for attempt in range(self.endpoint.retries + 1):
            if attempt:
                time.sleep(self.backoff_base * 2 ** (attempt - 1))
            self.attempts += 1
            try:
                with self._sem:
                    resp = requests.request(method, url, json=payload,
                                            headers=self._headers(),
                                            timeout=self.endpoint.timeout)
                if resp.status_code >= 500:
                    last_exc = ProviderUnavailable(f"{url}: HTTP {resp.status_code}")
                    continue
                if resp.status_code != 200:
                    raise MalformedResponse(f"{url}: HTTP {resp.status_code}")
                try:
                    return resp.json()
                except ValueError as exc:
                    raise MalformedResponse(f"{url}: reply is not JSON") from exc
            except requests.RequestException as exc:
                last_exc = exc
        raise ProviderUnavailable(
            f"{url} unreachable after {self.endpoint.retries + 1} attempts"
        ) from last_exc


# -- embedding ----------------------------------------------------------------

class HttpEmbedder(_HttpClient):
    def __init__(self, endpoint):
        super().__init__(endpoint)
        info = self._request("GET", "/info")
        self.dim = int(info.get("dim", 0))
        self.model_id = info.get("model", "unknown")
        self._cache = {}
        self._lock = threading.Lock()
        self.network_calls = 0

    def embed_text(self, texts):
        out = [None] * len(texts)
        missing = []
        with self._lock:
            for i, t in enumerate(texts):
                key = (self.model_id, t)
                if key in self._cache:
                    out[i] = self._cache[key]
                else:
                    missing.append(i)
        if missing:
            reply = self._request("POST", "/embed",
                                  {"texts": [texts[i] for i in missing]})
            self.network_calls += 1
            vectors = reply.get("vectors")
            if vectors is None or len(vectors) != len(missing):
                raise MalformedResponse("/embed reply missing vectors")
            for i, vec in zip(missing, vectors):
                v = np.asarray(vec, dtype=np.float64)
                if self.dim and v.shape != (self.dim,):
                    raise DimensionMismatch(
                        f"vector dim {v.shape} != declared {self.dim}")
                if not np.all(np.isfinite(v)):
                    raise MalformedResponse("embedding has non-finite entries")
                with self._lock:
                    self._cache[(self.model_id, texts[i])] = v
                out[i] = v
        return np.stack(out)


class OracleEmbedder:
    """Deterministic orthonormal embeddings over a fixed vocabulary.

    Each vocabulary word seeds an RNG with its SHA-256 digest; the seeded
    vectors are Gram-Schmidt orthonormalized in vocabulary order, so any
    two vocabulary words embed to exactly orthogonal unit vectors. Words
    outside the vocabulary get a stable hash-seeded unit vector.
    """

    def __init__(self, vocabulary, dim=None):
        self.vocabulary = [normalize_text(w) for w in vocabulary]
        if len(set(self.vocabulary)) != len(self.vocabulary):
            raise ValueError("vocabulary has duplicate normalized words")
        self.dim = int(dim) if dim else max(8, len(self.vocabulary))
        if self.dim < len(self.vocabulary):
            raise ValueError("dim must be >= vocabulary size for orthonormality")
        basis = []
        for word in self.vocabulary:
            v = self._seeded_vector(word)
            for b in basis:
                v = v - (v @ b) * b
            norm = np.linalg.norm(v)
            if norm < 1e-9:  # astronomically unlikely; reseed deterministically
                v = self._seeded_vector(word + "#")
                for b in basis:
                    v = v - (v @ b) * b
                norm = np.linalg.norm(v)
            basis.append(v / norm)
        self._table = dict(zip(self.vocabulary, basis))

    def _seeded_vector(self, word):
        seed = int.from_bytes(hashlib.sha256(word.encode()).digest()[:8], "little")
        rng = np.random.default_rng(seed)
        return rng.standard_normal(self.dim)

    def embed_text(self, texts):
        out = []
        for t in texts:
            key = normalize_text(t)
            v = self._table.get(key)
            if v is None:
                v = self._seeded_vector(key)
                v = v / np.linalg.norm(v)
            out.append(v)
        return np.stack(out)


# -- detection ----------------------------------------------------------------

class HttpDetector(_HttpClient):
    def detect(self, image_png: bytes, query: str, view=None):
        payload = {"image_b64": base64.b64encode(image_png).decode("ascii"),
                   "query": query}
        reply = self._request("POST", "/detect", payload)
        boxes = reply.get("boxes")
        scores = reply.get("scores")
        if boxes is None or scores is None or len(boxes) != len(scores):
            raise MalformedResponse("/detect reply missing boxes/scores")
        return [(tuple(map(float, b)), float(s)) for b, s in zip(boxes, scores)]


class OracleDetector:
    """Color-keyed blob detector over rendered RGB images.

    Configured with a label -> RGB table (matching the synthetic city's
    class colors); finds 8-connected components of pixels within
    ``color_tol`` of the query label's color and boxes them. Pure image
    processing, so it honors the same PNG-bytes interface as the HTTP
    detector.
    """

    def __init__(self, class_colors, color_tol=0.22, min_pixels=2, score=0.9):
        self.class_colors = {normalize_text(k): np.asarray(v, dtype=np.float64)
                             for k, v in class_colors.items()}
        self.color_tol = color_tol
        self.min_pixels = min_pixels
        self.score = score

    def detect(self, image_png: bytes, query: str, view=None):
        from PIL import Image
        from scipy import ndimage
        color = self.class_colors.get(normalize_text(query))
        if color is None:
            return []
        img = np.asarray(Image.open(io.BytesIO(image_png)).convert("RGB"),
                         dtype=np.float64) / 255.0
        dist = np.linalg.norm(img - color, axis=2)
        hit = dist < self.color_tol
        labels, count = ndimage.label(hit, structure=np.ones((3, 3), dtype=int))
        results = []
        for obj_idx, sl in enumerate(ndimage.find_objects(labels), start=1):
            if sl is None:
                continue
            size = int((labels[sl] == obj_idx).sum())
            if size < self.min_pixels:
                continue
            r, c = sl
            # box in image pixel coords: x0, y0, x1, y1
            results.append(((float(c.start), float(r.start),
                             float(c.stop), float(r.stop)), self.score))
        return results


# -- program generation -------------------------------------------------------

class HttpGenerator(_HttpClient):
    def generate(self, prompt: str) -> str:
        reply = self._request("POST", "/generate", {"prompt": prompt})
        text = reply.get("text")
        if not isinstance(text, str):
            raise MalformedResponse("/generate reply missing text")
        return text


@dataclass
class OracleGenerator:
    """Canned query -> program mapping with configurable per-query failures.

    ``min_ice`` maps a normalized query to the minimum number of
    in-context examples required for generation to succeed, mirroring the
    observation that success rate rises with the example count. Queries
    not listed always succeed when a program is known.
    """

    programs: dict  # normalized query -> program text
    min_ice: dict = field(default_factory=dict)
    garbage: str = "THIS IS NOT A PROGRAM ("

    def __post_init__(self):
        self.programs = {normalize_text(k): v for k, v in self.programs.items()}
        self.min_ice = {normalize_text(k): int(v) for k, v in self.min_ice.items()}

    @staticmethod
    def parse_prompt(prompt: str):
        """Recover (query, n_ice) from the deterministic prompt layout."""
        queries = re.findall(r"(?m)^Query: (.*)$", prompt)
        if not queries:
            raise MalformedResponse("prompt has no Query line")
        n_ice = len(re.findall(r"(?m)^Program:$", prompt))
        return queries[-1], n_ice

    def generate(self, prompt: str) -> str:
        query, n_ice = self.parse_prompt(prompt)
        key = normalize_text(query)
        if n_ice < self.min_ice.get(key, 0):
            return self.garbage
        program = self.programs.get(key)
        if program is None:
            return self.garbage
        return program
