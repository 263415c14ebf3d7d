"""Text generation and sentence embedding clients.

Two JSON-over-HTTP routes are spoken by :class:`HttpGateway`::

    POST {base}/generate  {"prompt", "num_sequences", "max_new_tokens", "temperature", "seed"}
                          -> {"generations": [str, ...]}
    POST {base}/embed     {"text"} -> {"embedding": [float, ...]}

The stub classes are deterministic stand-ins used for offline runs and tests.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Protocol, Sequence

import httpx
import numpy as np

from .prompts import parse_answers

logger = logging.getLogger(__name__)

RETRY_STATUSES = (429, 500, 502, 503, 504)


class GatewayError(RuntimeError):
    pass


class TransportError(GatewayError):
    def __init__(self, message: str, attempts: int):
        super().__init__(f"{message} (after {attempts} attempt{'s' if attempts != 1 else ''})")
        self.attempts = attempts


class PayloadError(GatewayError):
    """Backend answered with something that does not match the wire schema."""


class DimensionError(GatewayError):
    pass


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    num_sequences: int = 1
    max_new_tokens: int = 32
    temperature: float = 0.7
    seed: int = 0

    def __post_init__(self):
        if self.num_sequences < 1:
            raise ValueError("num_sequences must be >= 1")

    def to_json(self) -> dict:
        return {
            "prompt": self.prompt,
            "num_sequences": self.num_sequences,
            "max_new_tokens": self.max_new_tokens,
            "temperature": self.temperature,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class GenerationResponse:
    texts: tuple[str, ...]


class Generator(Protocol):
    def generate(self, request: GenerationRequest) -> GenerationResponse: ...


class Embedder(Protocol):
    dim: int

    def embed(self, text: str) -> np.ndarray: ...


def _digest(*parts) -> bytes:
    h = hashlib.sha256()
    for part in parts:
        h.update(str(part).encode("utf-8"))
        h.update(b"\x1f")
    return h.digest()


class StubGenerator:
    """Deterministic generator.

    Prompts found in ``canned`` return their canned text(s). Anything else
    yields ``{id}.{label}`` answers picked by a seeded hash from the answers
    mentioned in the prompt plus the optional ``extra`` pool.
    """

    def __init__(
        self,
        canned: Mapping[str, str | Sequence[str]] | None = None,
        extra: Sequence[str] = (),
        seed: int = 0,
    ):
        self.canned = dict(canned or {})
        self.extra = list(extra)
        self.seed = seed
        self.calls = 0

    def generate(self, request: GenerationRequest) -> GenerationResponse:
        self.calls += 1
        if request.prompt in self.canned:
            texts = self.canned[request.prompt]
            texts = [texts] if isinstance(texts, str) else list(texts)
            return GenerationResponse(tuple(texts[: request.num_sequences]))
        pool = [f"{i}.{label}" for i, label in parse_answers(request.prompt)] + self.extra
        if not pool:
            return GenerationResponse(("None",) * request.num_sequences)
        out = []
        for i in range(request.num_sequences):
            k = int.from_bytes(_digest(self.seed, request.seed, i, request.prompt)[:8], "big")
            out.append(pool[k % len(pool)])
        return GenerationResponse(tuple(out))


class HashEmbedder:
    """Unit-norm vectors drawn from a PRNG seeded by a hash of the text."""

    def __init__(self, dim: int = 768, seed: int = 0):
        self.dim = dim
        self.seed = seed

    def embed(self, text: str) -> np.ndarray:
        rng = np.random.Generator(np.random.PCG64(int.from_bytes(_digest(self.seed, text)[:16], "big")))
        v = rng.standard_normal(self.dim)
        return v / np.linalg.norm(v)


class TableEmbedder:
    """Fixed text -> vector table; unknown texts raise."""

    def __init__(self, table: Mapping[str, Sequence[float]]):
        self.table = {k: np.asarray(v, dtype=float) for k, v in table.items()}
        dims = {v.shape[0] for v in self.table.values()}
        if len(dims) > 1:
            raise DimensionError(f"mixed dimensions {sorted(dims)}")
        self.dim = dims.pop() if dims else 0
        self.calls = 0

    def embed(self, text: str) -> np.ndarray:
        self.calls += 1
        try:
            return self.table[text]
        except KeyError:
            raise GatewayError(f"no stub vector for {text!r}") from None


class CachedEmbedder:
    """Exact-text cache in front of any embedder, with a dimension check.

    The cache is guarded by a lock so the wrapper can be shared across threads.
    With ``path`` set the cache can be persisted as JSON via :meth:`save`.
    """

    def __init__(self, inner: Embedder, dim: int | None = None, path: str | Path | None = None):
        self.inner = inner
        self.dim = dim if dim is not None else inner.dim
        self.path = Path(path) if path else None
        self._cache: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0
        if self.path and self.path.exists():
            for k, v in json.loads(self.path.read_text(encoding="utf-8")).items():
                self._cache[k] = np.asarray(v, dtype=float)

    def embed(self, text: str) -> np.ndarray:
        if not text:
            raise ValueError("cannot embed empty text")
        with self._lock:
            cached = self._cache.get(text)
            if cached is not None:
                self.hits += 1
                return cached
        vec = np.asarray(self.inner.embed(text), dtype=float)
        if vec.shape != (self.dim,):
            raise DimensionError(f"expected {self.dim}-dim embedding, got shape {vec.shape}")
        if not np.all(np.isfinite(vec)):
            raise PayloadError("embedding has non-finite entries")
        with self._lock:
            self.misses += 1
            self._cache.setdefault(text, vec)
            return self._cache[text]

    def save(self) -> None:
        if self.path is None:
            return
        with self._lock:
            data = {k: v.tolist() for k, v in sorted(self._cache.items())}
        tmp = self.path.with_suffix(self.path.suffix + ".tmp")
        tmp.write_text(json.dumps(data), encoding="utf-8")
        tmp.replace(self.path)


@dataclass
class HttpGateway:
    """Client for the two-route JSON protocol, retrying transient failures with backoff."""

    base_url: str
    timeout: float = 30.0
    retries: int = 3
    backoff: float = 0.5
    dim: int = 768
    max_in_flight: int = 8
    trace: bool = False
    transport: httpx.BaseTransport | None = None
    sleep: Callable[[float], None] = time.sleep
    _client: httpx.Client = field(init=False, repr=False)
    _slots: threading.Semaphore = field(init=False, repr=False)

    def __post_init__(self):
        self._client = httpx.Client(base_url=self.base_url, timeout=self.timeout, transport=self.transport)
        self._slots = threading.BoundedSemaphore(self.max_in_flight)

    def close(self) -> None:
        self._client.close()

    def _post(self, route: str, payload: dict) -> dict:
        attempts = 0
        last = ""
        while attempts <= self.retries:
            attempts += 1
            try:
                with self._slots:
                    resp = self._client.post(route, json=payload)
            except httpx.TransportError as exc:
                last = f"{type(exc).__name__}: {exc}"
            else:
                if resp.status_code in RETRY_STATUSES:
                    last = f"HTTP {resp.status_code}"
                elif resp.status_code >= 400:
                    raise GatewayError(f"{route}: HTTP {resp.status_code}: {resp.text[:200]}")
                else:
                    try:
                        body = resp.json()
                    except ValueError:
                        raise PayloadError(f"{route}: response is not JSON") from None
                    if self.trace:
                        logger.debug("%s request=%s response=%s", route, json.dumps(payload), json.dumps(body))
                    return body
            if attempts <= self.retries:
                self.sleep(self.backoff * 2 ** (attempts - 1))
        raise TransportError(f"{route}: {last}", attempts)

    def generate(self, request: GenerationRequest) -> GenerationResponse:
        body = self._post("/generate", request.to_json())
        texts = body.get("generations") if isinstance(body, dict) else None
        if not isinstance(texts, list) or not all(isinstance(t, str) for t in texts):
            raise PayloadError("/generate: expected {'generations': [str, ...]}")
        return GenerationResponse(tuple(texts[: request.num_sequences]))

    def embed(self, text: str) -> np.ndarray:
        body = self._post("/embed", {"text": text})
        vec = body.get("embedding") if isinstance(body, dict) else None
        if not isinstance(vec, list):
            raise PayloadError("/embed: expected {'embedding': [float, ...]}")
        try:
            arr = np.asarray(vec, dtype=float)
        except (TypeError, ValueError):
            raise PayloadError("/embed: embedding is not numeric") from None
        if arr.shape != (self.dim,):
            raise DimensionError(f"expected {self.dim}-dim embedding, got shape {arr.shape}")
        return arr


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    return float(np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v)))
