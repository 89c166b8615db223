"""1536-dimensional text embedding providers.

Two implementations behind one interface: a remote HTTP provider for an
OpenAI-style embeddings endpoint (retry with exponential backoff, credentials
from the environment) and a fully deterministic local provider for offline
runs and CI. Every result is cached by content hash in an append-only file
that survives process restarts.
"""
from __future__ import annotations

import hashlib
import os
import struct
import threading
import time
from pathlib import Path

import numpy as np

EMBED_DIM = 1536

ENV_PROVIDER = "SCVD_EMBED_PROVIDER"  # local | remote
ENV_ENDPOINT = "SCVD_EMBED_ENDPOINT"
ENV_API_KEY = "SCVD_EMBED_API_KEY"
ENV_MODEL = "SCVD_EMBED_MODEL"
ENV_SEED = "SCVD_EMBED_SEED"

_RECORD_SIZE = 32 + EMBED_DIM * 4  # sha256 digest + 1536 float32


class EmbeddingError(RuntimeError):
    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class AuthFailure(EmbeddingError):
    pass


class RemoteUnavailable(EmbeddingError):
    pass


def text_hash(text: str) -> bytes:
    return hashlib.sha256(text.encode("utf-8")).digest()


class LocalEmbeddingProvider:
    """Deterministic offline provider.

    The text is hashed to a 64-bit key (keyed with the provider seed), the key
    drives a Philox counter-based generator expanded to 1536 normal draws, and
    the vector is normalized to unit length in float64 before rounding to
    float32. Identical across processes and platforms.
    """

    def __init__(self, seed: int = 42):
        self.seed = int(seed)

    def embed_text(self, text: str) -> np.ndarray:
        digest = hashlib.blake2b(
            text.encode("utf-8"), digest_size=8, key=self.seed.to_bytes(8, "big")
        ).digest()
        key = int.from_bytes(digest, "big")
        rng = np.random.Generator(np.random.Philox(key=key))
        values = rng.standard_normal(EMBED_DIM)
        values /= np.linalg.norm(values)
        return values.astype(np.float32)

    def embed_batch(self, texts: list[str]) -> list[np.ndarray]:
        return _dedup_batch(texts, self.embed_text)


class RemoteEmbeddingProvider:
    """HTTP provider for an OpenAI-style /embeddings endpoint.

    Transient failures are retried with exponential backoff (at most
    max_attempts tries); auth failures are not retried. Error messages carry
    the offending text's hash, never the credential.
    """

    def __init__(
        self,
        endpoint: str,
        api_key: str,
        model: str = "text-embedding-ada-002",
        max_attempts: int = 5,
        backoff_base: float = 0.5,
        max_in_flight: int = 4,
        timeout: float = 60.0,
        batch_limit: int = 512,
    ):
        self.endpoint = endpoint
        self._api_key = api_key
        self.model = model
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.timeout = timeout
        self.batch_limit = batch_limit
        self._slots = threading.Semaphore(max_in_flight)

    def embed_text(self, text: str) -> np.ndarray:
        return self._request([text])[0]

    def embed_batch(self, texts: list[str]) -> list[np.ndarray]:
        return _dedup_batch(texts, self.embed_text, request_many=self._request_chunked)

    def _request_chunked(self, texts: list[str]) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for lo in range(0, len(texts), self.batch_limit):
            out.extend(self._request(texts[lo : lo + self.batch_limit]))
        return out

    def _request(self, texts: list[str]) -> list[np.ndarray]:
        import requests

        payload = {"model": self.model, "input": texts}
        headers = {"Authorization": f"Bearer {self._api_key}"}
        tag = text_hash(texts[0]).hex()[:16]
        last_error = "no attempt made"
        for attempt in range(self.max_attempts):
            if attempt:
                time.sleep(self.backoff_base * (2 ** (attempt - 1)))
            try:
                with self._slots:
                    resp = requests.post(
                        self.endpoint, json=payload, headers=headers, timeout=self.timeout
                    )
            except requests.RequestException as exc:
                last_error = type(exc).__name__
                continue
            if resp.status_code in (401, 403):
                raise AuthFailure(f"authentication rejected (first text hash {tag})")
            if resp.status_code >= 500 or resp.status_code == 429:
                last_error = f"HTTP {resp.status_code}"
                continue
            if resp.status_code != 200:
                raise EmbeddingError(f"HTTP {resp.status_code} (first text hash {tag})")
            data = resp.json()["data"]
            vectors = [np.asarray(item["embedding"], dtype=np.float32) for item in data]
            if any(v.shape != (EMBED_DIM,) for v in vectors):
                raise EmbeddingError(f"endpoint returned non-{EMBED_DIM}-dim vectors")
            return vectors
        raise RemoteUnavailable(
            f"gave up after {self.max_attempts} attempts ({last_error}; first text hash {tag})"
        )


class EmbeddingCache:
    """Append-only file cache of (sha256(text), 1536 float32) records."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._entries: dict[bytes, np.ndarray] = {}
        self._load()

    def _load(self) -> None:
        if not self.path.exists():
            return
        blob = self.path.read_bytes()
        usable = len(blob) - len(blob) % _RECORD_SIZE  # ignore a torn tail record
        for pos in range(0, usable, _RECORD_SIZE):
            digest = blob[pos : pos + 32]
            vector = np.frombuffer(
                blob[pos + 32 : pos + _RECORD_SIZE], dtype="<f4"
            ).copy()
            self._entries[digest] = vector

    def get(self, digest: bytes) -> np.ndarray | None:
        with self._lock:
            return self._entries.get(digest)

    def put(self, digest: bytes, vector: np.ndarray) -> None:
        record = digest + struct.pack(f"<{EMBED_DIM}f", *vector.astype(np.float32))
        with self._lock:
            if digest in self._entries:
                return
            self._entries[digest] = vector.astype(np.float32)
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "ab") as fh:
                fh.write(record)

    def __len__(self) -> int:
        return len(self._entries)


class CachingProvider:
    """Wrap any provider with the persistent cache; hits are bit-identical."""

    def __init__(self, provider, cache: EmbeddingCache):
        self.provider = provider
        self.cache = cache

    def embed_text(self, text: str) -> np.ndarray:
        digest = text_hash(text)
        hit = self.cache.get(digest)
        if hit is not None:
            return hit
        vector = self.provider.embed_text(text)
        self.cache.put(digest, vector)
        return self.cache.get(digest)

    def embed_batch(self, texts: list[str]) -> list[np.ndarray]:
        return _dedup_batch(texts, self.embed_text)


def _dedup_batch(texts: list[str], embed_one, request_many=None) -> list[np.ndarray]:
    """Order-preserving batch embedding with duplicate texts computed once."""
    unique: dict[str, int] = {}
    for text in texts:
        unique.setdefault(text, len(unique))
    results: dict[str, np.ndarray] = {}
    if request_many is not None and len(unique) > 1:
        ordered = sorted(unique, key=unique.get)
        vectors = request_many(ordered)
        results = dict(zip(ordered, vectors))
    else:
        for text, pos in unique.items():
            try:
                results[text] = embed_one(text)
            except EmbeddingError as exc:
                exc.index = texts.index(text)
                raise
    return [results[text] for text in texts]


def provider_from_env(
    env: dict[str, str] | None = None,
    cache_path: str | Path | None = None,
    selector: str | None = None,
    seed: int | None = None,
):
    """Build a provider from environment configuration.

    selector/seed arguments (e.g. from CLI flags) override the environment.
    """
    env = dict(os.environ if env is None else env)
    kind = (selector or env.get(ENV_PROVIDER, "local")).lower()
    if kind == "local":
        resolved_seed = seed if seed is not None else int(env.get(ENV_SEED, "42"))
        provider = LocalEmbeddingProvider(seed=resolved_seed)
    elif kind == "remote":
        endpoint = env.get(ENV_ENDPOINT)
        api_key = env.get(ENV_API_KEY)
        if not endpoint or not api_key:
            raise EmbeddingError(
                f"remote provider needs {ENV_ENDPOINT} and {ENV_API_KEY} set"
            )
        provider = RemoteEmbeddingProvider(
            endpoint=endpoint,
            api_key=api_key,
            model=env.get(ENV_MODEL, "text-embedding-ada-002"),
        )
    else:
        raise EmbeddingError(f"unknown embedding provider {kind!r}")
    if cache_path is not None:
        return CachingProvider(provider, EmbeddingCache(cache_path))
    return provider
