"""Embedding backends, L2 normalization, and binary16 quantization.

Two backends: an HTTP client for any hosted embeddings API, and a fully
deterministic offline backend that derives a unit vector from a seeded
digest of a text's word multiset. The deterministic backend is a first-class
product feature: every pipeline stage must be runnable without model access.
"""

from __future__ import annotations

import hashlib
import os
import re
import time
from typing import List, Sequence

import numpy as np
import requests

from .errors import BackendUnavailable, DimMismatch, Overflow, ZeroVector

FP16_MAX = 65504.0

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def normalize(v: np.ndarray) -> np.ndarray:
    """Scale to unit L2 norm (float32)."""
    v = np.asarray(v, dtype=np.float32)
    norm = float(np.linalg.norm(v.astype(np.float64)))
    if norm == 0.0:
        raise ZeroVector("cannot normalize the zero vector")
    return (v.astype(np.float64) / norm).astype(np.float32)


def quantize_fp16(v: np.ndarray) -> np.ndarray:
    """Round-to-nearest-even conversion to IEEE binary16."""
    v = np.asarray(v, dtype=np.float32)
    if np.any(np.abs(v) > FP16_MAX):
        raise Overflow(f"value outside binary16 range (|x| > {FP16_MAX})")
    return v.astype(np.float16)


def dequantize_fp16(q: np.ndarray) -> np.ndarray:
    """Exact widening back to float32."""
    return np.asarray(q, dtype=np.float16).astype(np.float32)


class DeterministicEmbedder:
    """Maps a text to a unit vector from its word multiset.

    Each word contributes a pseudo-random direction seeded by
    digest(seed, word), so the same words always give the same vector and
    disjoint vocabularies are near-orthogonal with high probability.
    Stable across processes and platforms.
    """

    def __init__(self, dim: int = 64, seed: int = 0, max_batch: int = 256):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.seed = seed
        self.max_batch = max_batch
        self._word_cache: dict = {}

    def _word_vector(self, word: str) -> np.ndarray:
        vec = self._word_cache.get(word)
        if vec is None:
            digest = hashlib.sha256(f"{self.seed}\x1f{word}".encode()).digest()
            rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
            vec = rng.standard_normal(self.dim)
            self._word_cache[word] = vec
        return vec

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim), dtype=np.float32)
        for i, text in enumerate(texts):
            words = _TOKEN_RE.findall(text.lower()) or [text]
            acc = np.zeros(self.dim, dtype=np.float64)
            for word in words:
                acc += self._word_vector(word)
            if not acc.any():
                acc += self._word_vector("\x00fallback")
            out[i] = normalize(acc)
        return out


class RemoteEmbedder:
    """Client for a hosted embeddings API.

    Speaks the common JSON shape {"input": [...]} ->
    {"data": [{"embedding": [...]}, ...]}. The endpoint comes from
    MCQFORGE_EMBED_URL unless given explicitly.
    """

    def __init__(self, dim: int, url: str | None = None, model: str = "",
                 max_batch: int = 64, max_attempts: int = 4,
                 timeout: float = 60.0):
        self.dim = dim
        self.url = url or os.environ.get("MCQFORGE_EMBED_URL", "")
        if not self.url:
            raise BackendUnavailable("no embeddings URL configured")
        self.model = model
        self.max_batch = max_batch
        self.max_attempts = max_attempts
        self.timeout = timeout

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        payload: dict = {"input": list(texts)}
        if self.model:
            payload["model"] = self.model
        last_err: Exception | None = None
        for attempt in range(self.max_attempts):
            try:
                resp = requests.post(self.url, json=payload,
                                     timeout=self.timeout)
                if resp.status_code == 429 or resp.status_code >= 500:
                    raise BackendUnavailable(f"HTTP {resp.status_code}")
                resp.raise_for_status()
                rows = [item["embedding"] for item in resp.json()["data"]]
                break
            except (requests.RequestException, BackendUnavailable) as err:
                last_err = err
                time.sleep(min(2.0 ** attempt, 30.0))
        else:
            raise BackendUnavailable(str(last_err))
        out = np.asarray(rows, dtype=np.float32)
        if out.ndim != 2 or out.shape[1] != self.dim:
            raise DimMismatch(
                f"backend returned dim {out.shape[-1]}, expected {self.dim}")
        return out


def embed_batch(texts: Sequence[str], backend) -> List[np.ndarray]:
    """Embed texts in order, splitting at the backend's batch limit."""
    if any(not t for t in texts):
        raise ValueError("all texts must be non-empty")
    max_batch = getattr(backend, "max_batch", len(texts) or 1)
    vectors: List[np.ndarray] = []
    for start in range(0, len(texts), max_batch):
        block = backend.embed(texts[start:start + max_batch])
        if block.shape[1] != backend.dim:
            raise DimMismatch("backend changed dimension mid-run")
        vectors.extend(np.asarray(row, dtype=np.float32) for row in block)
    return vectors


def make_embedder(cfg: dict):
    """Build an embedder from the run-config embedding section."""
    backend = cfg.get("backend", "deterministic_test")
    dim = int(cfg.get("dim", 64))
    if backend == "deterministic_test":
        return DeterministicEmbedder(dim=dim, seed=int(cfg.get("seed", 0)),
                                     max_batch=int(cfg.get("max_batch", 256)))
    if backend == "remote_http":
        return RemoteEmbedder(dim=dim, url=cfg.get("url"),
                              model=cfg.get("model", ""),
                              max_batch=int(cfg.get("max_batch", 64)))
    raise ValueError(f"unknown embedding backend: {backend!r}")
