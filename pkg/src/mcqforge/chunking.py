"""Sentence segmentation and embedding-driven semantic chunking.

Documents are split into sentences, adjacent sentence windows are embedded,
and chunk boundaries are placed where the cosine similarity between
consecutive windows drops below a document-level percentile. Spans are then
merged forward to a minimum token budget and hard-split at a maximum.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from typing import Iterator, List

import numpy as np

from .corpus import ParsedDocument

# Trailing tokens that end with a period but do not end a sentence.
ABBREVIATIONS = {
    "fig.", "figs.", "al.", "vs.", "e.g.", "i.e.", "etc.", "cf.",
    "eq.", "eqs.", "no.", "dr.", "prof.", "ref.", "refs.", "ca.",
    "approx.", "resp.", "sec.", "ch.", "vol.", "pp.", "p.",
}

_WORD_RE = re.compile(r"\S+")
_BOUNDARY_RE = re.compile(r"[.!?]+[\"')\]]*\s+|\n+")


def count_tokens(text: str) -> int:
    """Word-piece estimate: floor(chars/4) per word, at least 1 per word.

    Deliberately tokenizer-free so chunk budgets are backend-independent.
    """
    total = 0
    for word in _WORD_RE.findall(text):
        total += max(1, len(word) // 4)
    return max(total, 1)


@dataclass(frozen=True)
class Sentence:
    text: str
    ordinal: int
    token_count: int


@dataclass(frozen=True)
class Chunk:
    chunk_id: str
    doc_id: str
    ordinal: int
    text: str
    token_count: int
    sentence_span: tuple  # [start, end) sentence ordinals

    def to_dict(self) -> dict:
        return {
            "chunk_id": self.chunk_id,
            "doc_id": self.doc_id,
            "ordinal": self.ordinal,
            "text": self.text,
            "token_count": self.token_count,
            "sentence_span": list(self.sentence_span),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Chunk":
        return cls(
            chunk_id=d["chunk_id"],
            doc_id=d["doc_id"],
            ordinal=d["ordinal"],
            text=d["text"],
            token_count=d["token_count"],
            sentence_span=tuple(d["sentence_span"]),
        )


@dataclass(frozen=True)
class ChunkConfig:
    min_tokens: int = 128
    max_tokens: int = 512
    window: int = 3
    breakpoint_percentile: float = 25.0

    def __post_init__(self):
        if not (0 < self.min_tokens < self.max_tokens):
            raise ValueError("require 0 < min_tokens < max_tokens")
        if self.window < 1:
            raise ValueError("window must be >= 1")


def segment_sentences(text: str) -> List[Sentence]:
    """Rule-based sentence split on terminal punctuation.

    Decimal numbers never split because the boundary pattern requires
    whitespace after the punctuation; abbreviations are filtered by a
    stop-list check on the trailing token.
    """
    sentences: List[Sentence] = []
    start = 0
    for match in _BOUNDARY_RE.finditer(text):
        candidate = text[start:match.end()].strip()
        if not candidate:
            start = match.end()
            continue
        # Skip boundaries right after a known abbreviation ("See Fig. 2").
        if "\n" not in match.group():
            trailing = candidate.split()[-1].lower()
            if trailing in ABBREVIATIONS:
                continue
        sentences.append(Sentence(candidate, len(sentences),
                                  count_tokens(candidate)))
        start = match.end()
    tail = text[start:].strip()
    if tail:
        sentences.append(Sentence(tail, len(sentences), count_tokens(tail)))
    if not sentences:
        stripped = text.strip()
        sentences.append(Sentence(stripped, 0, count_tokens(stripped)))
    return sentences


def make_chunk_id(doc_id: str, ordinal: int, text: str) -> str:
    payload = f"{doc_id}\x1f{ordinal}\x1f{text}".encode("utf-8")
    return hashlib.sha256(payload).hexdigest()


def _boundary_similarities(sentences: List[Sentence], embedder,
                           window: int) -> np.ndarray:
    """Cosine similarity across each inter-sentence boundary, comparing the
    window of sentences ending at the boundary with the window starting
    after it."""
    n = len(sentences)
    texts = []
    pairs = []
    for i in range(n - 1):
        left = " ".join(s.text for s in sentences[max(0, i - window + 1):i + 1])
        right = " ".join(s.text for s in sentences[i + 1:i + 1 + window])
        pairs.append((len(texts), len(texts) + 1))
        texts.extend([left, right])
    vectors = embedder.embed(texts)
    sims = np.empty(n - 1, dtype=np.float64)
    for i, (li, ri) in enumerate(pairs):
        a, b = vectors[li], vectors[ri]
        denom = float(np.linalg.norm(a) * np.linalg.norm(b))
        sims[i] = float(np.dot(a, b)) / denom if denom > 0 else 0.0
    return sims


def _assemble_spans(sentences: List[Sentence], soft_breaks: set,
                    cfg: ChunkConfig) -> List[tuple]:
    """Greedy pass: emit at a soft breakpoint once min_tokens is reached,
    force-emit before exceeding max_tokens. Final span may undershoot."""
    spans = []
    span_start = 0
    tokens = 0
    for i, sent in enumerate(sentences):
        if tokens and tokens + sent.token_count > cfg.max_tokens:
            spans.append((span_start, i))
            span_start = i
            tokens = 0
        tokens += sent.token_count
        if i in soft_breaks and tokens >= cfg.min_tokens:
            spans.append((span_start, i + 1))
            span_start = i + 1
            tokens = 0
    if span_start < len(sentences):
        spans.append((span_start, len(sentences)))
    return spans


def semantic_chunk(doc: ParsedDocument, embedder,
                   cfg: ChunkConfig = ChunkConfig()) -> List[Chunk]:
    """Chunk one document. Pure function of (doc, embedder, cfg)."""
    sentences = segment_sentences(doc.text)

    if len(sentences) <= cfg.window:
        soft_breaks: set = set()
    else:
        sims = _boundary_similarities(sentences, embedder, cfg.window)
        threshold = float(np.percentile(sims, cfg.breakpoint_percentile))
        soft_breaks = {i for i, s in enumerate(sims) if s < threshold}

    spans = _assemble_spans(sentences, soft_breaks, cfg)

    chunks = []
    for ordinal, (start, end) in enumerate(spans):
        text = " ".join(s.text for s in sentences[start:end])
        chunks.append(Chunk(
            chunk_id=make_chunk_id(doc.doc_id, ordinal, text),
            doc_id=doc.doc_id,
            ordinal=ordinal,
            text=text,
            token_count=count_tokens(text),
            sentence_span=(start, end),
        ))
    return chunks


def write_chunks(chunks, path) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for chunk in chunks:
            fh.write(json.dumps(chunk.to_dict(), ensure_ascii=False,
                                sort_keys=True) + "\n")
            count += 1
    return count


def read_chunks(path) -> Iterator[Chunk]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield Chunk.from_dict(json.loads(line))
