"""Reasoning-trace distillation: one teacher call yields three trace modes
per question, each scrubbed so the correct answer can never leak into the
retrieval corpus."""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from typing import Dict, Iterator, List

from . import embedding
from .errors import LeakUnremovable, TraceParseFailure
from .gateway import Gateway, make_request
from .mcq import MCQRecord, load_prompt, options_block, parse_fenced_json
from .vector_store import VectorIndex

MODES = ("detailed", "focused", "efficient")

# Sentence-ish splitter for declaration removal; keeps trailing fragments.
_SENTENCE_SPLIT_RE = re.compile(r"(?<=[.!?])\s+")

_DECLARATION_TEMPLATES = (
    r"\b(?:final\s+)?answer\s+is\s*:?\s*[\"'(]?{letter}\b",
    r"\banswer\s*:\s*[\"'(]?{letter}\b",
    r"\bcorrect\s+(?:option|answer|choice)\s+is\s*:?\s*[\"'(]?{letter}\b",
    r"\b(?:choose|select|pick)\s+(?:option\s+)?[\"'(]?{letter}\b",
    r"\boption\s+{letter}\s+is\s+(?:the\s+)?correct\b",
)


@dataclass(frozen=True)
class ReasoningTrace:
    trace_id: str
    question_id: str
    mode: str
    text: str
    leak_checked: bool = True

    def to_dict(self) -> dict:
        return {
            "trace_id": self.trace_id,
            "question_id": self.question_id,
            "mode": self.mode,
            "text": self.text,
            "leak_checked": self.leak_checked,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReasoningTrace":
        return cls(trace_id=d["trace_id"], question_id=d["question_id"],
                   mode=d["mode"], text=d["text"],
                   leak_checked=d.get("leak_checked", True))


def make_trace_id(question_id: str, mode: str) -> str:
    return hashlib.sha256(f"{question_id}\x1f{mode}".encode("utf-8")).hexdigest()


def _declaration_patterns(letter: str) -> List[re.Pattern]:
    return [re.compile(t.format(letter=re.escape(letter)), re.IGNORECASE)
            for t in _DECLARATION_TEMPLATES]


def _normalize_for_match(text: str) -> str:
    return re.sub(r"\s+", " ", text).strip().lower()


def detect_leaks(trace_text: str, mcq: MCQRecord) -> List[str]:
    """Both leak detectors as a pure scan; empty list means clean.

    Detector 1: declaration of the correct letter as the answer.
    Detector 2: the correct option's full text verbatim (whitespace and case
    normalized) when the option is at least 4 words long; shorter options are
    legitimate prose.
    """
    hits = []
    for pattern in _declaration_patterns(mcq.answer):
        if pattern.search(trace_text):
            hits.append(f"declaration:{pattern.pattern}")
    option_text = mcq.correct_option_text()
    if len(option_text.split()) >= 4:
        if _normalize_for_match(option_text) in _normalize_for_match(trace_text):
            hits.append("verbatim_option")
    return hits


def scrub_answer_leakage(trace_text: str, mcq: MCQRecord) -> str:
    """Remove answer-declaring sentences; raise LeakUnremovable when the
    trace cannot be salvaged (emptied, or the option text itself appears)."""
    patterns = _declaration_patterns(mcq.answer)
    sentences = _SENTENCE_SPLIT_RE.split(trace_text)
    kept = [s for s in sentences
            if not any(p.search(s) for p in patterns)]
    cleaned = " ".join(s.strip() for s in kept if s.strip())
    if not cleaned:
        raise LeakUnremovable("removal emptied the trace")
    if detect_leaks(cleaned, mcq):
        raise LeakUnremovable("correct option text embedded in trace")
    return cleaned


def generate_traces(mcq: MCQRecord, gw: Gateway, model: str,
                    temperature: float = 0.7) -> List[ReasoningTrace]:
    """One teacher call returning all three modes; retried once on a parse
    failure, then quarantined via TraceParseFailure."""
    prompt = load_prompt("generate_traces").substitute(
        question=mcq.question,
        options_block=options_block(list(mcq.options)),
    )

    payload = None
    last_err = "empty response"
    for attempt in range(2):
        resp = gw.complete(make_request(
            model, f"trace-{mcq.question_id[:16]}-{attempt}", prompt,
            temperature=temperature))
        if not resp.ok:
            last_err = str(resp.error)
            continue
        try:
            candidate = parse_fenced_json(resp.content)
        except ValueError as err:
            last_err = str(err)
            continue
        if all(isinstance(candidate.get(m), str) and candidate[m].strip()
               for m in MODES):
            payload = candidate
            break
        last_err = "missing or empty trace modes"
    if payload is None:
        raise TraceParseFailure(last_err)

    traces = []
    for mode in MODES:
        cleaned = scrub_answer_leakage(payload[mode], mcq)
        traces.append(ReasoningTrace(
            trace_id=make_trace_id(mcq.question_id, mode),
            question_id=mcq.question_id,
            mode=mode,
            text=cleaned,
        ))
    return traces


def build_trace_indexes(traces: List[ReasoningTrace],
                        embedder) -> Dict[str, VectorIndex]:
    """One index per mode; ref_id = trace_id, kind pinned per index."""
    indexes = {mode: VectorIndex(embedder.dim, kind=f"trace_{mode}")
               for mode in MODES}
    by_mode: Dict[str, List[ReasoningTrace]] = {mode: [] for mode in MODES}
    for trace in traces:
        by_mode[trace.mode].append(trace)
    for mode, group in by_mode.items():
        if not group:
            continue
        vectors = embedding.embed_batch([t.text for t in group], embedder)
        for trace, vec in zip(group, vectors):
            indexes[mode].add(vec, trace.trace_id, kind=f"trace_{mode}")
    return indexes


def write_traces(traces, path) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for trace in traces:
            fh.write(json.dumps(trace.to_dict(), ensure_ascii=False,
                                sort_keys=True) + "\n")
            count += 1
    return count


def read_traces(path) -> Iterator[ReasoningTrace]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield ReasoningTrace.from_dict(json.loads(line))
