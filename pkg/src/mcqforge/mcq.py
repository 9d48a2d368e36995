"""Two-stage MCQ synthesis: generate a seven-option candidate per chunk,
quality-score it, then threshold-filter with full provenance bookkeeping."""

from __future__ import annotations

import hashlib
import json
import random
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from string import Template
from typing import Iterator, List, Optional, Tuple

from .chunking import Chunk
from .errors import (AnswerNotInOptions, OptionCountMismatch, ParseFailure,
                     ScoreParseFailure, SelfContainmentViolation)
from .gateway import Gateway, make_request

LETTERS = "ABCDEFG"
OPTION_COUNT = 7
DEFAULT_THRESHOLD = 7

BANNED_PHRASES = (
    "according to the text",
    "the passage",
    "this study",
    "the authors",
    "in the excerpt",
    "mentioned above",
)

_FENCED_JSON_RE = re.compile(r"```(?:json)?\s*(\{.*?\})\s*```", re.DOTALL)


def load_prompt(name: str) -> Template:
    text = resources.files("mcqforge.prompts").joinpath(f"{name}.txt").read_text(
        encoding="utf-8")
    return Template(text)


def parse_fenced_json(text: str) -> dict:
    """Extract the first fenced JSON object; fall back to the whole string."""
    match = _FENCED_JSON_RE.search(text)
    candidates = [match.group(1)] if match else []
    candidates.append(text.strip())
    for candidate in candidates:
        try:
            obj = json.loads(candidate)
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict):
            return obj
    raise ValueError("no JSON object found in response")


def options_block(options: List[str]) -> str:
    return "\n".join(f"{LETTERS[i]}. {opt}" for i, opt in enumerate(options))


@dataclass(frozen=True)
class MCQRecord:
    question_id: str
    question: str
    options: tuple  # exactly 7
    answer: str     # letter A-G
    source_text: str
    provenance: dict  # {"chunk_id", "file_path"}
    qtype: str = "multiple-choice"
    relevance_check: dict = field(
        default_factory=lambda: {"passed": True, "reasoning": ""})
    quality: Optional[dict] = None  # {"score", "reasoning"} once scored
    multimodal: bool = False        # only set on imported exam questions

    def correct_option_text(self) -> str:
        return self.options[LETTERS.index(self.answer)]

    def to_dict(self) -> dict:
        d = {
            "question_id": self.question_id,
            "question": self.question,
            "options": list(self.options),
            "answer": self.answer,
            "source_text": self.source_text,
            "qtype": self.qtype,
            "provenance": self.provenance,
            "relevance_check": self.relevance_check,
            "quality": self.quality,
        }
        if self.multimodal:
            d["multimodal"] = True
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MCQRecord":
        return cls(
            question_id=d["question_id"],
            question=d["question"],
            options=tuple(d["options"]),
            answer=d["answer"],
            source_text=d.get("source_text", ""),
            qtype=d.get("qtype", "multiple-choice"),
            provenance=d.get("provenance", {}),
            relevance_check=d.get("relevance_check",
                                  {"passed": True, "reasoning": ""}),
            quality=d.get("quality"),
            multimodal=bool(d.get("multimodal", False)),
        )


def make_question_id(chunk_id: str, question: str) -> str:
    return hashlib.sha256(f"{chunk_id}\x1f{question}".encode("utf-8")).hexdigest()


def validate_self_containment(question: str) -> List[str]:
    """Return the banned source-reference phrases found in the question."""
    lowered = question.lower()
    return [phrase for phrase in BANNED_PHRASES if phrase in lowered]


def shuffle_options(options: List[str], answer: str,
                    seed: int) -> Tuple[List[str], str]:
    """Seeded permutation so the correct letter is not position-biased."""
    order = list(range(len(options)))
    random.Random(seed).shuffle(order)
    shuffled = [options[i] for i in order]
    new_answer = LETTERS[order.index(LETTERS.index(answer))]
    return shuffled, new_answer


def generate_mcq(chunk: Chunk, gw: Gateway, model: str, file_path: str,
                 temperature: float = 0.7) -> MCQRecord:
    """Stage-1 call: produce an unscored candidate from one chunk.

    Structural failures raise CandidateRejected subclasses; the caller
    records them with their reason code instead of aborting the run.
    """
    prompt = load_prompt("generate_mcq").substitute(chunk_text=chunk.text)
    resp = gw.complete(make_request(
        model, f"genq-{chunk.chunk_id[:16]}", prompt, temperature=temperature))
    if not resp.ok:
        raise ParseFailure(f"generation call failed: {resp.error}")

    try:
        payload = parse_fenced_json(resp.content)
        question = payload["question"]
        options = payload["options"]
        answer = payload["answer"]
    except (ValueError, KeyError) as err:
        raise ParseFailure(str(err)) from err
    if not isinstance(question, str) or not question.strip():
        raise ParseFailure("missing question text")
    if not isinstance(options, list) or len(options) != OPTION_COUNT:
        raise OptionCountMismatch(
            f"got {len(options) if isinstance(options, list) else 'no'} options")
    if not isinstance(answer, str) or answer not in LETTERS[:len(options)]:
        raise AnswerNotInOptions(repr(answer))
    violations = validate_self_containment(question)
    if violations:
        raise SelfContainmentViolation(", ".join(violations))

    question_id = make_question_id(chunk.chunk_id, question)
    options, answer = shuffle_options([str(o) for o in options], answer,
                                      seed=int(question_id[:16], 16))
    return MCQRecord(
        question_id=question_id,
        question=question,
        options=tuple(options),
        answer=answer,
        source_text=chunk.text,
        provenance={"chunk_id": chunk.chunk_id, "file_path": file_path},
    )


def score_mcq(record: MCQRecord, gw: Gateway, model: str,
              temperature: float = 0.0) -> MCQRecord:
    """Stage-2 call: attach a 1-10 quality score and the relevance check."""
    prompt = load_prompt("score_mcq").substitute(
        source_text=record.source_text,
        question=record.question,
        options_block=options_block(list(record.options)),
        answer=record.answer,
    )
    resp = gw.complete(make_request(
        model, f"score-{record.question_id[:16]}", prompt,
        temperature=temperature))
    if not resp.ok:
        raise ScoreParseFailure(f"scoring call failed: {resp.error}")

    try:
        payload = parse_fenced_json(resp.content)
        score = payload["score"]
    except (ValueError, KeyError) as err:
        raise ScoreParseFailure(str(err)) from err
    if not isinstance(score, int) or isinstance(score, bool) or not 1 <= score <= 10:
        raise ScoreParseFailure(f"score out of range: {score!r}")

    relevance = payload.get("relevance")
    if not isinstance(relevance, dict) or "passed" not in relevance:
        relevance = {"passed": True, "reasoning": ""}
    else:
        relevance = {"passed": bool(relevance["passed"]),
                     "reasoning": str(relevance.get("reasoning", ""))}
    quality = {"score": score, "reasoning": str(payload.get("reasoning", ""))}
    return replace(record, quality=quality, relevance_check=relevance)


def filter_mcqs(candidates: List[MCQRecord],
                threshold: int = DEFAULT_THRESHOLD
                ) -> Tuple[List[MCQRecord], List[Tuple[MCQRecord, str]]]:
    """Keep candidates scoring >= threshold (boundary retained), preserving
    order; rejected items come back with a reason code."""
    accepted: List[MCQRecord] = []
    rejected: List[Tuple[MCQRecord, str]] = []
    for record in candidates:
        if record.quality is None:
            rejected.append((record, "Unscored"))
        elif not record.relevance_check.get("passed", True):
            rejected.append((record, "RelevanceFailed"))
        elif record.quality["score"] >= threshold:
            accepted.append(record)
        else:
            rejected.append((record, "BelowThreshold"))
    return accepted, rejected


def write_mcqs(records, path) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record.to_dict(), ensure_ascii=False,
                                sort_keys=True) + "\n")
            count += 1
    return count


def read_mcqs(path) -> Iterator[MCQRecord]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield MCQRecord.from_dict(json.loads(line))
