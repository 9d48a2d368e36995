"""Evaluation harness: answer models under baseline, chunk-retrieval, and
trace-retrieval conditions, grade deterministically with an LLM-judge
fallback, and fold graded answers into accuracy and improvement reports."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import re

from . import embedding
from .chunking import count_tokens
from .errors import (EmptySubset, QuestionExceedsBudget, ZeroBaseline)
from .gateway import Gateway, make_request
from .mcq import LETTERS, MCQRecord, load_prompt, options_block, parse_fenced_json
from .traces import MODES
from .vector_store import VectorIndex

ABSTAIN = "ABSTAIN"

CONDITION_TAGS = ("baseline", "rag_chunks", "rag_traces")

ANSWER_INSTRUCTION = "Respond with the single letter of the correct option."
ANSWER_SYSTEM = ("You are answering a multiple-choice question. "
                 + ANSWER_INSTRUCTION)

DEFAULT_ANSWER_HEADROOM = 32  # tokens reserved for the model's reply


@dataclass(frozen=True)
class EvalCondition:
    tag: str
    trace_mode: Optional[str] = None
    k: int = 5

    def __post_init__(self):
        if self.tag not in CONDITION_TAGS:
            raise ValueError(f"unknown condition tag {self.tag!r}")
        if self.tag == "rag_traces":
            if self.trace_mode not in MODES:
                raise ValueError("rag_traces requires a trace_mode")
        elif self.trace_mode is not None:
            raise ValueError(f"{self.tag} takes no trace_mode")

    @property
    def label(self) -> str:
        if self.tag == "rag_traces":
            return f"rag_traces_{self.trace_mode}"
        return self.tag


@dataclass
class GradedAnswer:
    question_id: str
    model_id: str
    condition: str  # EvalCondition.label
    raw_response: str
    extracted_choice: str  # letter A-G or ABSTAIN
    correct: bool
    judge_reasoning: str = ""
    grader: str = "deterministic"  # deterministic | llm_judge

    def to_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "model_id": self.model_id,
            "condition": self.condition,
            "raw_response": self.raw_response,
            "extracted_choice": self.extracted_choice,
            "correct": self.correct,
            "judge_reasoning": self.judge_reasoning,
            "grader": self.grader,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GradedAnswer":
        return cls(**{k: d[k] for k in (
            "question_id", "model_id", "condition", "raw_response",
            "extracted_choice", "correct", "judge_reasoning", "grader")})


# -- prompt assembly ----------------------------------------------------------

def assemble_prompt(mcq: MCQRecord, condition: EvalCondition,
                    retrieved: Sequence[Tuple[str, str, float]],
                    context_budget_tokens: int) -> str:
    """Fixed template; retrieved texts included whole, greedily, in rank
    order until the token budget runs out. An oversized text is skipped and
    the next rank is tried, never truncated mid-text."""
    option_lines = options_block(list(mcq.options))
    base = (f"Question: {mcq.question}\n"
            f"Options:\n{option_lines}\n"
            f"{ANSWER_INSTRUCTION}")
    base_tokens = count_tokens(base)
    if base_tokens > context_budget_tokens:
        raise QuestionExceedsBudget(
            f"question needs {base_tokens} tokens, budget {context_budget_tokens}")

    if condition.tag == "baseline":
        return base

    used = base_tokens
    included: List[str] = []
    for _ref_id, text, _score in retrieved:
        cost = count_tokens(text)
        if used + cost <= context_budget_tokens:
            included.append(text)
            used += cost
    if not included:
        return base
    context = "\n\n".join(included)
    return f"Context:\n{context}\n\n{base}"


# -- grading ------------------------------------------------------------------

_EXTRACT_PATTERNS = (
    re.compile(r"\banswer\s*(?:is|:)\s*\**[\"'(]?([A-Ga-g])\b", re.IGNORECASE),
    re.compile(r"\(([A-Ga-g])\)"),
    re.compile(r"^\s*\**([A-Ga-g])\**(?:[.):,]|\s|$)"),
)


def extract_choice(raw_response: str,
                   options: Sequence[str]) -> Optional[str]:
    """Deterministic extraction; None means ambiguous or absent, so the
    judge must decide."""
    if not raw_response or not raw_response.strip():
        return None
    valid = set(LETTERS[:len(options)])
    for pattern in _EXTRACT_PATTERNS:
        letters = {m.upper() for m in pattern.findall(raw_response)} & valid
        if len(letters) == 1:
            return letters.pop()
        if len(letters) > 1:
            return None
    # Unambiguous full-option-text match (word-bounded so one option cannot
    # fire inside another).
    lowered = re.sub(r"\s+", " ", raw_response.lower())
    matches = [
        LETTERS[i] for i, opt in enumerate(options)
        if re.search(r"\b" + re.escape(re.sub(r"\s+", " ", opt.lower().strip()))
                     + r"\b", lowered)]
    if len(matches) == 1:
        return matches[0]
    return None


def grade(mcq: MCQRecord, raw_response: str, model_id: str, condition: str,
          judge_gw: Optional[Gateway] = None, judge_model: str = "judge",
          include_gold: bool = True) -> GradedAnswer:
    """Deterministic extractor first; the judge only sees ambiguous
    responses. Any judge failure lands in ABSTAIN (counted incorrect)."""
    raw_response = raw_response or ""
    choice = extract_choice(raw_response, mcq.options)
    if choice is not None:
        return GradedAnswer(
            question_id=mcq.question_id, model_id=model_id,
            condition=condition, raw_response=raw_response,
            extracted_choice=choice, correct=(choice == mcq.answer))

    judge_reasoning = ""
    verdict = ABSTAIN
    if judge_gw is not None and raw_response.strip():
        prompt = load_prompt("judge").substitute(
            question=mcq.question,
            options_block=options_block(list(mcq.options)),
            gold=mcq.answer if include_gold else "(withheld)",
            response=raw_response,
        )
        resp = judge_gw.complete(make_request(
            judge_model, f"judge-{mcq.question_id[:16]}-{model_id}-{condition}",
            prompt))
        if resp.ok:
            try:
                payload = parse_fenced_json(resp.content)
                candidate = str(payload.get("choice", ABSTAIN)).strip().upper()
                judge_reasoning = str(payload.get("reasoning", ""))
                if candidate in set(LETTERS[:len(mcq.options)]):
                    verdict = candidate
            except ValueError:
                pass
    return GradedAnswer(
        question_id=mcq.question_id, model_id=model_id, condition=condition,
        raw_response=raw_response, extracted_choice=verdict,
        correct=(verdict == mcq.answer), judge_reasoning=judge_reasoning,
        grader="llm_judge")


def classify_math_required(mcq: MCQRecord, gw: Gateway, model: str,
                           cache: Optional[Dict[str, Optional[bool]]] = None
                           ) -> Optional[bool]:
    """Classifier verdict, cached by question_id; None on a parse failure
    (the question then belongs to the `all` subset only)."""
    if cache is not None and mcq.question_id in cache:
        return cache[mcq.question_id]
    prompt = load_prompt("classify_math").substitute(
        question=mcq.question,
        options_block=options_block(list(mcq.options)),
    )
    resp = gw.complete(make_request(
        model, f"math-{mcq.question_id[:16]}", prompt))
    result: Optional[bool] = None
    if resp.ok:
        try:
            payload = parse_fenced_json(resp.content)
            if isinstance(payload.get("math_required"), bool):
                result = payload["math_required"]
        except ValueError:
            result = None
    if cache is not None:
        cache[mcq.question_id] = result
    return result


# -- aggregation --------------------------------------------------------------

def accuracy(graded: Sequence[GradedAnswer]) -> float:
    if not graded:
        raise EmptySubset("accuracy over an empty set")
    return sum(1 for g in graded if g.correct) / len(graded)


def relative_improvement(new: float, base: float) -> int:
    """(new - base) / base * 100, rounded half away from zero to an integer
    percent."""
    if base <= 0:
        raise ZeroBaseline(f"baseline accuracy {base}")
    pct = (new - base) / base * 100.0
    return int(math.copysign(math.floor(abs(pct) + 0.5), pct))


def split_multimodal(records: Sequence[MCQRecord]
                     ) -> Tuple[List[MCQRecord], List[MCQRecord]]:
    """Exam questions flagged multimodal are excluded from evaluation."""
    evaluated = [r for r in records if not r.multimodal]
    excluded = [r for r in records if r.multimodal]
    return evaluated, excluded


@dataclass
class EvalReport:
    model_id: str
    subset: str  # all | no_math
    question_count: int
    accuracy: Dict[str, float] = field(default_factory=dict)
    best_trace_mode: Optional[str] = None
    improvements_pct: Dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "subset": self.subset,
            "question_count": self.question_count,
            "accuracy": self.accuracy,
            "best_trace_mode": self.best_trace_mode,
            "improvements_pct": self.improvements_pct,
        }


def best_trace_accuracy(per_condition: Dict[str, float]
                        ) -> Tuple[Optional[str], Optional[float]]:
    """Best-of-three trace modes ("RAG-RTs (best)"); ties go to mode order."""
    best_mode, best_acc = None, None
    for mode in MODES:
        acc = per_condition.get(f"rag_traces_{mode}")
        if acc is not None and (best_acc is None or acc > best_acc):
            best_mode, best_acc = mode, acc
    return best_mode, best_acc


def summarize_model(model_id: str, subset: str,
                    graded: Sequence[GradedAnswer]) -> EvalReport:
    by_condition: Dict[str, List[GradedAnswer]] = {}
    for g in graded:
        by_condition.setdefault(g.condition, []).append(g)
    counts = {len(v) for v in by_condition.values()}
    question_count = counts.pop() if len(counts) == 1 else max(
        (len(v) for v in by_condition.values()), default=0)

    report = EvalReport(model_id=model_id, subset=subset,
                        question_count=question_count)
    for condition, items in sorted(by_condition.items()):
        report.accuracy[condition] = accuracy(items)

    best_mode, best_acc = best_trace_accuracy(report.accuracy)
    report.best_trace_mode = best_mode
    if best_acc is not None:
        report.accuracy["rag_traces_best"] = best_acc
    base = report.accuracy.get("baseline")
    chunks = report.accuracy.get("rag_chunks")
    try:
        if base is not None and chunks is not None:
            report.improvements_pct["rag_chunks_vs_baseline"] = \
                relative_improvement(chunks, base)
        if base is not None and best_acc is not None:
            report.improvements_pct["rag_traces_vs_baseline"] = \
                relative_improvement(best_acc, base)
        if chunks is not None and best_acc is not None:
            report.improvements_pct["rag_traces_vs_chunks"] = \
                relative_improvement(best_acc, chunks)
    except ZeroBaseline:
        pass
    return report


def build_reports(graded: Sequence[GradedAnswer],
                  math_required: Optional[Dict[str, Optional[bool]]] = None
                  ) -> List[EvalReport]:
    """One report per (model, subset); the no_math subset appears when a
    classifier verdict map is supplied."""
    by_model: Dict[str, List[GradedAnswer]] = {}
    for g in graded:
        by_model.setdefault(g.model_id, []).append(g)

    reports = []
    for model_id in sorted(by_model):
        items = by_model[model_id]
        reports.append(summarize_model(model_id, "all", items))
        if math_required:
            no_math = [g for g in items
                       if math_required.get(g.question_id) is False]
            if no_math:
                reports.append(summarize_model(model_id, "no_math", no_math))
    return reports


# -- orchestration ------------------------------------------------------------

def retrieval_query_text(mcq: MCQRecord) -> str:
    return f"{mcq.question}\n{options_block(list(mcq.options))}"


def evaluate_benchmark(records: Sequence[MCQRecord],
                       conditions: Sequence[EvalCondition],
                       models: Sequence[dict],
                       answer_gw: Gateway,
                       embedder=None,
                       chunk_index: Optional[VectorIndex] = None,
                       chunk_texts: Optional[Dict[str, str]] = None,
                       trace_indexes: Optional[Dict[str, VectorIndex]] = None,
                       trace_texts: Optional[Dict[str, str]] = None,
                       judge_gw: Optional[Gateway] = None,
                       judge_model: str = "judge",
                       include_gold: bool = True,
                       prompt_log: Optional[list] = None
                       ) -> List[GradedAnswer]:
    """Run every (model, condition, question) cell and grade the answers.

    `models` entries carry {"id", "context_window"}. Retrieval uses the same
    embedder as index construction; the query is the question stem plus
    options. Assembled prompts are appended to `prompt_log` when given, for
    condition-isolation audits.
    """
    query_cache: Dict[str, List[Tuple[str, str, float]]] = {}

    def retrieved_for(mcq: MCQRecord,
                      cond: EvalCondition) -> List[Tuple[str, str, float]]:
        if cond.tag == "baseline":
            return []
        cache_key = f"{cond.label}:{mcq.question_id}"
        if cache_key in query_cache:
            return query_cache[cache_key]
        if cond.tag == "rag_chunks":
            index, texts = chunk_index, chunk_texts
        else:
            index = (trace_indexes or {}).get(cond.trace_mode)
            texts = trace_texts
        if index is None or texts is None or len(index) == 0:
            result: List[Tuple[str, str, float]] = []
        else:
            qvec = embedding.embed_batch([retrieval_query_text(mcq)],
                                         embedder)[0]
            hits = index.search_topk(qvec, cond.k)
            result = [(ref, texts.get(ref, ""), score)
                      for ref, score in hits if texts.get(ref)]
        query_cache[cache_key] = result
        return result

    graded: List[GradedAnswer] = []
    for model_cfg in models:
        model_id = model_cfg["id"]
        budget = int(model_cfg.get("context_window", 4096)) - \
            DEFAULT_ANSWER_HEADROOM
        for cond in conditions:
            prompts: List[Optional[str]] = []
            for mcq in records:
                try:
                    prompt = assemble_prompt(mcq, cond,
                                             retrieved_for(mcq, cond), budget)
                except QuestionExceedsBudget:
                    prompt = None
                prompts.append(prompt)
                if prompt_log is not None:
                    prompt_log.append({
                        "question_id": mcq.question_id,
                        "model_id": model_id,
                        "condition": cond.label,
                        "prompt": prompt or "",
                    })

            reqs = []
            req_slots = []
            for i, (mcq, prompt) in enumerate(zip(records, prompts)):
                if prompt is None:
                    continue
                reqs.append(make_request(
                    model_id,
                    f"ans-{mcq.question_id[:16]}-{model_id}-{cond.label}",
                    prompt, system=ANSWER_SYSTEM, temperature=0.0))
                req_slots.append(i)
            responses = answer_gw.complete_batch(reqs)
            raw_by_slot: Dict[int, str] = {}
            for slot, resp in zip(req_slots, responses):
                raw_by_slot[slot] = resp.content if resp.ok else ""

            for i, mcq in enumerate(records):
                if prompts[i] is None:
                    graded.append(GradedAnswer(
                        question_id=mcq.question_id, model_id=model_id,
                        condition=cond.label, raw_response="",
                        extracted_choice=ABSTAIN, correct=False,
                        judge_reasoning="question exceeds context budget"))
                    continue
                graded.append(grade(mcq, raw_by_slot.get(i, ""), model_id,
                                    cond.label, judge_gw=judge_gw,
                                    judge_model=judge_model,
                                    include_gold=include_gold))
    return graded


def write_graded(graded, path) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for g in graded:
            fh.write(json.dumps(g.to_dict(), ensure_ascii=False,
                                sort_keys=True) + "\n")
            count += 1
    return count


def read_graded(path) -> Iterator[GradedAnswer]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield GradedAnswer.from_dict(json.loads(line))
