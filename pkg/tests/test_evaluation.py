import json

import pytest
from hypothesis import given, settings, strategies as st

from mcqforge.errors import EmptySubset, QuestionExceedsBudget, ZeroBaseline
from mcqforge.evaluation import (ABSTAIN, EvalCondition, GradedAnswer,
                                 accuracy, assemble_prompt,
                                 best_trace_accuracy, build_reports,
                                 classify_math_required, extract_choice,
                                 grade, relative_improvement,
                                 split_multimodal, summarize_model)
from mcqforge.gateway import CallableBackend, Gateway
from mcqforge.mcq import MCQRecord

OPTIONS = ("alpha response", "beta response", "gamma response",
           "delta response", "epsilon response", "zeta response",
           "eta response")


def make_mcq(answer="C", qid="a" * 64, question="Which pathway applies?"):
    return MCQRecord(question_id=qid, question=question, options=OPTIONS,
                     answer=answer, source_text="src",
                     provenance={"chunk_id": "c" * 64, "file_path": "p.pdf"})


def gw_returning(content):
    return Gateway(CallableBackend(lambda req: content))


# -- prompt assembly ----------------------------------------------------------

def test_baseline_has_no_context_block():
    prompt = assemble_prompt(make_mcq(), EvalCondition("baseline"), [], 2000)
    assert "Context:" not in prompt
    assert "Which pathway applies?" in prompt


def test_greedy_inclusion_stops_at_budget():
    texts = [("r1", "first " * 40, 0.9), ("r2", "second " * 40, 0.8),
             ("r3", "third " * 40, 0.7)]
    # Budget fits the base plus two 40-token texts but not three.
    cond = EvalCondition("rag_chunks")
    base_len = len(assemble_prompt(make_mcq(), EvalCondition("baseline"),
                                   [], 10_000).split())
    prompt = assemble_prompt(make_mcq(), cond, texts, base_len + 90)
    assert "first" in prompt and "second" in prompt and "third" not in prompt


def test_oversized_rank1_skipped_rank2_included():
    # 2048-token window: a text bigger than the whole budget is skipped whole,
    # never truncated, and the next rank is tried.
    huge = "token " * 3000
    small = "usable context snippet " * 5
    cond = EvalCondition("rag_chunks")
    prompt = assemble_prompt(make_mcq(), cond,
                             [("r1", huge, 0.9), ("r2", small, 0.8)], 2048)
    assert "usable context snippet" in prompt
    assert "token token" not in prompt


def test_question_exceeding_budget():
    mcq = make_mcq(question="why " * 500)
    with pytest.raises(QuestionExceedsBudget):
        assemble_prompt(mcq, EvalCondition("baseline"), [], 100)


def test_condition_validation():
    with pytest.raises(ValueError):
        EvalCondition("rag_traces")
    with pytest.raises(ValueError):
        EvalCondition("baseline", trace_mode="detailed")
    assert EvalCondition("rag_traces", trace_mode="focused").label == \
        "rag_traces_focused"


# -- grading ------------------------------------------------------------------

def test_grade_clean_letter():
    g = grade(make_mcq("C"), "Answer: C", "m", "baseline")
    assert g.extracted_choice == "C" and g.correct and g.grader == "deterministic"


def test_grade_parenthesized_wrong():
    g = grade(make_mcq("C"), "I believe (B) is right because of the pathway.",
              "m", "baseline")
    assert g.extracted_choice == "B" and not g.correct


def test_grade_option_text_match():
    g = grade(make_mcq("B"), "It must be the beta response.", "m", "baseline")
    assert g.extracted_choice == "B" and g.correct


def test_grade_judge_fallback():
    judge = gw_returning('```json\n{"choice": "A", "reasoning": "commits to the first"}\n```')
    g = grade(make_mcq("A"), "Rambling with no commitment to any letter whatsoever.",
              "m", "baseline", judge_gw=judge)
    assert g.grader == "llm_judge" and g.extracted_choice == "A" and g.correct


def test_grade_judge_failure_abstains():
    judge = gw_returning("not json at all")
    g = grade(make_mcq("A"), "Rambling without any commitment whatsoever here.",
              "m", "baseline", judge_gw=judge)
    assert g.extracted_choice == ABSTAIN and not g.correct


def test_grade_empty_response_abstains():
    g = grade(make_mcq("A"), "", "m", "baseline")
    assert g.extracted_choice == ABSTAIN and not g.correct


def test_extract_ambiguous_goes_to_judge():
    assert extract_choice("Answer: A. No wait, answer: B.", OPTIONS) is None


# -- math classification ------------------------------------------------------

def test_classify_math_fixture():
    gw_math = gw_returning('{"math_required": true, "reasoning": "dose calc"}')
    gw_recall = gw_returning('{"math_required": false, "reasoning": "recall"}')
    assert classify_math_required(make_mcq(), gw_math, "cls") is True
    assert classify_math_required(make_mcq(), gw_recall, "cls") is False


def test_classify_parse_failure_returns_none():
    assert classify_math_required(make_mcq(), gw_returning("??"), "cls") is None


def test_classify_cached_by_question_id():
    calls = {"n": 0}

    def backend(req):
        calls["n"] += 1
        return '{"math_required": false, "reasoning": "r"}'

    gw = Gateway(CallableBackend(backend))
    cache = {}
    classify_math_required(make_mcq(), gw, "cls", cache=cache)
    classify_math_required(make_mcq(), gw, "cls", cache=cache)
    assert calls["n"] == 1


# -- accuracy and improvement -------------------------------------------------

def graded(flags, condition="baseline", model="m"):
    return [GradedAnswer(question_id=f"{i:064d}", model_id=model,
                         condition=condition, raw_response="r",
                         extracted_choice="A", correct=flag)
            for i, flag in enumerate(flags)]


def test_accuracy_fraction():
    assert accuracy(graded([True, False, True, True])) == 0.75


def test_accuracy_all_abstain_zero():
    assert accuracy(graded([False] * 4)) == 0.0


def test_accuracy_empty_subset():
    with pytest.raises(EmptySubset):
        accuracy([])


def test_relative_improvement_paper_values():
    assert relative_improvement(0.434, 0.176) == 147
    assert relative_improvement(0.856, 0.471) == 82
    assert relative_improvement(0.804, 0.540) == 49
    assert relative_improvement(0.757, 0.598) == 27  # paper rounds to 26


def test_relative_improvement_zero_baseline():
    with pytest.raises(ZeroBaseline):
        relative_improvement(0.5, 0.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(min_value=1e-6, max_value=1.0))
def test_relative_improvement_identity(x):
    assert relative_improvement(x, x) == 0


# -- reports ------------------------------------------------------------------

TABLE2 = {
    "OLMo-7B": (0.380, 0.443, 0.709, 0.736, 0.720),
    "TinyLlama-1.1B": (0.176, 0.434, 0.710, 0.699, 0.581),
    "Gemma-3.4B-IT": (0.745, 0.837, 0.860, 0.878, 0.873),
    "SmolLM3-3B": (0.471, 0.803, 0.826, 0.854, 0.856),
    "Mistral-7B": (0.737, 0.839, 0.886, 0.889, 0.882),
    "Llama-3-8B": (0.830, 0.864, 0.875, 0.892, 0.897),
    "Llama-3.1-8B": (0.819, 0.900, 0.915, 0.902, 0.916),
    "Qwen-1.5-14B": (0.776, 0.853, 0.913, 0.908, 0.914),
}
TABLE2_BEST = {
    "OLMo-7B": (0.736, "focused"),
    "TinyLlama-1.1B": (0.710, "detailed"),
    "Gemma-3.4B-IT": (0.878, "focused"),
    "SmolLM3-3B": (0.856, "efficient"),
    "Mistral-7B": (0.889, "focused"),
    "Llama-3-8B": (0.897, "efficient"),
    "Llama-3.1-8B": (0.916, "efficient"),
    "Qwen-1.5-14B": (0.914, "efficient"),
}


def test_best_of_modes_matches_bolded_values():
    for model, (base, chunks, det, foc, eff) in TABLE2.items():
        per_condition = {
            "baseline": base, "rag_chunks": chunks,
            "rag_traces_detailed": det, "rag_traces_focused": foc,
            "rag_traces_efficient": eff,
        }
        mode, best = best_trace_accuracy(per_condition)
        expected_best, expected_mode = TABLE2_BEST[model]
        assert best == pytest.approx(expected_best)
        assert mode == expected_mode


def test_summarize_model_improvements():
    items = []
    # 1000 questions; accuracies 0.176 baseline, 0.434 chunks.
    for cond, correct_n in (("baseline", 176), ("rag_chunks", 434)):
        for i in range(1000):
            items.append(GradedAnswer(
                question_id=f"{i:064d}", model_id="tiny", condition=cond,
                raw_response="r", extracted_choice="A",
                correct=(i < correct_n)))
    report = summarize_model("tiny", "all", items)
    assert report.accuracy["baseline"] == 0.176
    assert report.accuracy["rag_chunks"] == 0.434
    assert report.improvements_pct["rag_chunks_vs_baseline"] == 147


def test_build_reports_no_math_subset():
    items = graded([True, True, False, False], condition="baseline")
    math_map = {g.question_id: (i < 2) for i, g in enumerate(items)}
    reports = build_reports(items, math_required=math_map)
    subsets = {(r.subset, r.question_count) for r in reports}
    assert ("all", 4) in subsets
    assert ("no_math", 2) in subsets


def test_split_multimodal():
    records = [make_mcq(qid=f"{i:064d}") for i in range(3)]
    flagged = MCQRecord.from_dict({**records[0].to_dict(), "multimodal": True})
    evaluated, excluded = split_multimodal([flagged] + records[1:])
    assert len(evaluated) == 2 and len(excluded) == 1
