import json

import numpy as np
import pytest

from mcqforge.embedding import DeterministicEmbedder
from mcqforge.errors import KindMismatch, LeakUnremovable, TraceParseFailure
from mcqforge.gateway import CallableBackend, Gateway
from mcqforge.mcq import MCQRecord
from mcqforge.traces import (MODES, ReasoningTrace, build_trace_indexes,
                             detect_leaks, generate_traces, make_trace_id,
                             scrub_answer_leakage)


def make_mcq(answer="C", options=None):
    options = options or ("increases", "decreases", "stays flat", "oscillates",
                          "inverts", "saturates", "vanishes")
    return MCQRecord(
        question_id="f" * 64,
        question="What happens to radiosensitivity as oxygen tension rises?",
        options=tuple(options),
        answer=answer,
        source_text="src",
        provenance={"chunk_id": "c" * 64, "file_path": "p.pdf"},
        quality={"score": 9, "reasoning": "r"},
    )


def gw_returning(content):
    return Gateway(CallableBackend(lambda req: content))


CLEAN_TRACES = {
    "detailed": "Oxygen chemically fixes radical damage, so consider each "
                "option in terms of damage fixation.",
    "focused": "Key principle: the oxygen effect. Eliminate options that "
               "imply less damage at higher tension.",
    "efficient": "More oxygen means more fixed damage.",
}


def test_generate_three_clean_traces():
    resp = "```json\n" + json.dumps(CLEAN_TRACES) + "\n```"
    traces = generate_traces(make_mcq(), gw_returning(resp), "teacher")
    assert [t.mode for t in traces] == list(MODES)
    assert all(t.leak_checked for t in traces)
    assert all(t.trace_id == make_trace_id("f" * 64, t.mode) for t in traces)


def test_two_modes_only_fails_after_retry():
    partial = {"detailed": "x", "focused": "y"}
    calls = {"n": 0}

    def backend(req):
        calls["n"] += 1
        return json.dumps(partial)

    with pytest.raises(TraceParseFailure):
        generate_traces(make_mcq(), Gateway(CallableBackend(backend)),
                        "teacher")
    assert calls["n"] == 2  # one re-prompt, then quarantine


def test_declaration_scrubbed_before_storage():
    leaky = dict(CLEAN_TRACES)
    leaky["efficient"] = ("Radiosensitivity rises with oxygen. "
                          "The answer is C.")
    resp = "```json\n" + json.dumps(leaky) + "\n```"
    traces = generate_traces(make_mcq(answer="C"), gw_returning(resp),
                             "teacher")
    efficient = next(t for t in traces if t.mode == "efficient")
    assert "answer is" not in efficient.text.lower()
    assert "Radiosensitivity rises with oxygen." in efficient.text


def test_scrub_removes_declaring_sentence():
    mcq = make_mcq(answer="D")
    text = "Radiosensitivity rises with oxygen. The answer is D."
    cleaned = scrub_answer_leakage(text, mcq)
    assert cleaned == "Radiosensitivity rises with oxygen."


def test_scrub_clean_trace_unchanged():
    mcq = make_mcq()
    text = "Oxygen fixes radical damage before repair enzymes act."
    assert scrub_answer_leakage(text, mcq) == text


def test_verbatim_long_option_unremovable():
    options = ("rises monotonically with local oxygen tension", "b", "c",
               "d", "e", "f", "g")
    mcq = make_mcq(answer="A", options=options)
    text = ("Sensitivity rises monotonically with local oxygen tension "
            "in most tissues.")
    with pytest.raises(LeakUnremovable):
        scrub_answer_leakage(text, mcq)


def test_short_option_is_legitimate_prose():
    # "increases" is a 1-word option; mentioning it must not trip detector 2.
    mcq = make_mcq(answer="A")
    text = "Damage increases when oxygen is present."
    assert scrub_answer_leakage(text, mcq) == text


def test_scrub_emptied_trace_unremovable():
    mcq = make_mcq(answer="B")
    with pytest.raises(LeakUnremovable):
        scrub_answer_leakage("The answer is B.", mcq)


def test_detectors_idempotent_fixpoint():
    mcq = make_mcq(answer="C")
    text = "Reason about fixation. Choose C. More context follows."
    cleaned = scrub_answer_leakage(text, mcq)
    assert detect_leaks(cleaned, mcq) == []
    assert scrub_answer_leakage(cleaned, mcq) == cleaned


def trace_set(n_questions=3):
    traces = []
    for q in range(n_questions):
        qid = f"{q:064d}"
        for mode in MODES:
            traces.append(ReasoningTrace(
                trace_id=make_trace_id(qid, mode), question_id=qid,
                mode=mode, text=f"trace for question {q} in {mode} words"))
    return traces


def test_build_indexes_one_per_mode():
    indexes = build_trace_indexes(trace_set(3), DeterministicEmbedder(dim=8))
    assert set(indexes) == set(MODES)
    assert all(len(indexes[m]) == 3 for m in MODES)
    refs = [e.ref_id for m in MODES for e in indexes[m].entries]
    assert len(refs) == len(set(refs))  # disjoint ref_id sets


def test_empty_mode_gives_empty_index():
    traces = [t for t in trace_set(2) if t.mode != "efficient"]
    indexes = build_trace_indexes(traces, DeterministicEmbedder(dim=8))
    assert len(indexes["efficient"]) == 0


def test_mixed_kind_insertion_rejected():
    indexes = build_trace_indexes(trace_set(1), DeterministicEmbedder(dim=8))
    with pytest.raises(KindMismatch):
        indexes["detailed"].add(np.ones(8, dtype=np.float32), "x",
                                kind="trace_focused")


def test_trace_schema_has_no_answer_field():
    trace = trace_set(1)[0]
    assert "answer" not in trace.to_dict()
