"""Stage-oriented orchestrator: declarative run config, content-addressed
manifest, atomic artifact writes, and digest-based resume.

A stage re-runs iff any input artifact digest or its config-section digest
changed; otherwise it is a cache hit. Outputs are written to temp files and
renamed only when the whole stage succeeds, so a killed stage leaves nothing
half-visible.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional

from . import chunking, corpus, embedding, evaluation, mcq, traces
from .errors import (CandidateRejected, ConfigInvalid, CorruptManifest,
                     LeakUnremovable, MissingUpstream, StageFailed,
                     TraceParseFailure)
from .evaluation import EvalCondition
from .gateway import make_gateway
from .vector_store import VectorIndex, meta_path

MANIFEST_NAME = "manifest.json"
JOURNAL_NAME = "calls.jsonl"

DEFAULTS = {
    "chunking": {"min_tokens": 128, "max_tokens": 512, "window": 3,
                 "breakpoint_percentile": 25},
    "embedding": {"backend": "deterministic_test", "dim": 64, "seed": 0,
                  "max_batch": 256},
    "gateway": {"backend": "scripted_mock", "max_in_flight": 4},
    "mcq": {"threshold": 7, "generation_temperature": 0.7,
            "scoring_temperature": 0.0},
    "traces": {"temperature": 0.7},
    "retrieval": {"k": 5},
    "eval": {"trace_modes": ["detailed", "focused", "efficient"],
             "include_gold": True},
}


def _digest_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def config_digest(section) -> str:
    return _digest_bytes(json.dumps(section, sort_keys=True).encode("utf-8"))


class RunConfig:
    """Run configuration: one JSON file covering every stage."""

    def __init__(self, raw: dict, base_dir: Path):
        self.raw = raw
        self.base_dir = base_dir
        self.validate()

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigInvalid(f"cannot read config: {err}") from err
        return cls(raw, path.parent.resolve())

    def validate(self) -> None:
        corpus_cfg = self.raw.get("corpus")
        if not isinstance(corpus_cfg, dict) or "root" not in corpus_cfg:
            raise ConfigInvalid("corpus.root")
        if corpus_cfg.get("format", "jsonl") not in corpus.FORMATS:
            raise ConfigInvalid("corpus.format")
        models = self.raw.get("models", {})
        if not isinstance(models, dict):
            raise ConfigInvalid("models")
        answer_models = models.get("answer_models", [])
        if not isinstance(answer_models, list) or not all(
                isinstance(m, dict) and "id" in m for m in answer_models):
            raise ConfigInvalid("models.answer_models")
        threshold = self.section("mcq").get("threshold", 7)
        if not isinstance(threshold, int) or not 1 <= threshold <= 10:
            raise ConfigInvalid("mcq.threshold")
        chunk_cfg = self.section("chunking")
        try:
            chunking.ChunkConfig(
                min_tokens=int(chunk_cfg["min_tokens"]),
                max_tokens=int(chunk_cfg["max_tokens"]),
                window=int(chunk_cfg["window"]),
                breakpoint_percentile=float(chunk_cfg["breakpoint_percentile"]))
        except (ValueError, TypeError, KeyError) as err:
            raise ConfigInvalid(f"chunking: {err}") from err
        k = self.section("retrieval").get("k", 5)
        if not isinstance(k, int) or k < 1:
            raise ConfigInvalid("retrieval.k")

    def section(self, name: str) -> dict:
        merged = dict(DEFAULTS.get(name, {}))
        merged.update(self.raw.get(name, {}))
        return merged

    def resolve(self, rel) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.base_dir / p

    def chunk_config(self) -> chunking.ChunkConfig:
        c = self.section("chunking")
        return chunking.ChunkConfig(
            min_tokens=int(c["min_tokens"]), max_tokens=int(c["max_tokens"]),
            window=int(c["window"]),
            breakpoint_percentile=float(c["breakpoint_percentile"]))

    def embedder(self):
        return embedding.make_embedder(self.section("embedding"))

    def gateway(self, run_dir: Path):
        cfg = dict(self.section("gateway"))
        if cfg.get("mock_file"):
            cfg["mock_file"] = str(self.resolve(cfg["mock_file"]))
        if cfg.get("journal_file"):
            cfg["journal_file"] = str(self.resolve(cfg["journal_file"]))
        return make_gateway(cfg, journal_path=run_dir / JOURNAL_NAME)


# -- atomic output writing ----------------------------------------------------

class StageOutputs:
    """Temp-file staging: publish all outputs or none."""

    def __init__(self, run_dir: Path, names):
        self.run_dir = run_dir
        self.tmp = {name: run_dir / (name + ".tmp") for name in names}
        self.final = {name: run_dir / name for name in names}

    def __enter__(self):
        return self.tmp

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            for name, tmp in self.tmp.items():
                os.replace(tmp, self.final[name])
        else:
            for tmp in self.tmp.values():
                tmp.unlink(missing_ok=True)
        return False


# -- stage implementations ----------------------------------------------------

def _stage_ingest(cfg: RunConfig, run_dir: Path, paths: dict) -> dict:
    c = cfg.raw["corpus"]
    report = corpus.IngestReport()
    docs = list(corpus.load_corpus(cfg.resolve(c["root"]),
                                   c.get("format", "jsonl"), report))
    corpus.write_documents(docs, paths["documents.jsonl"])
    kinds: Dict[str, int] = {}
    for doc in docs:
        kinds[doc.kind] = kinds.get(doc.kind, 0) + 1
    return {"documents": report.documents, "malformed": report.malformed_count,
            "empty": report.empty_count, "kinds": kinds}


def _stage_chunk(cfg: RunConfig, run_dir: Path, paths: dict) -> dict:
    embedder = cfg.embedder()
    chunk_cfg = cfg.chunk_config()
    all_chunks = []
    docs = 0
    for doc in corpus.read_documents(run_dir / "documents.jsonl"):
        all_chunks.extend(chunking.semantic_chunk(doc, embedder, chunk_cfg))
        docs += 1
    chunking.write_chunks(all_chunks, paths["chunks.jsonl"])
    return {"documents": docs, "chunks": len(all_chunks)}


def _stage_embed(cfg: RunConfig, run_dir: Path, paths: dict) -> dict:
    embedder = cfg.embedder()
    chunks = list(chunking.read_chunks(run_dir / "chunks.jsonl"))
    index = VectorIndex(embedder.dim, dtype="fp32", kind="chunk")
    vectors = embedding.embed_batch([c.text for c in chunks], embedder) \
        if chunks else []
    for chunk, vec in zip(chunks, vectors):
        index.add(vec, chunk.chunk_id, kind="chunk")
    index.save(paths["chunk_embeddings.mcqv"],
               meta=paths["chunk_embeddings.meta.jsonl"])
    return {"vectors": len(index), "dim": embedder.dim}


def _stage_index(cfg: RunConfig, run_dir: Path, paths: dict) -> dict:
    fp32 = VectorIndex.load(run_dir / "chunk_embeddings.mcqv")
    index = VectorIndex(fp32.dim, dtype="fp16", kind="chunk")
    matrix = fp32._matrix_fp32() if len(fp32) else None
    for entry in fp32.entries:
        index.add(matrix[entry.row], entry.ref_id, kind="chunk")
    index.save(paths["chunks.mcqv"], meta=paths["chunks.meta.jsonl"])
    return {"vectors": len(index)}


def _stage_genq(cfg: RunConfig, run_dir: Path, paths: dict) -> dict:
    gw = cfg.gateway(run_dir)
    models = cfg.raw.get("models", {})
    generator = models.get("generator", "generator")
    temperature = float(cfg.section("mcq")["generation_temperature"])
    doc_paths = {d.doc_id: d.source_path
                 for d in corpus.read_documents(run_dir / "documents.jsonl")}
    candidates, rejected = [], []
    for chunk in chunking.read_chunks(run_dir / "chunks.jsonl"):
        try:
            candidates.append(mcq.generate_mcq(
                chunk, gw, generator, doc_paths.get(chunk.doc_id, ""),
                temperature=temperature))
        except CandidateRejected as err:
            rejected.append({"chunk_id": chunk.chunk_id,
                             "reason": err.reason, "detail": str(err)})
    mcq.write_mcqs(candidates, paths["candidates.jsonl"])
    _write_jsonl(rejected, paths["genq_rejected.jsonl"])
    return {"candidates": len(candidates), "rejected": len(rejected)}


def _stage_score(cfg: RunConfig, run_dir: Path, paths: dict) -> dict:
    gw = cfg.gateway(run_dir)
    scorer = cfg.raw.get("models", {}).get("scorer",
                                           cfg.raw.get("models", {}).get(
                                               "generator", "generator"))
    temperature = float(cfg.section("mcq")["scoring_temperature"])
    scored, quarantined = [], []
    for record in mcq.read_mcqs(run_dir / "candidates.jsonl"):
        try:
            scored.append(mcq.score_mcq(record, gw, scorer,
                                        temperature=temperature))
        except CandidateRejected as err:
            quarantined.append({"question_id": record.question_id,
                                "reason": err.reason, "detail": str(err)})
    mcq.write_mcqs(scored, paths["scored.jsonl"])
    _write_jsonl(quarantined, paths["score_quarantine.jsonl"])
    return {"scored": len(scored), "quarantined": len(quarantined)}


def _stage_filter(cfg: RunConfig, run_dir: Path, paths: dict) -> dict:
    threshold = int(cfg.section("mcq")["threshold"])
    scored = list(mcq.read_mcqs(run_dir / "scored.jsonl"))
    accepted, rejected = mcq.filter_mcqs(scored, threshold=threshold)
    mcq.write_mcqs(accepted, paths["benchmark.jsonl"])
    _write_jsonl([{"question_id": r.question_id, "reason": reason,
                   "score": (r.quality or {}).get("score")}
                  for r, reason in rejected], paths["rejected.jsonl"])
    return {"accepted": len(accepted), "rejected": len(rejected),
            "threshold": threshold}


def _stage_traces(cfg: RunConfig, run_dir: Path, paths: dict) -> dict:
    gw = cfg.gateway(run_dir)
    teacher = cfg.raw.get("models", {}).get("teacher", "teacher")
    temperature = float(cfg.section("traces")["temperature"])
    out, quarantined = [], []
    for record in mcq.read_mcqs(run_dir / "benchmark.jsonl"):
        try:
            out.extend(traces.generate_traces(record, gw, teacher,
                                              temperature=temperature))
        except (TraceParseFailure, LeakUnremovable) as err:
            quarantined.append({"question_id": record.question_id,
                                "reason": type(err).__name__,
                                "detail": str(err)})
    traces.write_traces(out, paths["traces.jsonl"])
    _write_jsonl(quarantined, paths["trace_quarantine.jsonl"])
    return {"traces": len(out), "quarantined": len(quarantined)}


def _stage_trace_index(cfg: RunConfig, run_dir: Path, paths: dict) -> dict:
    embedder = cfg.embedder()
    all_traces = list(traces.read_traces(run_dir / "traces.jsonl"))
    indexes = traces.build_trace_indexes(all_traces, embedder)
    counts = {}
    for mode, index in indexes.items():
        index.save(paths[f"traces_{mode}.mcqv"],
                   meta=paths[f"traces_{mode}.meta.jsonl"])
        counts[mode] = len(index)
    return {"indexed": counts}


def _stage_eval(cfg: RunConfig, run_dir: Path, paths: dict) -> dict:
    gw = cfg.gateway(run_dir)
    embedder = cfg.embedder()
    models_cfg = cfg.raw.get("models", {})
    eval_cfg = cfg.section("eval")
    k = int(cfg.section("retrieval")["k"])

    records = list(mcq.read_mcqs(run_dir / "benchmark.jsonl"))
    records, excluded = evaluation.split_multimodal(records)

    chunk_index = VectorIndex.load(run_dir / "chunks.mcqv")
    chunk_texts = {c.chunk_id: c.text
                   for c in chunking.read_chunks(run_dir / "chunks.jsonl")}
    trace_indexes = {}
    for mode in traces.MODES:
        path = run_dir / f"traces_{mode}.mcqv"
        if path.exists():
            trace_indexes[mode] = VectorIndex.load(path)
    trace_texts = {t.trace_id: t.text
                   for t in traces.read_traces(run_dir / "traces.jsonl")}

    conditions = [EvalCondition("baseline"), EvalCondition("rag_chunks", k=k)]
    for mode in eval_cfg["trace_modes"]:
        conditions.append(EvalCondition("rag_traces", trace_mode=mode, k=k))

    prompt_log: List[dict] = []
    graded = evaluation.evaluate_benchmark(
        records, conditions, models_cfg.get("answer_models", []),
        answer_gw=gw, embedder=embedder,
        chunk_index=chunk_index, chunk_texts=chunk_texts,
        trace_indexes=trace_indexes, trace_texts=trace_texts,
        judge_gw=gw, judge_model=models_cfg.get("judge", "judge"),
        include_gold=bool(eval_cfg.get("include_gold", True)),
        prompt_log=prompt_log)
    evaluation.write_graded(graded, paths["graded.jsonl"])
    _write_jsonl(prompt_log, paths["prompts.jsonl"])

    classifier = models_cfg.get("classifier", "")
    math_map: Dict[str, Optional[bool]] = {}
    if classifier:
        for record in records:
            math_map[record.question_id] = evaluation.classify_math_required(
                record, gw, classifier, cache=math_map)
    with open(paths["math_classification.json"], "w", encoding="utf-8") as fh:
        json.dump(math_map, fh, sort_keys=True, indent=1)
    return {"questions": len(records), "excluded_multimodal": len(excluded),
            "graded": len(graded),
            "no_math": sum(1 for v in math_map.values() if v is False)}


def _stage_report(cfg: RunConfig, run_dir: Path, paths: dict) -> dict:
    graded = list(evaluation.read_graded(run_dir / "graded.jsonl"))
    math_map = json.loads(
        (run_dir / "math_classification.json").read_text(encoding="utf-8"))
    reports = evaluation.build_reports(graded, math_required=math_map or None)

    with open(paths["report.json"], "w", encoding="utf-8") as fh:
        json.dump([r.to_dict() for r in reports], fh, sort_keys=True, indent=1)

    conditions = sorted({cond for r in reports for cond in r.accuracy})
    with open(paths["report.csv"], "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model_id", "subset", "question_count"] + conditions)
        for r in reports:
            writer.writerow(
                [r.model_id, r.subset, r.question_count]
                + [f"{r.accuracy[c]:.4f}" if c in r.accuracy else ""
                   for c in conditions])

    for subset in ("all", "no_math"):
        out = paths[f"improvements_{subset}.csv"]
        with open(out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["model_id", "rag_traces_vs_baseline_pct",
                             "rag_traces_vs_chunks_pct",
                             "rag_chunks_vs_baseline_pct"])
            for r in reports:
                if r.subset != subset:
                    continue
                imp = r.improvements_pct
                writer.writerow([
                    r.model_id,
                    imp.get("rag_traces_vs_baseline", ""),
                    imp.get("rag_traces_vs_chunks", ""),
                    imp.get("rag_chunks_vs_baseline", "")])
    return {"models": len({r.model_id for r in reports})}


def _write_jsonl(items, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for item in items:
            fh.write(json.dumps(item, ensure_ascii=False, sort_keys=True) + "\n")


# -- stage registry -----------------------------------------------------------

@dataclass(frozen=True)
class Stage:
    name: str
    inputs: tuple
    outputs: tuple
    config_sections: tuple
    fn: Callable


def _with_meta(*names):
    out = []
    for name in names:
        out.append(name)
        out.append(str(meta_path(Path(name)).name))
    return tuple(out)


STAGES = [
    Stage("ingest", (), ("documents.jsonl",), ("corpus",), _stage_ingest),
    Stage("chunk", ("documents.jsonl",), ("chunks.jsonl",),
          ("chunking", "embedding"), _stage_chunk),
    Stage("embed", ("chunks.jsonl",), _with_meta("chunk_embeddings.mcqv"),
          ("embedding",), _stage_embed),
    Stage("index", _with_meta("chunk_embeddings.mcqv"),
          _with_meta("chunks.mcqv"), (), _stage_index),
    Stage("genq", ("chunks.jsonl", "documents.jsonl"),
          ("candidates.jsonl", "genq_rejected.jsonl"),
          ("gateway", "mcq", "models"), _stage_genq),
    Stage("score", ("candidates.jsonl",),
          ("scored.jsonl", "score_quarantine.jsonl"),
          ("gateway", "mcq", "models"), _stage_score),
    Stage("filter", ("scored.jsonl",), ("benchmark.jsonl", "rejected.jsonl"),
          ("mcq",), _stage_filter),
    Stage("traces", ("benchmark.jsonl",),
          ("traces.jsonl", "trace_quarantine.jsonl"),
          ("gateway", "traces", "models"), _stage_traces),
    Stage("trace-index", ("traces.jsonl",),
          _with_meta("traces_detailed.mcqv", "traces_focused.mcqv",
                     "traces_efficient.mcqv"),
          ("embedding",), _stage_trace_index),
    Stage("eval",
          ("benchmark.jsonl", "chunks.jsonl", "traces.jsonl")
          + _with_meta("chunks.mcqv", "traces_detailed.mcqv",
                       "traces_focused.mcqv", "traces_efficient.mcqv"),
          ("graded.jsonl", "prompts.jsonl", "math_classification.json"),
          ("gateway", "eval", "retrieval", "embedding", "models"),
          _stage_eval),
    Stage("report", ("graded.jsonl", "math_classification.json"),
          ("report.json", "report.csv", "improvements_all.csv",
           "improvements_no_math.csv"),
          ("eval",), _stage_report),
]

STAGE_BY_NAME = {s.name: s for s in STAGES}


# -- manifest -----------------------------------------------------------------

def load_manifest(run_dir: Path) -> dict:
    path = run_dir / MANIFEST_NAME
    if not path.exists():
        return {"run_id": None, "stages": {}}
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
        if not isinstance(manifest.get("stages"), dict):
            raise ValueError("missing stages map")
    except (json.JSONDecodeError, ValueError) as err:
        raise CorruptManifest(str(err)) from err
    return manifest


def save_manifest(run_dir: Path, manifest: dict) -> None:
    tmp = run_dir / (MANIFEST_NAME + ".tmp")
    tmp.write_text(json.dumps(manifest, sort_keys=True, indent=1),
                   encoding="utf-8")
    os.replace(tmp, run_dir / MANIFEST_NAME)


def _stage_config_digest(stage: Stage, cfg: RunConfig) -> str:
    sections = {name: cfg.section(name) if name in DEFAULTS
                else cfg.raw.get(name, {})
                for name in stage.config_sections}
    return config_digest(sections)


def stage_is_fresh(stage: Stage, cfg: RunConfig, run_dir: Path,
                   manifest: dict) -> bool:
    entry = manifest["stages"].get(stage.name)
    if entry is None:
        return False
    if entry.get("config_digest") != _stage_config_digest(stage, cfg):
        return False
    for name in stage.inputs:
        path = run_dir / name
        if not path.exists():
            return False
        if entry.get("inputs", {}).get(name) != file_digest(path):
            return False
    for name in stage.outputs:
        path = run_dir / name
        if not path.exists():
            return False
        if entry.get("outputs", {}).get(name) != file_digest(path):
            return False
    return True


def run_stage(name: str, cfg: RunConfig, run_dir, force: bool = False) -> dict:
    """Execute one stage; returns its manifest entry. Cache hits are skipped
    and marked."""
    if name not in STAGE_BY_NAME:
        raise ConfigInvalid(f"unknown stage {name!r}")
    stage = STAGE_BY_NAME[name]
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest = load_manifest(run_dir)
    if manifest.get("run_id") is None:
        manifest["run_id"] = config_digest(cfg.raw)

    for upstream in stage.inputs:
        if not (run_dir / upstream).exists():
            raise MissingUpstream(f"{name} needs {upstream}")

    if not force and stage_is_fresh(stage, cfg, run_dir, manifest):
        entry = manifest["stages"][stage.name]
        entry["cache_hit"] = True
        save_manifest(run_dir, manifest)
        return entry

    start = time.monotonic()
    try:
        with StageOutputs(run_dir, stage.outputs) as tmp_paths:
            counts = stage.fn(cfg, run_dir, tmp_paths)
    except (MissingUpstream, ConfigInvalid):
        raise
    except Exception as err:
        raise StageFailed(f"{name}: {err}") from err

    entry = {
        "stage": name,
        "config_digest": _stage_config_digest(stage, cfg),
        "inputs": {n: file_digest(run_dir / n) for n in stage.inputs},
        "outputs": {n: file_digest(run_dir / n) for n in stage.outputs},
        "wall_time_s": round(time.monotonic() - start, 3),
        "counts": counts,
        "cache_hit": False,
    }
    manifest["stages"][name] = entry
    save_manifest(run_dir, manifest)
    return entry


def resume(run_dir, cfg: RunConfig) -> Optional[str]:
    """First stage whose outputs are missing or stale by digest; None when
    the run is complete."""
    run_dir = Path(run_dir)
    manifest = load_manifest(run_dir)
    for stage in STAGES:
        if not stage_is_fresh(stage, cfg, run_dir, manifest):
            return stage.name
    return None


def run_all(cfg: RunConfig, run_dir, force: bool = False) -> List[dict]:
    return [run_stage(stage.name, cfg, run_dir, force=force)
            for stage in STAGES]
