"""mcqforge: automated MCQA benchmark pipeline.

Corpus ingestion, semantic chunking, seven-option MCQ synthesis with quality
filtering and provenance, leakage-free reasoning-trace distillation, exact
FP16 vector retrieval, and a three-condition evaluation harness with judge
grading and improvement reporting.
"""

from .corpus import ParsedDocument, assign_doc_id, load_corpus
from .chunking import Chunk, ChunkConfig, segment_sentences, semantic_chunk
from .embedding import (DeterministicEmbedder, RemoteEmbedder, dequantize_fp16,
                        embed_batch, normalize, quantize_fp16)
from .vector_store import IndexEntry, VectorIndex
from .gateway import (ChatRequest, ChatResponse, Gateway, RemoteHTTPBackend,
                      ScriptedMockBackend)
from .mcq import MCQRecord, filter_mcqs, generate_mcq, score_mcq, \
    validate_self_containment
from .traces import (ReasoningTrace, build_trace_indexes, generate_traces,
                     scrub_answer_leakage)
from .evaluation import (EvalCondition, GradedAnswer, accuracy,
                         assemble_prompt, classify_math_required, grade,
                         relative_improvement)

__version__ = "0.1.0"

__all__ = [
    "ParsedDocument", "assign_doc_id", "load_corpus",
    "Chunk", "ChunkConfig", "segment_sentences", "semantic_chunk",
    "DeterministicEmbedder", "RemoteEmbedder", "normalize",
    "quantize_fp16", "dequantize_fp16", "embed_batch",
    "IndexEntry", "VectorIndex",
    "ChatRequest", "ChatResponse", "Gateway", "RemoteHTTPBackend",
    "ScriptedMockBackend",
    "MCQRecord", "generate_mcq", "score_mcq", "filter_mcqs",
    "validate_self_containment",
    "ReasoningTrace", "generate_traces", "scrub_answer_leakage",
    "build_trace_indexes",
    "EvalCondition", "GradedAnswer", "assemble_prompt", "grade",
    "classify_math_required", "accuracy", "relative_improvement",
]
