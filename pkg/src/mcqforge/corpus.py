"""Corpus ingestion: parsed documents in, canonical JSONL records out.

Accepts JSONL, per-file JSON, plain text, or Markdown trees and yields
immutable document records with content-derived ids so downstream provenance
survives re-runs and file moves.
"""

from __future__ import annotations

import hashlib
import json
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

from .errors import EmptyDocument, MissingRoot

KINDS = ("full_paper", "abstract")

FORMATS = ("jsonl", "json_dir", "text_dir", "markdown_dir")


def normalize_text(text: str) -> str:
    """Unicode NFC plus LF newlines, so identical content hashes identically
    regardless of platform or encoder quirks."""
    text = unicodedata.normalize("NFC", text)
    return text.replace("\r\n", "\n").replace("\r", "\n")


def assign_doc_id(text: str) -> str:
    """Content digest of the normalized text; the document's stable identity."""
    normalized = normalize_text(text)
    if not normalized.strip():
        raise EmptyDocument("document text is empty after normalization")
    return hashlib.sha256(normalized.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ParsedDocument:
    doc_id: str
    source_path: str
    text: str
    kind: str = "full_paper"
    title: Optional[str] = None
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "source_path": self.source_path,
            "title": self.title,
            "text": self.text,
            "kind": self.kind,
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ParsedDocument":
        return cls(
            doc_id=d["doc_id"],
            source_path=d["source_path"],
            title=d.get("title"),
            text=d["text"],
            kind=d.get("kind", "full_paper"),
            metadata=d.get("metadata", {}),
        )


@dataclass
class IngestReport:
    """Bookkeeping so that yielded + malformed + empty == records seen."""

    documents: int = 0
    malformed: list = field(default_factory=list)  # (path, line_or_None)
    empty: list = field(default_factory=list)      # paths

    @property
    def malformed_count(self) -> int:
        return len(self.malformed)

    @property
    def empty_count(self) -> int:
        return len(self.empty)

    @property
    def records_seen(self) -> int:
        return self.documents + self.malformed_count + self.empty_count


def _make_document(text: str, source_path: str, title: Optional[str],
                   kind: str, metadata: dict) -> ParsedDocument:
    normalized = normalize_text(text)
    if kind not in KINDS:
        kind = "full_paper"
    return ParsedDocument(
        doc_id=assign_doc_id(normalized),
        source_path=source_path,
        title=title,
        text=normalized,
        kind=kind,
        metadata=metadata,
    )


def load_corpus(root, format: str,
                report: Optional[IngestReport] = None) -> Iterator[ParsedDocument]:
    """Yield documents from `root` in lexicographic source-path order.

    Malformed and empty records are counted in `report` rather than raised,
    so a single bad line cannot sink a corpus-scale run.
    """
    root = Path(root)
    if not root.exists():
        raise MissingRoot(str(root))
    if format not in FORMATS:
        raise ValueError(f"unknown corpus format: {format!r}")
    if report is None:
        report = IngestReport()

    if format == "jsonl":
        paths = sorted(root.rglob("*.jsonl")) if root.is_dir() else [root]
        for path in paths:
            yield from _load_jsonl(path, report)
    else:
        suffix = {"json_dir": "*.json", "text_dir": "*.txt",
                  "markdown_dir": "*.md"}[format]
        for path in sorted(root.rglob(suffix)):
            yield from _load_file(path, format, report)


def _load_jsonl(path: Path, report: IngestReport) -> Iterator[ParsedDocument]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                text = record["text"]
                if not isinstance(text, str):
                    raise TypeError("text must be a string")
            except (json.JSONDecodeError, KeyError, TypeError):
                report.malformed.append((str(path), lineno))
                continue
            metadata = record.get("metadata") or {}
            try:
                doc = _make_document(
                    text=text,
                    source_path=record.get("path", f"{path}:{lineno}"),
                    title=metadata.get("title"),
                    kind=record.get("kind", "full_paper"),
                    metadata={k: str(v) for k, v in metadata.items()},
                )
            except EmptyDocument:
                report.empty.append(f"{path}:{lineno}")
                continue
            report.documents += 1
            yield doc


def _load_file(path: Path, format: str,
               report: IngestReport) -> Iterator[ParsedDocument]:
    try:
        raw = path.read_text(encoding="utf-8")
    except (UnicodeDecodeError, OSError):
        report.malformed.append((str(path), None))
        return

    title = None
    kind = "full_paper"
    metadata: dict = {}
    if format == "json_dir":
        try:
            record = json.loads(raw)
            raw = record["text"]
            if not isinstance(raw, str):
                raise TypeError("text must be a string")
        except (json.JSONDecodeError, KeyError, TypeError):
            report.malformed.append((str(path), None))
            return
        metadata = {k: str(v) for k, v in (record.get("metadata") or {}).items()}
        title = metadata.get("title")
        kind = record.get("kind", "full_paper")

    try:
        doc = _make_document(raw, str(path), title, kind, metadata)
    except EmptyDocument:
        report.empty.append(str(path))
        return
    report.documents += 1
    yield doc


def write_documents(docs, path) -> int:
    """Write canonical documents.jsonl; returns the record count."""
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(json.dumps(doc.to_dict(), ensure_ascii=False,
                                sort_keys=True) + "\n")
            count += 1
    return count


def read_documents(path) -> Iterator[ParsedDocument]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield ParsedDocument.from_dict(json.loads(line))
