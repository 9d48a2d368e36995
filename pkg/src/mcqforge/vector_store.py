"""Exact flat top-k similarity index over FP16 vectors.

Vectors are normalized on insert, so cosine similarity reduces to an inner
product. Search dequantizes to fp32 and scans every row; at the corpus
scales involved (~10^5 vectors) this is fast, exact, and trivially testable
against a brute-force oracle.

On-disk layout (.mcqv, little-endian):
    magic "MCQV" | version u32 | dim u32 | count u64 | dtype u8 | 7 zero bytes
followed by the row-major payload. A `<name>.meta.jsonl` sidecar holds one
entry record per row, in row order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from . import embedding
from .errors import (BadMagic, DimMismatch, DuplicateRef, EmptyIndex,
                     KindMismatch, MetaRowMismatch, TruncatedPayload,
                     VersionUnsupported)

MAGIC = b"MCQV"
VERSION = 1
_HEADER = struct.Struct("<4sIIQB7s")

DTYPE_FP16 = 1
DTYPE_FP32 = 2
_DTYPES = {DTYPE_FP16: np.float16, DTYPE_FP32: np.float32}
_DTYPE_NAMES = {"fp16": DTYPE_FP16, "fp32": DTYPE_FP32}

ENTRY_KINDS = ("chunk", "trace_detailed", "trace_focused", "trace_efficient")


@dataclass(frozen=True)
class IndexEntry:
    row: int
    ref_id: str
    kind: str

    def to_dict(self) -> dict:
        return {"row": self.row, "ref_id": self.ref_id, "kind": self.kind}


class VectorIndex:
    """Append-only flat index; immutable once built, safe to share."""

    def __init__(self, dim: int, dtype: str = "fp16",
                 kind: Optional[str] = None):
        if dim < 1:
            raise ValueError("dim must be positive")
        if dtype not in _DTYPE_NAMES:
            raise ValueError(f"unknown dtype {dtype!r}")
        if kind is not None and kind not in ENTRY_KINDS:
            raise ValueError(f"unknown entry kind {kind!r}")
        self.dim = dim
        self.dtype_code = _DTYPE_NAMES[dtype]
        self.kind = kind
        self._rows: List[np.ndarray] = []
        self._entries: List[IndexEntry] = []
        self._refs: dict = {}

    def __len__(self) -> int:
        return len(self._rows)

    @property
    def entries(self) -> List[IndexEntry]:
        return list(self._entries)

    def add(self, v: np.ndarray, ref_id: str, kind: str = "chunk") -> int:
        """Normalize, quantize, append. Returns the assigned row."""
        v = np.asarray(v, dtype=np.float32)
        if v.shape != (self.dim,):
            raise DimMismatch(f"vector shape {v.shape}, index dim {self.dim}")
        if ref_id in self._refs:
            raise DuplicateRef(ref_id)
        if self.kind is not None and kind != self.kind:
            raise KindMismatch(f"index holds {self.kind!r}, got {kind!r}")
        if kind not in ENTRY_KINDS:
            raise KindMismatch(f"unknown entry kind {kind!r}")
        unit = embedding.normalize(v)
        stored = (embedding.quantize_fp16(unit)
                  if self.dtype_code == DTYPE_FP16 else unit)
        row = len(self._rows)
        self._rows.append(stored)
        self._entries.append(IndexEntry(row, ref_id, kind))
        self._refs[ref_id] = row
        return row

    def _matrix_fp32(self) -> np.ndarray:
        return np.stack(self._rows).astype(np.float32)

    def search_topk(self, q: np.ndarray, k: int) -> List[Tuple[str, float]]:
        """Exact inner-product search, fp32 accumulation.

        Ties broken by insertion order (stable sort on descending score).
        """
        if not self._rows:
            raise EmptyIndex("search on empty index")
        if k < 1:
            raise ValueError("k must be positive")
        q = np.asarray(q, dtype=np.float32)
        if q.shape != (self.dim,):
            raise DimMismatch(f"query shape {q.shape}, index dim {self.dim}")
        qn = embedding.normalize(q)
        scores = self._matrix_fp32() @ qn
        order = np.argsort(-scores, kind="stable")[:k]
        return [(self._entries[i].ref_id, float(scores[i])) for i in order]

    # -- persistence ----------------------------------------------------------

    def save(self, path, meta=None) -> None:
        path = Path(path)
        header = _HEADER.pack(MAGIC, VERSION, self.dim, len(self._rows),
                              self.dtype_code, b"\x00" * 7)
        np_dtype = _DTYPES[self.dtype_code]
        payload = (np.stack(self._rows).astype(np_dtype).tobytes()
                   if self._rows else b"")
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(payload)
        with open(meta if meta else meta_path(path), "w",
                  encoding="utf-8") as fh:
            for entry in self._entries:
                fh.write(json.dumps(entry.to_dict(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "VectorIndex":
        path = Path(path)
        blob = path.read_bytes()
        if len(blob) < _HEADER.size:
            raise TruncatedPayload("file shorter than header")
        magic, version, dim, count, dtype_code, _ = _HEADER.unpack_from(blob)
        if magic != MAGIC:
            raise BadMagic(repr(magic))
        if version != VERSION:
            raise VersionUnsupported(str(version))
        if dtype_code not in _DTYPES:
            raise VersionUnsupported(f"dtype code {dtype_code}")
        np_dtype = _DTYPES[dtype_code]
        expected = count * dim * np.dtype(np_dtype).itemsize
        payload = blob[_HEADER.size:]
        if len(payload) != expected:
            raise TruncatedPayload(
                f"payload {len(payload)} bytes, expected {expected}")

        entries = []
        with open(meta_path(path), encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    d = json.loads(line)
                    entries.append(IndexEntry(d["row"], d["ref_id"], d["kind"]))
        if len(entries) != count:
            raise MetaRowMismatch(
                f"{len(entries)} meta rows for header count {count}")

        dtype_name = "fp16" if dtype_code == DTYPE_FP16 else "fp32"
        kinds = {e.kind for e in entries}
        index = cls(dim, dtype=dtype_name,
                    kind=kinds.pop() if len(kinds) == 1 else None)
        rows = np.frombuffer(payload, dtype=np_dtype).reshape(count, dim)
        for entry, row in zip(entries, rows):
            # Bypass add(): stored rows are already normalized + quantized.
            index._rows.append(row.copy())
            index._entries.append(entry)
            if entry.ref_id in index._refs:
                raise DuplicateRef(entry.ref_id)
            index._refs[entry.ref_id] = entry.row
        return index


def meta_path(index_path) -> Path:
    index_path = Path(index_path)
    return index_path.with_name(index_path.stem + ".meta.jsonl")
