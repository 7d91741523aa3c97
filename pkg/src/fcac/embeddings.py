"""
Embedding records and their on-disk formats.

Text format::

    DIM <D>
    <clip_id>\t<class_id>\t<v0>,<v1>,...

``class_id`` is left empty for unlabeled records. Floats are written with
``repr`` so a text round trip is bit-exact for float64.

Binary format (little-endian): ``<u32 N><u32 D>`` then N records of
``<u32 len><utf-8 clip_id><i32 class_id or -1><D x float32>``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Union

import numpy as np

from .errors import FormatError, NotFoundError

PathLike = Union[str, Path]


@dataclass
class Embedding:
    vector: np.ndarray
    clip_id: str
    class_id: Optional[int] = None


class EmbeddingProvider:
    """Lookup of embeddings by clip id, in file order."""

    def __init__(self, records: Iterable[Embedding], dim: Optional[int] = None):
        self._records: Dict[str, Embedding] = {}
        for rec in records:
            if dim is None:
                dim = rec.vector.shape[0]
            if rec.vector.shape != (dim,):
                raise FormatError(f"{rec.clip_id}: expected {dim} values, got {rec.vector.shape[0]}")
            if rec.clip_id in self._records:
                raise FormatError(f"duplicate clip id {rec.clip_id!r}")
            self._records[rec.clip_id] = rec
        self.dim = dim or 0

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, clip_id: str) -> bool:
        return clip_id in self._records

    def __iter__(self) -> Iterator[Embedding]:
        return iter(self._records.values())

    def __getitem__(self, clip_id: str) -> Embedding:
        try:
            return self._records[clip_id]
        except KeyError:
            raise NotFoundError(f"no embedding for clip {clip_id!r}") from None

    def matrix(self, clip_ids: Iterable[str]) -> np.ndarray:
        rows = [self[c].vector for c in clip_ids]
        return np.stack(rows) if rows else np.zeros((0, self.dim))


def save_text(path: PathLike, records: List[Embedding]) -> None:
    dim = records[0].vector.shape[0] if records else 0
    lines = [f"DIM {dim}"]
    for rec in records:
        if rec.vector.shape != (dim,):
            raise FormatError(f"{rec.clip_id}: dimension {rec.vector.shape[0]} != {dim}")
        label = "" if rec.class_id is None else str(int(rec.class_id))
        values = ",".join(repr(float(v)) for v in rec.vector)
        lines.append(f"{rec.clip_id}\t{label}\t{values}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_text(path: PathLike) -> EmbeddingProvider:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("DIM "):
        raise FormatError(f"{path}: missing 'DIM <D>' header")
    try:
        dim = int(lines[0].split()[1])
    except (IndexError, ValueError):
        raise FormatError(f"{path}: bad header {lines[0]!r}") from None
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise FormatError(f"{path}:{lineno}: expected 3 tab-separated fields")
        clip_id, label, values = parts
        try:
            vec = np.array([float(v) for v in values.split(",")], dtype=np.float64)
            class_id = int(label) if label else None
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
        if vec.shape[0] != dim:
            raise FormatError(f"{path}:{lineno}: {vec.shape[0]} values, header says {dim}")
        records.append(Embedding(vec, clip_id, class_id))
    return EmbeddingProvider(records, dim)


_HEAD = struct.Struct("<II")


def save_binary(path: PathLike, records: List[Embedding]) -> None:
    dim = records[0].vector.shape[0] if records else 0
    chunks = [_HEAD.pack(len(records), dim)]
    for rec in records:
        cid = rec.clip_id.encode("utf-8")
        chunks.append(struct.pack("<I", len(cid)) + cid)
        chunks.append(struct.pack("<i", -1 if rec.class_id is None else int(rec.class_id)))
        chunks.append(np.asarray(rec.vector, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_binary(path: PathLike) -> EmbeddingProvider:
    raw = Path(path).read_bytes()
    try:
        n, dim = _HEAD.unpack_from(raw, 0)
        off = _HEAD.size
        records = []
        for _ in range(n):
            (ln,) = struct.unpack_from("<I", raw, off)
            off += 4
            clip_id = raw[off:off + ln].decode("utf-8")
            off += ln
            (label,) = struct.unpack_from("<i", raw, off)
            off += 4
            if off + 4 * dim > len(raw):
                raise FormatError(f"{path}: truncated record for {clip_id!r}")
            vec = np.frombuffer(raw, dtype="<f4", count=dim, offset=off).astype(np.float64)
            off += 4 * dim
            records.append(Embedding(vec, clip_id, None if label < 0 else label))
    except (struct.error, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: {exc}") from None
    if off != len(raw):
        raise FormatError(f"{path}: {len(raw) - off} trailing bytes")
    return EmbeddingProvider(records, dim)


def load_precomputed(path: PathLike) -> EmbeddingProvider:
    """Load either embedding format, sniffing the text header."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == b"DIM ":
        return load_text(path)
    return load_binary(path)
