"""
Binary checkpoint holding the prototype store and, optionally, the frozen
extractor and the PAN.

Layout (little-endian)::

    b"FCACCKPT" <u32 version>
    section* : <4-byte tag> <u64 length> <payload>
    <u32 CRC-32 of everything before it>

Sections: META (sorted-key JSON), EEPR / PANP (named float64 tensors),
PROT (``<u32 N><u32 D>`` then N x ``<u32 class_id><D x f64>``).
"""
from __future__ import annotations

import json
import struct
import zlib
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .ee import EEConfig, EmbeddingExtractor
from .errors import FormatError, VersionMismatchError
from .pan import AttentionParams, PANParams
from .store import PrototypeStore
from .tensor import Tensor

MAGIC = b"FCACCKPT"
VERSION = 1
FLOAT_BYTES = 8


@dataclass
class Checkpoint:
    store: PrototypeStore
    ee: Optional[EmbeddingExtractor] = None
    pan: Optional[PANParams] = None
    meta: Optional[dict] = None


def _pack_tensors(named: List[Tuple[str, np.ndarray]]) -> bytes:
    out = [struct.pack("<I", len(named))]
    for name, arr in named:
        nb = name.encode("utf-8")
        out.append(struct.pack("<H", len(nb)) + nb)
        out.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(out)


def _unpack_tensors(buf: bytes) -> "OrderedDict[str, np.ndarray]":
    out: "OrderedDict[str, np.ndarray]" = OrderedDict()
    (n,) = struct.unpack_from("<I", buf, 0)
    off = 4
    for _ in range(n):
        (ln,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off:off + ln].decode("utf-8")
        off += ln
        (ndim,) = struct.unpack_from("<B", buf, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", buf, off)
        off += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        if off + FLOAT_BYTES * count > len(buf):
            raise FormatError(f"tensor {name!r} runs past its section")
        out[name] = np.frombuffer(buf, dtype="<f8", count=count, offset=off).reshape(shape).astype(np.float64)
        off += FLOAT_BYTES * count
    if off != len(buf):
        raise FormatError("trailing bytes in tensor section")
    return out


def pack_prototypes(store: PrototypeStore) -> bytes:
    n, d = store.prototypes.shape
    rows = [struct.pack("<II", n, d)]
    for cid, vec in zip(store.class_ids, store.prototypes):
        rows.append(struct.pack("<I", cid) + np.ascontiguousarray(vec, dtype="<f8").tobytes())
    return b"".join(rows)


def prototype_payload_elements(section: bytes) -> int:
    """Number of float elements stored in a PROT section (class ids and header excluded)."""
    n, d = struct.unpack_from("<II", section, 0)
    float_bytes = len(section) - 8 - 4 * n
    if float_bytes != n * d * FLOAT_BYTES:
        raise FormatError("prototype section size does not match its header")
    return float_bytes // FLOAT_BYTES


def _unpack_prototypes(buf: bytes, session_index: int) -> PrototypeStore:
    n, d = struct.unpack_from("<II", buf, 0)
    rec = struct.Struct(f"<I{d}d")
    if len(buf) != 8 + n * rec.size:
        raise FormatError("prototype section size does not match its header")
    ids, rows = [], []
    for i in range(n):
        vals = rec.unpack_from(buf, 8 + i * rec.size)
        ids.append(vals[0])
        rows.append(vals[1:])
    return PrototypeStore(ids, np.array(rows, dtype=np.float64).reshape(n, d), session_index)


def _pan_named(pan: PANParams) -> List[Tuple[str, np.ndarray]]:
    named = []
    for mod, att in (("apgm", pan.apgm), ("pqam", pan.pqam)):
        for i, w in enumerate(att.weights, start=1):
            named.append((f"{mod}.w{i}", w.data))
        for i, b in enumerate(att.biases or [], start=1):
            named.append((f"{mod}.b{i}", b.data))
    return named


def _section(tag: bytes, payload: bytes) -> bytes:
    return tag + struct.pack("<Q", len(payload)) + payload


def serialize(ckpt: Checkpoint) -> bytes:
    meta = dict(ckpt.meta or {})
    meta["session_index"] = ckpt.store.session_index
    meta["ee_config"] = ckpt.ee.config.to_dict() if ckpt.ee is not None else None
    meta["ee_frozen"] = bool(ckpt.ee.frozen) if ckpt.ee is not None else None
    if ckpt.pan is not None:
        meta["pan"] = {"temperature": ckpt.pan.temperature, "bias": ckpt.pan.apgm.biases is not None}
    else:
        meta["pan"] = None
    body = [MAGIC, struct.pack("<I", VERSION)]
    body.append(_section(b"META", json.dumps(meta, sort_keys=True).encode("utf-8")))
    if ckpt.ee is not None:
        body.append(_section(b"EEPR", _pack_tensors([(k, v.data) for k, v in ckpt.ee.params.items()])))
    if ckpt.pan is not None:
        body.append(_section(b"PANP", _pack_tensors(_pan_named(ckpt.pan))))
    body.append(_section(b"PROT", pack_prototypes(ckpt.store)))
    blob = b"".join(body)
    return blob + struct.pack("<I", zlib.crc32(blob) & 0xFFFFFFFF)


def split_sections(blob: bytes) -> Dict[str, bytes]:
    if len(blob) < len(MAGIC) + 8 or blob[:len(MAGIC)] != MAGIC:
        raise FormatError("not a checkpoint file (bad magic or truncated)")
    (version,) = struct.unpack_from("<I", blob, len(MAGIC))
    if version != VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, expected {VERSION}")
    (crc,) = struct.unpack_from("<I", blob, len(blob) - 4)
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != crc:
        raise FormatError("checkpoint is corrupted (CRC mismatch)")
    sections: Dict[str, bytes] = {}
    off, end = len(MAGIC) + 4, len(blob) - 4
    while off < end:
        if off + 12 > end:
            raise FormatError("truncated section header")
        tag = blob[off:off + 4].decode("ascii", errors="replace")
        (ln,) = struct.unpack_from("<Q", blob, off + 4)
        off += 12
        if off + ln > end:
            raise FormatError(f"section {tag} runs past end of file")
        sections[tag] = blob[off:off + ln]
        off += ln
    if "META" not in sections or "PROT" not in sections:
        raise FormatError("checkpoint lacks META or PROT section")
    return sections


def deserialize(blob: bytes) -> Checkpoint:
    sec = split_sections(blob)
    try:
        meta = json.loads(sec["META"].decode("utf-8"))
        store = _unpack_prototypes(sec["PROT"], int(meta["session_index"]))
        ee = None
        if "EEPR" in sec:
            params = OrderedDict((k, Tensor(v, requires_grad=True)) for k, v in _unpack_tensors(sec["EEPR"]).items())
            ee = EmbeddingExtractor(EEConfig(**meta["ee_config"]), params, frozen=bool(meta["ee_frozen"]))
        pan = None
        if "PANP" in sec:
            named = _unpack_tensors(sec["PANP"])
            mods = {}
            for mod in ("apgm", "pqam"):
                ws = [Tensor(named[f"{mod}.w{i}"], requires_grad=True) for i in range(1, 5)]
                bs = [Tensor(named[f"{mod}.b{i}"], requires_grad=True) for i in range(1, 5)] if meta["pan"]["bias"] else None
                mods[mod] = AttentionParams(ws, bs)
            pan = PANParams(mods["apgm"], mods["pqam"], float(meta["pan"]["temperature"]))
    except (KeyError, struct.error, UnicodeDecodeError, json.JSONDecodeError, TypeError) as exc:
        raise FormatError(f"malformed checkpoint: {exc!r}") from None
    user_meta = {k: v for k, v in meta.items() if k not in ("session_index", "ee_config", "ee_frozen", "pan")}
    return Checkpoint(store, ee, pan, user_meta)


def save_checkpoint(path, store: PrototypeStore, ee: Optional[EmbeddingExtractor] = None,
                    pan: Optional[PANParams] = None, meta: Optional[dict] = None) -> None:
    Path(path).write_bytes(serialize(Checkpoint(store, ee, pan, meta)))


def load_checkpoint(path) -> Checkpoint:
    return deserialize(Path(path).read_bytes())
