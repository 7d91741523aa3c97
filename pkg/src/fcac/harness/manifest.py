"""
Session manifests and the pseudo-base / pseudo-novel split of the base session.

A manifest is one JSON document::

    {
      "format": "fcac-manifest", "version": 1,
      "kind": "embeddings" | "audio",
      "embedding_file": "embeddings.tsv",          # kind == embeddings
      "n_way": 5, "k_shot": 5,                      # optional shape checks
      "base": {"classes": [...], "pseudo_novel_classes": [...],   # optional pin
               "train": [ITEM, ...], "eval": [ITEM, ...]},
      "sessions": [{"classes": [...], "train": [...], "eval": [...]}, ...]
    }

ITEM is ``{"id": str, "label": int | null, "path": str, "role": "support" | "query"}``;
``path`` is required for audio manifests and resolved relative to the manifest,
``role`` only applies to incremental training items. Without roles a session's
training items form a pool that the harness samples K support / K_q query from.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, FrozenSet, List, Optional, Sequence

import numpy as np

from ..errors import InvalidInputError, ManifestError

MANIFEST_FORMAT = "fcac-manifest"
MANIFEST_VERSION = 1
ROLES = ("support", "query")


@dataclass(frozen=True)
class ClipRef:
    id: str
    label: Optional[int]
    path: Optional[Path] = None
    role: Optional[str] = None


@dataclass
class SessionDataset:
    index: int
    labels: FrozenSet[int]
    train: List[ClipRef]
    eval: List[ClipRef]

    @property
    def has_roles(self) -> bool:
        return any(r.role is not None for r in self.train)

    def support(self) -> List[ClipRef]:
        return [r for r in self.train if r.role == "support"]

    def queries(self) -> List[ClipRef]:
        return [r for r in self.train if r.role == "query"]


@dataclass(frozen=True)
class BaseSplit:
    pseudo_base: List[int]
    pseudo_novel: List[int]

    def __post_init__(self):
        if set(self.pseudo_base) & set(self.pseudo_novel):
            raise InvalidInputError("pseudo-base and pseudo-novel classes overlap")


@dataclass
class Manifest:
    kind: str
    root: Path
    sessions: List[SessionDataset]
    embedding_file: Optional[Path] = None
    pinned_split: Optional[BaseSplit] = None
    n_way: Optional[int] = None
    k_shot: Optional[int] = None

    @property
    def base(self) -> SessionDataset:
        return self.sessions[0]

    @property
    def incremental(self) -> List[SessionDataset]:
        return self.sessions[1:]


def stdu_split(base_classes: Sequence[int], pseudo_novel_count: int, seed: int) -> BaseSplit:
    """Seeded class-level split of the base classes into pseudo-base and pseudo-novel groups."""
    classes = sorted(int(c) for c in base_classes)
    if not 0 < pseudo_novel_count < len(classes):
        raise InvalidInputError(f"pseudo-novel count must be in [1, {len(classes) - 1}], got {pseudo_novel_count}")
    order = np.random.default_rng(seed).permutation(len(classes))
    novel = sorted(classes[i] for i in order[:pseudo_novel_count])
    base = sorted(set(classes) - set(novel))
    return BaseSplit(base, novel)


def _items(raw, where: str, kind: str, root: Path, allow_roles: bool) -> List[ClipRef]:
    if not isinstance(raw, list):
        raise ManifestError(f"{where}: expected a list of items")
    out = []
    for i, item in enumerate(raw):
        if not isinstance(item, dict) or "id" not in item:
            raise ManifestError(f"{where}[{i}]: item needs an 'id'")
        label = item.get("label")
        if label is not None and (not isinstance(label, int) or isinstance(label, bool) or label < 0):
            raise ManifestError(f"{where}[{i}]: label must be a non-negative integer")
        role = item.get("role")
        if role is not None and (not allow_roles or role not in ROLES):
            raise ManifestError(f"{where}[{i}]: invalid role {role!r}")
        path = None
        if kind == "audio":
            if "path" not in item:
                raise ManifestError(f"{where}[{i}]: audio items need a 'path'")
            path = (root / item["path"]).resolve()
            if not path.is_file():
                raise ManifestError(f"{where}[{i}]: missing file {path}")
        out.append(ClipRef(str(item["id"]), label, path, role))
    return out


def _session(raw, index: int, kind: str, root: Path) -> SessionDataset:
    where = "base" if index == 0 else f"sessions[{index - 1}]"
    if not isinstance(raw, dict):
        raise ManifestError(f"{where}: expected an object")
    try:
        labels = frozenset(int(c) for c in raw["classes"])
        train = _items(raw.get("train", []), f"{where}.train", kind, root, allow_roles=index > 0)
        evals = _items(raw.get("eval", []), f"{where}.eval", kind, root, allow_roles=False)
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"{where}: {exc}") from None
    if not labels:
        raise ManifestError(f"{where}: no classes")
    train_labels = {r.label for r in train if r.label is not None}
    if any(r.label is None for r in evals):
        raise ManifestError(f"{where}.eval: every evaluation item needs a label")
    eval_labels = {r.label for r in evals}
    if train_labels - labels or eval_labels - labels:
        raise ManifestError(f"{where}: items carry labels outside the session's classes")
    if train_labels != labels:
        raise ManifestError(f"{where}: training data does not cover classes {sorted(labels - train_labels)}")
    if evals and eval_labels != labels:
        raise ManifestError(f"{where}: evaluation data does not cover classes {sorted(labels - eval_labels)}")
    if index == 0 and any(r.label is None for r in train):
        raise ManifestError("base.train: every base training item needs a label")
    return SessionDataset(index, labels, train, evals)


def _check_shape(s: SessionDataset, n_way: Optional[int], k_shot: Optional[int]) -> None:
    where = f"sessions[{s.index - 1}]"
    if n_way is not None and len(s.labels) != n_way:
        raise ManifestError(f"{where}: {len(s.labels)} classes, manifest declares {n_way}-way")
    labeled = s.support() if s.has_roles else [r for r in s.train if r.label is not None]
    counts: Dict[int, int] = {c: 0 for c in s.labels}
    for r in labeled:
        if r.label is None:
            raise ManifestError(f"{where}: support items need labels")
        counts[r.label] += 1
    if s.has_roles:
        if len(set(counts.values())) != 1:
            raise ManifestError(f"{where}: support counts differ across classes {counts}")
        if k_shot is not None and next(iter(counts.values())) != k_shot:
            raise ManifestError(f"{where}: support is not {k_shot}-shot")
    elif k_shot is not None and min(counts.values()) < k_shot:
        raise ManifestError(f"{where}: a class has fewer than {k_shot} labeled items")


def parse_manifest(doc: dict, root: Path) -> Manifest:
    if not isinstance(doc, dict):
        raise ManifestError("manifest must be a JSON object")
    if doc.get("format", MANIFEST_FORMAT) != MANIFEST_FORMAT:
        raise ManifestError(f"unknown manifest format {doc.get('format')!r}")
    if doc.get("version", MANIFEST_VERSION) != MANIFEST_VERSION:
        raise ManifestError(f"unsupported manifest version {doc.get('version')!r}")
    kind = doc.get("kind", "embeddings")
    if kind not in ("embeddings", "audio"):
        raise ManifestError(f"unknown manifest kind {kind!r}")
    if "base" not in doc:
        raise ManifestError("manifest has no 'base' section")
    sessions = [_session(doc["base"], 0, kind, root)]
    for i, raw in enumerate(doc.get("sessions", []) or [], start=1):
        sessions.append(_session(raw, i, kind, root))

    seen: Dict[int, int] = {}
    for s in sessions:
        for c in s.labels:
            if c in seen:
                raise ManifestError(f"class {c} appears in sessions {seen[c]} and {s.index}")
            seen[c] = s.index
    ids = [r.id for s in sessions for r in s.train + s.eval]
    if len(ids) != len(set(ids)):
        dup = sorted({i for i in ids if ids.count(i) > 1})[:5]
        raise ManifestError(f"duplicate item ids: {dup}")

    n_way, k_shot = doc.get("n_way"), doc.get("k_shot")
    for s in sessions[1:]:
        _check_shape(s, n_way, k_shot)

    pinned = None
    if doc["base"].get("pseudo_novel_classes") is not None:
        novel = sorted(int(c) for c in doc["base"]["pseudo_novel_classes"])
        base_labels = sessions[0].labels
        if not set(novel) < base_labels:
            raise ManifestError("pseudo_novel_classes must be a proper subset of the base classes")
        pinned = BaseSplit(sorted(base_labels - set(novel)), novel)

    emb = None
    if kind == "embeddings":
        if "embedding_file" not in doc:
            raise ManifestError("embedding manifests need an 'embedding_file'")
        emb = (root / doc["embedding_file"]).resolve()
        if not emb.is_file():
            raise ManifestError(f"missing embedding file {emb}")
    return Manifest(kind, root, sessions, emb, pinned, n_way, k_shot)


def load_manifest(path) -> Manifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ManifestError(f"manifest not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON ({exc})") from None
    return parse_manifest(doc, path.parent.resolve())
