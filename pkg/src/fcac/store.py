"""
Dynamically expanded prototype classifier: one prototype per class.

Stores are treated as immutable snapshots; expansion returns a new store.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import InvalidInputError, ProtocolError, ShapeError
from .pan import PANParams, apgm_forward, consolidate_prototypes, pqam_forward
from .tensor import no_grad

EVAL_MODES = ("plain", "pqam")


@dataclass
class PrototypeStore:
    class_ids: List[int]
    prototypes: np.ndarray  # (N_c, D)
    session_index: int = 0

    def __post_init__(self):
        self.prototypes = np.asarray(self.prototypes, dtype=np.float64)
        self.class_ids = [int(c) for c in self.class_ids]
        if len(set(self.class_ids)) != len(self.class_ids):
            raise ProtocolError("class ids in a prototype store must be unique")
        if self.prototypes.ndim != 2 or self.prototypes.shape[0] != len(self.class_ids):
            raise ShapeError(f"{len(self.class_ids)} class ids but prototype array {self.prototypes.shape}")
        if not np.all(np.isfinite(self.prototypes)):
            raise InvalidInputError("prototypes must be finite")

    @property
    def dim(self) -> int:
        return self.prototypes.shape[1]

    def __len__(self) -> int:
        return len(self.class_ids)

    def digest(self) -> str:
        h = hashlib.sha256(np.asarray(self.class_ids, dtype="<u4").tobytes())
        h.update(np.ascontiguousarray(self.prototypes).tobytes())
        h.update(str(self.session_index).encode())
        return h.hexdigest()


@dataclass
class Prediction:
    clip_id: str
    class_id: int
    scores: np.ndarray  # aligned with store.class_ids


def _group(vectors: np.ndarray, labels: Sequence[int]) -> Dict[int, np.ndarray]:
    vectors = np.asarray(vectors, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if vectors.ndim != 2 or vectors.shape[0] != labels.shape[0]:
        raise ShapeError(f"vectors {vectors.shape} do not match {labels.shape[0]} labels")
    return {int(c): vectors[labels == c] for c in sorted(set(labels.tolist()))}


def build_base(vectors: np.ndarray, labels: Sequence[int]) -> PrototypeStore:
    """Mean embedding per class, ordered by class id; session 0."""
    groups = _group(vectors, labels)
    if not groups:
        raise InvalidInputError("no base embeddings given")
    return PrototypeStore(list(groups), np.stack([g.mean(axis=0) for g in groups.values()]), 0)


def _check_novel(store: PrototypeStore, classes: Sequence[int]) -> None:
    clash = sorted(set(classes) & set(store.class_ids))
    if clash:
        raise ProtocolError(f"session labels already in the classifier: {clash}")
    if not classes:
        raise InvalidInputError("session has no support samples")


def expand_session(store: PrototypeStore, pan: PANParams, support: np.ndarray, support_labels: Sequence[int],
                   queries: np.ndarray, consolidation: str = "mean") -> PrototypeStore:
    """Generate novel prototypes with the APGM, then adapt old+novel prototypes with the PQAM.

    The consolidated per-query prototypes replace the old ones and the novel ones are appended.
    """
    groups = _group(support, support_labels)
    _check_novel(store, list(groups))
    if pan.dim != store.dim:
        raise ShapeError(f"PAN dim {pan.dim} != store dim {store.dim}")
    shots = {g.shape[0] for g in groups.values()}
    if len(shots) != 1:
        raise ShapeError(f"every novel class needs the same number of support samples, got {sorted(shots)}")
    k = shots.pop()
    queries = np.asarray(queries, dtype=np.float64).reshape(-1, store.dim)
    with no_grad():
        p_nov = apgm_forward(pan.apgm, np.concatenate(list(groups.values())), k)
        p_upd, _, _ = pqam_forward(pan.pqam, store.prototypes, p_nov, queries, pan.temperature)
    merged = consolidate_prototypes(p_upd.data, consolidation)
    return PrototypeStore(store.class_ids + list(groups), merged, store.session_index + 1)


def naive_expand(store: PrototypeStore, support: np.ndarray, support_labels: Sequence[int]) -> PrototypeStore:
    """Ablation baseline: append plain support means, leave existing prototypes untouched."""
    groups = _group(support, support_labels)
    _check_novel(store, list(groups))
    new = np.stack([g.mean(axis=0) for g in groups.values()])
    if new.shape[1] != store.dim:
        raise ShapeError(f"support dim {new.shape[1]} != store dim {store.dim}")
    return PrototypeStore(store.class_ids + list(groups), np.concatenate([store.prototypes, new]),
                          store.session_index + 1)


def _cosine(x: np.ndarray, protos: np.ndarray) -> np.ndarray:
    xn = x / np.maximum(np.linalg.norm(x, axis=1, keepdims=True), 1e-12)
    pn = protos / np.maximum(np.linalg.norm(protos, axis=1, keepdims=True), 1e-12)
    return xn @ pn.T


def score_batch(store: PrototypeStore, embeddings: np.ndarray, mode: str = "pqam",
                pan: Optional[PANParams] = None) -> np.ndarray:
    """(B, N_c) scores; pqam mode runs each embedding as its own query without touching the store."""
    if len(store) == 0:
        raise InvalidInputError("cannot predict with an empty classifier")
    embeddings = np.asarray(embeddings, dtype=np.float64).reshape(-1, store.dim)
    if mode == "plain":
        return _cosine(embeddings, store.prototypes)
    if mode == "pqam":
        if pan is None:
            raise InvalidInputError("pqam prediction needs a PAN")
        with no_grad():
            _, _, scores = pqam_forward(pan.pqam, store.prototypes, None, embeddings, pan.temperature)
        return scores.data
    raise InvalidInputError(f"unknown evaluation mode {mode!r}")


def argmax_lowest_id(scores: np.ndarray, class_ids: Sequence[int]) -> np.ndarray:
    """Row-wise argmax class id; ties go to the lowest class id."""
    scores = np.atleast_2d(scores)
    ids = np.asarray(class_ids, dtype=np.int64)
    best = scores.max(axis=1, keepdims=True)
    masked = np.where(scores == best, ids[None, :], np.iinfo(np.int64).max)
    return masked.min(axis=1)


def predict_batch(store: PrototypeStore, embeddings: np.ndarray, mode: str = "pqam",
                  pan: Optional[PANParams] = None) -> np.ndarray:
    return argmax_lowest_id(score_batch(store, embeddings, mode, pan), store.class_ids)


def predict(store: PrototypeStore, embedding: np.ndarray, mode: str = "pqam", pan: Optional[PANParams] = None,
            clip_id: str = "") -> Prediction:
    scores = score_batch(store, embedding, mode, pan)
    return Prediction(clip_id, int(argmax_lowest_id(scores, store.class_ids)[0]), scores[0])
