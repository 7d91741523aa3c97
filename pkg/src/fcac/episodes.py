"""
Episode construction for pseudo-incremental PAN training.

Each episode draws up to N pseudo-base classes from the first part of the
base training set and up to N pseudo-novel classes from the second part,
with K support and K_q query samples per class. ``episode_pass`` walks the
data so that every sample is used exactly once per pass.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .errors import InvalidInputError, ShapeError


@dataclass
class LabeledSet:
    """Embeddings with sample ids and integer class labels."""

    ids: List[str]
    labels: np.ndarray
    vectors: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if not (len(self.ids) == self.labels.shape[0] == self.vectors.shape[0]):
            raise ShapeError("ids, labels and vectors must have the same length")

    @property
    def classes(self) -> List[int]:
        return sorted(set(int(c) for c in self.labels))

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.ids)

    def subset(self, classes: Sequence[int]) -> "LabeledSet":
        keep = np.isin(self.labels, list(classes))
        idx = np.flatnonzero(keep)
        return LabeledSet([self.ids[i] for i in idx], self.labels[idx], self.vectors[idx])


@dataclass(frozen=True)
class EpisodeConfig:
    n_way: int = 5
    k_shot: int = 5
    k_query: int = 15
    epochs: int = 20
    learning_rate: float = 2e-4

    def __post_init__(self):
        if self.n_way < 1 or self.k_shot < 1 or self.k_query < 1:
            raise InvalidInputError("n_way, k_shot and k_query must all be ≥ 1")
        if self.epochs < 0 or self.learning_rate < 0:
            raise InvalidInputError("epochs and learning_rate must be non-negative")


@dataclass
class EpisodeBatch:
    base_classes: List[int]
    novel_classes: List[int]
    support_base: np.ndarray  # (N_b, K, D)
    support_novel: np.ndarray  # (N_n, K, D)
    query: np.ndarray  # (Q, D)
    query_labels: np.ndarray  # (Q,), indices into base_classes + novel_classes
    support_ids: List[str] = field(default_factory=list)
    query_ids: List[str] = field(default_factory=list)

    @property
    def n_classes(self) -> int:
        return len(self.base_classes) + len(self.novel_classes)

    def query_counts(self) -> np.ndarray:
        return np.bincount(self.query_labels, minlength=self.n_classes)


# a chunk is (support indices, query indices) for one class
Chunk = Tuple[np.ndarray, np.ndarray]


def _class_chunks(data: LabeledSet, cfg: EpisodeConfig, rng: np.random.Generator) -> Dict[int, Deque[Chunk]]:
    """Shuffle each class and cut it into (K support, K_q query) chunks.

    A remainder longer than K becomes a final chunk with fewer queries; a shorter
    remainder is appended to the previous chunk's queries, so every sample lands
    in exactly one chunk.
    """
    k, kq = cfg.k_shot, cfg.k_query
    size = k + kq
    out: Dict[int, Deque[Chunk]] = {}
    for c in data.classes:
        idx = np.flatnonzero(data.labels == c)
        if idx.size < size:
            raise InvalidInputError(f"class {c} has {idx.size} samples, episodes need K + K_q = {size}")
        idx = rng.permutation(idx)
        n_full, rem = divmod(idx.size, size)
        chunks = [(idx[i * size:i * size + k], idx[i * size + k:(i + 1) * size]) for i in range(n_full)]
        tail = idx[n_full * size:]
        if rem > k:
            chunks.append((tail[:k], tail[k:]))
        elif rem:
            s, q = chunks[-1]
            chunks[-1] = (s, np.concatenate([q, tail]))
        out[c] = deque(chunks)
    return out


def _pick(pool: Dict[int, Deque[Chunk]], n: int, rng: np.random.Generator) -> List[Tuple[int, Chunk]]:
    live = [c for c in pool if pool[c]]
    if not live:
        return []
    live = [live[i] for i in rng.permutation(len(live))]
    # classes with the most chunks left go first so that episodes stay N-way for as long as possible
    live.sort(key=lambda c: -len(pool[c]))
    return [(c, pool[c].popleft()) for c in live[:n]]


def episode_pass(d01: LabeledSet, d02: LabeledSet, cfg: EpisodeConfig,
                 rng: np.random.Generator) -> Iterator[EpisodeBatch]:
    """Yield episodes until every sample of both parts has been used once."""
    if d01.dim != d02.dim:
        raise ShapeError("pseudo-base and pseudo-novel embeddings differ in dimension")
    base_pool = _class_chunks(d01, cfg, rng)
    novel_pool = _class_chunks(d02, cfg, rng)
    dim = d01.dim
    while True:
        base = _pick(base_pool, cfg.n_way, rng)
        novel = _pick(novel_pool, cfg.n_way, rng)
        if not base and not novel:
            return
        q_vecs, q_labels, q_ids, s_ids = [], [], [], []
        for pos, (data, (c, (s, q))) in enumerate([(d01, b) for b in base] + [(d02, n) for n in novel]):
            q_vecs.append(data.vectors[q])
            q_labels.append(np.full(q.size, pos, dtype=np.int64))
            q_ids.extend(data.ids[i] for i in q)
            s_ids.extend(data.ids[i] for i in s)
        yield EpisodeBatch(
            base_classes=[c for c, _ in base],
            novel_classes=[c for c, _ in novel],
            support_base=np.stack([d01.vectors[s] for _, (s, _) in base]) if base else np.zeros((0, cfg.k_shot, dim)),
            support_novel=np.stack([d02.vectors[s] for _, (s, _) in novel]) if novel else np.zeros((0, cfg.k_shot, dim)),
            query=np.concatenate(q_vecs),
            query_labels=np.concatenate(q_labels),
            support_ids=s_ids,
            query_ids=q_ids,
        )


def build_pseudo_episode(d01: LabeledSet, d02: LabeledSet, cfg: EpisodeConfig,
                         rng: np.random.Generator) -> EpisodeBatch:
    """One episode: the first episode of a fresh pass."""
    return next(episode_pass(d01, d02, cfg, rng))
