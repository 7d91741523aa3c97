"""
Prototype adaptation network.

Both sub-modules are one single-head self-attention block with residual sum
and layer norm::

    out = layer_norm(X + W4(softmax(W1(X) W2(X)^T / sqrt(D)) W3(X)))

The prototype generator (APGM) attends over all novel-class support
embeddings and averages each class's K output rows. The adaptation module
(PQAM) attends, per query, over ``[old prototypes; novel prototypes; query]``
and scores the updated query against the updated prototypes by scaled cosine.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from . import tensor as T
from .episodes import EpisodeBatch, EpisodeConfig, LabeledSet, episode_pass
from .errors import InvalidInputError, ShapeError
from .optim import OptimizerState, sgd_step
from .tensor import Tensor, no_grad

DEFAULT_TEMPERATURE = 10.0


@dataclass
class AttentionParams:
    weights: List[Tensor]  # W1..W4, each (D, D), applied as x @ W.T
    biases: Optional[List[Tensor]] = None

    def __post_init__(self):
        if len(self.weights) != 4:
            raise InvalidInputError("attention block needs exactly four linear maps")
        d = self.weights[0].shape[0]
        for w in self.weights:
            if w.shape != (d, d):
                raise ShapeError(f"linear maps must all be {d}x{d}, got {w.shape}")

    @property
    def dim(self) -> int:
        return self.weights[0].shape[0]

    def parameters(self) -> List[Tensor]:
        return list(self.weights) + list(self.biases or [])

    @classmethod
    def init(cls, dim: int, rng: np.random.Generator, bias: bool = False) -> "AttentionParams":
        bound = 1.0 / math.sqrt(dim)
        ws = [Tensor(rng.uniform(-bound, bound, (dim, dim)), requires_grad=True) for _ in range(4)]
        bs = [Tensor(rng.uniform(-bound, bound, (dim,)), requires_grad=True) for _ in range(4)] if bias else None
        return cls(ws, bs)

    @classmethod
    def identity(cls, dim: int) -> "AttentionParams":
        return cls([Tensor(np.eye(dim), requires_grad=True) for _ in range(4)])


@dataclass
class PANParams:
    apgm: AttentionParams
    pqam: AttentionParams
    temperature: float = DEFAULT_TEMPERATURE

    def __post_init__(self):
        if not self.temperature > 0:
            raise InvalidInputError("temperature must be positive")
        if self.apgm.dim != self.pqam.dim:
            raise ShapeError("APGM and PQAM dimensions differ")

    @property
    def dim(self) -> int:
        return self.apgm.dim

    def parameters(self) -> List[Tensor]:
        return self.apgm.parameters() + self.pqam.parameters()

    @classmethod
    def init(cls, dim: int, seed: int, temperature: float = DEFAULT_TEMPERATURE, bias: bool = False) -> "PANParams":
        rng = np.random.default_rng(seed)
        return cls(AttentionParams.init(dim, rng, bias), AttentionParams.init(dim, rng, bias), temperature)


def attention_block(params: AttentionParams, x) -> Tensor:
    """Self-attention + residual + layer norm over the rows of ``x`` (..., n, D)."""
    x = T.as_tensor(x)
    d = params.dim
    if x.shape[-1] != d:
        raise ShapeError(f"input dim {x.shape[-1]} != attention dim {d}")
    if x.ndim < 2 or x.shape[-2] < 1:
        raise ShapeError("attention needs at least one row")
    b = params.biases or [None] * 4
    w1, w2, w3, w4 = params.weights
    x1 = T.linear(x, w1, b[0])
    x2 = T.linear(x, w2, b[1])
    x3 = T.linear(x, w3, b[2])
    attn = T.softmax_rows(T.matmul(x1, T.swap_last(x2)) * (1.0 / math.sqrt(d)))
    mixed = T.linear(T.matmul(attn, x3), w4, b[3])
    return T.layer_norm(mixed + x)


def attention_weights(params: AttentionParams, x) -> np.ndarray:
    """The inner softmax matrix, for inspection."""
    x = T.as_tensor(x)
    with no_grad():
        x1 = T.linear(x, params.weights[0])
        x2 = T.linear(x, params.weights[1])
        if params.biases:
            x1 = x1 + params.biases[0]
            x2 = x2 + params.biases[1]
        return T.softmax_rows(T.matmul(x1, T.swap_last(x2)) * (1.0 / math.sqrt(params.dim))).data


def apgm_forward(params: AttentionParams, support, k_shot: int) -> Tensor:
    """Novel prototypes (N_nov, D) from support rows grouped contiguously by class, K per class."""
    support = T.as_tensor(support)
    if support.ndim != 2:
        raise ShapeError(f"support must be (N*K, D), got {support.shape}")
    n = support.shape[0]
    if k_shot < 1 or n == 0 or n % k_shot:
        raise ShapeError(f"{n} support rows cannot be grouped into classes of K={k_shot}")
    out = attention_block(params, support)
    return T.mean(T.reshape(out, (n // k_shot, k_shot, params.dim)), axis=1)


def pqam_forward(params: AttentionParams, p_old, p_nov, queries,
                 temperature: float = DEFAULT_TEMPERATURE) -> Tuple[Tensor, Tensor, Tensor]:
    """Adapt prototypes and queries jointly.

    Returns per-query updated prototypes (K_q, N_old+N_nov, D), updated query
    embeddings (K_q, D) and scores (K_q, N_old+N_nov) = temperature * cosine.
    """
    d = params.dim
    parts = [T.as_tensor(p) for p in (p_old, p_nov) if p is not None and np.shape(_data(p))[0] > 0]
    queries = T.as_tensor(queries)
    for t in parts + [queries]:
        if t.ndim != 2 or t.shape[1] != d:
            raise ShapeError(f"expected (rows, {d}) inputs, got {t.shape}")
    if not parts:
        raise ShapeError("pqam needs at least one prototype")
    protos = parts[0] if len(parts) == 1 else T.concat(parts, axis=0)
    nc = protos.shape[0]
    kq = queries.shape[0]
    if kq == 0:
        raise ShapeError("pqam needs at least one query")
    stack = T.concat([T.broadcast_to(T.reshape(protos, (1, nc, d)), (kq, nc, d)),
                      T.reshape(queries, (kq, 1, d))], axis=1)
    out = attention_block(params, stack)
    p_upd = out[:, :nc, :]
    q_upd = out[:, nc, :]
    cos = T.matmul(T.reshape(T.l2_normalize(q_upd), (kq, 1, d)), T.swap_last(T.l2_normalize(p_upd)))
    scores = T.reshape(cos, (kq, nc)) * temperature
    return p_upd, q_upd, scores


def _data(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def consolidate_prototypes(stacks, mode: str = "mean") -> np.ndarray:
    """Collapse per-query prototype stacks (K_q, N, D) into one (N, D) set."""
    arr = _data(stacks)
    if arr.ndim != 3 or arr.shape[0] == 0:
        raise InvalidInputError("need at least one per-query prototype stack")
    if mode == "mean":
        return arr.mean(axis=0)
    if mode == "last":
        return arr[-1].copy()
    raise InvalidInputError(f"unknown consolidation mode {mode!r}")


# ---------------------------------------------------------------------------
# pseudo-incremental training
# ---------------------------------------------------------------------------

def episode_loss(pan: PANParams, ep: EpisodeBatch) -> Tensor:
    """CE of PQAM scores on an episode's queries.

    Pseudo-base prototypes are plain support means; pseudo-novel prototypes come from the APGM.
    """
    d = pan.dim
    p_old = ep.support_base.mean(axis=1) if ep.support_base.shape[0] else None
    p_nov = None
    if ep.support_novel.shape[0]:
        k = ep.support_novel.shape[1]
        p_nov = apgm_forward(pan.apgm, ep.support_novel.reshape(-1, d), k)
    _, _, scores = pqam_forward(pan.pqam, p_old, p_nov, ep.query, pan.temperature)
    return T.cross_entropy(scores, ep.query_labels)


@dataclass
class PANTrainingLog:
    episode_losses: List[float] = field(default_factory=list)
    epoch_losses: List[float] = field(default_factory=list)
    episodes_per_epoch: List[int] = field(default_factory=list)


def train_pan(pan: PANParams, d01: LabeledSet, d02: LabeledSet, cfg: EpisodeConfig,
              seed: int) -> PANTrainingLog:
    """Episodic SGD on pseudo-incremental episodes; one epoch is one full pass over the data.

    ``d01``/``d02`` are embeddings from the pre-trained extractor. Parameters are
    updated in place.
    """
    rng = np.random.default_rng(seed)
    state = OptimizerState(kind="sgd", learning_rate=cfg.learning_rate)
    params = pan.parameters()
    log = PANTrainingLog()
    for _ in range(cfg.epochs):
        losses = []
        for ep in episode_pass(d01, d02, cfg, rng):
            for p in params:
                p.grad = None
            loss = episode_loss(pan, ep)
            loss.backward()
            for p in params:
                if p.grad is None:
                    p.grad = np.zeros_like(p.data)
            sgd_step(params, None, state)
            losses.append(loss.item())
        log.episode_losses.extend(losses)
        log.epoch_losses.append(float(np.mean(losses)) if losses else float("nan"))
        log.episodes_per_epoch.append(len(losses))
    return log


def mean_episode_loss(pan: PANParams, episodes: List[EpisodeBatch]) -> float:
    with no_grad():
        return float(np.mean([episode_loss(pan, ep).item() for ep in episodes]))
