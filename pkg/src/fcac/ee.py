"""
Embedding extractor: a small ResNet over log mel-spectrograms.

Layout: 3x3 stem conv -> 4 stages x 2 residual blocks (widths w, 2w, 4w, 8w,
stride 2 at each stage entry with a 1x1 projection shortcut) -> global
average pool -> FC (embedding, D) -> classification head. The head is only
used while training and is dropped by ``freeze``.
"""
from __future__ import annotations

import hashlib
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import tensor as T
from .dsp import LogMelSpectrogram
from .embeddings import Embedding
from .errors import InvalidInputError, ShapeError, StateError
from .optim import Optimizer
from .tensor import Tensor, no_grad

NUM_STAGES = 4
BLOCKS_PER_STAGE = 2


@dataclass
class EEConfig:
    num_classes: int
    embedding_dim: int = 512
    n_mels: int = 128
    base_width: int = 64
    width_scale: float = 1.0
    blocks_per_stage: int = BLOCKS_PER_STAGE

    def __post_init__(self):
        if self.embedding_dim < 2:
            raise InvalidInputError("embedding_dim must be ≥ 2")
        if self.num_classes < 1:
            raise InvalidInputError("num_classes must be ≥ 1")
        if self.width_scale <= 0:
            raise InvalidInputError("width_scale must be positive")
        if self.blocks_per_stage != BLOCKS_PER_STAGE:
            raise InvalidInputError("the extractor uses exactly 2 blocks per stage (8 blocks)")

    @property
    def widths(self) -> Tuple[int, ...]:
        w = max(1, int(round(self.base_width * self.width_scale)))
        return tuple(w * 2 ** s for s in range(NUM_STAGES))

    @classmethod
    def desk(cls, num_classes: int, **overrides) -> "EEConfig":
        """CI-sized preset: width_scale 0.125, D=16, 32 mel bins."""
        kw = dict(width_scale=0.125, embedding_dim=16, n_mels=32)
        kw.update(overrides)
        return cls(num_classes=num_classes, **kw)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainingLog:
    epochs: List[dict] = field(default_factory=list)

    @property
    def final_accuracy(self) -> Optional[float]:
        return self.epochs[-1]["accuracy"] if self.epochs else None


def _uniform(rng: np.random.Generator, shape, bound: float) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape)


class EmbeddingExtractor:
    def __init__(self, config: EEConfig, params: "OrderedDict[str, Tensor]", frozen: bool = False):
        self.config = config
        self.params = params
        self.frozen = False
        if frozen:
            self.freeze()

    # -- structure -------------------------------------------------------
    @staticmethod
    def block_names(stage: int, block: int) -> Tuple[str, str, Optional[str]]:
        pre = f"stage{stage}.block{block}"
        proj = f"{pre}.proj" if block == 0 else None
        return f"{pre}.conv1", f"{pre}.conv2", proj

    def parameters(self) -> List[Tensor]:
        return list(self.params.values())

    def param_hash(self) -> str:
        h = hashlib.sha256()
        for name, p in self.params.items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()

    # -- forward -----------------------------------------------------------
    def features(self, x: Tensor) -> Tensor:
        """(B, 1, T, M) -> (B, D) embedding (FC output)."""
        p = self.params
        h = T.relu(T.conv2d(x, p["stem"], stride=1, pad=1))
        for s in range(NUM_STAGES):
            for b in range(BLOCKS_PER_STAGE):
                h = self.residual_block(h, s, b)
        pooled = T.global_avg_pool(h)
        return T.linear(pooled, p["fc.weight"], p["fc.bias"])

    def residual_block(self, h: Tensor, stage: int, block: int) -> Tensor:
        """relu(conv2(relu(conv1(h))) + shortcut(h)); the first block of a stage downsamples by 2."""
        c1, c2, proj = self.block_names(stage, block)
        stride = 2 if block == 0 else 1
        y = T.relu(T.conv2d(h, self.params[c1], stride=stride, pad=1))
        y = T.conv2d(y, self.params[c2], stride=1, pad=1)
        shortcut = h if proj is None else T.conv2d(h, self.params[proj], stride=stride, pad=0)
        return T.relu(y + shortcut)

    def logits(self, x: Tensor) -> Tensor:
        if "head.weight" not in self.params:
            raise StateError("classification head was removed when the extractor was frozen")
        emb = self.features(x)
        return T.linear(emb, self.params["head.weight"], self.params["head.bias"])

    def _input(self, spects: Sequence[LogMelSpectrogram]) -> Tensor:
        m = self.config.n_mels
        for s in spects:
            if s.values.shape[1] != m:
                raise ShapeError(f"spectrogram has {s.values.shape[1]} mel bins, extractor expects {m}")
        return Tensor(np.stack([s.values for s in spects])[:, None, :, :])

    def embed(self, spect: LogMelSpectrogram, clip_id: str = "", class_id: Optional[int] = None) -> Embedding:
        with no_grad():
            vec = self.features(self._input([spect])).data[0].copy()
        return Embedding(vec, clip_id, class_id)

    def embed_matrix(self, spects: Sequence[LogMelSpectrogram], batch_size: int = 32) -> np.ndarray:
        """Embeddings for many spectrograms; equal-length runs are batched together."""
        out = np.zeros((len(spects), self.config.embedding_dim))
        with no_grad():
            for idx in _equal_shape_batches(spects, batch_size):
                out[idx] = self.features(self._input([spects[i] for i in idx])).data
        return out

    # -- state -------------------------------------------------------------
    def freeze(self) -> None:
        """Drop the classification head and make every parameter read-only. Idempotent."""
        self.params.pop("head.weight", None)
        self.params.pop("head.bias", None)
        for p in self.params.values():
            p.requires_grad = False
            p.grad = None
            p.data.flags.writeable = False
        self.frozen = True

    def reset_head(self, num_classes: int, seed: int) -> None:
        """Attach a fresh head (used before the second, full base-session training phase)."""
        if self.frozen:
            raise StateError("cannot modify a frozen extractor")
        rng = np.random.default_rng(seed)
        d = self.config.embedding_dim
        bound = 1.0 / np.sqrt(d)
        self.params["head.weight"] = Tensor(_uniform(rng, (num_classes, d), bound), requires_grad=True)
        self.params["head.bias"] = Tensor(_uniform(rng, (num_classes,), bound), requires_grad=True)
        self.config.num_classes = num_classes


def _equal_shape_batches(spects: Sequence[LogMelSpectrogram], batch_size: int) -> List[List[int]]:
    groups: Dict[tuple, List[int]] = {}
    for i, s in enumerate(spects):
        groups.setdefault(s.values.shape, []).append(i)
    batches = []
    for idx in groups.values():
        for start in range(0, len(idx), batch_size):
            batches.append(idx[start:start + batch_size])
    return batches


def build_ee(config: EEConfig, seed: int) -> EmbeddingExtractor:
    """Fresh extractor with fan-in-scaled uniform init (He bound for convs, 1/sqrt(fan_in) for linears)."""
    rng = np.random.default_rng(seed)
    widths = config.widths
    params: "OrderedDict[str, Tensor]" = OrderedDict()

    def conv(name, cout, cin, k):
        bound = np.sqrt(6.0 / (cin * k * k))
        params[name] = Tensor(_uniform(rng, (cout, cin, k, k), bound), requires_grad=True)

    conv("stem", widths[0], 1, 3)
    cin = widths[0]
    for s, cout in enumerate(widths):
        for b in range(BLOCKS_PER_STAGE):
            c1, c2, proj = EmbeddingExtractor.block_names(s, b)
            conv(c1, cout, cin if b == 0 else cout, 3)
            conv(c2, cout, cout, 3)
            if proj is not None:
                conv(proj, cout, cin, 1)
        cin = cout
    d = config.embedding_dim
    bound = 1.0 / np.sqrt(cin)
    params["fc.weight"] = Tensor(_uniform(rng, (d, cin), bound), requires_grad=True)
    params["fc.bias"] = Tensor(_uniform(rng, (d,), bound), requires_grad=True)
    bound = 1.0 / np.sqrt(d)
    params["head.weight"] = Tensor(_uniform(rng, (config.num_classes, d), bound), requires_grad=True)
    params["head.bias"] = Tensor(_uniform(rng, (config.num_classes,), bound), requires_grad=True)
    return EmbeddingExtractor(config, params)


def train_ee(
    ee: EmbeddingExtractor,
    spects: Sequence[LogMelSpectrogram],
    labels: Sequence[int],
    epochs: int,
    lr: float = 1e-3,
    batch_size: int = 16,
    seed: int = 0,
) -> TrainingLog:
    """Supervised cross-entropy training with Adam. Logs per-epoch mean loss and train accuracy."""
    if ee.frozen:
        raise StateError("cannot train a frozen extractor")
    labels = np.asarray(labels, dtype=np.int64)
    if len(spects) != labels.shape[0]:
        raise ShapeError(f"{len(spects)} spectrograms but {labels.shape[0]} labels")
    nc = ee.config.num_classes
    if labels.size and (labels.min() < 0 or labels.max() >= nc):
        raise InvalidInputError(f"labels must lie in [0, {nc})")
    rng = np.random.default_rng(seed)
    opt = Optimizer(ee.parameters(), kind="adam", lr=lr)
    log = TrainingLog()
    n = len(spects)
    for epoch in range(epochs):
        order = rng.permutation(n)
        total_loss, correct = 0.0, 0
        for start in range(0, n, batch_size):
            chunk = order[start:start + batch_size]
            batch = [spects[i] for i in chunk]
            for sub in _equal_shape_batches(batch, len(batch)):
                opt.zero_grad()
                x = ee._input([batch[i] for i in sub])
                y = labels[chunk[sub]]
                logits = ee.logits(x)
                loss = T.cross_entropy(logits, y)
                loss.backward()
                opt.step()
                total_loss += loss.item() * len(sub)
                correct += int((logits.data.argmax(axis=1) == y).sum())
        log.epochs.append({"epoch": epoch + 1, "loss": total_loss / n, "accuracy": correct / n})
    return log


def evaluate_ee(ee: EmbeddingExtractor, spects: Sequence[LogMelSpectrogram], labels: Sequence[int]) -> Tuple[float, float]:
    """(mean CE loss, accuracy) of the classification head, without touching parameters."""
    labels = np.asarray(labels, dtype=np.int64)
    total, correct = 0.0, 0
    with no_grad():
        for idx in _equal_shape_batches(spects, 32):
            logits = ee.logits(ee._input([spects[i] for i in idx]))
            total += T.cross_entropy(logits, labels[idx]).item() * len(idx)
            correct += int((logits.data.argmax(axis=1) == labels[idx]).sum())
    return total / len(spects), correct / len(spects)
