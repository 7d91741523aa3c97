"""
The session protocol: base-session training, incremental expansion and
cumulative evaluation.

Base session, in order: pre-train the extractor on the pseudo-base classes,
train the PAN on pseudo-incremental episodes, train the extractor on all base
classes and freeze it, then build the base prototype store. Manifests of kind
``embeddings`` skip the extractor steps and read vectors from the embedding
file. Each incremental session expands the store (PAN or naive means) and is
evaluated on the union of the evaluation sets of every session so far.

Every random draw comes from one root seed via per-stage child seeds.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..dsp import DSPConfig, LogMelSpectrogram, log_mel, read_feature_cache, read_wav, write_feature_cache
from ..ee import EEConfig, EmbeddingExtractor, TrainingLog, build_ee, train_ee
from ..embeddings import EmbeddingProvider, load_precomputed
from ..episodes import EpisodeConfig, LabeledSet
from ..errors import ConfigError, FcacError, ProtocolError
from ..pan import PANParams, train_pan
from ..store import PrototypeStore, build_base, expand_session, naive_expand, predict_batch
from .config import ProtocolConfig, default_pseudo_novel_count, seeds_for
from .manifest import BaseSplit, ClipRef, Manifest, SessionDataset, load_manifest, stdu_split
from .metrics import (PARTITIONS, aa, confusion_matrix, partition_accuracies, partition_counts, pd,
                      storage_elements)

STAGES = ["split", "ee_init", "ee_pretrain", "ee_head", "ee_train", "pan_init", "pan_train", "sessions"]


@dataclass
class SessionRecord:
    index: int
    new_classes: List[int]
    store_size: int
    accuracy: Dict[str, Optional[float]]
    counts: Dict[str, int]
    alt_accuracy: Optional[Dict[str, Optional[float]]] = None
    update_seconds: Optional[float] = None  # wall clock of the store update; kept out of report.json

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "new_classes": list(self.new_classes),
            "store_size": self.store_size,
            "accuracy": dict(self.accuracy),
            "counts": dict(self.counts),
            "alt_accuracy": None if self.alt_accuracy is None else dict(self.alt_accuracy),
        }


@dataclass
class BaseState:
    store: PrototypeStore
    pan: Optional[PANParams]
    ee: Optional[EmbeddingExtractor]
    split: BaseSplit
    ee_logs: Dict[str, TrainingLog] = field(default_factory=dict)
    pan_epoch_losses: List[float] = field(default_factory=list)


@dataclass
class ProtocolResult:
    config: dict
    seeds: Dict[str, int]
    split: BaseSplit
    sessions: List[SessionRecord]
    store: PrototypeStore
    pan: Optional[PANParams]
    ee: Optional[EmbeddingExtractor]
    eval_mode: str
    alt_eval_mode: Optional[str]
    confusion_classes: List[int] = field(default_factory=list)
    confusion: Optional[np.ndarray] = None
    error: Optional[str] = None
    pan_epoch_losses: List[float] = field(default_factory=list)

    def accuracy_series(self, partition: str, alt: bool = False) -> List[Optional[float]]:
        key = "alt_accuracy" if alt else "accuracy"
        return [getattr(s, key)[partition] if getattr(s, key) else None for s in self.sessions]

    def aa(self, partition: str, alt: bool = False) -> Optional[float]:
        vals = [a for a in self.accuracy_series(partition, alt) if a is not None]
        return aa(vals) if vals else None

    def pd(self, partition: str, alt: bool = False) -> Optional[float]:
        accs = self.accuracy_series(partition, alt)
        try:
            return pd(accs, partition)
        except FcacError:
            return None

    @property
    def att_seconds(self) -> Optional[float]:
        times = [s.update_seconds for s in self.sessions if s.update_seconds is not None]
        return float(np.mean(times)) if times else None

    @property
    def ss_elements(self) -> int:
        return storage_elements(len(self.store), self.store.dim)


class Embedder:
    """Maps clip ids to embedding vectors, from an embedding file or through a frozen extractor."""

    def __init__(self, manifest: Manifest, cfg: ProtocolConfig):
        self.manifest = manifest
        self.cfg = cfg
        self.refs: Dict[str, ClipRef] = {r.id: r for s in manifest.sessions for r in s.train + s.eval}
        self.provider: Optional[EmbeddingProvider] = None
        self.ee: Optional[EmbeddingExtractor] = None
        self._spects: Dict[str, LogMelSpectrogram] = {}
        self.dsp = DSPConfig(frame_ms=cfg.dsp.frame_ms, hop_ms=cfg.dsp.hop_ms, n_mels=cfg.ee.n_mels,
                             fmin=cfg.dsp.fmin, fmax=cfg.dsp.fmax)
        if manifest.kind == "embeddings":
            self.provider = load_precomputed(manifest.embedding_file)
            missing = [i for i in self.refs if i not in self.provider]
            if missing:
                raise ProtocolError(f"embedding file lacks {len(missing)} manifest ids, e.g. {missing[:3]}")

    @property
    def audio(self) -> bool:
        return self.manifest.kind == "audio"

    def spectrogram(self, clip_id: str) -> LogMelSpectrogram:
        if clip_id not in self._spects:
            self._spects[clip_id] = featurize_clip(self.refs[clip_id], self.dsp, self.cfg.feature_cache)
        return self._spects[clip_id]

    def spectrograms(self, ids: Sequence[str]) -> List[LogMelSpectrogram]:
        return [self.spectrogram(i) for i in ids]

    def vectors(self, ids: Sequence[str]) -> np.ndarray:
        ids = list(ids)
        if self.provider is not None:
            return self.provider.matrix(ids).astype(np.float64) if ids else np.zeros((0, self.provider.dim))
        if self.ee is None:
            raise ProtocolError("audio manifest needs a trained extractor before embedding")
        return self.ee.embed_matrix(self.spectrograms(ids))


def featurize_clip(ref: ClipRef, dsp: DSPConfig, cache_dir: Optional[str] = None) -> LogMelSpectrogram:
    """Log-mel of one clip, read from or written to ``cache_dir/<id>.feat`` when a cache is set.

    Values are always rounded to float32, the precision of the cache format,
    so a run that fills the cache and a run that reads it see identical input.
    """
    if cache_dir is not None:
        path = Path(cache_dir) / f"{ref.id}.feat"
        if path.is_file():
            spect = read_feature_cache(path, dsp.frame_ms, dsp.hop_ms)
            if spect.n_mels == dsp.n_mels:
                return spect
    spect = log_mel(read_wav(ref.path, ref.id, ref.label), dsp)
    spect.values = spect.values.astype(np.float32).astype(np.float64)
    if cache_dir is not None:
        Path(cache_dir).mkdir(parents=True, exist_ok=True)
        write_feature_cache(Path(cache_dir) / f"{ref.id}.feat", spect)
    return spect


def _labeled(refs: Sequence[ClipRef], classes: Sequence[int]) -> Tuple[List[str], np.ndarray]:
    keep = set(classes)
    chosen = [r for r in refs if r.label in keep]
    return [r.id for r in chosen], np.array([r.label for r in chosen], dtype=np.int64)


def choose_split(manifest: Manifest, cfg: ProtocolConfig, seed: int) -> BaseSplit:
    if manifest.pinned_split is not None:
        return manifest.pinned_split
    base = sorted(manifest.base.labels)
    if len(base) < 2:
        raise ConfigError("the base session needs at least two classes to split")
    count = cfg.pseudo_novel_classes or default_pseudo_novel_count(len(base))
    if count >= len(base):
        raise ConfigError(f"pseudo_novel_classes={count} leaves no pseudo-base classes")
    return stdu_split(base, count, seed)


def _ee_config(cfg: ProtocolConfig, num_classes: int) -> EEConfig:
    return EEConfig(num_classes=num_classes, embedding_dim=cfg.ee.embedding_dim, n_mels=cfg.ee.n_mels,
                    base_width=cfg.ee.base_width, width_scale=cfg.ee.width_scale)


def _train_extractor(embedder: Embedder, ee: EmbeddingExtractor, ids: List[str], labels: np.ndarray,
                     classes: Sequence[int], epochs: int, seed: int) -> TrainingLog:
    index = {c: i for i, c in enumerate(sorted(classes))}
    mapped = np.array([index[int(c)] for c in labels], dtype=np.int64)
    return train_ee(ee, embedder.spectrograms(ids), mapped, epochs, lr=embedder.cfg.ee.lr,
                    batch_size=embedder.cfg.ee.batch_size, seed=seed)


def train_base(manifest: Manifest, embedder: Embedder, cfg: ProtocolConfig, seeds: Dict[str, int]) -> BaseState:
    """Base-session steps: pre-train EE, train PAN, train and freeze EE, build base store."""
    split = choose_split(manifest, cfg, seeds["split"])
    base_refs = manifest.base.train
    logs: Dict[str, TrainingLog] = {}
    ee = None
    if embedder.audio:
        ids01, y01 = _labeled(base_refs, split.pseudo_base)
        ee = build_ee(_ee_config(cfg, len(split.pseudo_base)), seeds["ee_init"])
        logs["pretrain"] = _train_extractor(embedder, ee, ids01, y01, split.pseudo_base,
                                            cfg.ee.pretrain_epochs, seeds["ee_pretrain"])
        embedder.ee = ee

    pan, pan_losses = None, []
    if cfg.mode == "pan":
        d01 = LabeledSet(*_with_vectors(embedder, *_labeled(base_refs, split.pseudo_base)))
        d02 = LabeledSet(*_with_vectors(embedder, *_labeled(base_refs, split.pseudo_novel)))
        pan = PANParams.init(d01.dim, seeds["pan_init"], cfg.temperature, cfg.pan_bias)
        ep_cfg = EpisodeConfig(cfg.n_way, cfg.k_shot, cfg.k_query, cfg.pan_epochs, cfg.pan_lr)
        pan_losses = train_pan(pan, d01, d02, ep_cfg, seeds["pan_train"]).epoch_losses

    if embedder.audio:
        classes = sorted(manifest.base.labels)
        ee.reset_head(len(classes), seeds["ee_head"])
        ids0, y0 = _labeled(base_refs, classes)
        logs["train"] = _train_extractor(embedder, ee, ids0, y0, classes, cfg.ee.train_epochs, seeds["ee_train"])
        ee.freeze()

    ids, labels = _labeled(base_refs, sorted(manifest.base.labels))
    store = build_base(embedder.vectors(ids), labels)
    return BaseState(store, pan, ee, split, logs, pan_losses)


def _with_vectors(embedder: Embedder, ids: List[str], labels: np.ndarray):
    return ids, labels, embedder.vectors(ids)


def session_inputs(session: SessionDataset, cfg: ProtocolConfig, seed: int) -> Tuple[List[str], np.ndarray, List[str]]:
    """(support ids, support labels, query ids) for one incremental session.

    With roles in the manifest they are used as given. Otherwise each class's
    labeled items are shuffled; the first K are support, the next up to K_q
    are queries, and unlabeled items are queries as well.
    """
    if session.has_roles:
        sup = session.support()
        return [r.id for r in sup], np.array([r.label for r in sup], dtype=np.int64), [r.id for r in session.queries()]
    rng = np.random.default_rng([seed, session.index])
    s_ids, s_labels, q_ids = [], [], []
    for c in sorted(session.labels):
        refs = [r for r in session.train if r.label == c]
        order = rng.permutation(len(refs))
        if len(refs) < cfg.k_shot:
            raise ProtocolError(f"session {session.index}: class {c} has {len(refs)} items, need K={cfg.k_shot}")
        s_ids += [refs[i].id for i in order[:cfg.k_shot]]
        s_labels += [c] * cfg.k_shot
        q_ids += [refs[i].id for i in order[cfg.k_shot:cfg.k_shot + cfg.k_query]]
    q_ids += [r.id for r in session.train if r.label is None]
    return s_ids, np.array(s_labels, dtype=np.int64), q_ids


def expand(store: PrototypeStore, pan: Optional[PANParams], embedder: Embedder, session: SessionDataset,
           cfg: ProtocolConfig, seed: int) -> Tuple[PrototypeStore, float]:
    """Grow the store by one session; returns the new store and the update's wall-clock seconds.

    Embedding of support and query clips happens before the clock starts.
    """
    s_ids, s_labels, q_ids = session_inputs(session, cfg, seed)
    support = embedder.vectors(s_ids)
    queries = embedder.vectors(q_ids) if q_ids else support
    start = time.perf_counter()
    if cfg.mode == "naive":
        new = naive_expand(store, support, s_labels)
    else:
        new = expand_session(store, pan, support, s_labels, queries, cfg.consolidation)
    return new, time.perf_counter() - start


def evaluation_set(manifest: Manifest, upto: int) -> Tuple[List[str], np.ndarray]:
    refs = [r for s in manifest.sessions[:upto + 1] for r in s.eval]
    return [r.id for r in refs], np.array([r.label for r in refs], dtype=np.int64)


def evaluate(store: PrototypeStore, pan: Optional[PANParams], manifest: Manifest, embedder: Embedder,
             mode: str, upto: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Predictions and labels on the cumulative evaluation union of sessions 0..upto."""
    upto = store.session_index if upto is None else upto
    ids, labels = evaluation_set(manifest, upto)
    if not ids:
        return np.zeros(0, dtype=np.int64), labels
    return predict_batch(store, embedder.vectors(ids), mode, pan), labels


def _record(store: PrototypeStore, pan: Optional[PANParams], manifest: Manifest, embedder: Embedder,
            modes: Tuple[str, Optional[str]], new_classes: List[int], seconds: Optional[float]):
    base = sorted(manifest.base.labels)
    novel = sorted(c for s in manifest.sessions[1:store.session_index + 1] for c in s.labels)
    preds, labels = evaluate(store, pan, manifest, embedder, modes[0])
    rec = SessionRecord(store.session_index, new_classes, len(store),
                        partition_accuracies(preds, labels, base, novel),
                        partition_counts(labels, base, novel), update_seconds=seconds)
    if modes[1] is not None:
        alt, _ = evaluate(store, pan, manifest, embedder, modes[1])
        rec.alt_accuracy = partition_accuracies(alt, labels, base, novel)
    return rec, preds, labels


def eval_modes(cfg: ProtocolConfig) -> Tuple[str, Optional[str]]:
    """Primary and comparison evaluation modes; naive stores have no PAN, so they score plainly."""
    if cfg.mode == "naive":
        return "plain", None
    alt = {"plain": "pqam", "pqam": "plain"}[cfg.eval_mode]
    return cfg.eval_mode, alt if cfg.compare_eval_modes else None


def run_sessions(manifest: Manifest, embedder: Embedder, cfg: ProtocolConfig, seeds: Dict[str, int],
                 state: BaseState, stop: Optional[int] = None,
                 on_session: Optional[Callable[[PrototypeStore], None]] = None) -> ProtocolResult:
    """Evaluate the current store, then expand and evaluate each later session up to ``stop``.

    A failing session ends the loop; the result keeps the sessions completed so
    far and carries the error message.
    """
    modes = eval_modes(cfg)
    store = state.store
    last = len(manifest.sessions) - 1 if stop is None else min(stop, len(manifest.sessions) - 1)
    new0 = sorted(manifest.sessions[store.session_index].labels) if store.session_index == 0 else []
    result = ProtocolResult(cfg.to_dict(), seeds, state.split, [], store, state.pan, state.ee, modes[0], modes[1],
                            pan_epoch_losses=list(state.pan_epoch_losses))
    preds = labels = None
    try:
        rec, preds, labels = _record(store, state.pan, manifest, embedder, modes, new0, None)
        result.sessions.append(rec)
        for session in manifest.sessions[store.session_index + 1:last + 1]:
            store, seconds = expand(store, state.pan, embedder, session, cfg, seeds["sessions"])
            rec, preds, labels = _record(store, state.pan, manifest, embedder, modes, sorted(session.labels), seconds)
            result.sessions.append(rec)
            result.store = store
            if on_session is not None:
                on_session(store)
    except FcacError as exc:
        result.error = f"session {store.session_index + 1}: {exc}"
    result.store = store
    if preds is not None:
        result.confusion_classes = list(store.class_ids)
        result.confusion = confusion_matrix(preds, labels, store.class_ids)
    return result


def prepare(cfg: ProtocolConfig) -> Tuple[Manifest, Embedder, Dict[str, int]]:
    if cfg.manifest is None:
        raise ConfigError("no manifest given (set 'manifest' in the config)")
    manifest = load_manifest(cfg.manifest)
    return manifest, Embedder(manifest, cfg), seeds_for(cfg.seed, STAGES)


def run_protocol(cfg: ProtocolConfig, stop: Optional[int] = None) -> ProtocolResult:
    """Base-session training followed by every incremental session."""
    manifest, embedder, seeds = prepare(cfg)
    state = train_base(manifest, embedder, cfg, seeds)
    return run_sessions(manifest, embedder, cfg, seeds, state, stop)


__all__ = ["PARTITIONS", "run_protocol", "train_base", "run_sessions", "prepare", "ProtocolResult",
           "SessionRecord", "BaseState", "Embedder", "evaluate", "session_inputs", "featurize_clip"]
