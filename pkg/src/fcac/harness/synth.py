"""
Desk-scale synthetic datasets written to disk with a manifest.

``gaussian_embeddings``: class means on a sphere of radius ``radius`` (kept at
least ``min_mean_distance`` sigmas apart), isotropic noise with
``sigma = radius / separation``; written in the text embedding format.

``audio_tones``: each class is a fundamental frequency plus a fixed per-class
harmonic profile; clips get a random phase, a small pitch jitter and white
noise at ``snr_db``; written as 16-bit PCM WAVs.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from ..dsp import AudioClip, write_wav
from ..embeddings import Embedding, save_text
from ..errors import ConfigError

KINDS = ("gaussian_embeddings", "audio_tones")


@dataclass
class SynthSpec:
    kind: str = "gaussian_embeddings"
    num_base_classes: int = 10
    num_sessions: int = 2
    n_way: int = 5
    k_shot: int = 5
    k_query: int = 15
    base_train_per_class: int = 40
    eval_per_class: int = 20
    pseudo_novel_classes: int = 0  # 0 -> not pinned in the manifest
    # gaussian_embeddings
    dim: int = 16
    radius: float = 1.0
    separation: float = 10.0
    min_mean_distance: float = 8.0
    # audio_tones
    sample_rate: int = 16000
    duration_s: float = 1.0
    snr_db: float = 20.0
    f0_min: float = 150.0
    f0_ratio: float = 1.19
    n_harmonics: int = 4
    pitch_jitter: float = 0.01

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown synthetic kind {self.kind!r}")
        for name in ("num_base_classes", "n_way", "k_shot", "base_train_per_class", "eval_per_class"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be ≥ 1")
        if self.num_sessions < 0 or self.k_query < 0:
            raise ConfigError("num_sessions and k_query must be ≥ 0")
        if not 0 <= self.pseudo_novel_classes < self.num_base_classes:
            raise ConfigError("pseudo_novel_classes must be smaller than num_base_classes")
        if self.kind == "gaussian_embeddings" and (self.radius <= 0 or self.separation <= 0 or self.dim < 2):
            raise ConfigError("radius and separation must be positive and dim ≥ 2")
        if self.kind == "audio_tones" and (self.sample_rate <= 0 or self.duration_s <= 0):
            raise ConfigError("sample_rate and duration must be positive")

    @property
    def num_classes(self) -> int:
        return self.num_base_classes + self.num_sessions * self.n_way

    @property
    def sigma(self) -> float:
        return self.radius / self.separation


def _layout(spec: SynthSpec) -> List[Tuple[int, List[int]]]:
    """(session index, class ids) for every session."""
    out = [(0, list(range(spec.num_base_classes)))]
    start = spec.num_base_classes
    for s in range(spec.num_sessions):
        out.append((s + 1, list(range(start, start + spec.n_way))))
        start += spec.n_way
    return out


def _sphere_means(rng: np.random.Generator, spec: SynthSpec, max_tries: int = 100000) -> np.ndarray:
    means: List[np.ndarray] = []
    min_d = spec.min_mean_distance * spec.sigma
    tries = 0
    while len(means) < spec.num_classes:
        tries += 1
        if tries > max_tries:
            raise ConfigError("could not place class means that far apart; lower min_mean_distance")
        v = rng.normal(size=spec.dim)
        v *= spec.radius / np.linalg.norm(v)
        if all(np.linalg.norm(v - m) >= min_d for m in means):
            means.append(v)
    return np.stack(means)


def _tone(rng: np.random.Generator, spec: SynthSpec, f0: float, profile: np.ndarray) -> np.ndarray:
    n = int(round(spec.sample_rate * spec.duration_s))
    t = np.arange(n) / spec.sample_rate
    f = f0 * (1.0 + rng.uniform(-spec.pitch_jitter, spec.pitch_jitter))
    x = np.zeros(n)
    for h, amp in enumerate(profile, start=1):
        if f * h < spec.sample_rate / 2:
            x += amp * np.sin(2 * np.pi * f * h * t + rng.uniform(0, 2 * np.pi))
    x *= 0.5 / np.max(np.abs(x))
    noise_rms = np.sqrt(np.mean(x ** 2)) * 10 ** (-spec.snr_db / 20)
    x += rng.normal(0.0, noise_rms, n)
    return np.clip(x, -1.0, 1.0)


def tone_bank(spec: SynthSpec, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Per-class fundamentals (geometric in ``f0_ratio``) and harmonic amplitude profiles."""
    f0s = spec.f0_min * spec.f0_ratio ** np.arange(spec.num_classes)
    profiles = rng.uniform(0.2, 1.0, size=(spec.num_classes, spec.n_harmonics))
    profiles[:, 0] = 1.0
    return f0s, profiles


def tone_clips(spec: SynthSpec, per_class: int, seed: int) -> List[AudioClip]:
    """In-memory tone clips, ``per_class`` for each of ``spec.num_classes`` classes, grouped by class."""
    rng = np.random.default_rng(seed)
    f0s, profiles = tone_bank(spec, rng)
    return [AudioClip(_tone(rng, spec, f0s[c], profiles[c]), spec.sample_rate, f"c{c}_{j}", c)
            for c in range(spec.num_classes) for j in range(per_class)]


def gen_synthetic(spec: SynthSpec, out_dir, seed: int) -> Path:
    """Write the dataset and ``manifest.json`` under ``out_dir``; returns the manifest path."""
    spec.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    audio = spec.kind == "audio_tones"
    if audio:
        (out / "audio").mkdir(exist_ok=True)
        f0s, profiles = tone_bank(spec, rng)
    else:
        means = _sphere_means(rng, spec)
    records: List[Embedding] = []

    def make(cid: str, label: int) -> Dict:
        if audio:
            x = _tone(rng, spec, f0s[label], profiles[label])
            rel = f"audio/{cid}.wav"
            write_wav(out / rel, AudioClip(x, spec.sample_rate, cid, label))
            return {"id": cid, "label": label, "path": rel}
        records.append(Embedding(means[label] + rng.normal(0.0, spec.sigma, spec.dim), cid, label))
        return {"id": cid, "label": label}

    sessions = []
    for index, classes in _layout(spec):
        train, evals = [], []
        for c in classes:
            if index == 0:
                train += [make(f"c{c}_t{j}", c) for j in range(spec.base_train_per_class)]
            else:
                for j in range(spec.k_shot):
                    train.append({**make(f"c{c}_s{j}", c), "role": "support"})
                for j in range(spec.k_query):
                    item = make(f"c{c}_q{j}", c)
                    item["label"] = None  # incremental queries are unlabeled
                    train.append({**item, "role": "query"})
            evals += [make(f"c{c}_e{j}", c) for j in range(spec.eval_per_class)]
        sessions.append({"classes": classes, "train": train, "eval": evals})

    doc = {
        "format": "fcac-manifest",
        "version": 1,
        "kind": "audio" if audio else "embeddings",
        "n_way": spec.n_way,
        "k_shot": spec.k_shot,
        "base": sessions[0],
        "sessions": sessions[1:],
        "synth": {"seed": seed, **asdict(spec)},
    }
    if spec.pseudo_novel_classes:
        order = np.random.default_rng(seed + 1).permutation(spec.num_base_classes)
        doc["base"]["pseudo_novel_classes"] = sorted(int(c) for c in order[:spec.pseudo_novel_classes])
    if not audio:
        save_text(out / "embeddings.tsv", records)
        doc["embedding_file"] = "embeddings.tsv"
    path = out / "manifest.json"
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return path
