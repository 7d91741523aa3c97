"""Protocol configuration, loaded from a JSON file and overridable from the command line."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import List, Optional

from numpy.random import SeedSequence

from ..errors import ConfigError
from ..store import EVAL_MODES

MODES = ("pan", "naive")
CONSOLIDATION_MODES = ("mean", "last")


@dataclass
class EESettings:
    """Extractor size and training schedule (audio manifests only)."""

    embedding_dim: int = 16
    n_mels: int = 32
    base_width: int = 64
    width_scale: float = 0.125
    pretrain_epochs: int = 10
    train_epochs: int = 10
    lr: float = 1e-3
    batch_size: int = 16


@dataclass
class DSPSettings:
    frame_ms: float = 25.0
    hop_ms: float = 10.0
    fmin: float = 0.0
    fmax: Optional[float] = None


@dataclass
class ProtocolConfig:
    manifest: Optional[str] = None
    seed: int = 0
    mode: str = "pan"
    eval_mode: str = "pqam"
    compare_eval_modes: bool = True
    n_way: int = 5
    k_shot: int = 5
    k_query: int = 15
    pan_epochs: int = 20
    pan_lr: float = 2e-4
    temperature: float = 10.0
    pan_bias: bool = False
    consolidation: str = "mean"
    pseudo_novel_classes: Optional[int] = None  # None -> round(0.4 * |L0|)
    feature_cache: Optional[str] = None
    ee: EESettings = field(default_factory=EESettings)
    dsp: DSPSettings = field(default_factory=DSPSettings)

    def validate(self) -> "ProtocolConfig":
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.eval_mode not in EVAL_MODES:
            raise ConfigError(f"eval_mode must be one of {EVAL_MODES}, got {self.eval_mode!r}")
        if self.consolidation not in CONSOLIDATION_MODES:
            raise ConfigError(f"consolidation must be one of {CONSOLIDATION_MODES}")
        if min(self.n_way, self.k_shot, self.k_query) < 1:
            raise ConfigError("n_way, k_shot and k_query must be ≥ 1")
        if self.pan_epochs < 0 or self.pan_lr < 0 or self.temperature <= 0:
            raise ConfigError("pan_epochs and pan_lr must be ≥ 0 and temperature > 0")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must fit in an unsigned 64-bit integer")
        if self.pseudo_novel_classes is not None and self.pseudo_novel_classes < 1:
            raise ConfigError("pseudo_novel_classes must be ≥ 1")
        if min(self.ee.pretrain_epochs, self.ee.train_epochs) < 0 or self.ee.batch_size < 1:
            raise ConfigError("ee epochs must be ≥ 0 and batch_size ≥ 1")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


def _build(cls, raw: dict, where: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    try:
        return cls(**raw)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def config_from_dict(raw: dict) -> ProtocolConfig:
    raw = dict(raw)
    ee = _build(EESettings, raw.pop("ee", {}), "ee")
    dsp = _build(DSPSettings, raw.pop("dsp", {}), "dsp")
    cfg = _build(ProtocolConfig, raw, "config")
    cfg.ee, cfg.dsp = ee, dsp
    return cfg.validate()


def load_config(path) -> ProtocolConfig:
    """Read a JSON config; a relative ``manifest`` path is resolved against the config's directory."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    cfg = config_from_dict(raw)
    for name in ("manifest", "feature_cache"):
        value = getattr(cfg, name)
        if value is not None and not Path(value).is_absolute():
            setattr(cfg, name, str((path.parent / value).resolve()))
    return cfg


def apply_overrides(cfg: ProtocolConfig, **overrides) -> ProtocolConfig:
    """Set every non-None override on the config and re-validate."""
    for key, value in overrides.items():
        if value is not None:
            if not hasattr(cfg, key):
                raise ConfigError(f"unknown config key {key!r}")
            setattr(cfg, key, value)
    return cfg.validate()


def default_pseudo_novel_count(num_base_classes: int) -> int:
    return min(max(1, round(0.4 * num_base_classes)), num_base_classes - 1)


def seeds_for(seed: int, names: List[str]) -> dict:
    """Independent child seeds per named stage, all derived from one root seed."""
    children = SeedSequence(seed).spawn(len(names))
    return {n: int(c.generate_state(1, dtype="uint64")[0]) for n, c in zip(names, children)}
