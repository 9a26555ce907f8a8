"""Run configuration: every tunable of the pipeline in one flat, JSON-loadable record."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, fields
from pathlib import Path

from .synth import DEFAULT_PLAN


@dataclass(frozen=True)
class RunConfig:
    # randomness
    seed: int = 0
    dev_seed: int = 1000
    # synthetic material
    plan: tuple = DEFAULT_PLAN
    sample_rate: int = 44100
    # features and relevance variables
    n_mfcc: int = 19
    n_mels: int = 40
    background_components: int = 32
    em_max_iters: int = 100
    # segmentation
    mode: str = "strokes"
    seg_len: float = 2.0
    min_strokes: int = 15
    onset_k: float = 1.5
    # information bottleneck
    beta: float = 10.0
    nmi_threshold: float = 0.4
    max_clusters: int = 3
    # realignment
    min_duration: float = 0.5
    realign_components: int = 8
    switch_penalty: float = 5.0
    realign_passes: int = 2
    # identification
    id_components: int = 3
    solo_only: bool = False
    # separation
    fft_size: int = 1024
    hop: int = 256
    hidden: int = 500
    n_layers: int = 3
    gamma: float = 0.08
    learning_rate: float = 1e-3
    momentum: float = 0.9
    epochs: int = 30
    sequence_len: int = 100
    clip_norm: float = 1.0
    crossfade: float = 0.010
    # scoring
    collar: float = 0.15
    max_der: float | None = None
    min_accuracy: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "plan", tuple((str(l), float(d)) for l, d in self.plan))
        checks = [
            (self.mode in ("fixed", "strokes"), "mode must be 'fixed' or 'strokes'"),
            (self.sample_rate >= 8000, "sample_rate must be at least 8000"),
            (1 <= self.n_mfcc < self.n_mels, "need 1 <= n_mfcc < n_mels"),
            (self.background_components >= 1 and self.id_components >= 1, "component counts must be >= 1"),
            (self.em_max_iters >= 1, "em_max_iters must be >= 1"),
            (self.seg_len > 0 and self.min_strokes >= 1, "seg_len must be > 0 and min_strokes >= 1"),
            (self.beta > 0, "beta must be positive"),
            (0.0 <= self.nmi_threshold <= 1.0, "nmi_threshold must lie in [0, 1]"),
            (self.max_clusters >= 1, "max_clusters must be >= 1"),
            (self.min_duration > 0 and self.realign_passes >= 1, "min_duration > 0 and realign_passes >= 1"),
            (self.fft_size > 0 and self.fft_size & (self.fft_size - 1) == 0, "fft_size must be a power of two"),
            (0 < self.hop <= self.fft_size // 2, "hop must lie in (0, fft_size/2]"),
            (self.hidden >= 1 and self.n_layers >= 1, "hidden and n_layers must be >= 1"),
            (self.gamma >= 0, "gamma must be non-negative"),
            (self.epochs >= 0 and self.sequence_len >= 1, "epochs >= 0 and sequence_len >= 1"),
            (self.crossfade >= 0 and self.collar >= 0, "crossfade and collar must be non-negative"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["plan"] = [list(p) for p in self.plan]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        d = dict(d)
        if "plan" in d:
            d["plan"] = tuple(tuple(p) for p in d["plan"])
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
