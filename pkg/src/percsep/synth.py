"""Deterministic synthetic two-voice percussion recordings with ground truth.

Voice A is a pitched two-mode resonator (mridangam-like), voice B a
band-passed noise burst over a weak pot resonance (ghatam-like).  Both
tracks are quantised to the 16-bit grid so the mixture is exactly their sum,
in memory and after a PCM16 round trip.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import butter, sosfilt

from .audio import AudioBuffer
from .segmentation import GHATAM, MRIDANGAM, OVERLAP, Annotation, Segment

VOICE_A_SOLO = "VOICE_A_SOLO"
VOICE_B_SOLO = "VOICE_B_SOLO"
PLAN_LABELS = {VOICE_A_SOLO: MRIDANGAM, VOICE_B_SOLO: GHATAM, OVERLAP: OVERLAP,
               MRIDANGAM: MRIDANGAM, GHATAM: GHATAM}

# Roughly 48 % voice A, 34 % voice B, 18 % overlap, ending on the joint section.
DEFAULT_PLAN = (
    (VOICE_A_SOLO, 16.0), (VOICE_B_SOLO, 12.0), (VOICE_A_SOLO, 14.0), (VOICE_B_SOLO, 10.0),
    (OVERLAP, 6.0), (VOICE_A_SOLO, 12.0), (VOICE_B_SOLO, 8.0), (VOICE_A_SOLO, 18.0),
    (VOICE_B_SOLO, 12.0), (OVERLAP, 16.0),
)

PEAK = 0.45
FADE_SECONDS = 0.005


@dataclass(frozen=True)
class SynthSpec:
    seed: int = 0
    plan: tuple = DEFAULT_PLAN
    stroke_rate_a: float = 6.0
    stroke_rate_b: float = 5.0
    sample_rate: int = 44100
    f0_a: float = 180.0
    mode_ratio_a: float = 2.76
    band_b: tuple = (900.0, 4500.0)
    pot_freq_b: float = 320.0
    noise_level: float = 0.002

    def __post_init__(self):
        plan = tuple((str(lab), float(dur)) for lab, dur in self.plan)
        if not plan:
            raise ValueError("plan must not be empty")
        for lab, dur in plan:
            if lab not in PLAN_LABELS:
                raise ValueError(f"unknown plan label {lab!r}")
            if dur <= 0:
                raise ValueError("plan durations must be positive")
        object.__setattr__(self, "plan", plan)
        object.__setattr__(self, "band_b", tuple(self.band_b))

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        d = dict(d)
        if "plan" in d:
            d["plan"] = tuple(tuple(p) for p in d["plan"])
        return cls(**d)

    @property
    def duration(self) -> float:
        return sum(d for _, d in self.plan)


@dataclass(frozen=True)
class SynthResult:
    track_a: AudioBuffer
    track_b: AudioBuffer
    mixture: AudioBuffer
    truth: Annotation
    onsets_a: np.ndarray
    onsets_b: np.ndarray
    spec: SynthSpec = field(repr=False)


def _stroke_times(rng, start, end, rate):
    period = 1.0 / rate
    t = start + rng.uniform(0.02, 0.5) * period
    out = []
    while t < end - 0.05:
        out.append(t)
        t += period * rng.uniform(0.7, 1.3)
    return out


def _stroke_a(rng, sr, spec: SynthSpec) -> np.ndarray:
    damped = rng.random() < 0.35
    tau = rng.uniform(0.03, 0.06) if damped else rng.uniform(0.12, 0.25)
    n = int(5 * tau * sr)
    t = np.arange(n) / sr
    f0 = spec.f0_a * rng.uniform(0.98, 1.02)
    body = np.sin(2 * np.pi * f0 * t) + 0.6 * np.exp(-t / (0.5 * tau)) * np.sin(
        2 * np.pi * spec.mode_ratio_a * f0 * t + rng.uniform(0, 2 * np.pi))
    click_n = int(0.004 * sr)
    click = np.zeros(n)
    click[:click_n] = rng.standard_normal(click_n) * np.linspace(1, 0, click_n) * 0.5
    return (body * np.exp(-t / tau) + click) * rng.uniform(0.5, 1.0)


def _stroke_b(rng, sr, spec: SynthSpec, sos) -> np.ndarray:
    tau = rng.uniform(0.02, 0.045)
    n = int(6 * tau * sr)
    t = np.arange(n) / sr
    burst = sosfilt(sos, rng.standard_normal(n)) * np.exp(-t / tau)
    pot = 0.25 * np.sin(2 * np.pi * spec.pot_freq_b * rng.uniform(0.97, 1.03) * t) * np.exp(-t / (2 * tau))
    return (burst * 2.5 + pot) * rng.uniform(0.5, 1.0)


def _render(rng, sections, rate, n_samples, sr, make_stroke):
    track = np.zeros(n_samples)
    gate = np.zeros(n_samples)
    onsets = []
    for start, end in sections:
        i0, i1 = int(round(start * sr)), int(round(end * sr))
        gate[i0:i1] = 1.0
        fade = min(int(FADE_SECONDS * sr), i1 - i0)
        if fade:
            gate[i1 - fade:i1] = np.linspace(1.0, 0.0, fade)
        for t0 in _stroke_times(rng, start, end, rate):
            k = make_stroke()
            j = int(round(t0 * sr))
            m = min(len(k), i1 - j)
            track[j:j + m] += k[:m]
            onsets.append(j / sr)
    return track, gate, np.array(onsets)


def generate(spec: SynthSpec = SynthSpec()) -> SynthResult:
    sr = spec.sample_rate
    rng = np.random.default_rng(spec.seed)
    bounds = np.concatenate([[0.0], np.cumsum([d for _, d in spec.plan])])
    n = int(round(bounds[-1] * sr))
    labels = [PLAN_LABELS[lab] for lab, _ in spec.plan]
    a_sections = [(s, e) for s, e, lab in zip(bounds, bounds[1:], labels) if lab in (MRIDANGAM, OVERLAP)]
    b_sections = [(s, e) for s, e, lab in zip(bounds, bounds[1:], labels) if lab in (GHATAM, OVERLAP)]

    rng_a, rng_b, rng_noise = (np.random.default_rng(s) for s in rng.integers(0, 2**63 - 1, size=3))
    sos = butter(4, spec.band_b, btype="bandpass", fs=sr, output="sos")
    a, gate_a, on_a = _render(rng_a, a_sections, spec.stroke_rate_a, n, sr, lambda: _stroke_a(rng_a, sr, spec))
    b, gate_b, on_b = _render(rng_b, b_sections, spec.stroke_rate_b, n, sr, lambda: _stroke_b(rng_b, sr, spec, sos))

    a = a / max(np.max(np.abs(a)), 1e-12) * PEAK * 0.9
    b = b / max(np.max(np.abs(b)), 1e-12) * PEAK * 0.9
    a = (a + spec.noise_level * rng_noise.standard_normal(n)) * gate_a
    b = (b + spec.noise_level * rng_noise.standard_normal(n)) * gate_b
    a = np.round(np.clip(a, -PEAK, PEAK) * 32768.0) / 32768.0
    b = np.round(np.clip(b, -PEAK, PEAK) * 32768.0) / 32768.0

    truth = Annotation(tuple(Segment(float(s), float(e), lab)
                             for s, e, lab in zip(bounds, bounds[1:], labels))).merged()
    return SynthResult(AudioBuffer(a, sr), AudioBuffer(b, sr), AudioBuffer(a + b, sr), truth,
                       on_a, on_b, spec)
