"""Recurrent soft-mask separation of the two percussive voices.

A stacked ReLU RNN reads the (per-utterance normalised) mixture magnitude
spectrogram and drives two ReLU output heads.  The heads are turned into
complementary soft masks ``a / (a + b)`` and ``b / (a + b)``; masked mixture
magnitudes are recombined with the mixture phase.

Training minimises the discriminative objective

    |ŷ_m - y_m|² + |ŷ_g - y_g|² - gamma * (|ŷ_m - y_g|² + |ŷ_g - y_m|²)

with every term a mean over time-frequency bins, using truncated
backpropagation through time and SGD with momentum.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .audio import AudioBuffer
from .dsp import Spectrogram, istft, stft
from .segmentation import GHATAM, MRIDANGAM, OVERLAP, Annotation

log = logging.getLogger(__name__)

MASK_FLOOR = 1e-8
FORMAT_VERSION = 1


@dataclass
class MaskNetwork:
    input_dim: int = 513
    hidden: int = 500
    n_layers: int = 3
    hop: int = 256
    params: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def fft_size(self) -> int:
        return 2 * (self.input_dim - 1)

    @classmethod
    def create(cls, input_dim: int = 513, hidden: int = 500, n_layers: int = 3, hop: int = 256,
               seed: int = 0) -> "MaskNetwork":
        rng = np.random.default_rng(seed)
        p: dict[str, np.ndarray] = {}
        fan_in = input_dim
        for layer in range(n_layers):
            p[f"W{layer}"] = rng.standard_normal((fan_in, hidden)) * np.sqrt(2.0 / fan_in)
            p[f"U{layer}"] = rng.standard_normal((hidden, hidden)) * (0.3 / np.sqrt(hidden))
            p[f"b{layer}"] = np.zeros(hidden)
            fan_in = hidden
        # Heads start alive and balanced (masks near 0.5) so neither ReLU output is stuck at zero.
        for head in ("m", "g"):
            p[f"V{head}"] = rng.standard_normal((hidden, input_dim)) * (0.1 / np.sqrt(hidden))
            p[f"c{head}"] = np.ones(input_dim)
        return cls(input_dim, hidden, n_layers, hop, p)

    def copy(self) -> "MaskNetwork":
        return MaskNetwork(self.input_dim, self.hidden, self.n_layers, self.hop,
                           {k: v.copy() for k, v in self.params.items()})

    def to_dict(self) -> dict:
        return {"format": "percsep.masknet", "version": FORMAT_VERSION, "input_dim": self.input_dim,
                "hidden": self.hidden, "n_layers": self.n_layers, "hop": self.hop,
                "params": {k: v.tolist() for k, v in sorted(self.params.items())}}

    @classmethod
    def from_dict(cls, d: dict) -> "MaskNetwork":
        if d.get("format") != "percsep.masknet" or d.get("version") != FORMAT_VERSION:
            raise ValueError("not a version-1 percsep mask network document")
        params = {k: np.array(v, dtype=float) for k, v in d["params"].items()}
        net = cls(d["input_dim"], d["hidden"], d["n_layers"], d["hop"], params)
        if not all(np.all(np.isfinite(v)) for v in params.values()):
            raise ValueError("network parameters must be finite")
        return net

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "MaskNetwork":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.08
    learning_rate: float = 1e-3
    momentum: float = 0.9
    epochs: int = 30
    seed: int = 0
    sequence_len: int = 100
    clip_norm: float = 1.0

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if self.sequence_len < 1 or self.epochs < 0:
            raise ValueError("sequence_len must be >= 1 and epochs >= 0")


@dataclass(frozen=True)
class SeparationOutput:
    mridangam: AudioBuffer
    ghatam: AudioBuffer


# ---------------------------------------------------------------------------
# Forward / backward


def normalize_input(mag: np.ndarray) -> np.ndarray:
    """Per-utterance, per-bin mean/variance normalisation."""
    mu = mag.mean(axis=0)
    sd = mag.std(axis=0)
    return (mag - mu) / np.where(sd > 1e-8, sd, 1.0)


def _forward_seq(net: MaskNetwork, x: np.ndarray, h0: list[np.ndarray] | None = None):
    """Run the network over normalised frames ``x``; returns masks and a cache."""
    p = net.params
    T = x.shape[0]
    inputs, outputs = [], []
    layer_in = x
    for layer in range(net.n_layers):
        pre_in = layer_in @ p[f"W{layer}"] + p[f"b{layer}"]
        U = p[f"U{layer}"]
        h = np.zeros(net.hidden) if h0 is None else h0[layer]
        hs = np.empty((T, net.hidden))
        for t in range(T):
            h = pre_in[t] + h @ U
            np.maximum(h, 0.0, out=h)
            hs[t] = h
        inputs.append(layer_in)
        outputs.append(hs)
        layer_in = hs
    top = layer_in
    a = np.maximum(top @ p["Vm"] + p["cm"], 0.0)
    b = np.maximum(top @ p["Vg"] + p["cg"], 0.0)
    s = a + b + 2 * MASK_FLOOR
    mask_m = (a + MASK_FLOOR) / s
    mask_g = (b + MASK_FLOOR) / s
    cache = {"inputs": inputs, "outputs": outputs, "a": a, "b": b, "s": s,
             "h0": [np.zeros(net.hidden) if h0 is None else h0[i] for i in range(net.n_layers)]}
    return mask_m, mask_g, cache


def _backward_seq(net: MaskNetwork, cache: dict, d_mask_m: np.ndarray, d_mask_g: np.ndarray) -> dict:
    p = net.params
    a, b, s = cache["a"], cache["b"], cache["s"]
    # m = (a+e)/s, g = (b+e)/s with s = a+b+2e.
    s2 = s * s
    d_a = (d_mask_m * (b + MASK_FLOOR) - d_mask_g * (b + MASK_FLOOR)) / s2
    d_b = (d_mask_g * (a + MASK_FLOOR) - d_mask_m * (a + MASK_FLOOR)) / s2
    d_a = d_a * (a > 0)
    d_b = d_b * (b > 0)
    top = cache["outputs"][-1]
    grads = {"Vm": top.T @ d_a, "cm": d_a.sum(axis=0), "Vg": top.T @ d_b, "cg": d_b.sum(axis=0)}
    d_out = d_a @ p["Vm"].T + d_b @ p["Vg"].T
    for layer in range(net.n_layers - 1, -1, -1):
        hs = cache["outputs"][layer]
        U_T = p[f"U{layer}"].T
        T = hs.shape[0]
        d_pre = np.empty_like(hs)
        carry = np.zeros(net.hidden)
        active = hs > 0
        for t in range(T - 1, -1, -1):
            g = (d_out[t] + carry) * active[t]
            d_pre[t] = g
            carry = g @ U_T
        prev = np.vstack([cache["h0"][layer][None, :], hs[:-1]])
        grads[f"U{layer}"] = prev.T @ d_pre
        grads[f"W{layer}"] = cache["inputs"][layer].T @ d_pre
        grads[f"b{layer}"] = d_pre.sum(axis=0)
        d_out = d_pre @ p[f"W{layer}"].T
    return grads


def forward(net: MaskNetwork, mixture_mag: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Soft masks (mask_m, mask_g), each frames x bins, summing to one per bin."""
    mixture_mag = np.asarray(mixture_mag, dtype=float)
    if mixture_mag.ndim != 2 or mixture_mag.shape[1] != net.input_dim:
        raise ValueError(f"expected frames x {net.input_dim} magnitudes, got {mixture_mag.shape}")
    mask_m, mask_g, _ = _forward_seq(net, normalize_input(mixture_mag))
    return mask_m, mask_g


# ---------------------------------------------------------------------------
# Objective


def _check_shapes(*arrays):
    shapes = {np.shape(a) for a in arrays}
    if len(shapes) != 1:
        raise ValueError(f"shape mismatch: {sorted(shapes)}")


def loss(y_hat_m, y_hat_g, y_m, y_g, gamma: float = 0.08) -> float:
    """Discriminative objective; each squared norm is averaged over elements."""
    _check_shapes(y_hat_m, y_hat_g, y_m, y_g)
    def msq(d):
        return float(np.mean(np.square(d)))
    return (msq(y_hat_m - y_m) + msq(y_hat_g - y_g)
            - gamma * (msq(y_hat_m - y_g) + msq(y_hat_g - y_m)))


def loss_grad(y_hat_m, y_hat_g, y_m, y_g, gamma: float):
    """Objective value and its gradient w.r.t. ``y_hat_m`` and ``y_hat_g``."""
    value = loss(y_hat_m, y_hat_g, y_m, y_g, gamma)
    scale = 2.0 / y_m.size
    g_m = scale * ((y_hat_m - y_m) - gamma * (y_hat_m - y_g))
    g_g = scale * ((y_hat_g - y_g) - gamma * (y_hat_g - y_m))
    return value, g_m, g_g


def sequence_loss(net: MaskNetwork, x: np.ndarray, z: np.ndarray, y_m: np.ndarray, y_g: np.ndarray,
                  gamma: float, h0=None, with_grad: bool = True):
    """Loss of one sequence (normalised input ``x``, mixture magnitude ``z``)."""
    mask_m, mask_g, cache = _forward_seq(net, x, h0)
    value, g_m, g_g = loss_grad(mask_m * z, mask_g * z, y_m, y_g, gamma)
    if not with_grad:
        return value, None, cache
    return value, _backward_seq(net, cache, g_m * z, g_g * z), cache


# ---------------------------------------------------------------------------
# Training


def _padded_stft(audio: AudioBuffer, fft_size: int, hop: int) -> Spectrogram:
    """STFT of ``audio`` padded by ``fft_size`` zeros on both sides."""
    pad = np.zeros(fft_size)
    return stft(AudioBuffer(np.concatenate([pad, audio.samples, pad]), audio.sample_rate), fft_size, hop)


def prepare_pair(net: MaskNetwork, mixture: AudioBuffer, source_m: AudioBuffer, source_g: AudioBuffer):
    if not (len(mixture) == len(source_m) == len(source_g)):
        raise ValueError("mixture and sources must have equal length")
    if mixture.sample_rate != source_m.sample_rate or mixture.sample_rate != source_g.sample_rate:
        raise ValueError("mixture and sources must share a sample rate")
    z = _padded_stft(mixture, net.fft_size, net.hop).magnitudes
    y_m = _padded_stft(source_m, net.fft_size, net.hop).magnitudes
    y_g = _padded_stft(source_g, net.fft_size, net.hop).magnitudes
    return normalize_input(z), z, y_m, y_g


@dataclass
class TrainResult:
    net: MaskNetwork
    loss_history: list[float]
    mse_history: list[float]


def train(net: MaskNetwork, pairs: Sequence[tuple[AudioBuffer, AudioBuffer, AudioBuffer]],
          cfg: TrainConfig = TrainConfig(), callback: Callable[[int, float], None] | None = None) -> TrainResult:
    """Train a copy of ``net`` on ``(mixture, source_m, source_g)`` triples.

    Each epoch visits the pairs in a seeded random order and walks every pair
    in ``cfg.sequence_len``-frame chunks, carrying the hidden state forward
    but truncating gradients at chunk edges.  History entries are means over
    chunks of the objective (``loss_history``) and of its non-discriminative
    part (``mse_history``) as measured during the epoch.
    """
    if not pairs:
        raise ValueError("no training pairs")
    net = net.copy()
    data = [prepare_pair(net, *pair) for pair in pairs]
    rng = np.random.default_rng(cfg.seed)
    velocity = {k: np.zeros_like(v) for k, v in net.params.items()}
    loss_history, mse_history = [], []
    for epoch in range(cfg.epochs):
        losses, mses, weights = [], [], []
        for i in rng.permutation(len(data)):
            x, z, y_m, y_g = data[i]
            h = None
            for t0 in range(0, x.shape[0], cfg.sequence_len):
                sl = slice(t0, t0 + cfg.sequence_len)
                value, grads, cache = sequence_loss(net, x[sl], z[sl], y_m[sl], y_g[sl], cfg.gamma, h)
                mm = (cache["a"] + MASK_FLOOR) / cache["s"]
                mses.append(loss(mm * z[sl], (1 - mm) * z[sl], y_m[sl], y_g[sl], 0.0))
                losses.append(value)
                weights.append(x[sl].shape[0])
                norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
                scale = min(1.0, cfg.clip_norm / norm) if cfg.clip_norm > 0 and norm > 0 else 1.0
                for k, g in grads.items():
                    velocity[k] = cfg.momentum * velocity[k] - cfg.learning_rate * scale * g
                    net.params[k] += velocity[k]
                h = [o[-1].copy() for o in cache["outputs"]]
        w = np.array(weights, dtype=float)
        loss_history.append(float(np.dot(w, losses) / w.sum()))
        mse_history.append(float(np.dot(w, mses) / w.sum()))
        if callback is not None:
            callback(epoch, loss_history[-1])
        log.debug("epoch %d loss %.6g mse %.6g", epoch, loss_history[-1], mse_history[-1])
    return TrainResult(net, loss_history, mse_history)


# ---------------------------------------------------------------------------
# Inference and channel assembly


def separate_with_masks(mixture: AudioBuffer, mask_fn: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]],
                        fft_size: int = 1024, hop: int = 256) -> SeparationOutput:
    """Apply masks from ``mask_fn(mixture_magnitudes)`` and resynthesise with the mixture phase."""
    if len(mixture) == 0:
        raise ValueError("cannot separate empty audio")
    spec = _padded_stft(mixture, fft_size, hop)
    mask_m, mask_g = mask_fn(spec.magnitudes)
    outs = []
    for mask in (mask_m, mask_g):
        est = Spectrogram(mask * spec.magnitudes, spec.phases, fft_size, hop, spec.sample_rate, spec.n_samples)
        outs.append(AudioBuffer(istft(est).samples[fft_size:fft_size + len(mixture)], mixture.sample_rate))
    return SeparationOutput(*outs)


def separate(net: MaskNetwork, mixture: AudioBuffer) -> SeparationOutput:
    return separate_with_masks(mixture, lambda mag: forward(net, mag), net.fft_size, net.hop)


def _ramp(n: int) -> np.ndarray:
    return (np.arange(n) + 0.5) / n


def assemble_channels(mixture: AudioBuffer, labeled: Annotation, net: MaskNetwork | None,
                      crossfade: float = 0.010,
                      separator: Callable[[AudioBuffer], SeparationOutput] | None = None) -> SeparationOutput:
    """Build the two output channels from a labelled annotation.

    Solo intervals are copied into the active channel and zeroed in the other;
    OVERLAP intervals are separated one contiguous interval at a time.
    Adjacent intervals are blended with a linear crossfade of ``crossfade``
    seconds centred on the join; outside those zones solo output equals the
    input samples exactly.
    """
    sr = mixture.sample_rate
    n = len(mixture)
    ann = labeled.merged()
    ann.check_cover(mixture.duration, tol=1e-3)
    if separator is None:
        if net is None and any(s.label == OVERLAP for s in ann):
            raise ValueError("a mask network is required to separate OVERLAP intervals")
        separator = (lambda audio: separate(net, audio))

    joins = [0] + [int(round(s.start * sr)) for s in ann.segments[1:]] + [n]
    half = int(round(crossfade * sr / 2))
    widths = [0] + [min(half, (joins[k] - joins[k - 1]) // 2, (joins[k + 1] - joins[k]) // 2)
                    for k in range(1, len(joins) - 1)] + [0]

    out_m, out_g = np.zeros(n), np.zeros(n)
    x = mixture.samples
    for i, seg in enumerate(ann):
        lo, hi = joins[i] - widths[i], joins[i + 1] + widths[i + 1]
        if seg.label == MRIDANGAM:
            m, g = x[lo:hi], None
        elif seg.label == GHATAM:
            m, g = None, x[lo:hi]
        elif seg.label == OVERLAP:
            sep = separator(AudioBuffer(x[lo:hi], sr))
            m, g = sep.mridangam.samples, sep.ghatam.samples
        else:
            raise ValueError(f"unexpected label {seg.label!r}")
        w = np.ones(hi - lo)
        if widths[i]:
            w[:2 * widths[i]] = _ramp(2 * widths[i])
        if widths[i + 1]:
            w[-2 * widths[i + 1]:] = 1.0 - _ramp(2 * widths[i + 1])
        if m is not None:
            out_m[lo:hi] += w * m
        if g is not None:
            out_g[lo:hi] += w * g
    return SeparationOutput(AudioBuffer(out_m, sr), AudioBuffer(out_g, sr))
