"""Signal primitives: STFT/ISTFT, MFCC features and spectral-flux onsets.

Framing convention: frame ``i`` starts at sample ``i * hop``.  The final
partial frame is zero-padded to ``fft_size``, so reconstruction guarantees
hold only where samples are covered by a full set of overlapping windows
(the "interior").
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.fft import dct

from .audio import AudioBuffer

MFCC_LOG_FLOOR = 1e-10
PRE_EMPHASIS = 0.97


@dataclass(frozen=True)
class Spectrogram:
    magnitudes: np.ndarray  # frames x bins
    phases: np.ndarray  # frames x bins, radians
    fft_size: int
    hop: int
    sample_rate: int
    n_samples: int | None = None  # length of the analysed signal, used to trim istft output

    def __post_init__(self):
        if self.magnitudes.shape != self.phases.shape:
            raise ValueError("magnitudes and phases differ in shape")
        if self.magnitudes.ndim != 2 or self.magnitudes.shape[1] != self.fft_size // 2 + 1:
            raise ValueError("bins must equal fft_size // 2 + 1")

    @property
    def n_frames(self) -> int:
        return self.magnitudes.shape[0]

    @property
    def complex(self) -> np.ndarray:
        return self.magnitudes * np.exp(1j * self.phases)


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray  # frames x dims
    frame_times: np.ndarray  # seconds, centre of each analysis frame
    hop_seconds: float

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[0] != self.frame_times.shape[0]:
            raise ValueError("values and frame_times disagree on frame count")
        if np.any(np.diff(self.frame_times) <= 0):
            raise ValueError("frame_times must be strictly increasing")

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def frames_in(self, start: float, end: float) -> np.ndarray:
        """Boolean mask of frames whose centre lies in [start, end)."""
        return (self.frame_times >= start) & (self.frame_times < end)


def hann(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def _check_window(window: str) -> None:
    if window != "hann":
        raise ValueError(f"unsupported window {window!r}")


def n_frames_for(n_samples: int, fft_size: int, hop: int) -> int:
    if n_samples <= fft_size:
        return 1
    return 1 + -(-(n_samples - fft_size) // hop)


def frame_signal(x: np.ndarray, frame_len: int, hop: int) -> np.ndarray:
    """Strided frames of ``x``; the last partial frame is zero-padded."""
    n = n_frames_for(len(x), frame_len, hop)
    padded_len = (n - 1) * hop + frame_len
    if padded_len > len(x):
        x = np.concatenate([x, np.zeros(padded_len - len(x))])
    return sliding_window_view(x, frame_len)[::hop][:n]


def stft(audio: AudioBuffer, fft_size: int = 1024, hop: int = 256, window: str = "hann") -> Spectrogram:
    _check_window(window)
    if fft_size <= 0 or fft_size & (fft_size - 1):
        raise ValueError("fft_size must be a power of two")
    if not 0 < hop <= fft_size:
        raise ValueError("hop must satisfy 0 < hop <= fft_size")
    if len(audio) == 0:
        raise ValueError("cannot analyse empty audio")
    frames = frame_signal(audio.samples, fft_size, hop) * hann(fft_size)
    spec = np.fft.rfft(frames, axis=1)
    return Spectrogram(np.abs(spec), np.angle(spec), fft_size, hop, audio.sample_rate, len(audio))


def istft(spec: Spectrogram) -> AudioBuffer:
    """Weighted overlap-add inverse of :func:`stft`.

    Frames are re-windowed and normalised by the summed squared window, which
    is exact for any hop <= fft_size / 2 with a Hann window.
    """
    n_fft, hop = spec.fft_size, spec.hop
    if hop > n_fft // 2:
        raise ValueError(f"hop {hop} violates overlap-add condition for hann (needs hop <= {n_fft // 2})")
    w = hann(n_fft)
    frames = np.fft.irfft(spec.complex, n=n_fft, axis=1) * w
    n_out = (spec.n_frames - 1) * hop + n_fft
    out = np.zeros(n_out)
    norm = np.zeros(n_out)
    w2 = w * w
    # Accumulate per frame-offset group so every add is a dense slice.
    ratio = n_fft // hop if n_fft % hop == 0 else None
    if ratio is not None:
        for r in range(ratio):
            chunk = frames[:, r * hop:(r + 1) * hop].reshape(-1)
            out[r * hop:r * hop + chunk.size] += chunk
            norm[r * hop:r * hop + chunk.size] += np.tile(w2[r * hop:(r + 1) * hop], spec.n_frames)
    else:
        for i in range(spec.n_frames):
            out[i * hop:i * hop + n_fft] += frames[i]
            norm[i * hop:i * hop + n_fft] += w2
    nz = norm > 1e-10
    out[nz] /= norm[nz]
    out[~nz] = 0.0
    if spec.n_samples is not None:
        out = out[:spec.n_samples]
    return AudioBuffer(out, spec.sample_rate)


def interior_slice(n_samples: int, fft_size: int, hop: int) -> slice:
    """Samples covered by a full complement of overlapping frames."""
    return slice(fft_size - hop, max(n_samples - fft_size, fft_size - hop))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, fft_size: int, sample_rate: int,
                   fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Triangular mel filters, shape (n_mels, fft_size // 2 + 1), peak 1."""
    fmax = sample_rate / 2.0 if fmax is None else fmax
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.arange(fft_size // 2 + 1) * sample_rate / fft_size
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def mfcc(audio: AudioBuffer, n_coeffs: int = 19, n_mels: int = 40, fft_size: int | None = None,
         hop: int | None = None, win_length: int | None = None) -> FeatureMatrix:
    """MFCCs 1..n_coeffs (c0 dropped) over 25 ms Hann frames with a 10 ms hop by default."""
    if n_coeffs + 1 > n_mels:
        raise ValueError(f"n_coeffs={n_coeffs} needs at least {n_coeffs + 1} mel bands (c0 is dropped)")
    sr = audio.sample_rate
    if sr < 8000:
        raise ValueError("sample_rate must be at least 8 kHz")
    if len(audio) == 0:
        raise ValueError("cannot analyse empty audio")
    win = win_length or int(round(0.025 * sr))
    hop = hop or int(round(0.010 * sr))
    n_fft = fft_size or 1 << (win - 1).bit_length()
    if n_fft < win:
        raise ValueError("fft_size shorter than the analysis window")

    x = audio.samples
    emph = np.empty_like(x)
    emph[0] = x[0]
    emph[1:] = x[1:] - PRE_EMPHASIS * x[:-1]

    if len(emph) < win:
        emph = np.concatenate([emph, np.zeros(win - len(emph))])
    n = 1 + (len(emph) - win) // hop
    frames = sliding_window_view(emph, win)[::hop][:n] * hann(win)
    power = np.abs(np.fft.rfft(frames, n=n_fft, axis=1)) ** 2
    mel_energy = power @ mel_filterbank(n_mels, n_fft, sr).T
    ceps = dct(np.log(np.maximum(mel_energy, MFCC_LOG_FLOOR)), type=2, axis=1, norm="ortho")
    times = (np.arange(n) * hop + win / 2.0) / sr
    return FeatureMatrix(ceps[:, 1:n_coeffs + 1], times, hop / sr)


def spectral_flux(audio: AudioBuffer, fft_size: int = 1024, hop: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Half-wave rectified spectral flux with centred frames.

    Returns ``(flux, frame_times)``; frame ``i`` is centred at ``i * hop``.
    """
    pad = np.zeros(fft_size // 2)
    padded = AudioBuffer(np.concatenate([pad, audio.samples, pad]), audio.sample_rate)
    mag = stft(padded, fft_size, hop).magnitudes
    flux = np.zeros(mag.shape[0])
    flux[1:] = np.maximum(0.0, np.diff(mag, axis=0)).sum(axis=1)
    times = np.arange(mag.shape[0]) * hop / audio.sample_rate
    return flux, times


def _sliding_median_mad(x: np.ndarray, width: int) -> tuple[np.ndarray, np.ndarray]:
    half = width // 2
    padded = np.pad(x, half, mode="edge")
    windows = sliding_window_view(padded, 2 * half + 1)
    med = np.median(windows, axis=1)
    mad = np.median(np.abs(windows - med[:, None]), axis=1)
    return med, mad


def detect_onsets(audio: AudioBuffer, flux_hop: int = 256, threshold_k: float = 1.5,
                  fft_size: int = 1024, window_seconds: float = 2.0,
                  min_gap_seconds: float = 0.05) -> np.ndarray:
    """Stroke onset times (seconds, strictly increasing).

    Peaks of the spectral flux that are local maxima and exceed
    ``median + threshold_k * MAD`` over a sliding window.  Peaks closer than
    ``min_gap_seconds`` are thinned, keeping the stronger one.
    """
    if len(audio) <= fft_size:
        raise ValueError("audio must be longer than one analysis frame")
    flux, times = spectral_flux(audio, fft_size, flux_hop)
    width = max(3, int(round(window_seconds * audio.sample_rate / flux_hop)))
    med, mad = _sliding_median_mad(flux, width)
    thresh = med + threshold_k * mad
    # Absolute floor keeps numerically silent input from producing onsets.
    floor = 1e-9 * fft_size
    nxt = np.append(flux[1:], -np.inf)
    prev = np.insert(flux[:-1], 0, -np.inf)
    cand = np.flatnonzero((flux > thresh) & (flux > floor) & (flux >= prev) & (flux > nxt))
    if cand.size == 0:
        return np.zeros(0)

    min_gap = int(np.ceil(min_gap_seconds * audio.sample_rate / flux_hop))
    blocked = np.zeros(flux.size, dtype=bool)
    kept = []
    for i in cand[np.argsort(-flux[cand], kind="stable")]:
        if not blocked[i]:
            kept.append(i)
            blocked[max(0, i - min_gap + 1):i + min_gap] = True
    onsets = times[np.sort(kept)]
    return onsets[(onsets >= 0) & (onsets <= audio.duration)]
