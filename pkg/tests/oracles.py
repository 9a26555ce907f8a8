"""Independent reference implementations used as test oracles.

Everything here is written the slow, obvious way (explicit loops, naive
transforms, exhaustive search) and shares no code with the package.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


# ---------------------------------------------------------------------------
# Transforms


def naive_dft(frame: np.ndarray) -> np.ndarray:
    """O(N^2) DFT, non-negative frequencies only."""
    n = len(frame)
    k = np.arange(n // 2 + 1)[:, None]
    t = np.arange(n)[None, :]
    return (np.exp(-2j * np.pi * k * t / n) * frame[None, :]).sum(axis=1)


def naive_idft(half: np.ndarray, n: int) -> np.ndarray:
    full = np.concatenate([half, np.conj(half[1:n // 2][::-1])])
    t = np.arange(n)[:, None]
    k = np.arange(n)[None, :]
    return np.real((np.exp(2j * np.pi * k * t / n) * full[None, :]).sum(axis=1)) / n


def periodic_hann(n: int) -> np.ndarray:
    return np.array([0.5 - 0.5 * math.cos(2 * math.pi * i / n) for i in range(n)])


def naive_stft_roundtrip(x: np.ndarray, fft: int, hop: int) -> np.ndarray:
    """Analyse with a naive DFT per frame and resynthesise by weighted overlap-add."""
    w = periodic_hann(fft)
    n_frames = 1 + math.ceil(max(len(x) - fft, 0) / hop)
    padded = np.concatenate([x, np.zeros((n_frames - 1) * hop + fft - len(x))])
    out = np.zeros(len(padded))
    norm = np.zeros(len(padded))
    for i in range(n_frames):
        seg = padded[i * hop:i * hop + fft] * w
        rec = naive_idft(naive_dft(seg), fft) * w
        out[i * hop:i * hop + fft] += rec
        norm[i * hop:i * hop + fft] += w * w
    return np.where(norm > 1e-10, out / np.where(norm > 1e-10, norm, 1.0), 0.0)[:len(x)]


def naive_mel_matrix(n_mels: int, n_fft: int, sr: int) -> np.ndarray:
    def mel(f):
        return 2595.0 * math.log10(1.0 + f / 700.0)

    def hz(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    top = mel(sr / 2.0)
    edges = [hz(top * i / (n_mels + 1)) for i in range(n_mels + 2)]
    fb = np.zeros((n_mels, n_fft // 2 + 1))
    for m in range(n_mels):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        for k in range(n_fft // 2 + 1):
            f = k * sr / n_fft
            if lo < f <= mid:
                fb[m, k] = (f - lo) / (mid - lo)
            elif mid < f < hi:
                fb[m, k] = (hi - f) / (hi - mid)
    return fb


def naive_dct2_ortho(v: np.ndarray) -> np.ndarray:
    n = len(v)
    out = np.zeros(n)
    for k in range(n):
        s = sum(v[i] * math.cos(math.pi * k * (2 * i + 1) / (2 * n)) for i in range(n))
        out[k] = s * (math.sqrt(1.0 / n) if k == 0 else math.sqrt(2.0 / n))
    return out


def naive_mfcc_frame(x: np.ndarray, start: int, win: int, n_fft: int, sr: int,
                     n_mels: int, n_coeffs: int) -> np.ndarray:
    """MFCC of one frame: pre-emphasis, Hann, power spectrum, mel, log, DCT-II."""
    emph = np.array([x[i] - (0.97 * x[i - 1] if i > 0 else 0.0) for i in range(len(x))])
    frame = emph[start:start + win] * periodic_hann(win)
    frame = np.concatenate([frame, np.zeros(n_fft - win)])
    power = np.abs(naive_dft(frame)) ** 2
    energies = naive_mel_matrix(n_mels, n_fft, sr) @ power
    return naive_dct2_ortho(np.log(np.maximum(energies, 1e-10)))[1:n_coeffs + 1]


# ---------------------------------------------------------------------------
# Densities


def naive_diag_gauss(x, mean, var) -> float:
    p = 1.0
    for xi, mi, vi in zip(x, mean, var):
        p *= math.exp(-0.5 * (xi - mi) ** 2 / vi) / math.sqrt(2 * math.pi * vi)
    return p


def naive_posterior(weights, means, variances, x) -> np.ndarray:
    dens = np.array([w * naive_diag_gauss(x, m, v) for w, m, v in zip(weights, means, variances)])
    return dens / dens.sum()


# ---------------------------------------------------------------------------
# Information theory


def brute_mi(joint: np.ndarray) -> float:
    rows = joint.sum(axis=1)
    cols = joint.sum(axis=0)
    total = 0.0
    for i in range(joint.shape[0]):
        for j in range(joint.shape[1]):
            if joint[i, j] > 0:
                total += joint[i, j] * math.log(joint[i, j] / (rows[i] * cols[j]))
    return total


def ib_objective(p_y_given_x: np.ndarray, p_x: np.ndarray, partition: list[list[int]], beta: float) -> float:
    """F = I(Y;C) - I(C;X)/beta for a hard partition, from full joint tables."""
    n, m = p_y_given_x.shape
    joint_cy = np.zeros((len(partition), m))
    joint_cx = np.zeros((len(partition), n))
    for c, members in enumerate(partition):
        for x in members:
            joint_cy[c] += p_x[x] * p_y_given_x[x]
            joint_cx[c, x] = p_x[x]
    return brute_mi(joint_cy) - brute_mi(joint_cx) / beta


def partitions_into(items: list[int], k: int):
    """All set partitions of ``items`` into exactly ``k`` non-empty blocks."""
    if k == 0:
        if not items:
            yield []
        return
    if len(items) < k:
        return
    first, rest = items[0], items[1:]
    for p in partitions_into(rest, k - 1):
        yield [[first]] + p
    for p in partitions_into(rest, k):
        for i in range(len(p)):
            yield p[:i] + [[first] + p[i]] + p[i + 1:]


# ---------------------------------------------------------------------------
# Diarization metrics on a 1 ms grid


def grid_labels(segments, n_cells: int) -> list:
    """Label of each 1 ms cell; ``segments`` are (start_ms, end_ms, label) integer triples."""
    cells = [None] * n_cells
    for s, e, lab in segments:
        for i in range(s, e):
            cells[i] = lab
    return cells


def grid_der(ref_segs, hyp_segs, n_cells: int, collar_ms: int):
    ref = grid_labels(ref_segs, n_cells)
    hyp = grid_labels(hyp_segs, n_cells)
    changes = [i for i in range(1, n_cells) if ref[i] != ref[i - 1]]
    scored = [all(abs(i + 0.5 - c) >= collar_ms for c in changes) for i in range(n_cells)]
    ref_labels = sorted({r for r in ref if r is not None})
    hyp_labels = sorted({h for h in hyp if h is not None})
    counts = {(h, r): 0 for h in hyp_labels for r in ref_labels}
    for i in range(n_cells):
        if scored[i] and ref[i] is not None and hyp[i] is not None:
            counts[hyp[i], ref[i]] += 1
    best = 0
    # Exhaustive search over one-to-one partial maps hyp -> ref.
    slots = ref_labels + [None] * len(hyp_labels)
    for perm in set(itertools.permutations(slots, len(hyp_labels))):
        hit = sum(counts[h, r] for h, r in zip(hyp_labels, perm) if r is not None)
        best = max(best, hit)
    missed = sum(1 for i in range(n_cells) if scored[i] and ref[i] is not None and hyp[i] is None)
    fa = sum(1 for i in range(n_cells) if scored[i] and ref[i] is None and hyp[i] is not None)
    both = sum(1 for i in range(n_cells) if scored[i] and ref[i] is not None and hyp[i] is not None)
    total = sum(1 for i in range(n_cells) if scored[i] and ref[i] is not None)
    confusion = both - best
    return missed / 1000.0, fa / 1000.0, confusion / 1000.0, total / 1000.0


def grid_purity(ref_segs, clu_segs, n_cells: int) -> float:
    ref = grid_labels(ref_segs, n_cells)
    clu = grid_labels(clu_segs, n_cells)
    counts: dict = {}
    for r, c in zip(ref, clu):
        if r is not None and c is not None:
            counts.setdefault(c, {}).setdefault(r, 0)
            counts[c][r] += 1
    total = sum(sum(v.values()) for v in counts.values())
    return sum(max(v.values()) for v in counts.values()) / total


def grid_accuracy(ref_segs, hyp_segs, n_cells: int) -> float:
    ref = grid_labels(ref_segs, n_cells)
    hyp = grid_labels(hyp_segs, n_cells)
    covered = [i for i in range(n_cells) if ref[i] is not None]
    return 100.0 * sum(1 for i in covered if hyp[i] == ref[i]) / len(covered)


# ---------------------------------------------------------------------------
# SDR


def lstsq_sdr(estimate: np.ndarray, source: np.ndarray) -> float:
    alpha, *_ = np.linalg.lstsq(source[:, None], estimate, rcond=None)
    target = alpha[0] * source
    err = estimate - target
    return 10.0 * math.log10(float(np.sum(target ** 2)) / float(np.sum(err ** 2)))
