"""Diarization and separation scores.

DER uses a forgiveness collar around reference change points and maps
hypothesis labels to reference labels with the duration-maximising
one-to-one assignment.  OVERLAP is scored as an ordinary label.

SDR is the projection-based (scale-invariant) ratio; it is not the full
BSS Eval decomposition with a 512-tap distortion filter.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .segmentation import Annotation

SDR_CAP_DB = 100.0
TIMELINE_TOL = 1e-3


@dataclass(frozen=True)
class DerBreakdown:
    missed: float
    false_alarm: float
    confusion: float
    total_scored: float
    mapping: Mapping[str, str]

    @property
    def der(self) -> float:
        if self.total_scored <= 0:
            return 0.0
        return (self.missed + self.false_alarm + self.confusion) / self.total_scored


@dataclass(frozen=True)
class SdrReport:
    per_segment: list[tuple[float, dict[str, float]]]
    global_sdr: dict[str, float]


def _check_timeline(reference: Annotation, hypothesis: Annotation) -> float:
    if abs(reference.end - hypothesis.end) > TIMELINE_TOL:
        raise ValueError(f"timelines differ: reference ends at {reference.end:.3f}s, "
                         f"hypothesis at {hypothesis.end:.3f}s")
    return max(reference.end, hypothesis.end)


def _labels_at(ann: Annotation, t: np.ndarray) -> np.ndarray:
    """Label active at each time (None where no segment covers it)."""
    if len(ann) == 0:
        return np.full(t.shape, None, dtype=object)
    starts = np.array([s.start for s in ann])
    ends = np.array([s.end for s in ann])
    labels = np.array([s.label for s in ann], dtype=object)
    i = np.searchsorted(starts, t, side="right") - 1
    ok = (i >= 0) & (t < ends[np.clip(i, 0, None)])
    out = np.full(t.shape, None, dtype=object)
    out[ok] = labels[i[ok]]
    return out


def _elementary(points, end: float) -> tuple[np.ndarray, np.ndarray]:
    """Midpoints and lengths of the pieces cut by ``points`` within [0, end]."""
    p = np.unique(np.clip(np.asarray(list(points) + [0.0, end], dtype=float), 0.0, end))
    return 0.5 * (p[1:] + p[:-1]), np.diff(p)


def change_points(reference: Annotation) -> list[float]:
    """Reference boundaries between differently labelled or separated segments."""
    ref = reference.merged()
    end = ref.end
    pts = {t for s in ref for t in (s.start, s.end)}
    return sorted(t for t in pts if 1e-9 < t < end - 1e-9)


def _overlap_matrix(ref_lab, hyp_lab, dur):
    both = np.array([r is not None and h is not None for r, h in zip(ref_lab, hyp_lab)], dtype=bool)
    rl = sorted({r for r in ref_lab[both]})
    hl = sorted({h for h in hyp_lab[both]})
    m = np.zeros((len(rl), len(hl)))
    ri = {r: i for i, r in enumerate(rl)}
    hi = {h: j for j, h in enumerate(hl)}
    for r, h, d in zip(ref_lab[both], hyp_lab[both], dur[both]):
        m[ri[r], hi[h]] += d
    return m, rl, hl


def der(reference: Annotation, hypothesis: Annotation, collar: float = 0.15) -> DerBreakdown:
    end = _check_timeline(reference, hypothesis)
    cps = change_points(reference)
    pts = [t for a in (reference, hypothesis) for s in a for t in (s.start, s.end)]
    pts += [c + d for c in cps for d in (-collar, collar)]
    mid, dur = _elementary(pts, end)
    if collar > 0 and cps:
        c = np.array(cps)
        dist = np.min(np.abs(mid[:, None] - c[None, :]), axis=1)
        scored = dist >= collar
    else:
        scored = np.ones(mid.shape, dtype=bool)
    mid, dur = mid[scored], dur[scored]
    ref_lab, hyp_lab = _labels_at(reference, mid), _labels_at(hypothesis, mid)
    has_ref = np.array([r is not None for r in ref_lab], dtype=bool)
    has_hyp = np.array([h is not None for h in hyp_lab], dtype=bool)
    missed = float(dur[has_ref & ~has_hyp].sum())
    fa = float(dur[~has_ref & has_hyp].sum())
    m, rl, hl = _overlap_matrix(ref_lab, hyp_lab, dur)
    mapping: dict[str, str] = {}
    matched = 0.0
    if m.size:
        rows, cols = linear_sum_assignment(m, maximize=True)
        matched = float(m[rows, cols].sum())
        mapping = {hl[j]: rl[i] for i, j in zip(rows, cols)}
    confusion = max(0.0, float(m.sum()) - matched)
    return DerBreakdown(missed, fa, confusion, float(dur[has_ref].sum()), mapping)


def purity(reference: Annotation, clustering: Annotation) -> float:
    """Duration share of each cluster's dominant reference label, pooled over clusters."""
    end = max(reference.end, clustering.end)
    pts = [t for a in (reference, clustering) for s in a for t in (s.start, s.end)]
    mid, dur = _elementary(pts, end)
    m, _, _ = _overlap_matrix(_labels_at(reference, mid), _labels_at(clustering, mid), dur)
    if m.sum() <= 0:
        raise ValueError("clustering and reference do not overlap")
    return float(m.max(axis=0).sum() / m.sum())


def accuracy(reference: Annotation, labeled_hypothesis: Annotation) -> float:
    """Percentage of reference duration carrying the correct label (no collar)."""
    end = _check_timeline(reference, labeled_hypothesis)
    pts = [t for a in (reference, labeled_hypothesis) for s in a for t in (s.start, s.end)]
    mid, dur = _elementary(pts, end)
    ref_lab, hyp_lab = _labels_at(reference, mid), _labels_at(labeled_hypothesis, mid)
    has_ref = np.array([r is not None for r in ref_lab], dtype=bool)
    total = float(dur[has_ref].sum())
    if total <= 0:
        raise ValueError("reference has zero duration")
    correct = float(dur[has_ref & (ref_lab == hyp_lab)].sum())
    return 100.0 * correct / total


def sdr(estimate, source) -> float:
    """Scale-invariant SDR in dB, clamped to +/-100 dB."""
    est = np.asarray(getattr(estimate, "samples", estimate), dtype=float)
    src = np.asarray(getattr(source, "samples", source), dtype=float)
    if est.shape != src.shape:
        raise ValueError("estimate and source lengths differ")
    energy = float(src @ src)
    if energy == 0.0:
        raise ValueError("source is all zeros; SDR is undefined")
    target = (float(est @ src) / energy) * src
    err = est - target
    num, den = float(target @ target), float(err @ err)
    if den == 0.0:
        return SDR_CAP_DB
    if num == 0.0:
        return -SDR_CAP_DB
    return float(np.clip(10.0 * np.log10(num / den), -SDR_CAP_DB, SDR_CAP_DB))


def global_sdr(segments: Sequence[tuple]) -> float:
    """Length-weighted mean SDR over ``(estimate, source, duration)`` items."""
    if not segments:
        raise ValueError("no segments to score")
    durations = np.array([d for _, _, d in segments], dtype=float)
    values = np.array([sdr(e, s) for e, s, _ in segments])
    return float(durations @ values / durations.sum())


def sdr_report(segments: Sequence[tuple[float, Mapping[str, tuple]]]) -> SdrReport:
    """Per-segment and global SDR for several sources.

    ``segments`` holds ``(duration, {source_name: (estimate, reference)})``.
    """
    per = [(d, {name: sdr(e, s) for name, (e, s) in pairs.items()}) for d, pairs in segments]
    names = sorted({n for _, pairs in segments for n in pairs})
    glob = {}
    for n in names:
        items = [(d, v[n]) for d, v in per if n in v]
        w = np.array([d for d, _ in items])
        glob[n] = float(w @ np.array([v for _, v in items]) / w.sum())
    return SdrReport(per, glob)
