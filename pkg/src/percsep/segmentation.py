"""Initial segmentation and the labelled-interval annotation type.

All intervals are half-open, ``[start, end)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MRIDANGAM = "MRIDANGAM"
GHATAM = "GHATAM"
OVERLAP = "OVERLAP"


@dataclass(frozen=True)
class Segment:
    start: float
    end: float
    label: str | None = None

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise ValueError(f"invalid segment [{self.start}, {self.end})")

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class Annotation:
    segments: tuple[Segment, ...] = field(default_factory=tuple)

    def __post_init__(self):
        segs = tuple(self.segments)
        for prev, cur in zip(segs, segs[1:]):
            if cur.start < prev.start:
                raise ValueError("segments must be sorted by start time")
            if cur.start < prev.end - 1e-9:
                raise ValueError(f"segments overlap at {cur.start:.3f}s")
        object.__setattr__(self, "segments", segs)

    def __len__(self) -> int:
        return len(self.segments)

    def __iter__(self):
        return iter(self.segments)

    @property
    def end(self) -> float:
        return self.segments[-1].end if self.segments else 0.0

    @property
    def labels(self) -> list[str]:
        """Distinct labels in order of first appearance."""
        seen: dict[str, None] = {}
        for s in self.segments:
            seen.setdefault(s.label, None)
        return list(seen)

    def merged(self) -> "Annotation":
        """Join touching segments that carry the same label."""
        out: list[Segment] = []
        for s in self.segments:
            if out and out[-1].label == s.label and abs(out[-1].end - s.start) < 1e-9:
                out[-1] = replace(out[-1], end=s.end)
            else:
                out.append(s)
        return Annotation(tuple(out))

    def relabel(self, mapping: dict) -> "Annotation":
        return Annotation(tuple(replace(s, label=mapping.get(s.label, s.label)) for s in self.segments))

    def label_durations(self) -> dict[str, float]:
        out: dict[str, float] = {}
        for s in self.segments:
            out[s.label] = out.get(s.label, 0.0) + s.duration
        return out

    def check_cover(self, duration: float, tol: float = 1e-6) -> None:
        """Raise if the segments do not tile [0, duration] without gaps."""
        t = 0.0
        for s in self.segments:
            if abs(s.start - t) > tol:
                raise ValueError(f"coverage gap at {t:.3f}s")
            t = s.end
        if abs(t - duration) > tol:
            raise ValueError(f"annotation ends at {t:.3f}s, expected {duration:.3f}s")


def segment_fixed(duration_total: float, seg_len: float = 2.0) -> list[Segment]:
    if duration_total <= 0 or seg_len <= 0:
        raise ValueError("duration_total and seg_len must be positive")
    n_full = int(np.floor(duration_total / seg_len + 1e-9))
    bounds = [i * seg_len for i in range(n_full + 1)]
    if duration_total - bounds[-1] > 1e-9:
        bounds.append(duration_total)
    bounds[-1] = duration_total
    return [Segment(a, b) for a, b in zip(bounds, bounds[1:])]


def segment_by_strokes(onsets: Sequence[float], duration_total: float, min_strokes: int = 15) -> list[Segment]:
    """Varying-length segments holding ``min_strokes`` consecutive onsets each.

    Cuts fall midway between the last onset of one segment and the first of the
    next.  Only the final segment may hold fewer strokes.
    """
    if min_strokes < 1:
        raise ValueError("min_strokes must be >= 1")
    if duration_total <= 0:
        raise ValueError("duration_total must be positive")
    onsets = np.asarray(onsets, dtype=float)
    bounds = [0.0]
    for k in range(min_strokes, len(onsets), min_strokes):
        cut = 0.5 * (onsets[k - 1] + onsets[k])
        if bounds[-1] < cut < duration_total:
            bounds.append(float(cut))
    bounds.append(float(duration_total))
    return [Segment(a, b) for a, b in zip(bounds, bounds[1:])]


def write_rttm(path: str | Path, annotation: Annotation, file_id: str = "rec") -> None:
    Path(path).write_text(format_rttm(annotation, file_id))


def format_rttm(annotation: Annotation, file_id: str = "rec") -> str:
    lines = []
    for s in annotation:
        start = round(s.start, 3)
        dur = round(round(s.end, 3) - start, 3)
        lines.append(f"SPEAKER {file_id} 1 {start:.3f} {dur:.3f} <NA> <NA> {s.label} <NA> <NA>")
    return "".join(line + "\n" for line in lines)


def parse_rttm(text: str) -> Annotation:
    segs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        fields = line.split()
        if not fields or fields[0].startswith("#"):
            continue
        if fields[0] != "SPEAKER" or len(fields) < 8:
            raise ValueError(f"line {lineno}: not an RTTM SPEAKER record")
        start = float(fields[3])
        end = round(start + float(fields[4]), 3)
        segs.append(Segment(start, end, fields[7]))
    segs.sort(key=lambda s: s.start)
    return Annotation(tuple(segs))


def read_rttm(path: str | Path) -> Annotation:
    return parse_rttm(Path(path).read_text())


def annotation_from_labels(bounds: Iterable[float], labels: Iterable[str]) -> Annotation:
    """Build an annotation from ``n + 1`` boundaries and ``n`` labels, merging repeats."""
    b = list(bounds)
    return Annotation(tuple(Segment(s, e, lab) for s, e, lab in zip(b, b[1:], labels))).merged()
