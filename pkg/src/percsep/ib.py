"""Agglomerative information-bottleneck clustering of segments.

Each segment x carries a relevance distribution p(y|x) over the components
of a background GMM and a prior p(x) proportional to its length.  Clusters
are merged greedily to keep the objective

    F = I(Y; C) - (1 / beta) * I(C; X)

as large as possible.  For hard clusters, merging a and b lowers F by

    (p_a + p_b) * [JS_pi(p(y|a), p(y|b)) - (1 / beta) * H(pi)]

with pi = (p_a, p_b) / (p_a + p_b); H(pi) is the JS divergence of the
disjoint member distributions p(x|a), p(x|b).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import gmm as gmm_mod
from .dsp import FeatureMatrix
from .segmentation import Annotation, Segment, annotation_from_labels

POSTERIOR_FLOOR = 1e-10
# Slack for rounding when comparing NMI to the threshold (a lossless merge must not stop the loop).
NMI_TOL = 1e-12


@dataclass(frozen=True)
class IBConfig:
    beta: float = 10.0
    nmi_threshold: float = 0.4
    max_clusters: int = 3

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if not 0.0 <= self.nmi_threshold <= 1.0:
            raise ValueError("nmi_threshold must lie in [0, 1]")
        if self.max_clusters < 1:
            raise ValueError("max_clusters must be >= 1")


@dataclass(frozen=True)
class PosteriorTable:
    p_y_given_x: np.ndarray  # segments x components, rows on the simplex
    p_x: np.ndarray  # segments

    def __post_init__(self):
        if self.p_y_given_x.ndim != 2 or self.p_y_given_x.shape[0] != self.p_x.shape[0]:
            raise ValueError("p_y_given_x rows must match p_x")
        if np.any(np.abs(self.p_y_given_x.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("p(y|x) rows must sum to 1")
        if abs(self.p_x.sum() - 1.0) > 1e-9 or np.any(self.p_x < 0):
            raise ValueError("p(x) must be a distribution")

    @property
    def n_segments(self) -> int:
        return self.p_x.shape[0]

    @property
    def p_y(self) -> np.ndarray:
        return self.p_x @ self.p_y_given_x


@dataclass(frozen=True)
class MergeStep:
    step: int
    a: int
    b: int
    cost: float
    nmi: float


@dataclass
class ClusterState:
    """Hard partition of segments; cluster ids are the smallest member index."""

    table: PosteriorTable
    assignment: np.ndarray
    p_c: np.ndarray  # indexed by cluster id, zero for dead ids
    p_y_given_c: np.ndarray  # cluster id x components
    live: np.ndarray  # bool per cluster id
    merge_log: list[MergeStep] = field(default_factory=list)

    @classmethod
    def singletons(cls, table: PosteriorTable) -> "ClusterState":
        n = table.n_segments
        return cls(table, np.arange(n), table.p_x.copy(), table.p_y_given_x.copy(), np.ones(n, dtype=bool))

    @property
    def clusters(self) -> list[int]:
        return [int(c) for c in np.flatnonzero(self.live)]

    @property
    def n_clusters(self) -> int:
        return int(self.live.sum())

    def members(self, c: int) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.assignment == c)]

    def _check_live(self, *ids: int) -> None:
        for c in ids:
            if not (0 <= c < self.live.size and self.live[c]):
                raise ValueError(f"cluster {c} is not live")

    def merge(self, a: int, b: int) -> int:
        self._check_live(a, b)
        a, b = min(a, b), max(a, b)
        pa, pb = self.p_c[a], self.p_c[b]
        self.p_y_given_c[a] = (pa * self.p_y_given_c[a] + pb * self.p_y_given_c[b]) / (pa + pb)
        self.p_c[a] = pa + pb
        self.p_c[b] = 0.0
        self.p_y_given_c[b] = 0.0
        self.live[b] = False
        self.assignment[self.assignment == b] = a
        return a

    def relevance_information(self) -> float:
        """I(Y; C) in nats."""
        live = self.live
        return float(self.p_c[live] @ _kl_rows(self.p_y_given_c[live], self.table.p_y))

    def nmi(self) -> float:
        return normalized_mi(self.relevance_information(), self.table)


def _xlogy_ratio(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Elementwise p * log(p / q) with 0 log 0 = 0."""
    out = np.zeros(np.broadcast(p, q).shape)
    p_b, q_b = np.broadcast_to(p, out.shape), np.broadcast_to(q, out.shape)
    nz = p_b > 0
    out[nz] = p_b[nz] * np.log(p_b[nz] / q_b[nz])
    return out


def _kl_rows(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    return _xlogy_ratio(p, q).sum(axis=-1)


def _entropy2(pi: np.ndarray) -> np.ndarray:
    pi2 = 1.0 - pi
    return -(_xlogy_ratio(pi, np.ones_like(pi)) + _xlogy_ratio(pi2, np.ones_like(pi2)))


def mutual_information(joint: np.ndarray) -> float:
    """I(A; B) in nats for a joint probability table."""
    joint = np.asarray(joint, dtype=float)
    if np.any(joint < 0):
        raise ValueError("joint contains negative entries")
    if abs(joint.sum() - 1.0) > 1e-9:
        raise ValueError("joint must sum to 1")
    prod = joint.sum(axis=1, keepdims=True) * joint.sum(axis=0, keepdims=True)
    return max(0.0, float(_xlogy_ratio(joint, np.where(prod > 0, prod, 1.0)).sum()))


def segment_information(table: PosteriorTable) -> float:
    """I(X; Y) in nats."""
    return float(table.p_x @ _kl_rows(table.p_y_given_x, table.p_y))


def normalized_mi(i_yc: float, table: PosteriorTable) -> float:
    i_xy = segment_information(table)
    if i_xy <= 0:
        return 1.0
    # Both informations are non-negative and I(Y;C) <= I(X;Y); clip cancellation error.
    return min(max(i_yc / i_xy, 0.0), 1.0)


def _pair_costs(pa: float, qa: np.ndarray, pb: np.ndarray, qb: np.ndarray, beta: float) -> np.ndarray:
    """Merge costs between one cluster (pa, qa) and many (pb, qb rows)."""
    tot = pa + pb
    wa, wb = pa / tot, pb / tot
    mix = wa[:, None] * qa[None, :] + wb[:, None] * qb
    js_y = wa * _kl_rows(qa[None, :], mix) + wb * _kl_rows(qb, mix)
    return tot * (js_y - _entropy2(wa) / beta)


def merge_cost(state: ClusterState, a: int, b: int, beta: float) -> float:
    """Decrease in F caused by merging clusters ``a`` and ``b``."""
    if a == b:
        raise ValueError("cannot merge a cluster with itself")
    state._check_live(a, b)
    a, b = min(a, b), max(a, b)
    return float(_pair_costs(state.p_c[a], state.p_y_given_c[a], state.p_c[b:b + 1],
                             state.p_y_given_c[b:b + 1], beta)[0])


def _merged_relevance(state: ClusterState, a: int, b: int, i_yc: float) -> float:
    p_y = state.table.p_y
    pa, pb = state.p_c[a], state.p_c[b]
    qa, qb = state.p_y_given_c[a], state.p_y_given_c[b]
    qm = (pa * qa + pb * qb) / (pa + pb)
    kl = _kl_rows(np.stack([qa, qb, qm]), p_y)
    return i_yc - pa * kl[0] - pb * kl[1] + (pa + pb) * kl[2]


def agglomerate(table: PosteriorTable, cfg: IBConfig = IBConfig()) -> ClusterState:
    """Greedy bottom-up IB clustering.

    Merges the cheapest pair while more than ``cfg.max_clusters`` clusters
    remain and the merge keeps NMI = I(Y;C) / I(X;Y) at or above
    ``cfg.nmi_threshold``.  The cap is therefore reached unless relevance
    information collapses first.  Ties go to the lowest (a, b) pair.
    """
    state = ClusterState.singletons(table)
    n = table.n_segments
    cost = np.full((n, n), np.inf)
    for a in range(n - 1):
        cost[a, a + 1:] = _pair_costs(state.p_c[a], state.p_y_given_c[a], state.p_c[a + 1:],
                                      state.p_y_given_c[a + 1:], cfg.beta)
    i_yc = state.relevance_information()
    step = 0
    while state.n_clusters > 1:
        flat = int(np.argmin(cost))
        a, b = divmod(flat, n)
        i_after = _merged_relevance(state, a, b, i_yc)
        nmi_after = normalized_mi(i_after, table)
        if state.n_clusters <= cfg.max_clusters or nmi_after < cfg.nmi_threshold - NMI_TOL:
            break
        c = float(cost[a, b])
        state.merge(a, b)
        i_yc = state.relevance_information()
        state.merge_log.append(MergeStep(step, a, b, c, state.nmi()))
        step += 1
        cost[b, :] = np.inf
        cost[:, b] = np.inf
        others = np.flatnonzero(state.live)
        others = others[others != a]
        if others.size:
            row = _pair_costs(state.p_c[a], state.p_y_given_c[a], state.p_c[others],
                              state.p_y_given_c[others], cfg.beta)
            lo, hi = others < a, others > a
            cost[others[lo], a] = row[lo]
            cost[a, others[hi]] = row[hi]
    return state


def write_merge_log(path: str | Path, state: ClusterState) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "a", "b", "cost", "nmi"])
        for m in state.merge_log:
            w.writerow([m.step, m.a, m.b, repr(m.cost), repr(m.nmi)])


def build_posterior_table(gmm: gmm_mod.GaussianMixture, features: FeatureMatrix,
                          segments: Sequence[Segment]) -> PosteriorTable:
    """Average frame posteriors per segment; p(x) proportional to frame count.

    Entries are floored at ``POSTERIOR_FLOOR`` and renormalised so every
    relevance variable keeps non-zero mass.
    """
    post = gmm_mod.posteriors(gmm, features.values)
    rows, counts = [], []
    for s in segments:
        mask = features.frames_in(s.start, s.end)
        k = int(mask.sum())
        if k == 0:
            raise ValueError(f"segment [{s.start:.3f}, {s.end:.3f}) contains no feature frames")
        row = np.maximum(post[mask].mean(axis=0), POSTERIOR_FLOOR)
        rows.append(row / row.sum())
        counts.append(k)
    counts = np.array(counts, dtype=float)
    return PosteriorTable(np.array(rows), counts / counts.sum())


def cluster_annotation(state: ClusterState, segments: Sequence[Segment]) -> Annotation:
    """Segment-level clustering as an annotation labelled C0, C1, ... by cluster id order."""
    names = {c: f"C{i}" for i, c in enumerate(state.clusters)}
    bounds = [segments[0].start] + [s.end for s in segments]
    return annotation_from_labels(bounds, [names[int(c)] for c in state.assignment])


# ---------------------------------------------------------------------------
# Boundary realignment


def viterbi_min_duration(loglik: np.ndarray, min_frames: int, switch_penalty: float) -> np.ndarray:
    """Best state path under a minimum-duration constraint.

    Each state is expanded into a left-to-right chain of ``min_frames``
    sub-states; only the last one may loop or exit.  Switching costs
    ``switch_penalty`` nats.  Returns one state index per frame.
    """
    T, C = loglik.shape
    L = max(1, int(min_frames))
    if T < L:
        L = T
    delta = np.full((C, L), -np.inf)
    delta[:, 0] = loglik[0] - np.log(C)
    enter_from = np.zeros((T, C), dtype=np.int64)
    stayed = np.zeros((T, C), dtype=bool)
    idx = np.arange(C)
    for t in range(1, T):
        last = delta[:, L - 1]
        if C > 1:
            order = np.argsort(-last, kind="stable")
            best, second = order[0], order[1]
            src = np.where(idx == best, second, best)
        else:
            src = idx
        enter = last[src] - switch_penalty if C > 1 else np.full(C, -np.inf)
        new = np.empty_like(delta)
        if L == 1:
            stay = last >= enter
            new[:, 0] = np.where(stay, last, enter)
        else:
            new[:, 0] = enter
            new[:, 1:L - 1] = delta[:, :L - 2]
            stay = delta[:, L - 1] >= delta[:, L - 2]
            new[:, L - 1] = np.where(stay, delta[:, L - 1], delta[:, L - 2])
        enter_from[t] = src
        stayed[t] = stay
        delta = new + loglik[t][:, None]

    end = delta[:, L - 1]
    if np.all(np.isneginf(end)):
        c, i = np.unravel_index(int(np.argmax(delta)), delta.shape)
    else:
        c, i = int(np.argmax(end)), L - 1
    path = np.empty(T, dtype=np.int64)
    for t in range(T - 1, -1, -1):
        path[t] = c
        if t == 0:
            break
        if i == L - 1 and stayed[t, c]:
            continue
        if i == 0:
            c, i = int(enter_from[t, c]), L - 1
        else:
            i -= 1
    return path


def _cluster_models(x: np.ndarray, labels: np.ndarray, ids: Sequence[int], n_components: int,
                    seed: int) -> list[gmm_mod.GaussianMixture]:
    models = []
    for c in ids:
        frames = x[labels == c]
        k = n_components if frames.shape[0] >= 20 * n_components else 1
        models.append(gmm_mod.fit_em(frames, k, max_iters=50, seed=seed))
    return models


def realign(features: FeatureMatrix, state: ClusterState, segments: Sequence[Segment],
            min_dur: float = 0.5, duration: float | None = None, n_components: int = 8,
            switch_penalty: float = 5.0, passes: int = 2, seed: int = 0) -> Annotation:
    """Refine cluster boundaries at frame level.

    Fits one diagonal GMM per cluster on its member frames and Viterbi-decodes
    the frame sequence with a ``min_dur`` minimum stay, refitting between
    passes.  Maximising the path likelihood is equivalent to minimising the
    KL divergence between frame evidence and the cluster models.
    """
    x = features.values
    times = features.frame_times
    labels = np.full(features.n_frames, -1)
    for seg, c in zip(segments, state.assignment):
        labels[features.frames_in(seg.start, seg.end)] = c
    if np.any(labels < 0):
        # Frames outside every segment take the label of the nearest segment start.
        starts = np.array([s.start for s in segments])
        near = np.clip(np.searchsorted(starts, times, side="right") - 1, 0, len(segments) - 1)
        labels = np.where(labels < 0, state.assignment[near], labels)

    ids = sorted(set(int(c) for c in labels))
    names = {c: f"C{i}" for i, c in enumerate(state.clusters)}
    min_frames = max(1, int(round(min_dur / features.hop_seconds)))
    for _ in range(passes if len(ids) > 1 else 0):
        models = _cluster_models(x, labels, ids, n_components, seed)
        ll = np.stack([m.log_density(x) for m in models], axis=1)
        path = viterbi_min_duration(ll, min_frames, switch_penalty)
        labels = np.array(ids)[path]
        ids = sorted(set(int(c) for c in labels))

    end = duration if duration is not None else times[-1] + features.hop_seconds / 2
    bounds = np.concatenate([[0.0], 0.5 * (times[1:] + times[:-1]), [end]])
    return annotation_from_labels(bounds, [names[int(c)] for c in labels])
