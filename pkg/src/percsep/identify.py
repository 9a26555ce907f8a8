"""Two-level cluster identification.

Level one picks the overlapped cluster with a GMM trained on overlapped
material; level two picks the ghatam cluster among the rest.  Whatever is
left is the mridangam cluster.  No mridangam model exists on purpose: the
dominant voice is too easily confused with the overlap.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dsp import FeatureMatrix
from .gmm import GaussianMixture, avg_log_likelihood, fit_em
from .segmentation import GHATAM, MRIDANGAM, OVERLAP, Annotation

N_ID_COMPONENTS = 3


@dataclass(frozen=True)
class IdentificationModels:
    overlap_model: GaussianMixture
    ghatam_model: GaussianMixture

    def save(self, path: str | Path) -> None:
        doc = {"format": "percsep.idmodels", "version": 1,
               "overlap": self.overlap_model.to_dict(), "ghatam": self.ghatam_model.to_dict()}
        Path(path).write_text(json.dumps(doc))

    @classmethod
    def load(cls, path: str | Path) -> "IdentificationModels":
        doc = json.loads(Path(path).read_text())
        if doc.get("format") != "percsep.idmodels":
            raise ValueError(f"{path}: not an identification model file")
        return cls(GaussianMixture.from_dict(doc["overlap"]), GaussianMixture.from_dict(doc["ghatam"]))


def train_models(features: FeatureMatrix, truth: Annotation, n_components: int = N_ID_COMPONENTS,
                 seed: int = 0, max_iters: int = 100) -> IdentificationModels:
    """Fit the overlap and ghatam models on frames of a labelled recording."""
    def frames_for(label):
        mask = np.zeros(features.n_frames, dtype=bool)
        for s in truth:
            if s.label == label:
                mask |= features.frames_in(s.start, s.end)
        if mask.sum() < n_components:
            raise ValueError(f"not enough {label} frames to train an identification model")
        return features.values[mask]

    return IdentificationModels(
        fit_em(frames_for(OVERLAP), n_components, max_iters=max_iters, seed=seed),
        fit_em(frames_for(GHATAM), n_components, max_iters=max_iters, seed=seed + 1),
    )


def cluster_frames(features: FeatureMatrix, clusters: Annotation) -> dict[str, np.ndarray]:
    """Frames belonging to each cluster label, pooled over all its intervals."""
    out: dict[str, np.ndarray] = {}
    for label in clusters.labels:
        mask = np.zeros(features.n_frames, dtype=bool)
        for s in clusters:
            if s.label == label:
                mask |= features.frames_in(s.start, s.end)
        out[label] = features.values[mask]
    return out


def identify(clusters: Annotation, features: FeatureMatrix, models: IdentificationModels,
             solo_only: bool = False) -> dict[str, str]:
    """Map each cluster label to MRIDANGAM, GHATAM or OVERLAP.

    Each cluster is scored by the average frame log-likelihood over all of its
    frames, so longer clusters are not penalised.  With two clusters, the
    overlap cluster is still chosen first (unless ``solo_only``) and the
    remaining one is GHATAM when it scores higher under the ghatam model than
    under the overlap model.  A single cluster is resolved the same way.
    """
    if models is None or models.overlap_model is None or models.ghatam_model is None:
        raise ValueError("identification models are not fitted")
    frames = {k: v for k, v in cluster_frames(features, clusters).items() if v.shape[0] > 0}
    names = list(frames)
    if len(names) > 3:
        raise ValueError(f"expected at most 3 clusters, got {len(names)}")
    if not names:
        raise ValueError("no cluster has any feature frames")

    ov = {c: avg_log_likelihood(models.overlap_model, frames[c]) for c in names}
    gh = {c: avg_log_likelihood(models.ghatam_model, frames[c]) for c in names}
    labels: dict[str, str] = {}

    def argmax(scores, among):
        # Ties resolve to the earliest cluster.
        return max(among, key=lambda c: (scores[c], -names.index(c)))

    remaining = list(names)
    if len(names) == 3:
        overlap = argmax(ov, remaining)
        labels[overlap] = OVERLAP
        remaining.remove(overlap)
        ghatam = argmax(gh, remaining)
        labels[ghatam] = GHATAM
        remaining.remove(ghatam)
    elif len(names) == 2:
        if solo_only:
            ghatam = argmax(gh, remaining)
            labels[ghatam] = GHATAM
            remaining.remove(ghatam)
        else:
            overlap = argmax(ov, remaining)
            labels[overlap] = OVERLAP
            remaining.remove(overlap)
            last = remaining[0]
            if gh[last] - ov[last] > 0:
                labels[last] = GHATAM
                remaining.remove(last)
    else:
        only = names[0]
        if gh[only] - ov[only] > 0:
            labels[only] = GHATAM
            remaining.remove(only)
    # Clusters too short to hold a frame fall through to the elimination label too.
    for c in remaining + [c for c in clusters.labels if c not in frames]:
        labels[c] = MRIDANGAM
    return labels


def label_annotation(clusters: Annotation, labels: dict[str, str]) -> Annotation:
    return clusters.relabel(labels).merged()
