"""Diagonal-covariance Gaussian mixtures trained by EM."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

VARIANCE_FLOOR = 1e-6
FORMAT_VERSION = 1
LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, D)
    variances: np.ndarray  # (K, D)
    # Total data log-likelihood after each EM iteration (empty when loaded from disk).
    history: tuple[float, ...] = field(default=(), repr=False)

    def __post_init__(self):
        k, d = self.means.shape
        if self.weights.shape != (k,) or self.variances.shape != (k, d):
            raise ValueError("inconsistent mixture parameter shapes")
        if abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError("weights must sum to 1")
        if np.any(self.variances < VARIANCE_FLOOR * (1 - 1e-12)):
            raise ValueError("variances below floor")

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def component_log_density(self, data: np.ndarray) -> np.ndarray:
        """log w_k + log N(x | mu_k, diag var_k), shape (N, K)."""
        x = np.atleast_2d(np.asarray(data, dtype=float))
        if x.shape[1] != self.dim:
            raise ValueError(f"frame dimension {x.shape[1]} != mixture dimension {self.dim}")
        inv = 1.0 / self.variances
        quad = (x * x) @ inv.T - 2.0 * x @ (self.means * inv).T + np.sum(self.means ** 2 * inv, axis=1)
        np.maximum(quad, 0.0, out=quad)
        log_norm = -0.5 * (self.dim * LOG_2PI + np.sum(np.log(self.variances), axis=1))
        with np.errstate(divide="ignore"):
            log_w = np.log(self.weights)
        return log_w + log_norm - 0.5 * quad

    def log_density(self, data: np.ndarray) -> np.ndarray:
        return logsumexp(self.component_log_density(data), axis=1)

    def to_dict(self) -> dict:
        return {
            "format": "percsep.gmm",
            "version": FORMAT_VERSION,
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GaussianMixture":
        if d.get("format") != "percsep.gmm" or d.get("version") != FORMAT_VERSION:
            raise ValueError("not a version-1 percsep GMM document")
        return cls(np.array(d["weights"], dtype=float), np.array(d["means"], dtype=float),
                   np.array(d["variances"], dtype=float))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "GaussianMixture":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _as_array(data) -> np.ndarray:
    values = getattr(data, "values", data)
    x = np.asarray(values, dtype=float)
    if x.ndim != 2:
        raise ValueError("expected a 2-D frames x dims array")
    return x


def kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding; returns the indices of the chosen centres."""
    n = x.shape[0]
    idx = [int(rng.integers(n))]
    d2 = np.sum((x - x[idx[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            # Every remaining point coincides with a centre.
            j = int(rng.integers(n))
        else:
            j = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            j = min(j, n - 1)
        idx.append(j)
        d2 = np.minimum(d2, np.sum((x - x[j]) ** 2, axis=1))
    return np.array(idx)


def _m_step(x: np.ndarray, resp: np.ndarray, var_floor: float):
    # Moments are taken about the data mean to limit cancellation in E[x^2] - mu^2.
    centre = x.mean(axis=0)
    xc = x - centre
    nk = resp.sum(axis=0)
    safe = np.maximum(nk, 1e-300)[:, None]
    mc = (resp.T @ xc) / safe
    variances = np.maximum((resp.T @ (xc * xc)) / safe - mc * mc, var_floor)
    weights = nk / nk.sum()
    return weights, mc + centre, variances


def _logsumexp_rows(a: np.ndarray) -> np.ndarray:
    m = np.max(a, axis=1, keepdims=True)
    m[~np.isfinite(m)] = 0.0
    return (m + np.log(np.sum(np.exp(a - m), axis=1, keepdims=True)))[:, 0]


def fit_em(data, k: int, max_iters: int = 100, seed: int = 0, tol: float = 1e-6,
           var_floor: float = VARIANCE_FLOOR) -> GaussianMixture:
    """Fit a K-component diagonal GMM by EM from a seeded k-means++ start.

    Stops when the mean per-frame log-likelihood changes by less than ``tol``
    or after ``max_iters`` iterations.
    """
    x = _as_array(data)
    n = x.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if n < k:
        raise ValueError(f"need at least k={k} frames, got {n}")
    rng = np.random.default_rng(seed)

    centres = x[kmeans_pp(x, k, rng)]
    d2 = (x * x).sum(1)[:, None] - 2.0 * x @ centres.T + (centres * centres).sum(1)[None, :]
    hard = np.argmin(d2, axis=1)
    resp = np.zeros((n, k))
    resp[np.arange(n), hard] = 1.0
    weights, means, variances = _m_step(x, resp, var_floor)
    # Components that captured no points start at their seed with the global spread.
    empty = resp.sum(axis=0) == 0
    if np.any(empty):
        means[empty] = centres[empty]
        variances[empty] = np.maximum(x.var(axis=0), var_floor)
        weights = np.where(empty, 1.0 / n, weights)
        weights /= weights.sum()

    history: list[float] = []
    for it in range(max_iters + 1):
        comp = GaussianMixture(weights, means, variances).component_log_density(x)
        ll_frames = _logsumexp_rows(comp)
        history.append(float(ll_frames.sum()))
        if it == max_iters or (it > 0 and abs(history[-1] - history[-2]) < tol * n):
            break
        resp = np.exp(comp - ll_frames[:, None])
        weights, means, variances = _m_step(x, resp, var_floor)
    return GaussianMixture(weights, means, variances, tuple(history))


def posteriors(gmm: GaussianMixture, frame) -> np.ndarray:
    """Component posteriors p(y | x) for one frame (1-D) or many (2-D)."""
    comp = gmm.component_log_density(frame)
    post = np.exp(comp - logsumexp(comp, axis=1, keepdims=True))
    return post[0] if np.ndim(frame) == 1 else post


def avg_log_likelihood(gmm: GaussianMixture, data) -> float:
    """Mean per-frame log density in nats."""
    x = _as_array(data) if np.ndim(getattr(data, "values", data)) == 2 else np.atleast_2d(data)
    if x.shape[0] == 0:
        raise ValueError("cannot score empty data")
    return float(np.mean(gmm.log_density(x)))
