"""Acquisition scores and batch selection.

Score-based strategies (Random, Confidence, Ale, ALM, QBC, BALD, CAAL) rank
candidates and take the top B. Embedding-based strategies (Coreset, LCMD,
BADGE) select directly in embedding space. Every tie is broken towards the
lowest candidate index so selections are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .ensemble import PredictiveSummary
from .errors import BudgetError, ConfigError

NORM_EPS = 1e-6

SCORE_STRATEGIES = ("random", "confidence", "ale", "alm", "qbc", "bald", "caal")
EMBEDDING_STRATEGIES = ("coreset", "lcmd", "badge")
STRATEGIES = SCORE_STRATEGIES + EMBEDDING_STRATEGIES


@dataclass(frozen=True)
class StrategyKind:
    kind: str = "caal"
    beta: float = 1.0

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.kind!r}; expected one of {STRATEGIES}")
        if not self.beta >= 0:
            raise ConfigError(f"beta must be >= 0, got {self.beta}")

    @property
    def score_based(self) -> bool:
        return self.kind in SCORE_STRATEGIES


@dataclass
class PoolStats:
    summary: PredictiveSummary
    embeddings: Optional[np.ndarray]
    epi_norm: np.ndarray
    ale_norm: np.ndarray

    @classmethod
    def from_summary(cls, summary: PredictiveSummary, embeddings=None) -> "PoolStats":
        return cls(summary, embeddings, minmax_normalize(summary.epi), minmax_normalize(summary.ale))

    @property
    def epi(self):
        return self.summary.epi

    @property
    def ale(self):
        return self.summary.ale

    def __len__(self):
        return len(self.summary.epi)


@dataclass
class AcquisitionScore:
    """Scores for a pool; ``score`` is NaN for embedding-based strategies."""

    score: np.ndarray
    epi_norm: np.ndarray
    ale_norm: np.ndarray


def minmax_normalize(values) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ConfigError("cannot normalise an empty pool")
    lo = v.min()
    return (v - lo) / (v.max() - lo + NORM_EPS)


def caal_score(epi_norm, ale_norm, beta: float = 1.0):
    return np.asarray(epi_norm) * (1.0 - np.asarray(ale_norm)) ** beta


def bald_score(summary: PredictiveSummary):
    """0.5 log(epi + ale) - mean_m 0.5 log sigma2_m.

    Variances are taken relative to the first member so that agreeing members
    give exactly 0; the score is non-negative by Jensen's inequality and
    round-off below 0 is clamped.
    """
    s2 = summary.member_sigma2
    ref = s2[:, :1]
    ratio = s2 / ref
    total = summary.epi / ref[:, 0] + ratio.mean(axis=1)
    return np.maximum(0.5 * (np.log(total) - np.log(ratio).mean(axis=1)), 0.0)


def score(strategy: StrategyKind, stats: PoolStats, rng=None) -> AcquisitionScore:
    k = strategy.kind
    if k == "random":
        rng = np.random.default_rng(rng)
        s = rng.uniform(size=len(stats))
    elif k == "confidence":
        s = 1.0 - stats.ale_norm
    elif k == "ale":
        s = stats.ale.copy()
    elif k == "alm":
        s = stats.epi + stats.ale
    elif k == "qbc":
        s = stats.epi.copy()
    elif k == "bald":
        s = bald_score(stats.summary)
    elif k == "caal":
        s = caal_score(stats.epi_norm, stats.ale_norm, strategy.beta)
    else:
        s = np.full(len(stats), np.nan)
    return AcquisitionScore(s, stats.epi_norm, stats.ale_norm)


def select_topB(scores, B: int) -> np.ndarray:
    """Indices of the B largest scores, ties to the lowest index, in rank order."""
    scores = np.asarray(scores, dtype=float)
    if B < 0 or B > scores.size:
        raise BudgetError(f"cannot select {B} of {scores.size} candidates")
    return np.argsort(-scores, kind="stable")[:B]


def _sqdist(a, b):
    return ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1)


def kcenter_greedy(pool_embeddings, labelled_embeddings, B: int) -> np.ndarray:
    """Farthest-first traversal seeded with the labelled points.

    Without labelled points the first centre is pool index 0.
    """
    pool = np.asarray(pool_embeddings, dtype=float)
    if pool.ndim == 1:
        pool = pool[:, None]
    if len(pool) == 0:
        raise BudgetError("empty pool")
    if B < 0 or B > len(pool):
        raise BudgetError(f"cannot select {B} of {len(pool)} candidates")
    labelled = np.asarray(labelled_embeddings, dtype=float).reshape(-1, pool.shape[1])
    if len(labelled):
        nearest = np.sqrt(_sqdist(pool, labelled).min(axis=1))
    else:
        nearest = np.full(len(pool), np.inf)
    chosen = []
    for _ in range(B):
        if not chosen and not len(labelled):
            i = 0
        else:
            masked = nearest.copy()
            masked[chosen] = -np.inf
            i = int(np.argmax(masked))
        chosen.append(i)
        nearest = np.minimum(nearest, np.sqrt(((pool - pool[i]) ** 2).sum(axis=1)))
    return np.array(chosen, dtype=int)


def kmeans_pp_init(points, k: int, rng) -> np.ndarray:
    """k-means++ seeding; returns indices of the seed points."""
    n = len(points)
    first = int(rng.integers(n))
    seeds = [first]
    d2 = ((points - points[first]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            i = int(rng.choice(n, p=d2 / total))
        else:
            unused = np.setdiff1d(np.arange(n), seeds)
            i = int(unused[0])
        seeds.append(i)
        d2 = np.minimum(d2, ((points - points[i]) ** 2).sum(axis=1))
    return np.array(seeds)


def kmeans(embeddings, k: int, seed=0, max_iter: int = 100, tol: float = 1e-6):
    """Lloyd's algorithm with k-means++ seeding. Returns (assignments, centroids)."""
    x = np.asarray(embeddings, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = len(x)
    if k < 1 or k > n:
        raise BudgetError(f"cannot form {k} clusters from {n} points")
    rng = np.random.default_rng(seed)
    centroids = x[kmeans_pp_init(x, k, rng)].copy()
    assign = None
    for _ in range(max_iter):
        new_assign = np.argmin(_sqdist(x, centroids), axis=1)
        new_centroids = centroids.copy()
        for c in range(k):
            members = new_assign == c
            if members.any():
                new_centroids[c] = x[members].mean(axis=0)
        _repair_empty(x, new_assign, new_centroids, k)
        shift = np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max()
        unchanged = assign is not None and np.array_equal(new_assign, assign)
        centroids, assign = new_centroids, new_assign
        if unchanged or shift < tol:
            break
    assign = np.argmin(_sqdist(x, centroids), axis=1)
    return assign, centroids


def _repair_empty(x, assign, centroids, k):
    counts = np.bincount(assign, minlength=k)
    for c in np.flatnonzero(counts == 0):
        # reseed at the point farthest from its own centroid
        far = np.sqrt(((x - centroids[assign]) ** 2).sum(axis=1))
        i = int(np.argmax(far))
        centroids[c] = x[i]
        assign[i] = c


def nearest_to_centroids(embeddings, assignments, centroids) -> np.ndarray:
    """One representative per cluster: the member closest to its centroid.

    Clusters are visited in index order and a point is never picked twice; a
    cluster with no unused member takes the closest unused point overall.
    """
    x = np.asarray(embeddings, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    taken = np.zeros(len(x), dtype=bool)
    picks = []
    for c, centroid in enumerate(centroids):
        d = np.sqrt(((x - centroid) ** 2).sum(axis=1))
        candidates = (assignments == c) & ~taken
        if not candidates.any():
            candidates = ~taken
        d = np.where(candidates, d, np.inf)
        i = int(np.argmin(d))
        taken[i] = True
        picks.append(i)
    return np.array(picks, dtype=int)


def select_lcmd(embeddings, B: int, seed=0) -> np.ndarray:
    assign, centroids = kmeans(embeddings, B, seed)
    return nearest_to_centroids(embeddings, assign, centroids)


def badge_embeddings(embeddings, epi) -> np.ndarray:
    z = np.asarray(embeddings, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    return z * np.sqrt(np.maximum(np.asarray(epi, dtype=float), 0.0))[:, None]


def badge_select(stats: PoolStats, B: int, seed=0) -> np.ndarray:
    g = badge_embeddings(stats.embeddings, stats.epi)
    assign, centroids = kmeans(g, B, seed)
    return nearest_to_centroids(g, assign, centroids)


def select(strategy: StrategyKind, stats: PoolStats, B: int, rng=None,
           labelled_embeddings=None) -> tuple:
    """Pick B candidates. Returns (indices, AcquisitionScore)."""
    if B < 1 or B > len(stats):
        raise BudgetError(f"cannot select {B} of {len(stats)} candidates")
    rng = np.random.default_rng(rng)
    scores = score(strategy, stats, rng)
    k = strategy.kind
    if strategy.score_based:
        picks = select_topB(scores.score, B)
    elif k == "coreset":
        labelled = labelled_embeddings if labelled_embeddings is not None else np.empty((0, stats.embeddings.shape[1]))
        picks = kcenter_greedy(stats.embeddings, labelled, B)
    elif k == "lcmd":
        picks = select_lcmd(stats.embeddings, B, rng)
    else:
        picks = badge_select(stats, B, rng)
    return picks, scores
