"""Query-selection strategies for pool-based active learning.

All seven selectors implement one contract: given the current embeddings,
labeled/unlabeled partition, and trained classifier, pick n unlabeled
indices. Every tie breaks to the lowest index and every stochastic step is
seeded, so selections are deterministic given (context, seed).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial.distance import pdist

from .classifier import MlpClassifier


class StrategyError(Exception):
    pass


class StrategyKind(str, enum.Enum):
    RANDOM = "random"
    CONFIDENCE = "confidence"
    MARGIN = "margin"
    ENTROPY = "entropy"
    INFORMATIVE_DIVERSE = "informative-diverse"
    MARGIN_CLUSTER_MEAN = "margin-cluster-mean"
    KCENTER = "k-center"

    @classmethod
    def parse(cls, name: str) -> "StrategyKind":
        try:
            return cls(name)
        except ValueError:
            valid = ", ".join(k.value for k in cls)
            raise StrategyError(f"unknown strategy {name!r}; valid names: {valid}")


@dataclass
class SelectionContext:
    embeddings: np.ndarray                 # (pool, D)
    labeled: np.ndarray                    # labeled pool indices
    unlabeled: np.ndarray                  # unlabeled pool indices
    classifier: MlpClassifier | None
    rng: np.random.Generator
    margin_threshold: float = 0.2          # margin-cluster-mean region width
    cluster_count: int | None = None       # informative-diverse cluster count
    cluster_cache: dict = field(default_factory=dict)

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        self.labeled = np.asarray(sorted(self.labeled), dtype=int)
        self.unlabeled = np.asarray(sorted(self.unlabeled), dtype=int)
        if np.intersect1d(self.labeled, self.unlabeled).size:
            raise StrategyError("labeled and unlabeled sets overlap")

    def check_n(self, n: int) -> None:
        if n < 1 or n > self.unlabeled.size:
            raise StrategyError(
                f"cannot select {n} items from {self.unlabeled.size} unlabeled"
            )

    def probs(self) -> np.ndarray:
        if self.classifier is None:
            raise StrategyError("strategy requires a trained classifier")
        return self.classifier.predict_proba_batch(self.embeddings[self.unlabeled])


def select(kind: StrategyKind, ctx: SelectionContext, n: int) -> list[int]:
    return _DISPATCH[StrategyKind(kind)](ctx, n)


def _take_lowest_scores(unlabeled: np.ndarray, scores: np.ndarray, n: int) -> list[int]:
    # Stable sort over index-ordered items = lowest-index tie-break.
    order = np.argsort(scores, kind="stable")
    return [int(unlabeled[i]) for i in order[:n]]


def select_random(ctx: SelectionContext, n: int) -> list[int]:
    """Uniform without replacement from the unlabeled pool."""
    ctx.check_n(n)
    picked = ctx.rng.choice(ctx.unlabeled, size=n, replace=False)
    return [int(i) for i in picked]


def select_confidence(ctx: SelectionContext, n: int) -> list[int]:
    """Lowest top-class probability first."""
    ctx.check_n(n)
    return _take_lowest_scores(ctx.unlabeled, ctx.probs().max(axis=1), n)


def margin_scores(probs: np.ndarray) -> np.ndarray:
    """Gap between the top two class probabilities per row."""
    part = np.sort(probs, axis=1)
    return part[:, -1] - part[:, -2]


def select_margin(ctx: SelectionContext, n: int) -> list[int]:
    """Smallest top-two probability gap first."""
    ctx.check_n(n)
    return _take_lowest_scores(ctx.unlabeled, margin_scores(ctx.probs()), n)


def entropy_scores(probs: np.ndarray) -> np.ndarray:
    """Shannon entropy (natural log) per row, with 0 * log 0 = 0."""
    p = np.asarray(probs, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p), 0.0)
    return -terms.sum(axis=1)


def select_entropy(ctx: SelectionContext, n: int) -> list[int]:
    """Highest predictive entropy first."""
    ctx.check_n(n)
    return _take_lowest_scores(ctx.unlabeled, -entropy_scores(ctx.probs()), n)


def select_kcenter(ctx: SelectionContext, n: int) -> list[int]:
    """Greedy farthest-first traversal against labeled + already selected.

    Distances are squared Euclidean internally; the argmax is the same as
    for Euclidean. With no labeled items and nothing selected yet, the
    first pick is the lowest unlabeled index.
    """
    ctx.check_n(n)
    emb = ctx.embeddings
    unl = ctx.unlabeled
    if ctx.labeled.size:
        diffs = emb[unl][:, None, :] - emb[ctx.labeled][None, :, :]
        min_d2 = np.min(np.sum(diffs * diffs, axis=2), axis=1)
    else:
        min_d2 = np.full(unl.size, np.inf)
    selected: list[int] = []
    available = np.ones(unl.size, dtype=bool)
    for _ in range(n):
        if not np.isfinite(min_d2[available]).any() and not selected and not ctx.labeled.size:
            pick_pos = int(np.flatnonzero(available)[0])  # lowest index
        else:
            masked = np.where(available, min_d2, -np.inf)
            pick_pos = int(np.argmax(masked))  # argmax ties to lowest index
        pick = int(unl[pick_pos])
        selected.append(pick)
        available[pick_pos] = False
        d2 = np.sum((emb[unl] - emb[pick]) ** 2, axis=1)
        min_d2 = np.minimum(min_d2, d2)
    return selected


def covering_radius(embeddings: np.ndarray, centers) -> float:
    """Max over all points of the distance to the nearest center."""
    centers = np.asarray(list(centers), dtype=int)
    diffs = embeddings[:, None, :] - embeddings[centers][None, :, :]
    return float(np.sqrt(np.min(np.sum(diffs * diffs, axis=2), axis=1)).max())


def largest_remainder_quotas(sizes: np.ndarray, n: int) -> np.ndarray:
    """Integer quotas proportional to sizes summing to n.

    Floors plus largest fractional remainders; remainder ties go to the
    lower cluster index.
    """
    sizes = np.asarray(sizes, dtype=np.float64)
    exact = n * sizes / sizes.sum()
    quotas = np.floor(exact).astype(int)
    remainder = n - quotas.sum()
    frac = exact - np.floor(exact)
    order = np.argsort(-frac, kind="stable")
    for i in order[:remainder]:
        quotas[i] += 1
    return quotas


def _pool_cluster_assignment(ctx: SelectionContext, n_clusters: int) -> np.ndarray:
    """Average-linkage agglomerative clustering of the full pool.

    Cached on the context: the assignment only depends on the embeddings,
    so repeated selections in one embedding version reuse it.
    """
    key = ("agglomerative", n_clusters)
    if key not in ctx.cluster_cache:
        if ctx.embeddings.shape[0] == 1 or n_clusters == 1:
            assign = np.zeros(ctx.embeddings.shape[0], dtype=int)
        else:
            z = linkage(pdist(ctx.embeddings), method="average")
            assign = fcluster(z, t=n_clusters, criterion="maxclust") - 1
        ctx.cluster_cache[key] = assign
    return ctx.cluster_cache[key]


def select_informative_diverse(ctx: SelectionContext, n: int) -> list[int]:
    """Uncertain samples spread across clusters of the whole pool.

    Per-cluster quotas are proportional to cluster size (largest-remainder
    rounding); within a cluster the most margin-uncertain unlabeled items
    win; unfilled quota spills to the globally most uncertain remainder.
    """
    ctx.check_n(n)
    pool_size = ctx.embeddings.shape[0]
    c = ctx.cluster_count or min(20, int(np.ceil(np.sqrt(pool_size))))
    assign = _pool_cluster_assignment(ctx, c)
    n_clusters = int(assign.max()) + 1
    gaps = margin_scores(ctx.probs())

    sizes = np.bincount(assign, minlength=n_clusters)
    quotas = largest_remainder_quotas(sizes, n)

    chosen: list[int] = []
    chosen_set: set[int] = set()
    for cl in range(n_clusters):
        members = np.flatnonzero(assign[ctx.unlabeled] == cl)
        take = min(quotas[cl], members.size)
        if take == 0:
            continue
        order = np.argsort(gaps[members], kind="stable")
        for pos in order[:take]:
            idx = int(ctx.unlabeled[members[pos]])
            chosen.append(idx)
            chosen_set.add(idx)
    if len(chosen) < n:
        # Spill: globally most uncertain of what's left.
        order = np.argsort(gaps, kind="stable")
        for pos in order:
            idx = int(ctx.unlabeled[pos])
            if idx not in chosen_set:
                chosen.append(idx)
                chosen_set.add(idx)
                if len(chosen) == n:
                    break
    return chosen


def _farthest_first_centroids(
    points: np.ndarray, k: int, rng: np.random.Generator
) -> np.ndarray:
    first = int(rng.integers(points.shape[0]))
    centers = [points[first]]
    d2 = np.sum((points - points[first]) ** 2, axis=1)
    for _ in range(k - 1):
        nxt = int(np.argmax(d2))
        centers.append(points[nxt])
        d2 = np.minimum(d2, np.sum((points - points[nxt]) ** 2, axis=1))
    return np.array(centers)


def _lloyd(points: np.ndarray, k: int, rng: np.random.Generator, iters: int = 100):
    centroids = _farthest_first_centroids(points, k, rng)
    assign = None
    for _ in range(iters):
        d2 = np.sum((points[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
        new_assign = np.argmin(d2, axis=1)
        for cl in range(k):
            members = new_assign == cl
            if members.any():
                centroids[cl] = points[members].mean(axis=0)
            else:
                # Reseed an empty cluster to the point farthest from all centroids.
                centroids[cl] = points[int(np.argmax(d2.min(axis=1)))]
        if assign is not None and np.array_equal(assign, new_assign):
            break
        assign = new_assign
    return centroids


def select_margin_cluster_mean(ctx: SelectionContext, n: int) -> list[int]:
    """Cluster the low-margin region and pick one item nearest each centroid.

    The margin region is the unlabeled items whose top-two probability gap
    is below the threshold. An empty region falls back to plain margin
    selection; a region smaller than n is taken whole and topped up by
    margin selection.
    """
    ctx.check_n(n)
    gaps = margin_scores(ctx.probs())
    region_pos = np.flatnonzero(gaps < ctx.margin_threshold)
    if region_pos.size == 0:
        return select_margin(ctx, n)
    region = [int(ctx.unlabeled[p]) for p in region_pos]
    if len(region) <= n:
        chosen = list(region)
        if len(chosen) < n:
            for idx in _take_lowest_scores(ctx.unlabeled, gaps, ctx.unlabeled.size):
                if idx not in chosen:
                    chosen.append(idx)
                    if len(chosen) == n:
                        break
        return chosen
    points = ctx.embeddings[region]
    centroids = _lloyd(points, n, ctx.rng)
    chosen = []
    chosen_set: set[int] = set()
    for c in centroids:
        d2 = np.sum((points - c) ** 2, axis=1)
        for pos in np.argsort(d2, kind="stable"):
            idx = region[int(pos)]
            if idx not in chosen_set:
                chosen.append(idx)
                chosen_set.add(idx)
                break
    return chosen


_DISPATCH = {
    StrategyKind.RANDOM: select_random,
    StrategyKind.CONFIDENCE: select_confidence,
    StrategyKind.MARGIN: select_margin,
    StrategyKind.ENTROPY: select_entropy,
    StrategyKind.INFORMATIVE_DIVERSE: select_informative_diverse,
    StrategyKind.MARGIN_CLUSTER_MEAN: select_margin_cluster_mean,
    StrategyKind.KCENTER: select_kcenter,
}
