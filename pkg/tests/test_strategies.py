import itertools

import numpy as np
import pytest

from camactive.classifier import MlpClassifier
from camactive.strategies import (
    SelectionContext,
    StrategyError,
    StrategyKind,
    covering_radius,
    entropy_scores,
    largest_remainder_quotas,
    margin_scores,
    select,
    select_confidence,
    select_entropy,
    select_informative_diverse,
    select_kcenter,
    select_margin,
    select_margin_cluster_mean,
    select_random,
)


class FixedProbClassifier:
    """Test double: returns a fixed probability row per pool index."""

    def __init__(self, probs):
        self.probs = np.asarray(probs, dtype=np.float64)
        self.n_features = 1

    def predict_proba_batch(self, X):
        return self.probs[X[:, 0].astype(int)]


def make_ctx(probs=None, embeddings=None, labeled=(), n=None, seed=0, **kw):
    if embeddings is None:
        n_items = len(probs)
        embeddings = np.arange(n_items, dtype=float)[:, None]
    else:
        embeddings = np.asarray(embeddings, dtype=float)
        if embeddings.ndim == 1:
            embeddings = embeddings[:, None]
        n_items = embeddings.shape[0]
    clf = FixedProbClassifier(probs) if probs is not None else None
    if clf is not None:
        # route predict through pool indices stored in column 0
        embeddings = np.arange(n_items, dtype=float)[:, None]
    labeled = list(labeled)
    unlabeled = [i for i in range(n_items) if i not in labeled]
    return SelectionContext(
        embeddings=embeddings,
        labeled=np.array(labeled, dtype=int),
        unlabeled=np.array(unlabeled, dtype=int),
        classifier=clf,
        rng=np.random.default_rng(seed),
        **kw,
    )


class TestRandom:
    def test_full_pool(self):
        ctx = make_ctx(embeddings=np.zeros((5, 2)))
        assert sorted(select_random(ctx, 5)) == [0, 1, 2, 3, 4]

    def test_seeded_identical(self):
        a = select_random(make_ctx(embeddings=np.zeros((30, 2)), seed=7), 10)
        b = select_random(make_ctx(embeddings=np.zeros((30, 2)), seed=7), 10)
        assert a == b

    def test_uniform_frequencies(self):
        n_trials = 10_000
        counts = np.zeros(5)
        for t in range(n_trials):
            ctx = make_ctx(embeddings=np.zeros((5, 2)), seed=t)
            for i in select_random(ctx, 2):
                counts[i] += 1
        p = 2 / 5
        sigma = np.sqrt(n_trials * p * (1 - p))
        assert np.all(np.abs(counts - n_trials * p) < 3 * sigma)

    def test_n_too_large(self):
        with pytest.raises(StrategyError):
            select_random(make_ctx(embeddings=np.zeros((3, 2))), 4)


class TestUncertainty:
    def test_confidence_picks_least_confident(self):
        ctx = make_ctx(probs=[[0.9, 0.1], [0.55, 0.45]])
        assert select_confidence(ctx, 1) == [1]

    def test_confidence_tie_lowest_index(self):
        ctx = make_ctx(probs=[[0.6, 0.4]] * 4)
        assert select_confidence(ctx, 2) == [0, 1]

    def test_margin_prefers_small_gap(self):
        ctx = make_ctx(probs=[[0.4, 0.35, 0.25], [0.9, 0.05, 0.05]])
        assert select_margin(ctx, 1) == [0]

    def test_binary_margin_equals_confidence(self):
        rng = np.random.default_rng(0)
        p1 = rng.uniform(0.5, 1.0, size=20)
        probs = np.stack([p1, 1 - p1], axis=1)
        ctx_a = make_ctx(probs=probs)
        ctx_b = make_ctx(probs=probs)
        assert set(select_margin(ctx_a, 7)) == set(select_confidence(ctx_b, 7))

    def test_entropy_ordering(self):
        ctx = make_ctx(probs=[[1.0, 0.0, 0.0], [1 / 3, 1 / 3, 1 / 3], [0.8, 0.1, 0.1]])
        assert select_entropy(ctx, 1) == [1]
        assert select_entropy(ctx, 3)[-1] == 0  # one-hot has zero entropy, picked last
        assert entropy_scores(np.array([[1 / 3, 1 / 3, 1 / 3]]))[0] == pytest.approx(
            np.log(3), abs=1e-12
        )

    @pytest.mark.parametrize("kind", ["confidence", "margin", "entropy"])
    def test_matches_brute_force_sort(self, kind):
        rng = np.random.default_rng(11)
        for _ in range(50):
            n_items = int(rng.integers(5, 51))
            k = int(rng.integers(2, 6))
            raw = rng.uniform(0.1, 1, size=(n_items, k))
            probs = raw / raw.sum(axis=1, keepdims=True)
            n = int(rng.integers(1, n_items + 1))
            ctx = make_ctx(probs=probs)
            if kind == "confidence":
                got = select_confidence(ctx, n)
                scores = probs.max(axis=1)
                expect = sorted(range(n_items), key=lambda i: (scores[i], i))[:n]
            elif kind == "margin":
                got = select_margin(ctx, n)
                scores = margin_scores(probs)
                expect = sorted(range(n_items), key=lambda i: (scores[i], i))[:n]
            else:
                got = select_entropy(ctx, n)
                scores = entropy_scores(probs)
                expect = sorted(range(n_items), key=lambda i: (-scores[i], i))[:n]
            assert got == expect


def brute_force_optimal_radius(points, k, fixed_centers=()):
    """Exhaustive optimal k-center covering radius over small instances."""
    n = len(points)
    best = np.inf
    for combo in itertools.combinations(range(n), k):
        centers = list(combo) + list(fixed_centers)
        r = covering_radius(points, centers)
        best = min(best, r)
    return best


class TestKCenter:
    def test_farthest_point(self):
        ctx = make_ctx(embeddings=np.array([0.0, 3.0, 10.0]), labeled=[0])
        assert select_kcenter(ctx, 1) == [2]

    def test_hand_traced_two_picks(self):
        # points {0, 3, 10, 12}, labeled {0}: pick 12 first (distance 12),
        # then 3 (min-distances: 3 -> 3, 10 -> 2)
        ctx = make_ctx(embeddings=np.array([0.0, 3.0, 10.0, 12.0]), labeled=[0])
        assert select_kcenter(ctx, 2) == [3, 1]

    def test_empty_labeled_starts_lowest_index(self):
        ctx = make_ctx(embeddings=np.array([5.0, 1.0, 9.0]))
        assert select_kcenter(ctx, 1) == [0]

    def test_two_approximation(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            n_pts = int(rng.integers(4, 11))
            k = int(rng.integers(1, 4))
            k = min(k, n_pts)
            points = rng.uniform(-5, 5, size=(n_pts, 2))
            ctx = SelectionContext(
                embeddings=points,
                labeled=np.array([], dtype=int),
                unlabeled=np.arange(n_pts),
                classifier=None,
                rng=np.random.default_rng(0),
            )
            chosen = select_kcenter(ctx, k)
            greedy_r = covering_radius(points, chosen)
            optimal_r = brute_force_optimal_radius(points, k)
            assert greedy_r <= 2 * optimal_r + 1e-9

    def test_never_selects_labeled(self):
        rng = np.random.default_rng(5)
        points = rng.standard_normal((20, 3))
        ctx = SelectionContext(
            embeddings=points,
            labeled=np.arange(5),
            unlabeled=np.arange(5, 20),
            classifier=None,
            rng=np.random.default_rng(0),
        )
        chosen = select_kcenter(ctx, 6)
        assert len(set(chosen)) == 6
        assert not set(chosen) & set(range(5))


class TestQuotas:
    def test_largest_remainder_example(self):
        quotas = largest_remainder_quotas(np.array([60, 30, 10]), 5)
        assert quotas.tolist() == [3, 2, 0]

    def test_sums_to_n(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            sizes = rng.integers(1, 50, size=rng.integers(2, 8))
            n = int(rng.integers(1, sizes.sum() + 1))
            assert largest_remainder_quotas(sizes, n).sum() == n


class TestInformativeDiverse:
    def test_two_equal_clusters_one_each(self):
        emb = np.vstack([np.random.default_rng(0).normal(0, 0.1, (10, 2)),
                         np.random.default_rng(1).normal(20, 0.1, (10, 2))])
        probs = np.tile([0.6, 0.4], (20, 1))
        clf = FixedProbClassifier(probs)
        ctx = SelectionContext(
            embeddings=emb,
            labeled=np.array([], dtype=int),
            unlabeled=np.arange(20),
            classifier=None,
            rng=np.random.default_rng(0),
            cluster_count=2,
        )
        # FixedProbClassifier indexes by column 0, so patch probs lookup
        ctx.classifier = _IndexFreeClassifier(probs)
        chosen = select_informative_diverse(ctx, 2)
        assert len([c for c in chosen if c < 10]) == 1
        assert len([c for c in chosen if c >= 10]) == 1

    def test_single_cluster_reduces_to_margin(self):
        rng = np.random.default_rng(4)
        raw = rng.uniform(0.1, 1, size=(15, 3))
        probs = raw / raw.sum(axis=1, keepdims=True)
        ctx_a = make_ctx(probs=probs, cluster_count=1)
        ctx_b = make_ctx(probs=probs)
        assert set(select_informative_diverse(ctx_a, 5)) == set(select_margin(ctx_b, 5))


class _IndexFreeClassifier:
    """Returns rows of a fixed prob table in pool order for any features."""

    def __init__(self, probs):
        self.probs = np.asarray(probs, dtype=np.float64)
        self._cursor_map = {}

    def predict_proba_batch(self, X):
        # strategies always score ctx.unlabeled in index order over the
        # full unlabeled set; rows align positionally
        return self.probs[: X.shape[0]] if X.shape[0] != self.probs.shape[0] else self.probs


class TestMarginClusterMean:
    def test_empty_region_falls_back_to_margin(self):
        probs = np.tile([0.95, 0.05], (10, 1))  # all gaps 0.9 > threshold
        ctx_a = make_ctx(probs=probs, margin_threshold=0.2)
        ctx_b = make_ctx(probs=probs)
        assert select_margin_cluster_mean(ctx_a, 3) == select_margin(ctx_b, 3)

    def test_region_exactly_n(self):
        probs = np.array([[0.52, 0.48], [0.51, 0.49], [0.99, 0.01], [0.98, 0.02]])
        ctx = make_ctx(probs=probs, margin_threshold=0.2)
        assert sorted(select_margin_cluster_mean(ctx, 2)) == [0, 1]

    def test_two_blobs_one_representative_each(self):
        rng = np.random.default_rng(8)
        blob_a = rng.normal(0, 0.05, (8, 2))
        blob_b = rng.normal(10, 0.05, (8, 2))
        emb = np.vstack([blob_a, blob_b])
        probs = np.tile([0.51, 0.49], (16, 1))  # everything inside the margin
        ctx = SelectionContext(
            embeddings=emb,
            labeled=np.array([], dtype=int),
            unlabeled=np.arange(16),
            classifier=_IndexFreeClassifier(probs),
            rng=np.random.default_rng(2),
            margin_threshold=0.2,
        )
        chosen = select_margin_cluster_mean(ctx, 2)
        assert len(chosen) == 2
        assert len([c for c in chosen if c < 8]) == 1
        assert len([c for c in chosen if c >= 8]) == 1


class TestContract:
    @pytest.mark.parametrize("kind", list(StrategyKind))
    def test_distinct_unlabeled_only(self, kind):
        rng = np.random.default_rng(17)
        emb = rng.standard_normal((30, 4))
        labeled = list(range(0, 30, 3))
        unlabeled = [i for i in range(30) if i not in labeled]
        clf = _TrainedDouble(emb)
        ctx = SelectionContext(
            embeddings=emb,
            labeled=np.array(labeled),
            unlabeled=np.array(unlabeled),
            classifier=clf,
            rng=np.random.default_rng(5),
        )
        chosen = select(kind, ctx, 7)
        assert len(chosen) == 7
        assert len(set(chosen)) == 7
        assert set(chosen) <= set(unlabeled)

    @pytest.mark.parametrize("kind", list(StrategyKind))
    def test_deterministic_given_seed(self, kind):
        def run():
            rng = np.random.default_rng(23)
            emb = rng.standard_normal((25, 3))
            ctx = SelectionContext(
                embeddings=emb,
                labeled=np.arange(5),
                unlabeled=np.arange(5, 25),
                classifier=_TrainedDouble(emb),
                rng=np.random.default_rng(99),
            )
            return select(kind, ctx, 6)

        assert run() == run()


class _TrainedDouble:
    """Small real classifier over the embedding features."""

    def __init__(self, emb, n_classes=3):
        from camactive.classifier import TrainConfig, fit_classifier

        rng = np.random.default_rng(0)
        y = rng.integers(0, n_classes, size=emb.shape[0])
        y[:n_classes] = np.arange(n_classes)
        self._clf = fit_classifier(
            emb.shape[1], n_classes, emb, y,
            TrainConfig(learning_rate=0.1, epochs=5, seed=0), hidden_units=8,
        )

    def predict_proba_batch(self, X):
        return self._clf.predict_proba_batch(X)
