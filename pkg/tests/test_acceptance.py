"""Acceptance suite: one pass/fail line per release criterion.

Run with ``pytest tests/test_acceptance.py -s`` to see the criterion lines.
Every test builds its own oracle (closed forms, brute-force enumeration, or
hand-traced examples) and compares the library against it.
"""

import functools
import itertools
import sys
import time

import numpy as np
import pytest

from camactive.classifier import MlpClassifier, TrainConfig, loss_and_grads
from camactive.embedding import (
    Triplet,
    TripletConfig,
    TripletKind,
    classify_triplet,
    count_possible_triplets,
    embed_batch,
    make_embedding_net,
    mine_semihard,
    semihard_candidates,
    train_embedding_triplet,
    train_embedding_xent,
    triplet_batch_loss_and_grads,
    triplet_loss,
    xent_loss_and_grads,
)
from camactive.ingest import ConfusionCounts, binary_metrics
from camactive.loop import (
    LoopConfig,
    SessionStore,
    SimulatedCrash,
    init_session,
    run_simulation,
    simulated_oracle,
    step,
)
from camactive.nn import DenseNet, finite_difference_grad, relative_grad_error
from camactive.pool import Pool, make_gaussian_pool
from camactive.strategies import (
    SelectionContext,
    StrategyKind,
    covering_radius,
    select,
    select_kcenter,
)


def criterion(name):
    """Emit one PASS/FAIL line per acceptance criterion."""

    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                fn(*args, **kwargs)
            except BaseException:
                print(f"FAIL  {name}", file=sys.stderr)
                raise
            print(f"PASS  {name}", file=sys.stderr)

        return wrapper

    return deco


@criterion("detector screening metrics match the published confusion matrix")
def test_detector_screening_metrics():
    m = binary_metrics(
        ConfusionCounts(
            true_positive=714_276,
            false_positive=131_288,
            true_negative=2_219_404,
            false_negative=133_769,
        )
    )
    assert abs(m["accuracy"] - 0.9171) <= 5e-4
    assert abs(m["precision"] - 0.8447) <= 5e-4
    assert abs(m["recall"] - 0.8423) <= 5e-4


def brute_force_triplet_count(counts):
    labels = [c for c, n in enumerate(counts) for _ in range(n)]
    total = 0
    for a, p, n in itertools.permutations(range(len(labels)), 3):
        if labels[a] == labels[p] and labels[a] != labels[n]:
            total += 1
    return total


def partitions(n, max_part=None):
    if max_part is None:
        max_part = n
    if n == 0:
        yield ()
        return
    for first in range(min(n, max_part), 0, -1):
        for rest in partitions(n - first, first):
            yield (first,) + rest


@criterion("triplet count closed form: 10x100 pool and exhaustive small pools")
def test_triplet_count_closed_form():
    assert count_possible_triplets([100] * 10) == 89_100_000
    for n in range(1, 13):
        for counts in partitions(n):
            assert count_possible_triplets(counts) == brute_force_triplet_count(counts)


@criterion("triplet hinge loss: exact values, trichotomy, zero easy gradient")
def test_triplet_loss_unit_suite():
    assert abs(triplet_loss(0.2, 0.9, 0.5) - 0.0) <= 1e-12
    assert abs(triplet_loss(0.5, 0.6, 0.3) - 0.2) <= 1e-12
    assert abs(triplet_loss(0.8, 0.4, 0.2) - 0.6) <= 1e-12

    # an easy triplet contributes exactly zero gradient
    net = make_embedding_net(2, embed_dim=2, hidden=(4,), seed=0)
    X = np.array([[0.0, 0.0], [0.1, 0.0], [5.0, 0.0]])
    loss, gw, gb = triplet_batch_loss_and_grads(
        net, X, [Triplet(0, 1, 2)], margin=0.2
    )
    assert loss == 0.0
    assert all(np.all(g == 0) for g in gw) and all(np.all(g == 0) for g in gb)

    # exactly one difficulty class holds for any inputs
    rng = np.random.default_rng(0)
    d_ap = rng.uniform(0, 3, 100_000)
    d_an = rng.uniform(0, 3, 100_000)
    margins = rng.uniform(1e-6, 1, 100_000)
    for i in range(100_000):
        kind = classify_triplet(d_ap[i], d_an[i], margins[i])
        easy = d_an[i] >= d_ap[i] + margins[i]
        hard = d_an[i] <= d_ap[i]
        semi = d_ap[i] < d_an[i] < d_ap[i] + margins[i]
        assert [easy, semi, hard].count(True) == 1
        assert kind == (
            TripletKind.EASY if easy else TripletKind.SEMI_HARD if semi else TripletKind.HARD
        )


@criterion("semi-hard mining candidates equal brute-force enumeration")
def test_semihard_mining_matches_enumeration():
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    for trial in range(200):
        n = int(rng.integers(3, 51))
        k = int(rng.integers(2, 5))
        dim = int(rng.integers(1, 4))
        labels = rng.integers(0, k, size=n)
        emb = rng.standard_normal((n, dim))
        margin = float(rng.uniform(0.1, 1.5))
        anchor = int(rng.integers(0, n))
        positives = [j for j in range(n) if labels[j] == labels[anchor] and j != anchor]
        for positive in positives:
            d_ap = np.linalg.norm(emb[anchor] - emb[positive])
            semi, hard = [], []
            for j in range(n):
                if labels[j] == labels[anchor]:
                    continue
                d_an = np.linalg.norm(emb[anchor] - emb[j])
                if d_ap < d_an < d_ap + margin:
                    semi.append(j)
                elif d_an <= d_ap:
                    hard.append(j)
            expected = semi if semi else hard
            got, _ = semihard_candidates(anchor, positive, labels, emb, margin)
            assert sorted(got.tolist()) == sorted(expected)
        mined = mine_semihard(anchor, labels, emb, margin, np.random.default_rng(trial))
        if mined is not None:
            d_ap = np.linalg.norm(emb[mined.anchor] - emb[mined.positive])
            d_an = np.linalg.norm(emb[mined.anchor] - emb[mined.negative])
            assert classify_triplet(d_ap, d_an, margin) != TripletKind.EASY
    assert time.perf_counter() - start < 5.0


@criterion("analytic gradients match central finite differences on all losses")
def test_gradients_match_finite_differences():
    start = time.perf_counter()
    rng = np.random.default_rng(11)
    for trial in range(50):
        d = int(rng.integers(2, 33))
        h = int(rng.integers(2, 17))
        k = int(rng.integers(2, 6))
        n = int(rng.integers(4, 9))
        X = rng.standard_normal((n, d))
        y = rng.integers(0, k, size=n)

        clf = MlpClassifier(d, k, hidden_units=h, seed=trial)
        _, gw, gb = loss_and_grads(clf, X, y)
        numeric = finite_difference_grad(lambda _n: loss_and_grads(clf, X, y)[0], clf.net)
        assert relative_grad_error(clf.net.flatten_grads(gw, gb), numeric) < 1e-4

        net = make_embedding_net(d, embed_dim=min(h, 4), hidden=(h,), seed=trial)
        labels = np.array([0] * (n // 2) + [1] * (n - n // 2))
        triplets = [
            Triplet(a, p, q)
            for a in range(n // 2)
            for p in range(n // 2)
            for q in range(n // 2, n)
            if a != p
        ][:6]
        if triplets:
            margin = float(rng.uniform(0.1, 1.0))
            _, gw, gb = triplet_batch_loss_and_grads(net, X, triplets, margin)
            numeric = finite_difference_grad(
                lambda _n: triplet_batch_loss_and_grads(net, X, triplets, margin)[0], net
            )
            assert relative_grad_error(net.flatten_grads(gw, gb), numeric) < 1e-4

        net2 = make_embedding_net(d, embed_dim=min(h, 4), hidden=(h,), seed=trial + 1)
        head = DenseNet([net2.out_dim, 2], seed=trial + 2)
        _, (gw, gb), (hgw, hgb) = xent_loss_and_grads(net2, head, X, labels)
        numeric = finite_difference_grad(
            lambda _n: xent_loss_and_grads(net2, head, X, labels)[0], net2
        )
        assert relative_grad_error(net2.flatten_grads(gw, gb), numeric) < 1e-4
        numeric_head = finite_difference_grad(
            lambda _n: xent_loss_and_grads(net2, head, X, labels)[0], head
        )
        assert relative_grad_error(head.flatten_grads(hgw, hgb), numeric_head) < 1e-4
    assert time.perf_counter() - start < 30.0


def brute_force_optimal_radius(points, n_centers):
    best = np.inf
    for centers in itertools.combinations(range(len(points)), n_centers):
        best = min(best, covering_radius(points, list(centers)))
    return best


def ctx_for(embeddings, labeled, rng=None):
    return SelectionContext(
        embeddings=np.asarray(embeddings, dtype=float),
        labeled=list(labeled),
        unlabeled=[i for i in range(len(embeddings)) if i not in set(labeled)],
        classifier=None,
        rng=rng or np.random.default_rng(0),
    )


@criterion("farthest-first selection: hand traces and 2x-optimal cover bound")
def test_kcenter_greedy_guarantee():
    start = time.perf_counter()
    pts = np.array([[0.0], [3.0], [10.0]])
    assert select_kcenter(ctx_for(pts, [0]), 1) == [2]
    pts = np.array([[0.0], [3.0], [10.0], [12.0]])
    assert select_kcenter(ctx_for(pts, [0]), 2) == [3, 1]

    rng = np.random.default_rng(23)
    for _ in range(100):
        n = int(rng.integers(4, 11))
        k = int(rng.integers(1, 4))
        pts = rng.uniform(-5, 5, size=(n, int(rng.integers(1, 4))))
        chosen = select_kcenter(ctx_for(pts, []), k)
        assert covering_radius(pts, chosen) <= 2 * brute_force_optimal_radius(pts, k) + 1e-12
    assert time.perf_counter() - start < 10.0


class _FixedProbs:
    """Stand-in model returning pre-drawn class probabilities per pool row."""

    def __init__(self, probs):
        self._probs = np.asarray(probs)

    def predict_proba_batch(self, X):
        return self._probs[: X.shape[0]]


@criterion("uncertainty rankings equal full-sort brute-force selection")
def test_uncertainty_rankings_match_sorting():
    rng = np.random.default_rng(31)
    kinds = [StrategyKind.CONFIDENCE, StrategyKind.MARGIN, StrategyKind.ENTROPY]
    for trial in range(1000):
        kind = kinds[trial % 3]
        n = int(rng.integers(2, 51))
        k = int(rng.integers(2, 6))
        probs = rng.dirichlet(np.ones(k), size=n)
        batch = int(rng.integers(1, n + 1))
        ctx = SelectionContext(
            embeddings=rng.standard_normal((n, 2)),
            labeled=[],
            unlabeled=list(range(n)),
            classifier=_FixedProbs(probs),
            rng=np.random.default_rng(trial),
        )
        if kind == StrategyKind.CONFIDENCE:
            scores = probs.max(axis=1)
        elif kind == StrategyKind.MARGIN:
            top2 = np.sort(probs, axis=1)[:, -2:]
            scores = top2[:, 1] - top2[:, 0]
        else:
            scores = -(-probs * np.log(np.clip(probs, 1e-300, None))).sum(axis=1)
        expected = sorted(range(n), key=lambda i: (scores[i], i))[:batch]
        assert sorted(select(kind, ctx, batch)) == sorted(expected)


@criterion("default schedule: refresh points, label arithmetic, curve length")
def test_default_schedule_arithmetic():
    sizes = [2100, 2100, 2100]
    X, y = make_gaussian_pool(sizes, dim=4, separation=4.0, seed=0)
    hx, hy = make_gaussian_pool([40] * 3, dim=4, separation=4.0, seed=1)
    names = ["c0", "c1", "c2"]
    ids = [f"crop_{i}" for i in range(len(y))]
    pool = Pool(ids, X, names)
    truth = {ids[i]: names[y[i]] for i in range(len(y))}

    cfg = LoopConfig(
        budget=6000,
        seed=0,
        classifier_train=TrainConfig(learning_rate=0.1, epochs=2, batch_size=64, seed=0),
        classifier_hidden=8,
        triplet=TripletConfig(learning_rate=0.01, epochs=4, batch_size=64, seed=0),
    )
    assert cfg.initial_random == 1000
    assert cfg.batch_size == 100
    assert cfg.finetune_interval == 2000

    net = make_embedding_net(4, embed_dim=4, hidden=(6,), seed=0)
    oracle = simulated_oracle(truth)
    state = init_session(pool, cfg, oracle, hx, hy, embedding_net=net)
    k = 0
    while not state.done:
        step(state, oracle)
        k += 1
        assert state.labels_acquired == 1000 + 100 * k
    assert state.finetune_events == [2000, 4000, 6000]
    assert k == (6000 - 1000) // 100
    assert len(state.history) == 1 + k
    assert state.history.labels() == [1000 + 100 * j for j in range(k + 1)]


# Desk-scale benchmark: a 5,000-item 10-class Gaussian pool with a long-tailed
# class distribution and a balanced 1,000-item holdout. Class means are
# mutually 2 sigma apart.
DESK_SIZES = [1710, 1200, 800, 500, 300, 200, 130, 80, 50, 30]
DESK_DIM = 24
DESK_CLASSES = [f"c{i}" for i in range(10)]


def desk_pool(seed):
    X, y = make_gaussian_pool(DESK_SIZES, dim=DESK_DIM, separation=2.0, seed=seed)
    hx, hy = make_gaussian_pool([100] * 10, dim=DESK_DIM, separation=2.0, seed=seed + 1000)
    ids = [f"crop_{i}" for i in range(len(y))]
    pool = Pool(ids, X, DESK_CLASSES)
    truth = {ids[i]: DESK_CLASSES[y[i]] for i in range(len(y))}
    return pool, truth, hx, hy


def desk_config(strategy, seed, budget=600):
    return LoopConfig(
        initial_random=100,
        batch_size=20,
        finetune_interval=20,
        finetune_start=10**9,
        budget=budget,
        strategy=strategy,
        seed=seed,
        classifier_train=TrainConfig(
            learning_rate=0.1, epochs=50, batch_size=32, seed=seed, init_scale=0.3
        ),
        classifier_hidden=16,
    )


@criterion("desk-scale benchmark: coverage sampling beats random on a long tail")
def test_strategy_comparison_on_longtail_pool():
    start = time.perf_counter()
    seeds = range(5)
    finals = {}
    for kind in StrategyKind:
        accs = []
        for seed in seeds:
            pool, truth, hx, hy = desk_pool(seed)
            curve = run_simulation(pool, truth, desk_config(kind, seed), hx, hy)
            accs.append(curve.accuracies()[-1])
        finals[kind] = float(np.mean(accs))
    random_mean = finals[StrategyKind.RANDOM]
    assert finals[StrategyKind.KCENTER] >= random_mean + 0.01
    for kind, mean in finals.items():
        if kind != StrategyKind.RANDOM:
            assert mean >= random_mean - 0.005, f"{kind.value}: {mean:.4f} vs {random_mean:.4f}"
    assert time.perf_counter() - start < 300.0


@criterion("triplet pretraining at least matches cross-entropy at the first budget point")
def test_triplet_pretraining_at_first_budget_point():
    seeds = range(5)
    means = {}
    for loss in ("triplet", "xent"):
        accs = []
        for seed in seeds:
            pool, truth, hx, hy = desk_pool(seed)
            sx, sy = make_gaussian_pool(
                [100] * 10, dim=DESK_DIM, separation=2.0, seed=seed + 2000
            )
            cfg = TripletConfig(
                margin=0.2, learning_rate=0.05, epochs=120, batch_size=32, seed=seed
            )
            net = make_embedding_net(DESK_DIM, embed_dim=16, hidden=(32,), seed=seed)
            if loss == "triplet":
                net = train_embedding_triplet(net, sx, sy, cfg)
            else:
                net = train_embedding_xent(net, sx, sy, cfg, n_classes=10)
            epool = Pool(pool.item_ids, embed_batch(net, pool.features), DESK_CLASSES)
            curve = run_simulation(
                epool,
                truth,
                desk_config(StrategyKind.RANDOM, seed, budget=100),
                embed_batch(net, hx),
                hy,
            )
            accs.append(curve.accuracies()[0])
        means[loss] = float(np.mean(accs))
    assert means["triplet"] >= means["xent"]


@criterion("determinism and crash recovery: identical curves, zero lost labels")
def test_determinism_and_crash_recovery(tmp_path):
    X, y = make_gaussian_pool([40, 40, 40], dim=4, separation=4.0, seed=0)
    hx, hy = make_gaussian_pool([10, 10, 10], dim=4, separation=4.0, seed=1)
    names = ["c0", "c1", "c2"]
    ids = [f"crop_{i}" for i in range(len(y))]
    pool = Pool(ids, X, names)
    truth = {ids[i]: names[y[i]] for i in range(len(y))}
    cfg = LoopConfig(
        initial_random=20,
        batch_size=5,
        finetune_interval=10,
        finetune_start=10**9,
        budget=50,
        strategy=StrategyKind.KCENTER,
        seed=4,
        classifier_train=TrainConfig(learning_rate=0.2, epochs=10, batch_size=16, seed=0),
        classifier_hidden=8,
    )

    a = run_simulation(pool, truth, cfg, hx, hy)
    b = run_simulation(pool, truth, cfg, hx, hy)
    assert a.labels() == b.labels()
    assert a.accuracies() == b.accuracies()  # bit-identical, not approximate

    oracle = simulated_oracle(truth)
    store = SessionStore(str(tmp_path / "session"))
    state = init_session(pool, cfg, oracle, hx, hy, store=store)
    with pytest.raises(SimulatedCrash):
        step(state, oracle, store=store, crash_after_journal=True)
    resumed = store.load()
    while not resumed.done:
        step(resumed, oracle, store=store)
    assert len(resumed.labeled) == resumed.labels_acquired  # no duplicates
    assert resumed.labels_acquired == cfg.budget  # no losses
    assert resumed.history.labels() == a.labels()
    assert resumed.history.accuracies() == a.accuracies()
