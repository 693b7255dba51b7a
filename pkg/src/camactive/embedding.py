"""Metric-learning embeddings over pre-extracted base features.

Two training routes produce the low-dimensional feature space used by the
query-selection loop: triplet loss with random semi-hard negative mining,
or softmax cross-entropy through a temporary linear head.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from .nn import DenseNet, softmax

DEFAULT_EMBED_DIM = 256
DEFAULT_HIDDEN = (256, 256)

# Distances below this are treated as zero when backpropagating through
# the Euclidean norm (the gradient is undefined at exactly zero).
_DIST_EPS = 1e-12


class EmbeddingError(Exception):
    pass


class TripletKind(enum.Enum):
    EASY = "easy"
    SEMI_HARD = "semi-hard"
    HARD = "hard"


@dataclass(frozen=True)
class Triplet:
    anchor: int
    positive: int
    negative: int


@dataclass(frozen=True)
class TripletConfig:
    margin: float = 0.2
    mining: str = "random-semi-hard"
    learning_rate: float = 0.05
    epochs: int = 50
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.margin <= 0:
            raise EmbeddingError(f"margin must be positive, got {self.margin}")


def make_embedding_net(
    in_dim: int,
    embed_dim: int = DEFAULT_EMBED_DIM,
    hidden=DEFAULT_HIDDEN,
    seed: int = 0,
) -> DenseNet:
    """Fresh embedding network: ReLU hidden layers, linear output layer."""
    return DenseNet([in_dim, *hidden, embed_dim], seed=seed)


def distance(a: np.ndarray, b: np.ndarray) -> float:
    """Euclidean distance between two embedding vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise EmbeddingError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


def pairwise_distances(emb: np.ndarray) -> np.ndarray:
    emb = np.asarray(emb, dtype=np.float64)
    sq = np.sum(emb * emb, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (emb @ emb.T)
    np.maximum(d2, 0.0, out=d2)
    return np.sqrt(d2)


def triplet_loss(d_ap: float, d_an: float, margin: float) -> float:
    return max(d_ap - d_an + margin, 0.0)


def classify_triplet(d_ap: float, d_an: float, margin: float) -> TripletKind:
    """Trichotomy over (d_ap, d_an, margin); exactly one kind holds."""
    if d_an <= d_ap:
        return TripletKind.HARD
    if d_an < d_ap + margin:
        return TripletKind.SEMI_HARD
    return TripletKind.EASY


def semihard_candidates(
    anchor: int,
    positive: int,
    labels: np.ndarray,
    embeddings: np.ndarray,
    margin: float,
) -> tuple[np.ndarray, TripletKind | None]:
    """Negative candidates for an (anchor, positive) pair.

    Semi-hard negatives are preferred; if none exist the hard negatives are
    the fallback tier. Easy negatives are never candidates. Returns the
    candidate index array and the tier it came from (None when empty).
    """
    labels = np.asarray(labels)
    d_ap = distance(embeddings[anchor], embeddings[positive])
    neg_idx = np.flatnonzero(labels != labels[anchor])
    if neg_idx.size == 0:
        return neg_idx, None
    d_an = np.linalg.norm(embeddings[neg_idx] - embeddings[anchor], axis=1)
    semi = neg_idx[(d_an > d_ap) & (d_an < d_ap + margin)]
    if semi.size:
        return semi, TripletKind.SEMI_HARD
    hard = neg_idx[d_an <= d_ap]
    if hard.size:
        return hard, TripletKind.HARD
    return np.empty(0, dtype=int), None


def mine_semihard(
    anchor: int,
    labels: np.ndarray,
    embeddings: np.ndarray,
    margin: float,
    rng: np.random.Generator,
) -> Triplet | None:
    """Random semi-hard mining for one anchor.

    The positive is uniform over same-class samples (excluding the anchor);
    the negative is uniform over the semi-hard tier, falling back to the
    hard tier. Returns None when no usable triplet exists; easy triplets
    are never returned.
    """
    labels = np.asarray(labels)
    same = np.flatnonzero(labels == labels[anchor])
    same = same[same != anchor]
    if same.size == 0:
        return None
    positive = int(rng.choice(same))
    candidates, _ = semihard_candidates(anchor, positive, labels, embeddings, margin)
    if candidates.size == 0:
        return None
    negative = int(rng.choice(candidates))
    return Triplet(anchor=anchor, positive=positive, negative=negative)


def count_possible_triplets(class_counts) -> int:
    """Number of valid (anchor, positive, negative) index triples."""
    counts = [int(c) for c in class_counts]
    if any(c < 0 for c in counts):
        raise EmbeddingError("class counts must be non-negative")
    total = sum(counts)
    return sum(n * (n - 1) * (total - n) for n in counts)


def embed(net: DenseNet, x: np.ndarray) -> np.ndarray:
    """Deterministic forward pass of one input vector."""
    return net.forward(np.asarray(x, dtype=np.float64))


def embed_batch(net: DenseNet, X: np.ndarray) -> np.ndarray:
    return net.forward(np.asarray(X, dtype=np.float64))


def triplet_batch_loss_and_grads(
    net: DenseNet, X: np.ndarray, triplets: list[Triplet], margin: float
):
    """Mean triplet loss over a fixed triplet set, plus parameter gradients.

    The gradient is exactly zero for easy triplets (the hinge clamp) and for
    degenerate zero distances.
    """
    if not triplets:
        raise EmbeddingError("empty triplet set")
    idx = sorted({i for t in triplets for i in (t.anchor, t.positive, t.negative)})
    pos_of = {i: k for k, i in enumerate(idx)}
    emb, cache = net.forward_cached(np.asarray(X, dtype=np.float64)[idx])
    grad_emb = np.zeros_like(emb)
    total = 0.0
    m = len(triplets)
    for t in triplets:
        a, p, n = pos_of[t.anchor], pos_of[t.positive], pos_of[t.negative]
        diff_ap = emb[a] - emb[p]
        diff_an = emb[a] - emb[n]
        d_ap = np.linalg.norm(diff_ap)
        d_an = np.linalg.norm(diff_an)
        loss = d_ap - d_an + margin
        if loss <= 0:
            continue
        total += loss
        if d_ap > _DIST_EPS:
            u = diff_ap / d_ap
            grad_emb[a] += u / m
            grad_emb[p] -= u / m
        if d_an > _DIST_EPS:
            v = diff_an / d_an
            grad_emb[a] -= v / m
            grad_emb[n] += v / m
    grad_w, grad_b, _ = net.backward(cache, grad_emb)
    return total / m, grad_w, grad_b


def _mine_epoch_triplets(
    net: DenseNet,
    X: np.ndarray,
    labels: np.ndarray,
    anchors: np.ndarray,
    margin: float,
    rng: np.random.Generator,
) -> list[Triplet]:
    emb = embed_batch(net, X)
    out = []
    for a in anchors:
        t = mine_semihard(int(a), labels, emb, margin, rng)
        if t is not None:
            out.append(t)
    return out


def train_embedding_triplet(
    net: DenseNet, X: np.ndarray, labels: np.ndarray, cfg: TripletConfig
) -> DenseNet:
    """Mini-batch gradient descent on mean triplet loss over mined triplets."""
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels)
    if np.unique(labels).size < 2:
        raise EmbeddingError("triplet training needs at least two classes")
    net = net.copy()
    rng = np.random.default_rng(cfg.seed)
    n = X.shape[0]
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            anchors = order[start : start + cfg.batch_size]
            triplets = _mine_epoch_triplets(net, X, labels, anchors, cfg.margin, rng)
            if not triplets:
                continue
            _, grad_w, grad_b = triplet_batch_loss_and_grads(net, X, triplets, cfg.margin)
            net.apply_gradients(grad_w, grad_b, cfg.learning_rate)
    return net


def xent_loss_and_grads(
    net: DenseNet, head: DenseNet, X: np.ndarray, labels: np.ndarray
):
    """Mean cross-entropy through embedding net + linear head.

    Returns (loss, net grads, head grads).
    """
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    emb, cache = net.forward_cached(X)
    logits, head_cache = head.forward_cached(emb)
    probs = softmax(logits)
    n = X.shape[0]
    picked = np.clip(probs[np.arange(n), labels], 1e-12, None)
    loss = float(-np.mean(np.log(picked)))
    grad_logits = probs.copy()
    grad_logits[np.arange(n), labels] -= 1.0
    grad_logits /= n
    head_gw, head_gb, grad_emb = head.backward(head_cache, grad_logits)
    grad_w, grad_b, _ = net.backward(cache, grad_emb)
    return loss, (grad_w, grad_b), (head_gw, head_gb)


def train_embedding_xent(
    net: DenseNet,
    X: np.ndarray,
    labels: np.ndarray,
    cfg: TripletConfig,
    n_classes: int | None = None,
) -> DenseNet:
    """Train embedding + temporary linear head jointly with cross-entropy.

    The head is discarded; the embedding is the trained net's output layer
    (the penultimate layer of the combined model).
    """
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    if np.unique(labels).size < 2:
        raise EmbeddingError("cross-entropy training needs at least two classes")
    if n_classes is None:
        n_classes = int(labels.max()) + 1
    net = net.copy()
    head = DenseNet([net.out_dim, n_classes], seed=cfg.seed + 1)
    rng = np.random.default_rng(cfg.seed)
    n = X.shape[0]
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            _, (gw, gb), (hgw, hgb) = xent_loss_and_grads(net, head, X[batch], labels[batch])
            net.apply_gradients(gw, gb, cfg.learning_rate)
            head.apply_gradients(hgw, hgb, cfg.learning_rate)
    return net


def finetune_config(cfg: TripletConfig) -> TripletConfig:
    """Reduced budget for periodic fine-tuning: 25% of the epochs, half the
    learning rate."""
    return replace(cfg, epochs=cfg.epochs // 4, learning_rate=cfg.learning_rate * 0.5)


def fine_tune(
    net: DenseNet,
    X: np.ndarray,
    labels: np.ndarray,
    cfg: TripletConfig,
    loss: str = "triplet",
) -> DenseNet:
    """Continue training from current weights on the full labeled set."""
    ft = finetune_config(cfg)
    if ft.epochs == 0:
        return net.copy()
    if loss == "triplet":
        return train_embedding_triplet(net, X, labels, ft)
    if loss == "xent":
        return train_embedding_xent(net, X, labels, ft)
    raise EmbeddingError(f"unknown embedding loss {loss!r}")


def mean_triplet_loss(
    net: DenseNet, X: np.ndarray, triplets: list[Triplet], margin: float
) -> float:
    emb = embed_batch(net, X)
    losses = [
        triplet_loss(
            distance(emb[t.anchor], emb[t.positive]),
            distance(emb[t.anchor], emb[t.negative]),
            margin,
        )
        for t in triplets
    ]
    return float(np.mean(losses))
